#include <algorithm>
#include <string>

#include "moeleak/attack.hpp"
#include "moeleak/errors.hpp"

namespace moeleak {

std::vector<int> target_experts(const AttackParams& params, int experts) {
  if (params.experts.empty()) {
    std::vector<int> all(static_cast<std::size_t>(experts));
    for (int e = 0; e < experts; ++e) all[static_cast<std::size_t>(e)] = e;
    return all;
  }
  for (int e : params.experts) {
    if (e < 0 || e >= experts) {
      throw InvalidInput("expert " + std::to_string(e) + " outside [0, " + std::to_string(experts) +
                         ")");
    }
  }
  return params.experts;
}

std::size_t attack_capacity(const AttackParams& params, const RouterConfig& router, int experts,
                            std::size_t padding) {
  return expert_capacity({params.batch_size, padding, router.capacity_factor,
                          static_cast<std::size_t>(experts)});
}

std::size_t blockers_per_sequence(std::size_t capacity, std::size_t batch_size) {
  if (batch_size < 4) throw ConfigError("adversarial batches need B >= 4");
  if (capacity == 0) throw ConfigError("capacity must be positive");
  return (capacity - 1) / (batch_size - 3);
}

std::vector<TokenSequence> find_blocking_sequences(const BlockerSpec& spec, std::size_t count,
                                                   const Model& model, const RouterConfig& router) {
  if (spec.target_expert < 0 || spec.target_expert >= model.config().experts) {
    throw InvalidInput("blocker search: expert index out of range");
  }
  if (spec.nb == 0) {
    throw BlockerUnavailable(spec.target_expert,
                             "expert " + std::to_string(spec.target_expert) +
                                 ": capacity leaves room for no blocker per sequence");
  }
  const std::vector<TokenId> pool =
      spec.restricted_vocab.empty() ? vocab::blocker_vocabulary(model.config().vocab_size)
                                    : spec.restricted_vocab;
  if (pool.empty()) throw InvalidInput("blocker vocabulary is empty");
  const std::size_t chunk = std::max<std::size_t>(1, spec.bsl / spec.nb);
  const auto col = static_cast<std::size_t>(spec.target_expert);

  std::vector<TokenSequence> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    SplitMix64 rng(mix_seed(spec.seed, i));
    TokenSequence seq{vocab::kBos};
    std::size_t last_hit = 0;
    for (std::size_t c = 0; c < spec.nb; ++c) {
      bool accepted = false;
      for (std::size_t attempt = 0; attempt < spec.max_attempts && !accepted; ++attempt) {
        TokenSequence cand = seq;
        for (std::size_t j = 0; j < chunk; ++j) cand.push_back(pool[rng.below(pool.size())]);
        const GateMatrix g = model.first_layer_gates(cand, router);
        for (std::size_t t = seq.size(); t < cand.size(); ++t) {
          if (g(t, col) >= spec.threshold) {
            accepted = true;
            last_hit = t;
          }
        }
        if (accepted) seq = std::move(cand);
      }
      if (!accepted) {
        throw BlockerUnavailable(spec.target_expert,
                                 "expert " + std::to_string(spec.target_expert) +
                                     ": no chunk reached priority " +
                                     std::to_string(spec.threshold) + " within " +
                                     std::to_string(spec.max_attempts) + " attempts");
      }
    }
    seq.resize(last_hit + 1);
    out.push_back(std::move(seq));
  }
  return out;
}

BlockerLibrary::BlockerLibrary(std::shared_ptr<const Model> model, RouterConfig router,
                               AttackParams params)
    : model_(std::move(model)), router_(router), params_(std::move(params)) {}

BlockerSpec BlockerLibrary::spec_for(int expert, std::size_t padding) const {
  BlockerSpec spec;
  spec.target_expert = expert;
  spec.threshold = params_.threshold;
  spec.nb = blockers_per_sequence(
      attack_capacity(params_, router_, model_->config().experts, padding), params_.batch_size);
  spec.bsl = params_.blocker_len == 0 ? padding - 1 : std::min(params_.blocker_len, padding - 1);
  spec.restricted_vocab = params_.blocker_vocab;
  spec.max_attempts = params_.max_attempts;
  spec.seed = mix_seed(mix_seed(params_.blocker_seed, static_cast<std::uint64_t>(expert)), padding);
  return spec;
}

const std::vector<TokenSequence>* BlockerLibrary::get(int expert, std::size_t padding) {
  std::lock_guard lock(mu_);
  const auto key = std::make_pair(expert, padding);
  auto it = cache_.find(key);
  if (it == cache_.end()) {
    std::optional<std::vector<TokenSequence>> found;
    try {
      found = find_blocking_sequences(spec_for(expert, padding), params_.batch_size - 3, *model_,
                                      router_);
    } catch (const BlockerUnavailable&) {
    }
    it = cache_.emplace(key, std::move(found)).first;
  }
  return it->second ? &*it->second : nullptr;
}

BufferShape analyse_buffer(LocalModel& local, const AdversarialBatch& adv,
                           const TokenSequence& victim_fill, int expert) {
  const Batch batch = adv.with_victim(victim_fill);
  auto [gates, order] = local.first_layer_routing(batch);
  const auto& column = order.experts[static_cast<std::size_t>(expert)];

  BufferShape shape;
  shape.expert = expert;
  shape.capacity = expert_capacity({batch.size(), batch.length, local.router().capacity_factor,
                                    static_cast<std::size_t>(local.model().config().experts)});
  shape.guess_flat = batch.flat_index(adv.probe_slot, adv.sequences[adv.probe_slot].size() - 1);

  std::vector<char> above(batch.size() * batch.length, 0);
  std::size_t rank = 0;
  while (column[rank].token != shape.guess_flat) above[column[rank++].token] = 1;
  shape.rank = rank;
  shape.guess_priority = column[rank].weight;

  const std::size_t probe_first = adv.probe_slot * batch.length;
  const std::size_t victim_first = adv.victim_slot * batch.length;
  for (std::size_t i = 0; i < column.size(); ++i) {
    const std::size_t tok = column[i].token;
    if (i < rank && tok >= probe_first && tok < probe_first + batch.length) ++shape.probe_above;
    const bool in_victim = tok >= victim_first && tok < victim_first + batch.length;
    if (i != rank && !in_victim && column[i].weight == shape.guess_priority) {
      shape.accidental_tie = true;
    }
  }

  const auto slots = adv.blocker_slots();
  for (auto s = slots.rbegin(); s != slots.rend(); ++s) {
    for (std::size_t pos = adv.sequences[*s].size(); pos-- > 1;) {
      if (above[batch.flat_index(*s, pos)]) shape.removable.emplace_back(*s, pos);
    }
  }
  shape.gates = std::move(gates);
  shape.length = batch.length;
  return shape;
}

std::size_t min_position(LocalModel& local, const AdversarialBatch& adv, int expert) {
  const BufferShape shape = analyse_buffer(local, adv, {vocab::kPad}, expert);
  if (shape.guess_priority <= 0.0) {
    throw PositionUndefined("guess token has zero priority for expert " + std::to_string(expert));
  }
  return shape.rank;
}

AdversarialBatch trim_blockers(const AdversarialBatch& adv, const BufferShape& shape,
                               std::size_t count) {
  if (count > shape.removable.size()) {
    throw InvalidInput("cannot trim " + std::to_string(count) + " blocker tokens, only " +
                       std::to_string(shape.removable.size()) + " removable");
  }
  AdversarialBatch out = adv;
  for (std::size_t i = 0; i < count; ++i) {
    const auto [slot, pos] = shape.removable[i];
    out.sequences[slot].resize(std::min(out.sequences[slot].size(), pos));
  }
  return out;
}

bool prefix_tie_risk(const BufferShape& shape, const AdversarialBatch& trimmed,
                     std::size_t unknown_victim) {
  const std::size_t len = shape.length;
  const std::size_t rows = shape.gates.rows();
  const std::size_t prefix = trimmed.sequences[trimmed.probe_slot].size() - 1;
  std::vector<char> live(rows, 0);
  for (std::size_t s = 0; s < trimmed.size(); ++s) {
    if (s == trimmed.victim_slot) continue;
    for (std::size_t t = 0; t < trimmed.sequences[s].size(); ++t) live[s * len + t] = 1;
  }
  const std::size_t probe_row = trimmed.probe_slot * len;
  for (std::size_t e = 0; e < shape.gates.cols(); ++e) {
    for (std::size_t t = 0; t < prefix; ++t) {
      const double v = shape.gates(probe_row + t, e);
      std::size_t above = 0;
      for (std::size_t r = 0; r < rows; ++r) above += live[r] && shape.gates(r, e) > v;
      // The victim repeats the probe's prefix token for token.
      for (std::size_t u = 0; u < prefix; ++u) above += shape.gates(probe_row + u, e) > v;
      // The pair occupies the first two places of its tie group, so exactly
      // one free slot splits it.
      if (above + 1 <= shape.capacity && shape.capacity <= above + unknown_victim + 1) return true;
    }
  }
  return false;
}

bool probe_tie_split(const BufferShape& shape, const AdversarialBatch& trimmed,
                     const TokenSequence& victim_fill) {
  const std::size_t len = shape.length;
  const std::size_t rows = shape.gates.rows();
  std::vector<char> live(rows, 0);
  for (std::size_t s = 0; s < trimmed.size(); ++s) {
    const std::size_t n = s == trimmed.victim_slot ? victim_fill.size() : trimmed.sequences[s].size();
    for (std::size_t t = 0; t < n; ++t) live[s * len + t] = 1;
  }
  const std::size_t probe_len = trimmed.sequences[trimmed.probe_slot].size();
  const std::size_t probe_row = trimmed.probe_slot * len;
  for (std::size_t e = 0; e < shape.gates.cols(); ++e) {
    for (std::size_t t = 0; t < probe_len; ++t) {
      if (t + 1 == probe_len && e == static_cast<std::size_t>(shape.expert)) continue;
      const double v = shape.gates(probe_row + t, e);
      std::size_t above = 0;
      std::size_t equal = 0;
      for (std::size_t r = 0; r < rows; ++r) {
        if (!live[r]) continue;
        above += shape.gates(r, e) > v;
        equal += shape.gates(r, e) == v;
      }
      if (above < shape.capacity && above + equal > shape.capacity) return true;
    }
  }
  return false;
}

AdversarialBatch swap_order(const AdversarialBatch& adv) {
  AdversarialBatch out = adv;
  std::swap(out.sequences[out.probe_slot], out.sequences[out.victim_slot]);
  std::swap(out.roles[out.probe_slot], out.roles[out.victim_slot]);
  std::swap(out.probe_slot, out.victim_slot);
  out.order = adv.order == BatchOrder::ProbeFirst ? BatchOrder::VictimFirst : BatchOrder::ProbeFirst;
  return out;
}

}  // namespace moeleak
