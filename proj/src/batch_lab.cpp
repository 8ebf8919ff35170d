#include "moeleak/batch_lab.hpp"

#include <algorithm>
#include <string>

#include <json.hpp>

#include "moeleak/errors.hpp"

namespace moeleak {

std::string_view to_string(SequenceRole role) {
  switch (role) {
    case SequenceRole::Secret: return "secret";
    case SequenceRole::Probe: return "probe";
    case SequenceRole::Blocker: return "blocker";
    case SequenceRole::Padding: return "padding";
  }
  return "unknown";
}

std::vector<std::size_t> AdversarialBatch::blocker_slots() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < roles.size(); ++i) {
    if (roles[i] == SequenceRole::Blocker) out.push_back(i);
  }
  return out;
}

Batch AdversarialBatch::with_victim(const TokenSequence& victim) const {
  std::vector<TokenSequence> seqs = sequences;
  seqs[victim_slot] = victim;
  return make_batch(std::move(seqs), padding_len);
}

Batch AdversarialBatch::with_empty_victim() const { return with_victim({vocab::kPad}); }

TokenSequence padding_sequence(std::size_t padding_len) {
  if (padding_len == 0) throw CompositionError("padding length P must be >= 1");
  TokenSequence seq(padding_len, vocab::kPad);
  seq.front() = vocab::kBos;
  return seq;
}

AdversarialBatch compose_adversarial_batch(const TokenSequence& probe,
                                           const std::vector<TokenSequence>& blockers,
                                           std::size_t padding_len, BatchOrder order,
                                           std::size_t pair_slot) {
  if (probe.empty()) throw CompositionError("probe sequence must be non-empty");
  if (blockers.empty()) throw CompositionError("adversarial batch needs at least one blocker");
  const std::size_t batch_size = blockers.size() + 3;
  if (pair_slot + 2 > batch_size - 1) {
    throw CompositionError("probe/secret pair slot " + std::to_string(pair_slot) +
                           " does not fit in a batch of " + std::to_string(batch_size));
  }

  AdversarialBatch adv;
  adv.padding_len = padding_len;
  adv.order = order;
  adv.probe_slot = order == BatchOrder::ProbeFirst ? pair_slot : pair_slot + 1;
  adv.victim_slot = order == BatchOrder::ProbeFirst ? pair_slot + 1 : pair_slot;
  adv.sequences.resize(batch_size);
  adv.roles.resize(batch_size, SequenceRole::Blocker);

  std::size_t next_blocker = 0;
  for (std::size_t slot = 0; slot + 1 < batch_size; ++slot) {
    if (slot == adv.probe_slot || slot == adv.victim_slot) continue;
    adv.sequences[slot] = blockers[next_blocker++];
  }
  adv.sequences[adv.probe_slot] = probe;
  adv.roles[adv.probe_slot] = SequenceRole::Probe;
  adv.roles[adv.victim_slot] = SequenceRole::Secret;
  adv.sequences.back() = padding_sequence(padding_len);
  adv.roles.back() = SequenceRole::Padding;
  return adv;
}

AdversarialBatch compose_adversarial_batch(const TokenSequence& probe,
                                           const std::vector<TokenSequence>& blockers,
                                           std::size_t padding_len, BatchOrder order,
                                           std::size_t pair_slot, std::size_t batch_size) {
  if (batch_size < 4 || blockers.size() != batch_size - 3) {
    throw CompositionError("expected B - 3 = " + std::to_string(batch_size < 3 ? 0 : batch_size - 3) +
                           " blocking sequences, got " + std::to_string(blockers.size()));
  }
  return compose_adversarial_batch(probe, blockers, padding_len, order, pair_slot);
}

void QueryLedger::begin_token(std::size_t token_index) {
  std::lock_guard lock(mu_);
  current_token_ = token_index;
  per_token_[token_index];
}

void QueryLedger::add_target(std::uint64_t n) {
  std::lock_guard lock(mu_);
  target_ += n;
  per_token_[current_token_].target += n;
}

void QueryLedger::add_local(std::uint64_t n) {
  std::lock_guard lock(mu_);
  local_ += n;
  per_token_[current_token_].local += n;
}

void QueryLedger::record(LedgerRecord rec) {
  std::lock_guard lock(mu_);
  rec.target_queries = target_;
  rec.local_queries = local_;
  records_.push_back(rec);
}

std::uint64_t QueryLedger::target_queries() const {
  std::lock_guard lock(mu_);
  return target_;
}

std::uint64_t QueryLedger::local_queries() const {
  std::lock_guard lock(mu_);
  return local_;
}

std::map<std::size_t, TokenQueryCounts> QueryLedger::per_token() const {
  std::lock_guard lock(mu_);
  return per_token_;
}

std::vector<LedgerRecord> QueryLedger::records() const {
  std::lock_guard lock(mu_);
  return records_;
}

void QueryLedger::write_jsonl(std::ostream& out) const {
  std::lock_guard lock(mu_);
  for (const auto& r : records_) {
    nlohmann::ordered_json j;
    j["token_index"] = r.token_index;
    j["guess"] = r.guess;
    j["position"] = r.position;
    j["expert"] = r.expert;
    j["padding"] = r.padding;
    j["verified"] = r.verified;
    j["path_recovery"] = r.path_recovery;
    j["target_queries"] = r.target_queries;
    j["local_queries"] = r.local_queries;
    j["step_target_queries"] = r.step_target_queries;
    j["step_local_queries"] = r.step_local_queries;
    out << j.dump() << '\n';
  }
}

TargetFacade::TargetFacade(std::shared_ptr<const Model> model, RouterConfig router,
                           TokenSequence victim, QueryLedger& ledger)
    : model_(std::move(model)), router_(router), victim_(std::move(victim)), ledger_(ledger) {
  if (victim_.empty()) throw InvalidInput("victim message must be non-empty");
}

LogitVector TargetFacade::query_target(const AdversarialBatch& batch) {
  const Batch full = batch.with_victim(victim_);
  auto result = model_->forward_batch(full, router_, false);
  ledger_.add_target();
  return std::move(result.logits[batch.probe_slot]);
}

LocalModel::LocalModel(std::shared_ptr<const Model> model, RouterConfig router, QueryLedger& ledger)
    : model_(std::move(model)), router_(router), ledger_(ledger) {}

LocalResult LocalModel::query_local(const Batch& batch, bool capture_trace) {
  auto r = model_->forward_batch(batch, router_, capture_trace);
  ledger_.add_local();
  return {std::move(r.logits), std::move(r.trace)};
}

LogitVector LocalModel::query_local(const PrefixCache& cache, TokenId token,
                                    const RoutingPath& path) {
  auto out = model_->forward_with_forced_path(cache, token, path);
  ledger_.add_local();
  return out;
}

std::pair<PrefixCache, RouterTrace> LocalModel::cache_with_trace(const Batch& batch,
                                                                 std::size_t sequence,
                                                                 std::size_t prefix_len) {
  RouterTrace trace;
  PrefixCache cache = model_->build_prefix_cache(batch, router_, sequence, prefix_len, &trace);
  ledger_.add_local();
  return {std::move(cache), std::move(trace)};
}

std::pair<GateMatrix, ExpertAssignment> LocalModel::first_layer_routing(const Batch& batch) {
  const std::size_t len = batch.length;
  const auto nexp = static_cast<std::size_t>(model_->config().experts);
  GateMatrix gates(batch.size() * len, nexp);
  for (std::size_t s = 0; s < batch.size(); ++s) {
    TokenSequence padded = batch.sequences[s];
    padded.resize(len, vocab::kPad);
    const GateMatrix g = model_->first_layer_gates(padded, router_);
    for (std::size_t t = 0; t < len; ++t) {
      std::copy_n(g.row(t).begin(), nexp, gates.row(s * len + t).begin());
    }
  }
  ledger_.add_local();
  RouterConfig cfg = router_;
  cfg.batch_isolation = false;
  cfg.dense_control = false;
  ExpertAssignment order = route_with_capacity(gates, gates.rows(), cfg, {batch.size(), len}, 0);
  return {std::move(gates), std::move(order)};
}

ExpertAssignment LocalModel::first_layer_order(const Batch& batch, int expert) {
  const auto nexp = static_cast<std::size_t>(model_->config().experts);
  if (expert < 0 || static_cast<std::size_t>(expert) >= nexp) {
    throw InvalidInput("expert index out of range");
  }
  ExpertAssignment full = first_layer_routing(batch).second;
  const auto e = static_cast<std::size_t>(expert);
  ExpertAssignment one;
  one.capacity = full.capacity;
  one.experts.resize(nexp);
  one.experts[e] = std::move(full.experts[e]);
  one.membership.assign(full.membership.size(), 0);
  for (const auto& slot : one.experts[e]) one.membership[slot.token] = std::uint64_t{1} << e;
  return one;
}

}  // namespace moeleak
