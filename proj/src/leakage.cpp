#include <algorithm>
#include <deque>

#include "moeleak/attack.hpp"
#include "moeleak/errors.hpp"

namespace moeleak {

namespace {

// A (padding, expert) choice for one guess together with the victim-slot
// hypotheses it leaves open.
struct Placement {
  std::size_t padding = 0;
  int expert = 0;
  AdversarialBatch full;
  BufferShape shape;
  std::vector<std::size_t> victim_above;  // hypotheses s, ascending
};

// Placements are appended while earlier ones are still referenced, so the
// container must keep references stable.
struct GuessPlan {
  std::size_t cursor = 0;
  std::deque<Placement> found;
};

class TokenSearch {
 public:
  TokenSearch(std::size_t index, std::size_t secret_len, const TokenSequence& prefix,
              TargetFacade& target, LocalModel& local, BlockerLibrary& blockers,
              const AttackParams& params, const ProgressFn& progress)
      : index_(index),
        secret_len_(secret_len),
        prefix_(prefix),
        target_(target),
        local_(local),
        blockers_(blockers),
        params_(params),
        progress_(progress),
        budget_(2 * params.guess_vocab.size() * (secret_len + 1)) {
    const std::vector<int> experts = target_experts(params, local.model().config().experts);
    for (std::size_t p : params.paddings) {
      if (prefix.size() + 2 > p || secret_len + 1 > p) continue;
      for (int e : experts) choices_.emplace_back(p, e);
    }
  }

  TokenRecord run() {
    TokenRecord rec;
    rec.index = index_;
    std::vector<GuessPlan> plans(params_.guess_vocab.size());
    for (std::size_t pass = 0;; ++pass) {
      bool any = false;
      for (std::size_t g = 0; g < params_.guess_vocab.size(); ++g) {
        const TokenId guess = params_.guess_vocab[g];
        const Placement* place = placement(plans[g], guess, pass);
        if (place == nullptr) continue;
        any = true;
        for (std::size_t s : place->victim_above) {
          if (spent_ + 2 > budget_) return finish(rec);
          ++rec.verifications;
          if (try_position(*place, guess, s) && confirm(plans[g], guess, pass, place->expert, rec)) {
            rec.recovered = true;
            rec.token = guess;
            rec.expert = place->expert;
            rec.padding = place->padding;
            rec.position = place->shape.rank + s;
            return finish(rec);
          }
        }
      }
      if (!any) return finish(rec);
    }
  }

 private:
  TokenRecord finish(TokenRecord rec) const {
    const auto counts = local_.ledger().per_token()[index_];
    rec.target_queries = counts.target;
    rec.local_queries = counts.local;
    return rec;
  }

  // Distinct tokens can share a quantized priority for one expert. A hit is
  // accepted once a placement at another expert reproduces it; without such
  // a placement the single hit stands.
  bool confirm(GuessPlan& plan, TokenId guess, std::size_t pass, int expert, TokenRecord& rec) {
    if (!params_.confirm) return true;
    for (std::size_t k = pass + 1;; ++k) {
      const Placement* other = placement(plan, guess, k);
      if (other == nullptr) return true;
      if (other->expert == expert) continue;
      for (std::size_t s : other->victim_above) {
        if (spent_ + 2 > budget_) return false;
        ++rec.verifications;
        if (try_position(*other, guess, s)) return true;
      }
      return false;
    }
  }

  TokenSequence probe_for(TokenId guess) const {
    TokenSequence probe{vocab::kBos};
    probe.insert(probe.end(), prefix_.begin(), prefix_.end());
    probe.push_back(guess);
    return probe;
  }

  // The pass-th feasible placement of `guess`, searching choices lazily.
  const Placement* placement(GuessPlan& plan, TokenId guess, std::size_t pass) {
    while (plan.found.size() <= pass && plan.cursor < choices_.size()) {
      const auto [padding, expert] = choices_[plan.cursor++];
      if (auto p = evaluate(guess, padding, expert)) plan.found.push_back(std::move(*p));
    }
    return pass < plan.found.size() ? &plan.found[pass] : nullptr;
  }

  std::optional<Placement> evaluate(TokenId guess, std::size_t padding, int expert) {
    const auto* bl = blockers_.get(expert, padding);
    if (bl == nullptr) return std::nullopt;
    Placement place;
    place.padding = padding;
    place.expert = expert;
    place.full = compose_adversarial_batch(probe_for(guess), *bl, padding, BatchOrder::ProbeFirst,
                                           params_.pair_slot, params_.batch_size);
    place.shape = analyse_buffer(local_, place.full, {vocab::kPad}, expert);
    const BufferShape& sh = place.shape;
    if (sh.guess_priority < params_.min_guess_priority || sh.guess_priority >= params_.threshold ||
        sh.accidental_tie) {
      return std::nullopt;
    }
    // The victim repeats the probe's BOS and prefix, so it holds at least as
    // many above-guess tokens as the probe; its unseen continuation adds at
    // most secret_len - index - 1 more.
    const std::size_t lo = sh.probe_above;
    const std::size_t hi = sh.probe_above + (secret_len_ - index_ - 1);
    // A placement must cover every hypothesis, otherwise the right guess
    // could be tested only at wrong positions.
    for (std::size_t s = lo; s <= hi; ++s) {
      const std::size_t rank = sh.rank + s;
      if (rank + 1 < sh.capacity || rank - (sh.capacity - 1) > sh.removable.size()) {
        return std::nullopt;
      }
      const AdversarialBatch trimmed = trim_blockers(place.full, sh, rank - (sh.capacity - 1));
      if (prefix_tie_risk(sh, trimmed, secret_len_ - index_)) return std::nullopt;
      place.victim_above.push_back(s);
    }
    return place;
  }

  bool try_position(const Placement& place, TokenId guess, std::size_t s) {
    const BufferShape& sh = place.shape;
    const std::size_t trim = sh.rank + s - (sh.capacity - 1);
    const AdversarialBatch first = trim_blockers(place.full, sh, trim);
    const AdversarialBatch second = swap_order(first);

    QueryLedger& ledger = local_.ledger();
    const std::uint64_t local_before = ledger.local_queries();
    const LogitVector out1 = target_.query_target(first);
    const LogitVector out2 = target_.query_target(second);
    spent_ += 2;

    LedgerRecord rec;
    rec.token_index = index_;
    rec.guess = guess;
    rec.position = sh.rank + s;
    rec.expert = place.expert;
    rec.padding = place.padding;
    rec.step_target_queries = 2;

    bool correct = false;
    if (max_abs_diff(out1, out2) > params_.skip_epsilon) {
      rec.path_recovery = true;
      // Reference run: the probe's own BOS + prefix + guess stands in for the
      // victim, with enough blockers kept to put the guess at the buffer edge.
      const TokenSequence standin = probe_for(guess);
      const std::size_t extra = s - sh.probe_above;
      const AdversarialBatch ref = trim_blockers(place.full, sh, trim > extra ? trim - extra : 0);
      const Batch batch = ref.with_victim(standin);
      const std::size_t prefix_len = standin.size() - 1;
      auto [cache, trace] = local_.cache_with_trace(batch, ref.probe_slot, prefix_len);
      const RoutingPath estimate = path_from_trace(
          trace, batch.flat_index(ref.probe_slot, prefix_len), local_.model().config().experts);
      const PathTable table =
          build_path_table(local_, cache, guess, estimate, params_.beta, params_.tolerance);
      correct = verify_guess(out1, out2, place.expert, table, params_.skip_epsilon,
                             params_.max_mismatch)
                    .correct;
    }
    rec.verified = correct;
    rec.step_local_queries = ledger.local_queries() - local_before;
    ledger.record(rec);
    if (progress_) progress_(ledger.records().back());
    return correct;
  }

  std::size_t index_;
  std::size_t secret_len_;
  const TokenSequence& prefix_;
  TargetFacade& target_;
  LocalModel& local_;
  BlockerLibrary& blockers_;
  const AttackParams& params_;
  const ProgressFn& progress_;
  std::size_t budget_;
  std::size_t spent_ = 0;
  std::vector<std::pair<std::size_t, int>> choices_;
};

}  // namespace

ExtractionResult leakage_attack(std::size_t secret_len, TargetFacade& target, LocalModel& local,
                                BlockerLibrary& blockers, const AttackParams& params,
                                const ProgressFn& progress) {
  if (secret_len == 0) throw InvalidInput("secret length must be >= 1");
  if (params.guess_vocab.empty()) throw InvalidInput("guess vocabulary is empty");

  ExtractionResult result;
  QueryLedger& ledger = local.ledger();
  const std::uint64_t target_before = ledger.target_queries();
  const std::uint64_t local_before = ledger.local_queries();

  result.success = true;
  for (std::size_t t = 0; t < secret_len; ++t) {
    ledger.begin_token(t);
    TokenSearch search(t, secret_len, result.recovered, target, local, blockers, params, progress);
    const TokenRecord rec = search.run();
    result.tokens.push_back(rec);
    if (!rec.recovered) {
      result.success = false;
      break;
    }
    result.recovered.push_back(rec.token);
  }
  result.target_queries = ledger.target_queries() - target_before;
  result.local_queries = ledger.local_queries() - local_before;
  return result;
}

}  // namespace moeleak
