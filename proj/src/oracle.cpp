#include "moeleak/attack.hpp"
#include "moeleak/errors.hpp"

namespace moeleak {

namespace {

bool guess_in_expert(const LocalResult& run, const AdversarialBatch& adv, const Batch& batch,
                     int expert) {
  const std::size_t flat =
      batch.flat_index(adv.probe_slot, adv.sequences[adv.probe_slot].size() - 1);
  return run.trace->front().assignment.contains(static_cast<std::size_t>(expert), flat);
}

struct Prediction {
  AdversarialBatch first;
  AdversarialBatch second;
  LogitVector pred1;
  LogitVector pred2;
  std::size_t position = 0;
};

// The candidate doubles as the victim stand-in, so the whole batch and the
// tie at the buffer edge can be simulated before touching the target.
std::optional<Prediction> predict(const TokenSequence& probe, const std::vector<TokenSequence>& bl,
                                  std::size_t padding, int expert, bool strict, LocalModel& local,
                                  const AttackParams& params) {
  const AdversarialBatch full =
      compose_adversarial_batch(probe, bl, padding, BatchOrder::ProbeFirst,
                                params.pair_slot, params.batch_size);
  const BufferShape shape = analyse_buffer(local, full, probe, expert);
  if (!(shape.guess_priority > 0.0) || shape.guess_priority >= params.threshold ||
      shape.accidental_tie || shape.rank + 1 < shape.capacity) {
    return std::nullopt;
  }
  const std::size_t trim = shape.rank - (shape.capacity - 1);
  if (trim > shape.removable.size()) return std::nullopt;

  Prediction p;
  p.first = trim_blockers(full, shape, trim);
  if (probe_tie_split(shape, p.first, probe) == strict) return std::nullopt;
  p.second = swap_order(p.first);
  p.position = shape.capacity - 1;

  const Batch batch1 = p.first.with_victim(probe);
  const Batch batch2 = p.second.with_victim(probe);
  LocalResult run1 = local.query_local(batch1, true);
  LocalResult run2 = local.query_local(batch2, true);
  if (!guess_in_expert(run1, p.first, batch1, expert) ||
      guess_in_expert(run2, p.second, batch2, expert)) {
    return std::nullopt;
  }
  p.pred1 = std::move(run1.logits[p.first.probe_slot]);
  p.pred2 = std::move(run2.logits[p.second.probe_slot]);
  if (mismatch_count(p.pred1, p.pred2, params.tolerance) <= params.max_mismatch) {
    return std::nullopt;
  }
  return p;
}

}  // namespace

OracleOutcome oracle_attack(const TokenSequence& candidate, TargetFacade& target,
                            LocalModel& local, BlockerLibrary& blockers,
                            const AttackParams& params) {
  if (candidate.empty()) throw InvalidInput("oracle attack needs a non-empty candidate");
  TokenSequence probe{vocab::kBos};
  probe.insert(probe.end(), candidate.begin(), candidate.end());
  const std::vector<int> experts = target_experts(params, local.model().config().experts);

  // Placements where no other probe token hangs on tie order come first;
  // the rest are a fallback.
  for (const bool strict : {true, false}) {
    for (std::size_t padding : params.paddings) {
      if (probe.size() > padding) continue;
      for (int e : experts) {
        const auto* bl = blockers.get(e, padding);
        if (bl == nullptr) continue;
        const auto p = predict(probe, *bl, padding, e, strict, local, params);
        if (!p) continue;

        const LogitVector out1 = target.query_target(p->first);
        const LogitVector out2 = target.query_target(p->second);
        OracleOutcome outcome;
        outcome.configured = true;
        outcome.expert = e;
        outcome.padding = padding;
        outcome.position = p->position;
        outcome.target_queries = 2;
        outcome.accepted =
            mismatch_count(out1, p->pred1, params.tolerance) <= params.max_mismatch &&
            mismatch_count(out2, p->pred2, params.tolerance) <= params.max_mismatch;
        return outcome;
      }
    }
  }
  return {};
}

}  // namespace moeleak
