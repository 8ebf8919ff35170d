#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <string_view>
#include <vector>

#include "moeleak/model.hpp"

namespace moeleak {

enum class SequenceRole { Secret, Probe, Blocker, Padding };
std::string_view to_string(SequenceRole role);

/// Attacker-side batch. The Secret slot holds no tokens; the target facade
/// injects the victim's message there.
struct AdversarialBatch {
  std::vector<TokenSequence> sequences;
  std::vector<SequenceRole> roles;
  std::size_t victim_slot = 0;
  std::size_t probe_slot = 0;
  std::size_t padding_len = 0;
  BatchOrder order = BatchOrder::ProbeFirst;

  std::size_t size() const noexcept { return sequences.size(); }
  /// Indices of Blocker sequences in batch order.
  std::vector<std::size_t> blocker_slots() const;
  /// Materialises the batch with `victim` in the Secret slot.
  Batch with_victim(const TokenSequence& victim) const;
  /// Secret slot filled with a single padding token.
  Batch with_empty_victim() const;
};

/// BOS followed by padding tokens, `padding_len` long.
TokenSequence padding_sequence(std::size_t padding_len);

/// Layout: blockers fill the slots around the (probe, secret) pair, which
/// starts at `pair_slot`; the padding sequence is last. B = |blockers| + 3.
/// Throws CompositionError on an empty blocker list, P == 0 or a pair slot
/// outside the batch.
AdversarialBatch compose_adversarial_batch(const TokenSequence& probe,
                                           const std::vector<TokenSequence>& blockers,
                                           std::size_t padding_len, BatchOrder order,
                                           std::size_t pair_slot = 0);

/// Same composition, additionally checking the blocker count against B.
AdversarialBatch compose_adversarial_batch(const TokenSequence& probe,
                                           const std::vector<TokenSequence>& blockers,
                                           std::size_t padding_len, BatchOrder order,
                                           std::size_t pair_slot, std::size_t batch_size);

/// One attack step, exported as a JSON line.
struct LedgerRecord {
  std::size_t token_index = 0;
  TokenId guess = 0;
  std::size_t position = 0;
  int expert = -1;
  std::size_t padding = 0;
  bool verified = false;
  bool path_recovery = false;
  std::uint64_t target_queries = 0;  // cumulative at record time
  std::uint64_t local_queries = 0;   // cumulative at record time
  std::uint64_t step_target_queries = 0;
  std::uint64_t step_local_queries = 0;
};

struct TokenQueryCounts {
  std::uint64_t target = 0;
  std::uint64_t local = 0;
};

/// Monotone query counters with a per-token breakdown. Updates are
/// serialised; safe to share between facades on different threads.
class QueryLedger {
 public:
  void begin_token(std::size_t token_index);
  void add_target(std::uint64_t n = 1);
  void add_local(std::uint64_t n = 1);
  void record(LedgerRecord record);

  std::uint64_t target_queries() const;
  std::uint64_t local_queries() const;
  std::map<std::size_t, TokenQueryCounts> per_token() const;
  std::vector<LedgerRecord> records() const;

  /// Fields: token_index, guess, position, expert, padding, verified,
  /// path_recovery, target_queries, local_queries, step_target_queries,
  /// step_local_queries.
  void write_jsonl(std::ostream& out) const;

 private:
  mutable std::mutex mu_;
  std::size_t current_token_ = 0;
  std::uint64_t target_ = 0;
  std::uint64_t local_ = 0;
  std::map<std::size_t, TokenQueryCounts> per_token_;
  std::vector<LedgerRecord> records_;
};

/// The remote model. It alone knows the victim's message and returns only
/// the probe sequence's final-position logits.
class TargetFacade {
 public:
  TargetFacade(std::shared_ptr<const Model> model, RouterConfig router, TokenSequence victim,
               QueryLedger& ledger);

  LogitVector query_target(const AdversarialBatch& batch);

 private:
  std::shared_ptr<const Model> model_;
  RouterConfig router_;
  TokenSequence victim_;
  QueryLedger& ledger_;
};

struct LocalResult {
  std::vector<LogitVector> logits;
  std::optional<RouterTrace> trace;
};

/// The attacker's white-box copy of the model.
class LocalModel {
 public:
  LocalModel(std::shared_ptr<const Model> model, RouterConfig router, QueryLedger& ledger);

  const Model& model() const noexcept { return *model_; }
  const RouterConfig& router() const noexcept { return router_; }
  QueryLedger& ledger() noexcept { return ledger_; }

  LocalResult query_local(const Batch& batch, bool capture_trace = true);
  /// Forced-path override of one token on top of a prefix cache.
  LogitVector query_local(const PrefixCache& cache, TokenId token, const RoutingPath& path);
  /// One batch run that yields both the cache and the trace.
  std::pair<PrefixCache, RouterTrace> cache_with_trace(const Batch& batch, std::size_t sequence,
                                                       std::size_t prefix_len);
  /// Layer-0 gates of `batch` and every expert column fully ordered
  /// (capacity = all tokens). Layer 0 needs no cross-sequence state.
  std::pair<GateMatrix, ExpertAssignment> first_layer_routing(const Batch& batch);
  /// Only column `expert` of first_layer_routing.
  ExpertAssignment first_layer_order(const Batch& batch, int expert);

 private:
  std::shared_ptr<const Model> model_;
  RouterConfig router_;
  QueryLedger& ledger_;
};

}  // namespace moeleak
