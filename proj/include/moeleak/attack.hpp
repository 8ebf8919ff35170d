#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <utility>
#include <vector>

#include "moeleak/batch_lab.hpp"

namespace moeleak {

/// Knobs shared by the oracle and leakage attacks.
struct AttackParams {
  std::size_t batch_size = 32;
  std::vector<std::size_t> paddings{20, 24, 30, 40, 50, 60};
  std::vector<int> experts{};    // layer-0 experts to target; empty means all
  std::size_t pair_slot = 0;     // batch slot of the (probe, secret) pair
  double threshold = 0.85;       // minimum blocker priority
  int beta = 4;                  // Hamming radius of the path table
  double skip_epsilon = 1e-12;   // outputs this close skip path recovery
  double tolerance = 1e-4;       // per-coordinate logit tolerance of the match metric
  std::size_t max_mismatch = 0;  // coordinates allowed beyond tolerance in a match
  std::size_t max_attempts = 10000;
  /// Guesses below this priority for an expert are not placed there: at the
  /// quantization step, small priorities collide too often.
  double min_guess_priority = 1e-3;
  /// Re-verify every hit at a second expert before accepting it.
  bool confirm = true;
  std::size_t blocker_len = 0;   // 0 means P - 1
  std::uint64_t blocker_seed = 1;
  std::vector<TokenId> guess_vocab = vocab::guess_vocabulary();
  std::vector<TokenId> blocker_vocab{};  // empty means every opaque token
};

/// params.experts, or every expert of the model when it is empty. Throws
/// InvalidInput on an index outside [0, experts).
std::vector<int> target_experts(const AttackParams& params, int experts);

/// Attacker capacity for a padding length: L = P, so K = floor(B * P * gamma / N).
std::size_t attack_capacity(const AttackParams& params, const RouterConfig& router, int experts,
                            std::size_t padding);

struct BlockerSpec {
  int target_expert = 0;
  double threshold = 0.85;
  std::size_t nb = 0;   // blockers per sequence
  std::size_t bsl = 0;  // tokens after BOS
  std::vector<TokenId> restricted_vocab;
  std::size_t max_attempts = 10000;
  std::uint64_t seed = 1;
};

/// nb = floor((K - 1) / (B - 3)).
std::size_t blockers_per_sequence(std::size_t capacity, std::size_t batch_size);

/// `count` sequences of BOS followed by nb chunks of length bsl / nb, each
/// chunk holding at least one token whose layer-0 priority for the target
/// expert is >= threshold; trailing tokens after the last blocker are
/// trimmed. Throws BlockerUnavailable after max_attempts failed chunks.
std::vector<TokenSequence> find_blocking_sequences(const BlockerSpec& spec, std::size_t count,
                                                   const Model& model, const RouterConfig& router);

/// Lazily built blocking sequences per (expert, padding length). Shared by
/// every attack against the same model; thread safe.
class BlockerLibrary {
 public:
  BlockerLibrary(std::shared_ptr<const Model> model, RouterConfig router, AttackParams params);

  /// nullptr when the search failed for this expert and padding.
  const std::vector<TokenSequence>* get(int expert, std::size_t padding);
  BlockerSpec spec_for(int expert, std::size_t padding) const;

 private:
  std::shared_ptr<const Model> model_;
  RouterConfig router_;
  AttackParams params_;
  std::mutex mu_;
  std::map<std::pair<int, std::size_t>, std::optional<std::vector<TokenSequence>>> cache_;
};

/// Where the probe's last token sits in one expert's layer-0 column.
struct BufferShape {
  int expert = 0;
  std::size_t capacity = 0;
  std::size_t guess_flat = 0;
  double guess_priority = 0.0;
  /// Tokens ranked strictly above the guess (its zero-based buffer slot).
  std::size_t rank = 0;
  /// Probe tokens (BOS and prefix) ranked above the guess.
  std::size_t probe_above = 0;
  /// A known token other than the victim's has exactly the guess's priority.
  bool accidental_tie = false;
  /// Above-guess blocker tokens as (slot, position), in trimming order.
  std::vector<std::pair<std::size_t, std::size_t>> removable;
  /// Layer-0 gates of the analysed batch and its padded length.
  GateMatrix gates;
  std::size_t length = 0;
};

/// Analyses `adv` with `victim_fill` in the secret slot.
BufferShape analyse_buffer(LocalModel& local, const AdversarialBatch& adv,
                           const TokenSequence& victim_fill, int expert);

/// Slot of the guess with an empty victim slot. Throws PositionUndefined
/// when the guess has zero priority for the expert.
std::size_t min_position(LocalModel& local, const AdversarialBatch& adv, int expert);

/// Trims blocker sequences from the end until `count` above-guess tokens
/// are gone.
AdversarialBatch trim_blockers(const AdversarialBatch& adv, const BufferShape& shape,
                               std::size_t count);

/// True when some probe BOS/prefix token ties with its copy in the victim at
/// a layer-0 buffer edge, so the two batch orders would route the probe's
/// prefix differently. `unknown_victim` victim tokens beyond the shared
/// prefix are unknown and may rank anywhere. `trimmed` must derive from the
/// batch `shape` was computed on.
bool prefix_tie_risk(const BufferShape& shape, const AdversarialBatch& trimmed,
                     std::size_t unknown_victim);

/// True when a capacity boundary at layer 0 cuts through a group of equal
/// priorities that holds a probe token, other than the probe's last token in
/// the targeted expert. Such a token's routing then hangs on tie order.
/// `victim_fill` must be the fill `shape` was computed with.
bool probe_tie_split(const BufferShape& shape, const AdversarialBatch& trimmed,
                     const TokenSequence& victim_fill);

/// The same sequences with the probe and secret slots swapped.
AdversarialBatch swap_order(const AdversarialBatch& adv);

struct PathTable {
  RoutingPath estimate;
  int beta = 0;
  double tolerance = 1e-4;
  std::vector<RoutingPath> paths;
  std::vector<LogitVector> outputs;

  std::size_t size() const noexcept { return paths.size(); }
};

/// Sum over i <= beta of C(bits, i).
std::uint64_t hamming_ball_size(int bits, int beta);

/// Every path within `beta` bits of `estimate`, smallest distance first.
std::vector<RoutingPath> hamming_ball(const RoutingPath& estimate, int beta);

PathTable build_path_table(LocalModel& local, const PrefixCache& cache, TokenId token,
                           const RoutingPath& estimate, int beta, double tolerance);

/// Number of coordinates differing by more than `tolerance`.
std::size_t mismatch_count(const LogitVector& a, const LogitVector& b, double tolerance);
double max_abs_diff(const LogitVector& a, const LogitVector& b);

/// Closest entry; ties go to the lowest bit pattern. Throws UnrecoverablePath
/// when the best match exceeds `max_mismatch`.
RoutingPath recover_path(const PathTable& table, const LogitVector& observed,
                         std::size_t max_mismatch = 0);

struct GuessOutcome {
  TokenId guess = 0;
  std::size_t position = 0;
  bool correct = false;
  bool skipped = false;
  std::optional<RoutingPath> path1;
  std::optional<RoutingPath> path2;
};

/// out1 comes from the probe-first batch, out2 from the victim-first one.
GuessOutcome verify_guess(const LogitVector& out1, const LogitVector& out2, int expert,
                          const PathTable& table, double epsilon, std::size_t max_mismatch = 0);

struct OracleOutcome {
  bool accepted = false;
  /// False when no expert/padding could place the last token at a buffer edge.
  bool configured = false;
  int expert = -1;
  std::size_t padding = 0;
  std::size_t position = 0;
  std::uint64_t target_queries = 0;
};

/// Checks a full candidate message (characters only, without BOS) with two
/// target queries. Throws InvalidInput on an empty candidate.
OracleOutcome oracle_attack(const TokenSequence& candidate, TargetFacade& target,
                            LocalModel& local, BlockerLibrary& blockers,
                            const AttackParams& params);

struct TokenRecord {
  std::size_t index = 0;
  TokenId token = 0;
  int expert = -1;
  std::size_t padding = 0;
  std::size_t position = 0;
  std::uint64_t target_queries = 0;
  std::uint64_t local_queries = 0;
  std::size_t verifications = 0;
  bool recovered = false;
};

struct ExtractionResult {
  TokenSequence recovered;  // characters only
  std::vector<TokenRecord> tokens;
  bool success = false;
  std::uint64_t target_queries = 0;
  std::uint64_t local_queries = 0;
};

using ProgressFn = std::function<void(const LedgerRecord&)>;

/// Extracts a `secret_len`-token message. Per token, at most
/// 2 * |guess_vocab| * (secret_len + 1) target queries are spent.
ExtractionResult leakage_attack(std::size_t secret_len, TargetFacade& target, LocalModel& local,
                                BlockerLibrary& blockers, const AttackParams& params,
                                const ProgressFn& progress = {});

}  // namespace moeleak
