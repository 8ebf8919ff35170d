#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "moeleak/attack.hpp"

namespace moeleak {

// Experiment configuration. On disk it is a flat JSON object whose keys are
// the notation names of the attack (B, N, P, Phi, ...); see README.md for
// the full schema. Every key is optional.
struct RunConfig {
  ModelConfig model{};
  /// Router of the target deployment, defenses included.
  RouterConfig router{};
  AttackParams attack{};

  std::size_t secret_count = 50;
  std::size_t min_len = 3;
  std::size_t max_len = 5;
  std::uint64_t seed = 42;
  /// Explicit corpus; replaces the seeded one when non-empty.
  std::vector<std::string> secrets;
  /// Victim message for the oracle command; empty means the first corpus
  /// message.
  std::string oracle_secret;
  /// Values of the expert sweep axis; empty means every expert.
  std::vector<int> expert_axis;
  std::filesystem::path out_dir = "out";
};

/// Throws ConfigError naming the offending key for unknown keys, wrong
/// types and out-of-range values.
RunConfig parse_config(std::string_view json_text);
RunConfig load_config(const std::filesystem::path& path);
/// Resolved configuration, every key present.
std::string config_json(const RunConfig& config);

/// "none", "randomized_ties", "batch_isolation" or "dense_control".
std::string defense_name(const RouterConfig& router);

/// The attacker simulates the deployment it expects: ECR with stable tie
/// order and the target's capacity factor and quantization, no defenses.
RouterConfig attacker_router(const RunConfig& config);

/// Seeded messages over the guess vocabulary with lengths uniform in
/// [min_len, max_len], or the explicit list.
std::vector<TokenSequence> secret_corpus(const RunConfig& config);

/// Model, attacker blocker cache and router pair shared by the commands.
struct Lab {
  std::shared_ptr<const Model> model;
  RouterConfig target_router;
  RouterConfig local_router;
  AttackParams params;
  std::unique_ptr<BlockerLibrary> blockers;
};

Lab make_lab(const RunConfig& config);

struct MessageRun {
  TokenSequence secret;
  ExtractionResult result;
  /// Positions where the recovered token equals the secret's.
  std::size_t tokens_correct = 0;
  std::vector<LedgerRecord> records;

  bool success() const { return result.success && tokens_correct == secret.size(); }
};

struct LengthTally {
  std::size_t messages = 0;
  std::size_t messages_recovered = 0;
  std::size_t tokens = 0;
  std::size_t tokens_recovered = 0;
  std::uint64_t target_queries = 0;
};

struct Report {
  std::string defense;
  std::vector<MessageRun> runs;
  LengthTally total;
  std::map<std::size_t, LengthTally> by_length;
  /// (expert, token index) -> tokens recovered there.
  std::map<std::pair<int, std::size_t>, std::size_t> heatmap;
  /// token index -> (target, local) query sums and token count.
  struct QuerySeries {
    std::uint64_t target = 0;
    std::uint64_t local = 0;
    std::size_t tokens = 0;
  };
  std::map<std::size_t, QuerySeries> queries;
};

/// Runs the leakage attack on every corpus message. Messages are attacked
/// concurrently, each against its own target facade and ledger; the report
/// does not depend on the thread count.
Report run_corpus(Lab& lab, const std::vector<TokenSequence>& corpus);

std::string report_json(const Report& report, const RunConfig& config);

/// report.json, success_by_length.csv, expert_index_heatmap.csv,
/// query_counts.csv and ledger.jsonl in `dir`.
void write_report(const Report& report, const RunConfig& config, const std::filesystem::path& dir);

enum class SweepAxis { Padding, Expert };
SweepAxis sweep_axis_from_string(std::string_view name);
std::string_view to_string(SweepAxis axis);

struct SweepRow {
  long axis_value = 0;
  std::size_t message_length = 0;
  std::size_t messages = 0;
  double success_rate = 0.0;
  double mean_target_queries = 0.0;
};

/// One corpus run per axis value, restricted to that padding length or
/// expert; rows grouped by axis value, then message length.
std::vector<SweepRow> sweep(const RunConfig& config, SweepAxis axis);
void write_sweep_csv(const std::vector<SweepRow>& rows, SweepAxis axis, std::ostream& out);

struct TieRow {
  std::string relation;  // "P_guess > P_target", ...
  BatchOrder order = BatchOrder::ProbeFirst;
  bool expected_drop = false;
  bool observed_drop = false;
  /// False when the outcome changed across tie seeds.
  bool deterministic = true;

  bool matches() const { return deterministic && expected_drop == observed_drop; }
};

/// The six guess/target priority cases at a one-slot buffer boundary on the
/// live router. "Drop" is the guess as seen through the probe's output.
std::vector<TieRow> demo_tie(const RouterConfig& router);
void print_tie_table(const std::vector<TieRow>& rows, const RouterConfig& router,
                     std::ostream& out);

}  // namespace moeleak
