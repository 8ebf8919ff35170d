#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "moeleak/errors.hpp"
#include "moeleak/experiment.hpp"

using namespace moeleak;

namespace {

int cmd_demo_tie(const RunConfig& config) {
  const auto rows = demo_tie(config.router);
  print_tie_table(rows, config.router, std::cout);
  for (const auto& r : rows) {
    if (!r.matches()) return 1;
  }
  return 0;
}

int cmd_oracle(const RunConfig& config, const std::string& candidate_text) {
  const TokenSequence candidate = vocab::encode(candidate_text);
  if (candidate.empty()) throw InvalidInput("--candidate must be non-empty");
  const TokenSequence secret = config.oracle_secret.empty()
                                   ? secret_corpus(config).at(0)
                                   : vocab::encode(config.oracle_secret);
  Lab lab = make_lab(config);
  TokenSequence victim{vocab::kBos};
  victim.insert(victim.end(), secret.begin(), secret.end());
  QueryLedger ledger;
  TargetFacade target(lab.model, lab.target_router, victim, ledger);
  LocalModel local(lab.model, lab.local_router, ledger);
  const OracleOutcome o = oracle_attack(candidate, target, local, *lab.blockers, lab.params);

  nlohmann::ordered_json j;
  j["candidate"] = candidate_text;
  j["accepted"] = o.accepted;
  j["configured"] = o.configured;
  j["expert"] = o.expert;
  j["padding"] = o.padding;
  j["position"] = o.position;
  j["target_queries"] = ledger.target_queries();
  j["local_queries"] = ledger.local_queries();
  j["defense"] = defense_name(lab.target_router);
  std::filesystem::create_directories(config.out_dir);
  std::ofstream(config.out_dir / "oracle.json") << j.dump(2) << '\n';
  std::cout << j.dump(2) << '\n';
  return 0;
}

int cmd_leak(const RunConfig& config) {
  Lab lab = make_lab(config);
  const Report report = run_corpus(lab, secret_corpus(config));
  write_report(report, config, config.out_dir);
  const auto& t = report.total;
  std::cout << "defense: " << report.defense << '\n'
            << "messages recovered: " << t.messages_recovered << '/' << t.messages << '\n'
            << "tokens recovered:   " << t.tokens_recovered << '/' << t.tokens << '\n'
            << "target queries:     " << t.target_queries << '\n'
            << "report written to " << config.out_dir.string() << '\n';
  return 0;
}

int cmd_sweep(const RunConfig& config, const std::string& axis_name) {
  const SweepAxis axis = sweep_axis_from_string(axis_name);
  const auto rows = sweep(config, axis);
  std::ostringstream csv;
  write_sweep_csv(rows, axis, csv);
  std::filesystem::create_directories(config.out_dir);
  std::ofstream(config.out_dir / ("sweep_" + axis_name + ".csv")) << csv.str();
  std::cout << csv.str();
  return 0;
}

int cmd_paths(const RunConfig& config, int beta) {
  const int bits = config.model.experts * config.model.depth;
  if (beta < 0 || beta > bits) throw InvalidInput("--beta must be in [0, N * D]");
  Lab lab = make_lab(config);
  const TokenSequence secret = secret_corpus(config).at(0);
  TokenSequence seq{vocab::kBos};
  seq.insert(seq.end(), secret.begin(), secret.end());

  // Table for the message's last token, estimated from its routing next to
  // a padding sequence that keeps capacity above zero.
  QueryLedger ledger;
  LocalModel local(lab.model, lab.local_router, ledger);
  const Batch batch = make_batch({seq, padding_sequence(config.attack.paddings.front())});
  auto [cache, trace] = local.cache_with_trace(batch, 0, seq.size() - 1);
  const RoutingPath estimate =
      path_from_trace(trace, batch.flat_index(0, seq.size() - 1), config.model.experts);
  const PathTable table =
      build_path_table(local, cache, seq.back(), estimate, beta, config.attack.tolerance);

  std::size_t collisions = 0;
  for (std::size_t i = 0; i < table.size(); ++i) {
    for (std::size_t k = i + 1; k < table.size(); ++k) {
      collisions += mismatch_count(table.outputs[i], table.outputs[k], table.tolerance) <=
                    config.attack.max_mismatch;
    }
  }

  nlohmann::ordered_json j;
  j["bits"] = bits;
  j["beta"] = beta;
  j["ball_size"] = hamming_ball_size(bits, beta);
  j["table_entries"] = table.size();
  j["local_queries"] = ledger.local_queries();
  j["colliding_pairs"] = collisions;
  std::filesystem::create_directories(config.out_dir);
  std::ofstream(config.out_dir / "paths.json") << j.dump(2) << '\n';
  std::cout << j.dump(2) << '\n';
  if (collisions > 0) {
    std::cerr << "warning: " << collisions
              << " path pairs are indistinguishable at the match tolerance\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Expert-choice routing tie-break leakage lab"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--seed", seed, "Seed of the secret corpus");
  app.add_option("--out", out, "Output directory");

  auto* demo = app.add_subcommand("demo-tie", "Tie-break truth table on the live router");
  std::string candidate;
  auto* oracle = app.add_subcommand("oracle", "Two-query check of a candidate message");
  oracle->add_option("--candidate", candidate, "Candidate text")->required();
  auto* leak = app.add_subcommand("leak", "Leakage attack over the secret corpus");
  std::string axis;
  auto* sweep_cmd = app.add_subcommand("sweep", "Success grid over padding lengths or experts");
  sweep_cmd->add_option("--axis", axis, "padding or expert")
      ->required()
      ->check(CLI::IsMember({"padding", "expert"}));
  int beta = 4;
  auto* paths = app.add_subcommand("paths", "Path-table size and injectivity check");
  paths->add_option("--beta", beta, "Hamming radius");

  CLI11_PARSE(app, argc, argv);

  RunConfig config;
  try {
    config = config_path.empty() ? parse_config("{}") : load_config(config_path);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  }
  if (seed) config.seed = *seed;
  if (out) config.out_dir = *out;

  try {
    if (*demo) return cmd_demo_tie(config);
    if (*oracle) return cmd_oracle(config, candidate);
    if (*leak) return cmd_leak(config);
    if (*sweep_cmd) return cmd_sweep(config, axis);
    if (*paths) return cmd_paths(config, beta);
  } catch (const InvalidInput& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
