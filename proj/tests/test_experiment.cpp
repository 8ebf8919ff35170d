#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <gtest/gtest.h>
#include <json.hpp>

#include "moeleak/errors.hpp"
#include "moeleak/experiment.hpp"

using namespace moeleak;

namespace {

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

RunConfig small_config() {
  RunConfig c = parse_config(R"({"secrets": ["ab", "c", "zq"], "P": [40]})");
  return c;
}

}  // namespace

TEST(Config, EmptyObjectGivesDefaults) {
  const RunConfig c = parse_config("{}");
  EXPECT_EQ(c.attack.batch_size, 32U);
  EXPECT_EQ(c.attack.paddings, (std::vector<std::size_t>{20, 24, 30, 40, 50, 60}));
  EXPECT_DOUBLE_EQ(c.attack.threshold, 0.85);
  EXPECT_EQ(c.attack.beta, 4);
  EXPECT_EQ(c.model.experts, 8);
  EXPECT_EQ(c.model.depth, 2);
  EXPECT_EQ(c.router.tie_mode, TieMode::StableAscending);
  EXPECT_EQ(c.secret_count, 50U);
  EXPECT_EQ(c.min_len, 3U);
  EXPECT_EQ(c.max_len, 5U);
}

TEST(Config, ToleranceFollowsQuantizationUnlessGiven) {
  EXPECT_DOUBLE_EQ(parse_config("{}").attack.tolerance, 1e-4);
  EXPECT_DOUBLE_EQ(parse_config(R"({"quant": 3})").attack.tolerance, 1e-2);
  EXPECT_DOUBLE_EQ(parse_config(R"({"quant": 3, "tolerance": 0.5})").attack.tolerance, 0.5);
}

TEST(Config, UnknownKeyIsNamed) {
  try {
    parse_config(R"({"B": 32, "paddding": [20]})");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("paddding"), std::string::npos);
  }
}

TEST(Config, TypeAndRangeErrorsNameTheKey) {
  const std::pair<const char*, const char*> bad[] = {
      {R"({"beta": "four"})", "beta"},       {R"({"Phi": 1.5})", "Phi"},
      {R"({"tie_mode": "coin"})", "tie_mode"}, {R"({"experts": [9]})", "experts"},
      {R"({"guess_vocab": "ABC"})", "guess_vocab"}, {R"({"M_min": 4, "M_max": 3})", "M_max"},
      {R"({"pair_slot": 30})", "pair_slot"}};
  for (const auto& [text, key] : bad) {
    try {
      parse_config(text);
      ADD_FAILURE() << text;
    } catch (const ConfigError& e) {
      EXPECT_NE(std::string(e.what()).find(key), std::string::npos) << e.what();
    }
  }
  EXPECT_THROW(parse_config("{\"B\": 32,"), ConfigError);
  EXPECT_THROW(parse_config("[1, 2]"), ConfigError);
}

TEST(Config, ResolvedJsonRoundTrips) {
  const RunConfig c = parse_config(R"({"N": 4, "tie_mode": "randomized", "P": [24, 30]})");
  const RunConfig again = parse_config(config_json(c));
  EXPECT_EQ(config_json(again), config_json(c));
  EXPECT_EQ(again.model.experts, 4);
  EXPECT_EQ(again.router.tie_mode, TieMode::Randomized);
}

TEST(Routers, AttackerSeesNoDefenses) {
  const RunConfig c =
      parse_config(R"({"tie_mode": "randomized", "batch_isolation": true, "quant": 4})");
  EXPECT_EQ(defense_name(c.router), "batch_isolation");
  const RouterConfig a = attacker_router(c);
  EXPECT_EQ(defense_name(a), "none");
  EXPECT_EQ(a.quantization.decimals, 4);
  RouterConfig r;
  r.tie_mode = TieMode::Randomized;
  EXPECT_EQ(defense_name(r), "randomized_ties");
  r.dense_control = true;
  EXPECT_EQ(defense_name(r), "dense_control");
}

TEST(Corpus, SeededAndWithinLengths) {
  const RunConfig c = parse_config("{}");
  const auto a = secret_corpus(c);
  EXPECT_EQ(a, secret_corpus(c));
  ASSERT_EQ(a.size(), 50U);
  std::set<std::size_t> lengths;
  for (const auto& s : a) {
    EXPECT_GE(s.size(), 3U);
    EXPECT_LE(s.size(), 5U);
    lengths.insert(s.size());
    for (TokenId t : s) {
      EXPECT_GE(t, vocab::kFirstChar);
      EXPECT_LT(t, vocab::kFirstOpaque);
    }
  }
  EXPECT_EQ(lengths.size(), 3U);
  EXPECT_NE(secret_corpus(parse_config(R"({"seed": 7})")), a);
  EXPECT_EQ(secret_corpus(small_config()).front(), vocab::encode("ab"));
}

TEST(TieDemo, StableRouterMatchesTable) {
  const auto rows = demo_tie(RouterConfig{});
  ASSERT_EQ(rows.size(), 6U);
  for (const auto& r : rows) EXPECT_TRUE(r.matches()) << r.relation;
  EXPECT_FALSE(rows[4].observed_drop);  // tie, probe first
  EXPECT_TRUE(rows[5].observed_drop);   // tie, victim first
}

TEST(TieDemo, RandomizedTiesAreNondeterministic) {
  RouterConfig r;
  r.tie_mode = TieMode::Randomized;
  const auto rows = demo_tie(r);
  EXPECT_TRUE(rows[0].matches());
  EXPECT_TRUE(rows[3].matches());
  EXPECT_FALSE(rows[4].deterministic);
  EXPECT_FALSE(rows[5].deterministic);
  std::ostringstream out;
  print_tie_table(rows, r, out);
  EXPECT_NE(out.str().find("nondeterministic"), std::string::npos);
}

TEST(Report, ConsistentAndReproducible) {
  const RunConfig c = small_config();
  const auto corpus = secret_corpus(c);
  Lab lab = make_lab(c);
  const Report a = run_corpus(lab, corpus);
  ASSERT_EQ(a.runs.size(), corpus.size());
  std::size_t tokens = 0;
  std::uint64_t queries = 0;
  for (const auto& run : a.runs) {
    tokens += run.secret.size();
    queries += run.result.target_queries;
    EXPECT_TRUE(run.success());
    for (const auto& tok : run.result.tokens) {
      EXPECT_GE(tok.expert, 0);
      EXPECT_LT(tok.expert, c.model.experts);
      EXPECT_EQ(tok.padding, 40U);
    }
  }
  EXPECT_EQ(a.total.tokens, tokens);
  EXPECT_EQ(a.total.messages, corpus.size());
  EXPECT_EQ(a.total.target_queries, queries);
  std::size_t heat = 0;
  for (const auto& [key, n] : a.heatmap) heat += n;
  EXPECT_EQ(heat, a.total.tokens_recovered);

  Lab fresh = make_lab(c);
  const Report b = run_corpus(fresh, corpus);
  EXPECT_EQ(report_json(a, c), report_json(b, c));

  const auto root = std::filesystem::temp_directory_path() / "moeleak_report_test";
  std::filesystem::remove_all(root);
  write_report(a, c, root / "a");
  write_report(b, c, root / "b");
  for (const char* name : {"report.json", "success_by_length.csv", "expert_index_heatmap.csv",
                           "query_counts.csv", "ledger.jsonl"}) {
    const std::string first = slurp(root / "a" / name);
    EXPECT_FALSE(first.empty()) << name;
    EXPECT_EQ(first, slurp(root / "b" / name)) << name;
  }
  const auto doc = nlohmann::json::parse(slurp(root / "a" / "report.json"));
  EXPECT_EQ(doc["defense"]["mode"], "none");
  EXPECT_EQ(doc["defense"]["active"], false);
  std::filesystem::remove_all(root);
}

TEST(Sweep, SingleValueAxisGivesOneGroup) {
  const RunConfig c = small_config();
  const auto rows = sweep(c, SweepAxis::Padding);
  ASSERT_EQ(rows.size(), 2U);  // message lengths 1 and 2
  for (const auto& r : rows) {
    EXPECT_EQ(r.axis_value, 40);
    EXPECT_DOUBLE_EQ(r.success_rate, 1.0);
  }
  std::ostringstream out;
  write_sweep_csv(rows, SweepAxis::Padding, out);
  EXPECT_EQ(out.str().substr(0, out.str().find('\n')),
            "padding,message_length,messages,success_rate,mean_target_queries");
  EXPECT_EQ(sweep_axis_from_string("expert"), SweepAxis::Expert);
  EXPECT_THROW(sweep_axis_from_string("depth"), InvalidInput);
}
