#include "moeleak/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "moeleak/errors.hpp"

namespace moeleak {

namespace {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

template <typename T>
T read_key(const json& value, const std::string& key) {
  try {
    return value.get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + key + "': wrong type (" + value.dump() + ")");
  }
}

void require(bool ok, const std::string& key, const std::string& why) {
  if (!ok) throw ConfigError("config key '" + key + "': " + why);
}

TokenSequence encode_checked(const std::string& text, const std::string& key) {
  try {
    return vocab::encode(text);
  } catch (const InvalidInput&) {
    throw ConfigError("config key '" + key + "': only lowercase letters and space are allowed");
  }
}

using Setter = std::function<void(RunConfig&, const json&, const std::string&)>;

template <typename T, typename Field>
Setter assign(Field field) {
  return [field](RunConfig& c, const json& v, const std::string& k) {
    field(c) = read_key<T>(v, k);
  };
}

const std::unordered_map<std::string, Setter>& setters() {
  static const std::unordered_map<std::string, Setter> table{
      {"D", assign<int>([](RunConfig& c) -> int& { return c.model.depth; })},
      {"N", assign<int>([](RunConfig& c) -> int& { return c.model.experts; })},
      {"d", assign<int>([](RunConfig& c) -> int& { return c.model.hidden; })},
      {"ffn_hidden", assign<int>([](RunConfig& c) -> int& { return c.model.ffn_hidden; })},
      {"V_full", assign<int>([](RunConfig& c) -> int& { return c.model.vocab_size; })},
      {"max_len", assign<int>([](RunConfig& c) -> int& { return c.model.max_len; })},
      {"model_seed",
       assign<std::uint64_t>([](RunConfig& c) -> std::uint64_t& { return c.model.seed; })},
      {"embed_gain", assign<double>([](RunConfig& c) -> double& { return c.model.embed_gain; })},
      {"gate_gain", assign<double>([](RunConfig& c) -> double& { return c.model.gate_gain; })},

      {"gamma",
       assign<double>([](RunConfig& c) -> double& { return c.router.capacity_factor; })},
      {"tie_mode",
       [](RunConfig& c, const json& v, const std::string& k) {
         try {
           c.router.tie_mode = tie_mode_from_string(read_key<std::string>(v, k));
         } catch (const InvalidInput& e) {
           throw ConfigError("config key '" + k + "': " + e.what());
         }
       }},
      {"tie_seed",
       assign<std::uint64_t>([](RunConfig& c) -> std::uint64_t& { return c.router.tie_seed; })},
      {"quant",
       assign<int>([](RunConfig& c) -> int& { return c.router.quantization.decimals; })},
      {"quant_site",
       [](RunConfig& c, const json& v, const std::string& k) {
         try {
           c.router.quantization.site = quant_site_from_string(read_key<std::string>(v, k));
         } catch (const InvalidInput& e) {
           throw ConfigError("config key '" + k + "': " + e.what());
         }
       }},
      {"batch_isolation",
       assign<bool>([](RunConfig& c) -> bool& { return c.router.batch_isolation; })},
      {"dense_control", assign<bool>([](RunConfig& c) -> bool& { return c.router.dense_control; })},
      {"padding_scale",
       assign<double>([](RunConfig& c) -> double& { return c.router.padding_scale; })},

      {"B",
       assign<std::size_t>([](RunConfig& c) -> std::size_t& { return c.attack.batch_size; })},
      {"P", assign<std::vector<std::size_t>>(
                [](RunConfig& c) -> std::vector<std::size_t>& { return c.attack.paddings; })},
      {"pair_slot",
       assign<std::size_t>([](RunConfig& c) -> std::size_t& { return c.attack.pair_slot; })},
      {"experts", assign<std::vector<int>>(
                      [](RunConfig& c) -> std::vector<int>& { return c.attack.experts; })},
      {"guess_vocab",
       [](RunConfig& c, const json& v, const std::string& k) {
         c.attack.guess_vocab = encode_checked(read_key<std::string>(v, k), k);
       }},
      {"Phi", assign<double>([](RunConfig& c) -> double& { return c.attack.threshold; })},
      {"beta", assign<int>([](RunConfig& c) -> int& { return c.attack.beta; })},
      {"epsilon", assign<double>([](RunConfig& c) -> double& { return c.attack.skip_epsilon; })},
      {"tolerance", assign<double>([](RunConfig& c) -> double& { return c.attack.tolerance; })},
      {"max_mismatch",
       assign<std::size_t>([](RunConfig& c) -> std::size_t& { return c.attack.max_mismatch; })},
      {"max_attempts",
       assign<std::size_t>([](RunConfig& c) -> std::size_t& { return c.attack.max_attempts; })},
      {"min_guess_priority",
       assign<double>([](RunConfig& c) -> double& { return c.attack.min_guess_priority; })},
      {"confirm", assign<bool>([](RunConfig& c) -> bool& { return c.attack.confirm; })},
      {"blocker_len",
       assign<std::size_t>([](RunConfig& c) -> std::size_t& { return c.attack.blocker_len; })},
      {"blocker_seed",
       assign<std::uint64_t>([](RunConfig& c) -> std::uint64_t& { return c.attack.blocker_seed; })},

      {"secret_count",
       assign<std::size_t>([](RunConfig& c) -> std::size_t& { return c.secret_count; })},
      {"M_min", assign<std::size_t>([](RunConfig& c) -> std::size_t& { return c.min_len; })},
      {"M_max", assign<std::size_t>([](RunConfig& c) -> std::size_t& { return c.max_len; })},
      {"seed", assign<std::uint64_t>([](RunConfig& c) -> std::uint64_t& { return c.seed; })},
      {"secrets",
       [](RunConfig& c, const json& v, const std::string& k) {
         c.secrets = read_key<std::vector<std::string>>(v, k);
         for (const auto& s : c.secrets) {
           require(!s.empty(), k, "messages must be non-empty");
           encode_checked(s, k);
         }
       }},
      {"oracle_secret",
       [](RunConfig& c, const json& v, const std::string& k) {
         c.oracle_secret = read_key<std::string>(v, k);
         encode_checked(c.oracle_secret, k);
       }},
      {"sweep_experts",
       assign<std::vector<int>>([](RunConfig& c) -> std::vector<int>& { return c.expert_axis; })},
      {"out",
       [](RunConfig& c, const json& v, const std::string& k) {
         c.out_dir = read_key<std::string>(v, k);
       }},
  };
  return table;
}

void validate(const RunConfig& c) {
  try {
    c.model.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
  const int N = c.model.experts;
  const auto in_range = [N](const std::vector<int>& v) {
    return std::all_of(v.begin(), v.end(), [N](int e) { return e >= 0 && e < N; });
  };
  require(c.router.capacity_factor > 0.0, "gamma", "must be > 0");
  require(c.router.quantization.decimals >= 1 && c.router.quantization.decimals <= 15, "quant",
          "must be in [1, 15]");
  require(c.router.padding_scale >= 0.0 && c.router.padding_scale <= 1.0, "padding_scale",
          "must be in [0, 1]");
  require(c.attack.batch_size >= 4, "B", "must be >= 4");
  require(!c.attack.paddings.empty(), "P", "needs at least one padding length");
  for (std::size_t p : c.attack.paddings) {
    require(p >= 2 && p <= static_cast<std::size_t>(c.model.max_len), "P",
            "padding lengths must be in [2, max_len]");
  }
  require(c.attack.pair_slot + 2 < c.attack.batch_size, "pair_slot", "must be < B - 2");
  require(in_range(c.attack.experts), "experts", "expert index out of range");
  require(!c.attack.guess_vocab.empty(), "guess_vocab", "must be non-empty");
  require(c.attack.threshold > 0.0 && c.attack.threshold <= 1.0, "Phi", "must be in (0, 1]");
  require(c.attack.beta >= 0 && c.attack.beta <= N * c.model.depth, "beta",
          "must be in [0, N * D]");
  require(c.attack.skip_epsilon >= 0.0, "epsilon", "must be >= 0");
  require(c.attack.tolerance > 0.0, "tolerance", "must be > 0");
  require(c.attack.max_attempts >= 1, "max_attempts", "must be >= 1");
  require(c.min_len >= 1, "M_min", "must be >= 1");
  require(c.min_len <= c.max_len, "M_max", "must be >= M_min");
  require(c.max_len < static_cast<std::size_t>(c.model.max_len), "M_max", "must be < max_len");
  require(in_range(c.expert_axis), "sweep_experts", "expert index out of range");
}

std::string text_of(const TokenSequence& tokens) { return vocab::decode(tokens); }

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed << v;
  return os.str();
}

ordered_json record_json(std::size_t message, const LedgerRecord& r) {
  ordered_json j;
  j["message"] = message;
  j["token_index"] = r.token_index;
  j["guess"] = std::string(1, vocab::decode_char(r.guess));
  j["position"] = r.position;
  j["expert"] = r.expert;
  j["padding"] = r.padding;
  j["verified"] = r.verified;
  j["path_recovery"] = r.path_recovery;
  j["target_queries"] = r.target_queries;
  j["local_queries"] = r.local_queries;
  j["step_target_queries"] = r.step_target_queries;
  j["step_local_queries"] = r.step_local_queries;
  return j;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

}  // namespace

RunConfig parse_config(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");

  RunConfig config;
  for (const auto& [key, value] : doc.items()) {
    const auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError("unknown config key '" + key + "'");
    it->second(config, value, key);
  }
  // Logit tolerance follows the quantization step unless set explicitly.
  if (!doc.contains("tolerance")) {
    config.attack.tolerance = std::pow(10.0, -(config.router.quantization.decimals - 1));
  }
  validate(config);
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string config_json(const RunConfig& c) {
  ordered_json j;
  j["D"] = c.model.depth;
  j["N"] = c.model.experts;
  j["d"] = c.model.hidden;
  j["ffn_hidden"] = c.model.ffn_hidden;
  j["V_full"] = c.model.vocab_size;
  j["max_len"] = c.model.max_len;
  j["model_seed"] = c.model.seed;
  j["embed_gain"] = c.model.embed_gain;
  j["gate_gain"] = c.model.gate_gain;
  j["gamma"] = c.router.capacity_factor;
  j["tie_mode"] = std::string(to_string(c.router.tie_mode));
  j["tie_seed"] = c.router.tie_seed;
  j["quant"] = c.router.quantization.decimals;
  j["quant_site"] = std::string(to_string(c.router.quantization.site));
  j["batch_isolation"] = c.router.batch_isolation;
  j["dense_control"] = c.router.dense_control;
  j["padding_scale"] = c.router.padding_scale;
  j["B"] = c.attack.batch_size;
  j["P"] = c.attack.paddings;
  j["pair_slot"] = c.attack.pair_slot;
  j["experts"] = c.attack.experts;
  j["guess_vocab"] = text_of(c.attack.guess_vocab);
  j["Phi"] = c.attack.threshold;
  j["beta"] = c.attack.beta;
  j["epsilon"] = c.attack.skip_epsilon;
  j["tolerance"] = c.attack.tolerance;
  j["max_mismatch"] = c.attack.max_mismatch;
  j["max_attempts"] = c.attack.max_attempts;
  j["min_guess_priority"] = c.attack.min_guess_priority;
  j["confirm"] = c.attack.confirm;
  j["blocker_len"] = c.attack.blocker_len;
  j["blocker_seed"] = c.attack.blocker_seed;
  j["secret_count"] = c.secret_count;
  j["M_min"] = c.min_len;
  j["M_max"] = c.max_len;
  j["seed"] = c.seed;
  j["secrets"] = c.secrets;
  j["oracle_secret"] = c.oracle_secret;
  j["sweep_experts"] = c.expert_axis;
  j["out"] = c.out_dir.string();
  return j.dump(2);
}

std::string defense_name(const RouterConfig& router) {
  if (router.dense_control) return "dense_control";
  if (router.batch_isolation) return "batch_isolation";
  if (router.tie_mode == TieMode::Randomized) return "randomized_ties";
  return "none";
}

RouterConfig attacker_router(const RunConfig& config) {
  RouterConfig r;
  r.capacity_factor = config.router.capacity_factor;
  r.quantization = config.router.quantization;
  r.padding_scale = config.router.padding_scale;
  return r;
}

std::vector<TokenSequence> secret_corpus(const RunConfig& config) {
  std::vector<TokenSequence> corpus;
  if (!config.secrets.empty()) {
    for (const auto& s : config.secrets) corpus.push_back(vocab::encode(s));
    return corpus;
  }
  const auto& alphabet = config.attack.guess_vocab;
  SplitMix64 rng(mix_seed(config.seed, 0x5EC2E7));
  for (std::size_t i = 0; i < config.secret_count; ++i) {
    const std::size_t len = config.min_len + rng.below(config.max_len - config.min_len + 1);
    TokenSequence s(len);
    for (auto& t : s) t = alphabet[rng.below(alphabet.size())];
    corpus.push_back(std::move(s));
  }
  return corpus;
}

Lab make_lab(const RunConfig& config) {
  Lab lab;
  lab.model = std::make_shared<const Model>(config.model);
  lab.target_router = config.router;
  lab.local_router = attacker_router(config);
  lab.params = config.attack;
  lab.blockers = std::make_unique<BlockerLibrary>(lab.model, lab.local_router, lab.params);
  return lab;
}

Report run_corpus(Lab& lab, const std::vector<TokenSequence>& corpus) {
  Report report;
  report.defense = defense_name(lab.target_router);
  report.runs.resize(corpus.size());

  const auto n = static_cast<std::ptrdiff_t>(corpus.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    MessageRun& run = report.runs[static_cast<std::size_t>(i)];
    run.secret = corpus[static_cast<std::size_t>(i)];
    TokenSequence victim{vocab::kBos};
    victim.insert(victim.end(), run.secret.begin(), run.secret.end());
    QueryLedger ledger;
    TargetFacade target(lab.model, lab.target_router, victim, ledger);
    LocalModel local(lab.model, lab.local_router, ledger);
    run.result = leakage_attack(run.secret.size(), target, local, *lab.blockers, lab.params);
    for (std::size_t t = 0; t < run.result.recovered.size() && t < run.secret.size(); ++t) {
      run.tokens_correct += run.result.recovered[t] == run.secret[t];
    }
    run.records = ledger.records();
  }

  for (const MessageRun& run : report.runs) {
    const std::size_t len = run.secret.size();
    for (LengthTally* tally : {&report.total, &report.by_length[len]}) {
      ++tally->messages;
      tally->messages_recovered += run.success();
      tally->tokens += len;
      tally->tokens_recovered += run.tokens_correct;
      tally->target_queries += run.result.target_queries;
    }
    for (const TokenRecord& tok : run.result.tokens) {
      auto& q = report.queries[tok.index];
      q.target += tok.target_queries;
      q.local += tok.local_queries;
      ++q.tokens;
      if (tok.recovered && tok.index < len && tok.token == run.secret[tok.index]) {
        ++report.heatmap[{tok.expert, tok.index}];
      }
    }
  }
  return report;
}

std::string report_json(const Report& report, const RunConfig& config) {
  ordered_json j;
  j["defense"] = {{"active", report.defense != "none"}, {"mode", report.defense}};
  j["config"] = ordered_json::parse(config_json(config));
  const auto tally_json = [](const LengthTally& t) {
    ordered_json o;
    o["messages"] = t.messages;
    o["messages_recovered"] = t.messages_recovered;
    o["tokens"] = t.tokens;
    o["tokens_recovered"] = t.tokens_recovered;
    o["token_recovery_rate"] =
        t.tokens == 0 ? 0.0 : static_cast<double>(t.tokens_recovered) / t.tokens;
    o["target_queries"] = t.target_queries;
    return o;
  };
  j["summary"] = tally_json(report.total);
  j["by_length"] = ordered_json::array();
  for (const auto& [len, t] : report.by_length) {
    ordered_json row = tally_json(t);
    row["length"] = len;
    j["by_length"].push_back(row);
  }
  j["heatmap"] = ordered_json::array();
  for (const auto& [key, count] : report.heatmap) {
    j["heatmap"].push_back({{"expert", key.first}, {"token_index", key.second}, {"count", count}});
  }
  j["queries"] = ordered_json::array();
  for (const auto& [index, q] : report.queries) {
    j["queries"].push_back({{"token_index", index},
                            {"tokens", q.tokens},
                            {"target_queries", q.target},
                            {"local_queries", q.local}});
  }
  j["messages"] = ordered_json::array();
  for (const MessageRun& run : report.runs) {
    ordered_json m;
    m["secret"] = text_of(run.secret);
    m["recovered"] = text_of(run.result.recovered);
    m["success"] = run.success();
    m["tokens_correct"] = run.tokens_correct;
    m["target_queries"] = run.result.target_queries;
    m["local_queries"] = run.result.local_queries;
    m["tokens"] = ordered_json::array();
    for (const TokenRecord& tok : run.result.tokens) {
      ordered_json t;
      t["index"] = tok.index;
      t["recovered"] = tok.recovered;
      t["token"] = tok.recovered ? std::string(1, vocab::decode_char(tok.token)) : "";
      t["expert"] = tok.expert;
      t["padding"] = tok.padding;
      t["position"] = tok.position;
      t["verifications"] = tok.verifications;
      t["target_queries"] = tok.target_queries;
      t["local_queries"] = tok.local_queries;
      m["tokens"].push_back(t);
    }
    j["messages"].push_back(m);
  }
  return j.dump(2) + "\n";
}

void write_report(const Report& report, const RunConfig& config,
                  const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_file(dir / "report.json", report_json(report, config));

  std::ostringstream by_len;
  by_len << "message_length,messages,messages_recovered,tokens,tokens_recovered,success_rate\n";
  for (const auto& [len, t] : report.by_length) {
    by_len << len << ',' << t.messages << ',' << t.messages_recovered << ',' << t.tokens << ','
           << t.tokens_recovered << ','
           << format_double(static_cast<double>(t.messages_recovered) / t.messages) << '\n';
  }
  write_file(dir / "success_by_length.csv", by_len.str());

  std::ostringstream heat;
  heat << "expert,token_index,count\n";
  for (const auto& [key, count] : report.heatmap) {
    heat << key.first << ',' << key.second << ',' << count << '\n';
  }
  write_file(dir / "expert_index_heatmap.csv", heat.str());

  std::ostringstream queries;
  queries << "token_index,tokens,mean_target_queries,mean_local_queries\n";
  for (const auto& [index, q] : report.queries) {
    queries << index << ',' << q.tokens << ','
            << format_double(static_cast<double>(q.target) / q.tokens) << ','
            << format_double(static_cast<double>(q.local) / q.tokens) << '\n';
  }
  write_file(dir / "query_counts.csv", queries.str());

  std::ostringstream lines;
  for (std::size_t m = 0; m < report.runs.size(); ++m) {
    for (const LedgerRecord& r : report.runs[m].records) lines << record_json(m, r).dump() << '\n';
  }
  write_file(dir / "ledger.jsonl", lines.str());
}

SweepAxis sweep_axis_from_string(std::string_view name) {
  if (name == "padding") return SweepAxis::Padding;
  if (name == "expert") return SweepAxis::Expert;
  throw InvalidInput("unknown sweep axis: " + std::string(name));
}

std::string_view to_string(SweepAxis axis) {
  return axis == SweepAxis::Padding ? "padding" : "expert";
}

std::vector<SweepRow> sweep(const RunConfig& config, SweepAxis axis) {
  std::vector<long> values;
  if (axis == SweepAxis::Padding) {
    for (std::size_t p : config.attack.paddings) values.push_back(static_cast<long>(p));
  } else if (!config.expert_axis.empty()) {
    values.assign(config.expert_axis.begin(), config.expert_axis.end());
  } else {
    for (int e = 0; e < config.model.experts; ++e) values.push_back(e);
  }

  const std::vector<TokenSequence> corpus = secret_corpus(config);
  Lab lab = make_lab(config);
  std::vector<SweepRow> rows;
  for (long value : values) {
    lab.params = config.attack;
    if (axis == SweepAxis::Padding) {
      lab.params.paddings = {static_cast<std::size_t>(value)};
    } else {
      lab.params.experts = {static_cast<int>(value)};
    }
    const Report report = run_corpus(lab, corpus);
    for (const auto& [len, t] : report.by_length) {
      SweepRow row;
      row.axis_value = value;
      row.message_length = len;
      row.messages = t.messages;
      row.success_rate = static_cast<double>(t.messages_recovered) / t.messages;
      row.mean_target_queries = static_cast<double>(t.target_queries) / t.messages;
      rows.push_back(row);
    }
  }
  return rows;
}

void write_sweep_csv(const std::vector<SweepRow>& rows, SweepAxis axis, std::ostream& out) {
  out << to_string(axis) << ",message_length,messages,success_rate,mean_target_queries\n";
  for (const SweepRow& r : rows) {
    out << r.axis_value << ',' << r.message_length << ',' << r.messages << ','
        << format_double(r.success_rate) << ',' << format_double(r.mean_target_queries) << '\n';
  }
}

std::vector<TieRow> demo_tie(const RouterConfig& router) {
  struct Case {
    const char* relation;
    double guess;
    double target;
    bool drop_first;
    bool drop_second;
  };
  // Priorities sit on the 5-decimal grid so quantization keeps the tie.
  static constexpr Case cases[] = {
      {"P_guess > P_target", 0.61, 0.42, false, false},
      {"P_guess < P_target", 0.42, 0.61, true, true},
      {"P_guess = P_target", 0.5, 0.5, false, true},
  };
  constexpr std::size_t kBoundarySlot = 4;
  constexpr std::uint64_t kSeeds = 16;

  std::vector<TieRow> rows;
  for (const Case& c : cases) {
    for (const BatchOrder order : {BatchOrder::ProbeFirst, BatchOrder::VictimFirst}) {
      TieRow row;
      row.relation = c.relation;
      row.order = order;
      row.expected_drop = order == BatchOrder::ProbeFirst ? c.drop_first : c.drop_second;
      row.observed_drop =
          decide_buffer_outcome(c.guess, c.target, order, kBoundarySlot, router).probe_token_dropped;
      if (router.tie_mode != TieMode::StableAscending) {
        RouterConfig r = router;
        for (std::uint64_t s = 1; s <= kSeeds && row.deterministic; ++s) {
          r.tie_seed = mix_seed(router.tie_seed, s);
          row.deterministic =
              decide_buffer_outcome(c.guess, c.target, order, kBoundarySlot, r)
                  .probe_token_dropped == row.observed_drop;
        }
      }
      rows.push_back(row);
    }
  }
  return rows;
}

void print_tie_table(const std::vector<TieRow>& rows, const RouterConfig& router,
                     std::ostream& out) {
  const auto verdict = [](bool drop) { return drop ? "Drops" : "Doesn't drop"; };
  out << "router: tie_mode=" << to_string(router.tie_mode)
      << " quant=" << router.quantization.decimals << " defense=" << defense_name(router) << '\n';
  if (router.dense_control) out << "dense control: every expert takes every token, no drop possible\n";
  out << "relation            | order  | expected     | observed     | status\n";
  for (const TieRow& r : rows) {
    char line[160];
    std::snprintf(line, sizeof line, "%-19s | %-6s | %-12s | %-12s | %s\n", r.relation.c_str(),
                  r.order == BatchOrder::ProbeFirst ? "First" : "Second",
                  verdict(r.expected_drop), verdict(r.observed_drop),
                  !r.deterministic ? "nondeterministic" : (r.matches() ? "ok" : "MISMATCH"));
    out << line;
  }
}

}  // namespace moeleak
