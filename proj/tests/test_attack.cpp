#include <algorithm>
#include <bit>
#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "moeleak/attack.hpp"
#include "moeleak/errors.hpp"
#include "moeleak/experiment.hpp"

using namespace moeleak;

namespace {

// One lab for the whole file: blocker searches are cached inside it.
Lab& shared_lab() {
  static Lab lab = make_lab(RunConfig{});
  return lab;
}

TokenSequence with_bos(const TokenSequence& chars) {
  TokenSequence s{vocab::kBos};
  s.insert(s.end(), chars.begin(), chars.end());
  return s;
}

struct TableFixture {
  PrefixCache cache;
  PathTable table;
  TokenId token = 0;
};

TableFixture small_table(LocalModel& local, int beta) {
  const TokenSequence probe = with_bos(vocab::encode("ca"));
  const Batch batch = make_batch({probe, padding_sequence(20)});
  auto [cache, trace] = local.cache_with_trace(batch, 0, probe.size() - 1);
  const RoutingPath estimate =
      path_from_trace(trace, batch.flat_index(0, probe.size() - 1), local.model().config().experts);
  TableFixture f;
  f.token = probe.back();
  f.table = build_path_table(local, cache, f.token, estimate, beta, 1e-4);
  f.cache = std::move(cache);
  return f;
}

std::size_t index_of(const PathTable& table, const RoutingPath& path) {
  for (std::size_t i = 0; i < table.size(); ++i) {
    if (table.paths[i] == path) return i;
  }
  return table.size();
}

}  // namespace

TEST(Blockers, CountsAndCapacity) {
  EXPECT_EQ(blockers_per_sequence(240, 32), 8U);
  EXPECT_EQ(blockers_per_sequence(80, 32), 2U);
  EXPECT_EQ(blockers_per_sequence(28, 32), 0U);
  const AttackParams params;
  EXPECT_EQ(attack_capacity(params, RouterConfig{}, 8, 60), 240U);
  EXPECT_EQ(attack_capacity(params, RouterConfig{}, 8, 20), 80U);
}

TEST(Blockers, TargetExperts) {
  AttackParams params;
  EXPECT_EQ(target_experts(params, 3), (std::vector<int>{0, 1, 2}));
  params.experts = {5, 1};
  EXPECT_EQ(target_experts(params, 8), (std::vector<int>{5, 1}));
  params.experts = {8};
  EXPECT_THROW(target_experts(params, 8), InvalidInput);
}

TEST(Blockers, EverySequenceCarriesEnoughHighPriorityTokens) {
  Lab& lab = shared_lab();
  for (int expert : {0, 3, 7}) {
    for (std::size_t padding : {20, 60}) {
      const BlockerSpec spec = lab.blockers->spec_for(expert, padding);
      const auto* bl = lab.blockers->get(expert, padding);
      ASSERT_NE(bl, nullptr) << expert << " " << padding;
      ASSERT_EQ(bl->size(), lab.params.batch_size - 3);
      for (const auto& seq : *bl) {
        ASSERT_EQ(seq.front(), vocab::kBos);
        ASSERT_LE(seq.size(), padding);
        const GateMatrix g = lab.model->first_layer_gates(seq, lab.local_router);
        std::size_t hits = 0;
        for (std::size_t t = 1; t < seq.size(); ++t) {
          EXPECT_GE(seq[t], vocab::kFirstOpaque);
          hits += g(t, static_cast<std::size_t>(expert)) >= spec.threshold;
        }
        EXPECT_GE(hits, spec.nb);
        // Trailing tokens past the last blocker are trimmed.
        EXPECT_GE(g(seq.size() - 1, static_cast<std::size_t>(expert)), spec.threshold);
      }
    }
  }
}

TEST(Blockers, ZeroThresholdTakesFirstChunk) {
  const Model model{ModelConfig{}};
  BlockerSpec spec;
  spec.target_expert = 2;
  spec.threshold = 0.0;
  spec.nb = 4;
  spec.bsl = 19;
  spec.restricted_vocab = vocab::blocker_vocabulary(256);
  const auto seqs = find_blocking_sequences(spec, 5, model, RouterConfig{});
  ASSERT_EQ(seqs.size(), 5U);
  for (const auto& s : seqs) EXPECT_EQ(s.size(), 1U + 4U * (19U / 4U));
}

TEST(Blockers, ImpossibleThresholdGivesUp) {
  const Model model{ModelConfig{}};
  BlockerSpec spec;
  spec.threshold = 1.5;
  spec.nb = 1;
  spec.bsl = 5;
  spec.max_attempts = 20;
  spec.restricted_vocab = vocab::blocker_vocabulary(256);
  EXPECT_THROW(find_blocking_sequences(spec, 1, model, RouterConfig{}), BlockerUnavailable);
}

TEST(Buffer, MinPositionCountsTokensAbove) {
  Lab& lab = shared_lab();
  QueryLedger ledger;
  LocalModel local(lab.model, lab.local_router, ledger);
  const TokenSequence probe = with_bos(vocab::encode("ab"));
  for (int expert : {0, 4}) {
    const auto* bl = lab.blockers->get(expert, 40);
    ASSERT_NE(bl, nullptr);
    const auto adv = compose_adversarial_batch(probe, *bl, 40, BatchOrder::ProbeFirst, 0, 32);
    const Batch batch = adv.with_empty_victim();
    // Independent count from per-sequence layer-0 gates.
    const double guess =
        lab.model->first_layer_gates(probe, lab.local_router)(probe.size() - 1, expert);
    std::size_t above = 0;
    for (std::size_t s = 0; s < batch.size(); ++s) {
      TokenSequence seq = batch.sequences[s];
      const GateMatrix g = lab.model->first_layer_gates(seq, lab.local_router);
      for (std::size_t t = 0; t < seq.size(); ++t) above += g(t, expert) > guess;
    }
    EXPECT_EQ(min_position(local, adv, expert), above);
  }
}

TEST(Buffer, ZeroPriorityHasNoPosition) {
  Lab& lab = shared_lab();
  QueryLedger ledger;
  LocalModel local(lab.model, lab.local_router, ledger);
  // Find a character whose quantized layer-0 priority is zero somewhere.
  for (TokenId c : vocab::guess_vocabulary()) {
    const TokenSequence probe{vocab::kBos, c};
    const GateMatrix g = lab.model->first_layer_gates(probe, lab.local_router);
    for (std::size_t e = 0; e < g.cols(); ++e) {
      if (g(1, e) != 0.0) continue;
      const auto* bl = lab.blockers->get(static_cast<int>(e), 20);
      ASSERT_NE(bl, nullptr);
      const auto adv = compose_adversarial_batch(probe, *bl, 20, BatchOrder::ProbeFirst, 0, 32);
      EXPECT_THROW(min_position(local, adv, static_cast<int>(e)), PositionUndefined);
      return;
    }
  }
  GTEST_SKIP() << "no character has a zero quantized priority under this model";
}

TEST(Buffer, SwapOrderExchangesThePair) {
  const auto adv = compose_adversarial_batch({0, 5}, std::vector<TokenSequence>(29, {0, 40}), 20,
                                             BatchOrder::ProbeFirst, 3, 32);
  const auto sw = swap_order(adv);
  EXPECT_EQ(sw.probe_slot, adv.victim_slot);
  EXPECT_EQ(sw.victim_slot, adv.probe_slot);
  EXPECT_EQ(sw.order, BatchOrder::VictimFirst);
  EXPECT_EQ(swap_order(sw).sequences, adv.sequences);
}

TEST(HammingBall, SizeMatchesEnumeration) {
  std::uint64_t count = 0;
  for (std::uint32_t mask = 0; mask < (1U << 16); ++mask) count += std::popcount(mask) <= 4;
  EXPECT_EQ(count, 2517U);
  EXPECT_EQ(hamming_ball_size(16, 4), 2517U);
  EXPECT_EQ(hamming_ball_size(16, 0), 1U);
  EXPECT_EQ(hamming_ball_size(4, 4), 16U);

  const RoutingPath estimate(8, 2, 0xA5C3);
  const auto ball = hamming_ball(estimate, 4);
  ASSERT_EQ(ball.size(), 2517U);
  std::set<std::uint64_t> seen;
  int last = 0;
  for (const auto& p : ball) {
    const int d = p.hamming(estimate);
    EXPECT_LE(d, 4);
    EXPECT_GE(d, last);
    last = d;
    seen.insert(p.bits());
  }
  EXPECT_EQ(seen.size(), ball.size());
  EXPECT_EQ(hamming_ball(estimate, 0).size(), 1U);
  EXPECT_EQ(hamming_ball(RoutingPath(2, 2, 1), 4).size(), 16U);
}

TEST(PathTable, BuildCostsOneLocalQueryPerEntry) {
  Lab& lab = shared_lab();
  QueryLedger ledger;
  LocalModel local(lab.model, lab.local_router, ledger);
  const auto f = small_table(local, 4);
  EXPECT_EQ(f.table.size(), 2517U);
  EXPECT_EQ(ledger.local_queries(), 1U + 2517U);
}

TEST(PathTable, RecoversExactAndNoisyOutputs) {
  Lab& lab = shared_lab();
  QueryLedger ledger;
  LocalModel local(lab.model, lab.local_router, ledger);
  const auto f = small_table(local, 2);
  // A path bit on an expert whose gate weight is zero does not change the
  // output, so such paths are only recoverable up to equivalence.
  const auto equivalent = [&](std::size_t i) {
    std::vector<RoutingPath> same;
    for (std::size_t j = 0; j < f.table.size(); ++j) {
      if (max_abs_diff(f.table.outputs[i], f.table.outputs[j]) <= 1e-12) {
        same.push_back(f.table.paths[j]);
      }
    }
    return same;
  };
  SplitMix64 rng(17);
  std::size_t unique = 0;
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t i = rng.below(f.table.size());
    const auto same = equivalent(i);
    unique += same.size() == 1;
    const auto lowest = *std::min_element(same.begin(), same.end(), [](const auto& a, const auto& b) {
      return a.bits() < b.bits();
    });
    EXPECT_EQ(recover_path(f.table, f.table.outputs[i]), lowest);
    LogitVector noisy = f.table.outputs[i];
    for (double& v : noisy) v += 0.5e-4 * (2.0 * rng.uniform() - 1.0);
    EXPECT_EQ(recover_path(f.table, noisy), lowest);
  }
  EXPECT_GT(unique, 0U);
  LogitVector far = f.table.outputs[0];
  for (double& v : far) v += 1.0;
  EXPECT_THROW(recover_path(f.table, far), UnrecoverablePath);
}

TEST(PathTable, MismatchMetric) {
  const LogitVector a{0.0, 1.0, 2.0};
  const LogitVector b{0.0, 1.00001, 2.5};
  EXPECT_EQ(mismatch_count(a, b, 1e-4), 1U);
  EXPECT_EQ(mismatch_count(a, b, 1.0), 0U);
  EXPECT_DOUBLE_EQ(max_abs_diff(a, b), 0.5);
}

TEST(VerifyGuess, BitCases) {
  Lab& lab = shared_lab();
  QueryLedger ledger;
  LocalModel local(lab.model, lab.local_router, ledger);
  const auto f = small_table(local, 4);
  const int expert = 3;
  const RoutingPath& base = f.table.estimate;
  const auto variant = [&](bool bit, std::uint64_t extra) {
    RoutingPath p(base.experts(), base.layers(), base.bits() ^ extra);
    p.set(expert, 0, bit);
    return p;
  };
  const auto out = [&](const RoutingPath& p) {
    const std::size_t i = index_of(f.table, p);
    EXPECT_LT(i, f.table.size());
    return f.table.outputs[i];
  };
  const std::uint64_t other = std::uint64_t{1} << (8 + 1);  // layer 1, expert 1
  const auto on = variant(true, 0);
  const auto off = variant(false, 0);
  const auto on2 = variant(true, other);
  const auto off2 = variant(false, other);

  const auto hit = verify_guess(out(on), out(off), expert, f.table, 1e-12);
  EXPECT_TRUE(hit.correct);
  EXPECT_FALSE(hit.skipped);
  EXPECT_EQ(*hit.path1, on);
  EXPECT_EQ(*hit.path2, off);
  EXPECT_FALSE(verify_guess(out(on), out(on2), expert, f.table, 1e-12).correct);
  EXPECT_FALSE(verify_guess(out(off), out(off2), expert, f.table, 1e-12).correct);
  EXPECT_FALSE(verify_guess(out(off), out(on), expert, f.table, 1e-12).correct);

  const auto skip = verify_guess(out(on), out(on), expert, f.table, 1e-12);
  EXPECT_TRUE(skip.skipped);
  EXPECT_FALSE(skip.correct);
  EXPECT_FALSE(skip.path1.has_value());
}

TEST(Oracle, AcceptsTruthRejectsMutations) {
  Lab& lab = shared_lab();
  for (const char* text : {"cat", "moe", "zip z"}) {
    const TokenSequence secret = vocab::encode(text);
    const auto run = [&](const TokenSequence& candidate) {
      QueryLedger ledger;
      TargetFacade target(lab.model, lab.target_router, with_bos(secret), ledger);
      LocalModel local(lab.model, lab.local_router, ledger);
      const auto out = oracle_attack(candidate, target, local, *lab.blockers, lab.params);
      EXPECT_TRUE(out.configured) << text;
      EXPECT_EQ(out.target_queries, 2U);
      EXPECT_EQ(ledger.target_queries(), 2U);
      return out.accepted;
    };
    EXPECT_TRUE(run(secret)) << text;
    TokenSequence last = secret;
    last.back() = last.back() == vocab::encode_char('q') ? vocab::encode_char('x')
                                                         : vocab::encode_char('q');
    EXPECT_FALSE(run(last)) << text;
    TokenSequence first = secret;
    first.front() = first.front() == vocab::encode_char('q') ? vocab::encode_char('x')
                                                             : vocab::encode_char('q');
    EXPECT_FALSE(run(first)) << text;
  }
}

TEST(Oracle, RejectsEmptyCandidate) {
  Lab& lab = shared_lab();
  QueryLedger ledger;
  TargetFacade target(lab.model, lab.target_router, {vocab::kBos, 2}, ledger);
  LocalModel local(lab.model, lab.local_router, ledger);
  EXPECT_THROW(oracle_attack({}, target, local, *lab.blockers, lab.params), InvalidInput);
}

TEST(Leakage, RecoversShortMessage) {
  Lab& lab = shared_lab();
  const TokenSequence secret = vocab::encode("ab");
  QueryLedger ledger;
  TargetFacade target(lab.model, lab.target_router, with_bos(secret), ledger);
  LocalModel local(lab.model, lab.local_router, ledger);
  const auto res = leakage_attack(secret.size(), target, local, *lab.blockers, lab.params);
  EXPECT_TRUE(res.success);
  EXPECT_EQ(res.recovered, secret);
  EXPECT_EQ(res.target_queries, ledger.target_queries());
  for (const auto& tok : res.tokens) {
    EXPECT_LE(tok.target_queries, 2 * lab.params.guess_vocab.size() * (secret.size() + 1));
  }
}

TEST(Leakage, BudgetHoldsForTinyVocabulary) {
  Lab& lab = shared_lab();
  AttackParams params = lab.params;
  params.guess_vocab = {vocab::encode_char('k'), vocab::encode_char('e')};
  QueryLedger ledger;
  TargetFacade target(lab.model, lab.target_router, with_bos(vocab::encode("e")), ledger);
  LocalModel local(lab.model, lab.local_router, ledger);
  const auto res = leakage_attack(1, target, local, *lab.blockers, params);
  EXPECT_LE(res.target_queries, 2U * 2U * 2U);
  EXPECT_THROW(leakage_attack(0, target, local, *lab.blockers, params), InvalidInput);
}

TEST(Leakage, BatchIsolationDefeatsTheAttack) {
  Lab& lab = shared_lab();
  RouterConfig isolated = lab.target_router;
  isolated.batch_isolation = true;
  const TokenSequence secret = vocab::encode("ab");
  QueryLedger ledger;
  TargetFacade target(lab.model, isolated, with_bos(secret), ledger);
  LocalModel local(lab.model, lab.local_router, ledger);
  const auto res = leakage_attack(secret.size(), target, local, *lab.blockers, lab.params);
  EXPECT_FALSE(res.success);
  for (const auto& tok : res.tokens) EXPECT_FALSE(tok.recovered && tok.token == secret[tok.index]);
}

// A step is verified exactly when the target really flipped: the probe's last
// token joined the expert in the probe-first batch and was dropped in the
// victim-first one.
TEST(Leakage, VerdictsAgreeWithTargetRouting) {
  Lab& lab = shared_lab();
  std::size_t trials = 0;
  std::size_t sound = 0;
  std::size_t complete_misses = 0;
  for (const char* text : {"hello", "mixtu", "exper", "tie b", "quant"}) {
    const TokenSequence secret = vocab::encode(text);
    const TokenSequence victim = with_bos(secret);
    QueryLedger ledger;
    TargetFacade target(lab.model, lab.target_router, victim, ledger);
    LocalModel local(lab.model, lab.local_router, ledger);
    const auto res = leakage_attack(secret.size(), target, local, *lab.blockers, lab.params);

    QueryLedger scratch;
    LocalModel replay(lab.model, lab.local_router, scratch);
    for (const auto& rec : ledger.records()) {
      TokenSequence probe{vocab::kBos};
      probe.insert(probe.end(), res.recovered.begin(),
                   res.recovered.begin() + static_cast<std::ptrdiff_t>(rec.token_index));
      probe.push_back(rec.guess);
      const auto* bl = lab.blockers->get(rec.expert, rec.padding);
      ASSERT_NE(bl, nullptr);
      const auto full = compose_adversarial_batch(probe, *bl, rec.padding, BatchOrder::ProbeFirst,
                                                  lab.params.pair_slot, lab.params.batch_size);
      const BufferShape shape = analyse_buffer(replay, full, {vocab::kPad}, rec.expert);
      const auto first = trim_blockers(full, shape, rec.position - (shape.capacity - 1));
      const auto second = swap_order(first);
      const auto joined = [&](const AdversarialBatch& adv) {
        const Batch b = adv.with_victim(victim);
        const auto r = lab.model->forward_batch(b, lab.target_router, true);
        return r.trace->front().assignment.contains(
            static_cast<std::size_t>(rec.expert), b.flat_index(adv.probe_slot, probe.size() - 1));
      };
      const bool flip = joined(first) && !joined(second);
      ++trials;
      EXPECT_EQ(rec.verified, flip) << text << " token " << rec.token_index << " guess "
                                    << rec.guess;
      sound += rec.verified && flip;
      complete_misses += !rec.verified && flip;
    }
  }
  EXPECT_GE(trials, 500U);
  EXPECT_GT(sound, 0U);
  EXPECT_EQ(complete_misses, 0U);
  RecordProperty("trials", static_cast<int>(trials));
}
