#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include <gtest/gtest.h>

#include "moeleak/errors.hpp"
#include "moeleak/model.hpp"

using namespace moeleak;

namespace {

TokenSequence random_sequence(SplitMix64& rng, std::size_t len, int vocab_size) {
  TokenSequence s{vocab::kBos};
  for (std::size_t i = 1; i < len; ++i) {
    s.push_back(vocab::kFirstChar + static_cast<TokenId>(rng.below(vocab_size - vocab::kFirstChar)));
  }
  return s;
}

TokenSequence padding_tokens(std::size_t len) {
  TokenSequence s(len, vocab::kPad);
  s[0] = vocab::kBos;
  return s;
}

double max_diff(const LogitVector& a, const LogitVector& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

class ModelTest : public ::testing::Test {
 protected:
  ModelConfig config{};
  Model model{config};
  RouterConfig router{};
};

}  // namespace

TEST(ModelConfigTest, Validation) {
  ModelConfig c;
  EXPECT_NO_THROW(c.validate());
  c.depth = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.hidden = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.vocab_size = 10;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.experts = 40;
  EXPECT_THROW(c.validate(), ConfigError);  // 80 path bits
}

TEST(RoutingPathTest, BitsAndHamming) {
  RoutingPath p(8, 2);
  p.set(3, 1, true);
  EXPECT_TRUE(p.at(3, 1));
  EXPECT_FALSE(p.at(3, 0));
  EXPECT_EQ(p.layer_mask(1), 1U << 3);
  RoutingPath q(8, 2, p.bits() ^ 0x5);
  EXPECT_EQ(p.hamming(q), 2);
  EXPECT_EQ(p.size(), 16U);
}

TEST(MakeBatch, PadsToLongest) {
  const Batch b = make_batch({{0, 2, 3}, {0}}, 5);
  EXPECT_EQ(b.length, 5U);
  EXPECT_EQ(b.flat_index(1, 2), 7U);
  EXPECT_THROW(make_batch({{0, 2}, {}}), InvalidBatch);
}

TEST_F(ModelTest, RejectsBadBatches) {
  Batch b = make_batch({{0, 2, 3}});
  b.sequences[0].push_back(config.vocab_size);
  b.length = 4;
  EXPECT_THROW(model.forward_batch(b, router), InvalidBatch);
  Batch too_long = make_batch({TokenSequence(200, 2)});
  EXPECT_THROW(model.forward_batch(too_long, router), InvalidBatch);
}

TEST_F(ModelTest, DeterministicIncludingTrace) {
  SplitMix64 rng(1);
  const Batch b = make_batch({random_sequence(rng, 9, 256), random_sequence(rng, 12, 256)});
  const auto r1 = model.forward_batch(b, router, true);
  const auto r2 = model.forward_batch(b, router, true);
  EXPECT_EQ(r1.logits, r2.logits);
  ASSERT_TRUE(r1.trace && r2.trace);
  for (std::size_t l = 0; l < r1.trace->size(); ++l) {
    EXPECT_EQ((*r1.trace)[l].assignment.membership, (*r2.trace)[l].assignment.membership);
    EXPECT_EQ((*r1.trace)[l].gates, (*r2.trace)[l].gates);
  }
}

TEST(ModelSingleExpert, FullCapacityEqualsDense) {
  ModelConfig c;
  c.experts = 1;
  const Model m(c);
  SplitMix64 rng(3);
  const Batch b = make_batch({random_sequence(rng, 10, 256)});
  RouterConfig ecr;
  RouterConfig dense;
  dense.dense_control = true;
  const auto a = m.forward_batch(b, ecr, true);
  EXPECT_EQ(a.trace->front().assignment.dropped_count(), 0U);
  EXPECT_EQ(a.logits, m.forward_batch(b, dense).logits);
}

TEST_F(ModelTest, PermutingUntiedSequencesKeepsVictimLogits) {
  RouterConfig untied = router;
  untied.quantization.site = QuantSite::Off;
  SplitMix64 rng(5);
  const TokenSequence victim = random_sequence(rng, 8, 256);
  const TokenSequence x = random_sequence(rng, 10, 256);
  const TokenSequence y = random_sequence(rng, 6, 256);
  const auto a = model.forward_batch(make_batch({victim, x, y}), untied, true);
  const auto b = model.forward_batch(make_batch({victim, y, x}), untied, true);
  EXPECT_EQ(a.logits[0], b.logits[0]);
  const std::size_t len = 10;
  for (std::size_t l = 0; l < a.trace->size(); ++l) {
    for (std::size_t t = 0; t < len; ++t) {
      EXPECT_EQ((*a.trace)[l].assignment.membership[t], (*b.trace)[l].assignment.membership[t]);
    }
  }
}

TEST_F(ModelTest, PrefixCacheReproducesFullForward) {
  SplitMix64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const TokenSequence s = random_sequence(rng, 3 + rng.below(10), 256);
    const Batch b = make_batch({random_sequence(rng, 12, 256), s, padding_tokens(20)});
    RouterTrace trace;
    const PrefixCache cache = model.build_prefix_cache(b, router, 1, s.size() - 1, &trace);
    const auto full = model.forward_batch(b, router, true);
    const RoutingPath path = path_from_trace(trace, b.flat_index(1, s.size() - 1), config.experts);
    EXPECT_EQ(path, path_from_trace(*full.trace, b.flat_index(1, s.size() - 1), config.experts));
    const LogitVector forced = model.forward_with_forced_path(cache, s.back(), path);
    EXPECT_LE(max_diff(forced, full.logits[1]), 1e-9);
  }
}

TEST_F(ModelTest, DifferentTokensOrPathsGiveDifferentLogits) {
  SplitMix64 rng(7);
  const TokenSequence s = random_sequence(rng, 6, 256);
  const Batch b = make_batch({s, padding_tokens(20)});
  const PrefixCache cache = model.build_prefix_cache(b, router, 0, s.size() - 1);
  const RoutingPath base(config.experts, config.depth, 0x0101);
  EXPECT_NE(model.forward_with_forced_path(cache, 5, base),
            model.forward_with_forced_path(cache, 6, base));
  for (int trial = 0; trial < 100; ++trial) {
    const RoutingPath p(config.experts, config.depth, rng.next());
    const RoutingPath q(config.experts, config.depth,
                        p.bits() ^ (std::uint64_t{1} << rng.below(p.size())));
    EXPECT_GT(max_diff(model.forward_with_forced_path(cache, s.back(), p),
                       model.forward_with_forced_path(cache, s.back(), q)),
              1e-6);
  }
}

TEST_F(ModelTest, EmptyPathIsResidualOnly) {
  // With every expert zeroed, any path leaves only the residual stream.
  ModelWeights w = model.weights();
  for (auto& layer : w.layers) {
    for (auto& ex : layer.experts) {
      for (double& v : ex.w2.data()) v = 0.0;
    }
  }
  const Model silent(config, w);
  SplitMix64 rng(8);
  const TokenSequence s = random_sequence(rng, 7, 256);
  const Batch b = make_batch({s, padding_tokens(20)});
  const PrefixCache cache = model.build_prefix_cache(b, router, 0, s.size() - 1);
  const RoutingPath none(config.experts, config.depth, 0);
  const LogitVector residual = model.forward_with_forced_path(cache, s.back(), none);
  for (int trial = 0; trial < 10; ++trial) {
    const RoutingPath any(config.experts, config.depth, rng.next());
    EXPECT_LE(max_diff(silent.forward_with_forced_path(cache, s.back(), any), residual), 1e-12);
  }
}

TEST_F(ModelTest, CausalPrefixUnaffectedByLaterTokens) {
  RouterConfig dense = router;
  dense.dense_control = true;
  SplitMix64 rng(9);
  const TokenSequence s = random_sequence(rng, 6, 256);
  TokenSequence longer = s;
  for (int i = 0; i < 5; ++i) longer.push_back(7 + i);
  const PrefixCache a = model.build_prefix_cache(make_batch({s}), dense, 0, s.size());
  const PrefixCache b = model.build_prefix_cache(make_batch({longer}), dense, 0, s.size());
  for (std::size_t l = 0; l < a.keys.size(); ++l) {
    EXPECT_EQ(a.keys[l], b.keys[l]);
    EXPECT_EQ(a.values[l], b.values[l]);
  }
}

TEST_F(ModelTest, FirstLayerGatesIgnoreTheBatch) {
  SplitMix64 rng(10);
  const TokenSequence s = random_sequence(rng, 8, 256);
  const Batch b = make_batch({random_sequence(rng, 15, 256), s});
  const auto full = model.forward_batch(b, router, true);
  const GateMatrix alone = model.first_layer_gates(s, router);
  const GateMatrix& in_batch = full.trace->front().gates;
  for (std::size_t t = 0; t < s.size(); ++t) {
    for (std::size_t e = 0; e < alone.cols(); ++e) {
      EXPECT_EQ(alone(t, e), in_batch(b.flat_index(1, t), e));
    }
  }
}

TEST_F(ModelTest, CheckpointRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "moeleak_ckpt_test.bin";
  save_checkpoint(model, path);
  const Model loaded = load_checkpoint(path);
  std::filesystem::remove(path);
  EXPECT_EQ(loaded.config(), model.config());
  SplitMix64 rng(11);
  const Batch b = make_batch({random_sequence(rng, 9, 256), padding_tokens(20)});
  EXPECT_EQ(loaded.forward_batch(b, router).logits, model.forward_batch(b, router).logits);
}

TEST(Checkpoint, RejectsGarbage) {
  const auto path = std::filesystem::temp_directory_path() / "moeleak_ckpt_garbage.bin";
  std::ofstream(path) << "not a checkpoint";
  EXPECT_ANY_THROW(load_checkpoint(path));
  std::filesystem::remove(path);
}
