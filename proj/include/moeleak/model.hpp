#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "moeleak/numerics.hpp"
#include "moeleak/router.hpp"
#include "moeleak/vocab.hpp"

namespace moeleak {

struct ModelConfig {
  int depth = 2;          // D, number of attention + MoE blocks
  int experts = 8;        // N, experts per MoE layer
  int hidden = 32;        // d
  int ffn_hidden = 64;    // expert inner width
  int vocab_size = 256;   // V_full
  int max_len = 128;      // positional table size
  std::uint64_t seed = 1;
  // Multipliers on the (-0.1, 0.1) seeded init; chosen so that the gate has
  // tokens above the default blocker threshold for every expert.
  double embed_gain = 10.0;
  double gate_gain = 12.0;

  /// Throws ConfigError.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// N x D binary matrix: bit (expert, layer) set iff the token was processed
/// by that expert at that layer.
class RoutingPath {
 public:
  RoutingPath() = default;
  RoutingPath(int experts, int layers, std::uint64_t bits = 0);

  int experts() const noexcept { return experts_; }
  int layers() const noexcept { return layers_; }
  std::uint64_t bits() const noexcept { return bits_; }
  std::size_t size() const noexcept { return static_cast<std::size_t>(experts_ * layers_); }

  bool at(int expert, int layer) const;
  void set(int expert, int layer, bool value);
  /// Experts selected at one layer as a bit mask.
  std::uint64_t layer_mask(int layer) const;
  int hamming(const RoutingPath& other) const;

  bool operator==(const RoutingPath&) const = default;

 private:
  int experts_ = 0;
  int layers_ = 0;
  std::uint64_t bits_ = 0;
};

/// Sequences padded with <pad> to a common length L.
struct Batch {
  std::vector<TokenSequence> sequences;
  std::size_t length = 0;

  std::size_t size() const noexcept { return sequences.size(); }
  std::size_t flat_index(std::size_t sequence, std::size_t position) const {
    return sequence * length + position;
  }
};

/// Pads to max(length, longest sequence). Empty sequences are rejected.
Batch make_batch(std::vector<TokenSequence> sequences, std::size_t length = 0);

using LogitVector = std::vector<double>;

struct LayerTrace {
  GateMatrix gates;
  ExpertAssignment assignment;
};
using RouterTrace = std::vector<LayerTrace>;

/// Routing path of one flat token read off a trace.
RoutingPath path_from_trace(const RouterTrace& trace, std::size_t flat_token, int experts);

struct ForwardResult {
  /// Final-position logits, one vector per sequence.
  std::vector<LogitVector> logits;
  std::optional<RouterTrace> trace;
};

/// Attention keys/values of one sequence's first `prefix_len` positions,
/// captured inside a particular batch.
struct PrefixCache {
  std::size_t sequence = 0;
  std::size_t prefix_len = 0;
  std::size_t batch_sequences = 0;
  std::size_t batch_length = 0;
  RouterConfig router{};
  std::vector<Matrix> keys;    // per layer, prefix_len x d
  std::vector<Matrix> values;  // per layer, prefix_len x d
};

struct ModelWeights {
  Matrix embedding;  // V x d, tied with the unembedding
  Matrix positions;  // max_len x d
  struct Expert {
    Matrix w1;  // d x ffn
    Matrix w2;  // ffn x d
  };
  struct Layer {
    Matrix wq, wk, wv, wo;  // d x d
    Matrix gate;            // d x N
    std::vector<Expert> experts;
  };
  std::vector<Layer> layers;
};

/// Toy decoder: embedding -> [attention -> MoE] x D -> tied unembedding.
/// Immutable after construction; all member functions are thread safe.
class Model {
 public:
  explicit Model(const ModelConfig& config);
  Model(const ModelConfig& config, ModelWeights weights);

  const ModelConfig& config() const noexcept { return config_; }
  const ModelWeights& weights() const noexcept { return weights_; }

  /// Throws InvalidBatch on inconsistent lengths or out-of-range tokens.
  ForwardResult forward_batch(const Batch& batch, const RouterConfig& router,
                              bool capture_trace = false) const;

  /// Runs `batch` and keeps the keys/values of sequence `sequence` up to
  /// `prefix_len` positions.
  PrefixCache build_prefix_cache(const Batch& batch, const RouterConfig& router,
                                 std::size_t sequence, std::size_t prefix_len,
                                 RouterTrace* trace = nullptr) const;

  /// Processes `token` at position cache.prefix_len with its expert set at
  /// every layer taken from `path` instead of the router.
  LogitVector forward_with_forced_path(const PrefixCache& cache, TokenId token,
                                       const RoutingPath& path) const;

  /// Layer-0 gate rows of a sequence (len x N). Layer 0 does not depend on
  /// the rest of the batch.
  GateMatrix first_layer_gates(const TokenSequence& tokens, const RouterConfig& router) const;

 private:
  struct Captured;
  ForwardResult run(const Batch& batch, const RouterConfig& router, bool capture_trace,
                    Captured* capture) const;
  void check_batch(const Batch& batch) const;

  ModelConfig config_;
  ModelWeights weights_;
};

/// Deterministic weights for (config, seed).
ModelWeights init_weights(const ModelConfig& config);

/// Flat little-endian binary checkpoint: magic, config, then every weight
/// matrix in declaration order.
void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace moeleak
