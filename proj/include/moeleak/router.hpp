#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "moeleak/numerics.hpp"

namespace moeleak {

/// Inputs of the expert-capacity formula K = floor(B * L * gamma / N).
struct CapacityParams {
  std::size_t batch_size = 0;
  std::size_t max_seq_len = 0;
  double capacity_factor = 1.0;
  std::size_t experts = 0;
};

/// Throws ConfigError when a field is non-positive or K < 1.
std::size_t expert_capacity(const CapacityParams& params);

struct RouterConfig {
  double capacity_factor = 1.0;
  TieMode tie_mode = TieMode::StableAscending;
  QuantizationPolicy quantization{};
  /// Defense: route every sequence against its own capacity only.
  bool batch_isolation = false;
  /// Control: every expert takes every token (K = B * L), no dropping.
  bool dense_control = false;
  /// Seed of the randomized tie permutation (TieMode::Randomized only).
  std::uint64_t tie_seed = 0;
  /// Multiplier applied to gate rows of padding tokens.
  double padding_scale = 1e-6;
};

/// Gate probabilities: one row per flat token, one column per expert.
using GateMatrix = Matrix;

struct ExpertSlot {
  std::size_t token = 0;
  double weight = 0.0;
};

/// Per-expert ordered buffers produced by one routing step.
struct ExpertAssignment {
  std::size_t capacity = 0;
  std::vector<std::vector<ExpertSlot>> experts;
  /// Bit e set iff the token was selected by expert e.
  std::vector<std::uint64_t> membership;

  bool contains(std::size_t expert, std::size_t token) const {
    return (membership[token] >> expert) & 1U;
  }
  bool dropped(std::size_t token) const { return membership[token] == 0; }
  /// Buffer slot of `token` in `expert`, if selected.
  std::optional<std::size_t> slot_of(std::size_t expert, std::size_t token) const;
  std::size_t dropped_count() const;
};

/// Layout of the flat token axis: `sequences` blocks of `length` rows.
struct RouteShape {
  std::size_t sequences = 1;
  std::size_t length = 1;
};

/// Row-wise softmax of hidden * gate_weights, then rounding when the policy
/// targets router probabilities.
GateMatrix gate(const Matrix& hidden, const Matrix& gate_weights,
                const QuantizationPolicy& policy);

/// Scales row i by multipliers[i] (1 for real tokens, < 1 for padding).
GateMatrix deprioritize_padding(const GateMatrix& gates, std::span<const double> multipliers);

/// Column-wise top-K expert-choice routing with K from the batch shape.
ExpertAssignment route(const GateMatrix& gates, const RouterConfig& config,
                       const RouteShape& shape, std::size_t layer = 0);

/// Same routing with an explicit per-expert capacity (ignored by batch
/// isolation, which derives a per-sequence capacity).
ExpertAssignment route_with_capacity(const GateMatrix& gates, std::size_t capacity,
                                     const RouterConfig& config, const RouteShape& shape,
                                     std::size_t layer = 0);

enum class BatchOrder { ProbeFirst, VictimFirst };

struct BoundaryOutcome {
  /// The boundary token as observed through the probe's output.
  bool probe_token_dropped = false;
  bool victim_token_dropped = false;
};

/// Runs a single expert column on the live router: `boundary_slot` higher
/// priority blockers, then the probe's guess token and the victim's target
/// token in the given order, with capacity boundary_slot + 1.
BoundaryOutcome decide_buffer_outcome(double p_guess, double p_target, BatchOrder order,
                                      std::size_t boundary_slot, const RouterConfig& config);

}  // namespace moeleak
