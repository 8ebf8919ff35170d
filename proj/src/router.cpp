#include "moeleak/router.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <string>

#include "moeleak/errors.hpp"
#include "moeleak/kernels.hpp"

namespace moeleak {

std::size_t expert_capacity(const CapacityParams& p) {
  if (p.batch_size == 0 || p.max_seq_len == 0 || p.experts == 0 || !(p.capacity_factor > 0.0)) {
    throw ConfigError("expert capacity needs positive B, L, gamma and N");
  }
  const double raw = static_cast<double>(p.batch_size) * static_cast<double>(p.max_seq_len) *
                     p.capacity_factor / static_cast<double>(p.experts);
  // Guard against B*L*gamma landing a hair below an integer.
  const auto k = static_cast<std::size_t>(std::floor(raw + 1e-9));
  if (k < 1) {
    throw ConfigError("expert capacity K = floor(" + std::to_string(raw) + ") is below 1");
  }
  return k;
}

std::optional<std::size_t> ExpertAssignment::slot_of(std::size_t expert, std::size_t token) const {
  const auto& buf = experts[expert];
  for (std::size_t s = 0; s < buf.size(); ++s) {
    if (buf[s].token == token) return s;
  }
  return std::nullopt;
}

std::size_t ExpertAssignment::dropped_count() const {
  return static_cast<std::size_t>(
      std::count(membership.begin(), membership.end(), std::uint64_t{0}));
}

GateMatrix gate(const Matrix& hidden, const Matrix& gate_weights,
                const QuantizationPolicy& policy) {
  GateMatrix g;
  kernels::matmul(hidden, gate_weights, g);
  for (std::size_t r = 0; r < g.rows(); ++r) {
    softmax_inplace(g.row(r));
    if (policy.site == QuantSite::RouterProbabilities) quantize_inplace(g.row(r), policy.decimals);
  }
  return g;
}

GateMatrix deprioritize_padding(const GateMatrix& gates, std::span<const double> multipliers) {
  if (multipliers.size() != gates.rows()) {
    throw InvalidInput("padding mask length must equal the number of gate rows");
  }
  GateMatrix out = gates;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    if (multipliers[r] == 1.0) continue;
    for (double& v : out.row(r)) v *= multipliers[r];
  }
  return out;
}

namespace {

void select_column(const GateMatrix& gates, std::size_t expert, std::size_t first,
                   std::size_t count, std::size_t capacity, const RouterConfig& cfg,
                   std::size_t layer, std::vector<ExpertSlot>& out) {
  std::vector<double> column(count);
  for (std::size_t i = 0; i < count; ++i) column[i] = gates(first + i, expert);
  const std::uint64_t seed = mix_seed(mix_seed(cfg.tie_seed, layer), expert);
  const auto sel = stable_topk(column, capacity, cfg.tie_mode, seed);
  for (std::size_t i = 0; i < sel.indices.size(); ++i) {
    out.push_back({first + sel.indices[i], sel.values[i]});
  }
}

}  // namespace

ExpertAssignment route_with_capacity(const GateMatrix& gates, std::size_t capacity,
                                     const RouterConfig& cfg, const RouteShape& shape,
                                     std::size_t layer) {
  const std::size_t n = gates.rows();
  const std::size_t experts = gates.cols();
  if (n != shape.sequences * shape.length) {
    throw InvalidBatch("gate rows do not match the batch shape");
  }
  if (experts == 0 || experts > 64) throw InvalidInput("router supports 1..64 experts");

  ExpertAssignment a;
  a.experts.resize(experts);
  a.membership.assign(n, 0);

  if (cfg.batch_isolation) {
    const std::size_t per_seq =
        cfg.dense_control ? shape.length
                          : expert_capacity({1, shape.length, cfg.capacity_factor, experts});
    a.capacity = per_seq;
    for (std::size_t e = 0; e < experts; ++e) {
      for (std::size_t s = 0; s < shape.sequences; ++s) {
        select_column(gates, e, s * shape.length, shape.length, per_seq, cfg, layer,
                      a.experts[e]);
      }
    }
  } else {
    const std::size_t k = cfg.dense_control ? n : capacity;
    a.capacity = k;
    const auto ne = static_cast<std::ptrdiff_t>(experts);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t e = 0; e < ne; ++e) {
      select_column(gates, static_cast<std::size_t>(e), 0, n, k, cfg, layer,
                    a.experts[static_cast<std::size_t>(e)]);
    }
  }

  for (std::size_t e = 0; e < experts; ++e) {
    for (const auto& slot : a.experts[e]) a.membership[slot.token] |= std::uint64_t{1} << e;
  }
  return a;
}

ExpertAssignment route(const GateMatrix& gates, const RouterConfig& cfg, const RouteShape& shape,
                       std::size_t layer) {
  const std::size_t k =
      expert_capacity({shape.sequences, shape.length, cfg.capacity_factor, gates.cols()});
  return route_with_capacity(gates, k, cfg, shape, layer);
}

BoundaryOutcome decide_buffer_outcome(double p_guess, double p_target, BatchOrder order,
                                      std::size_t boundary_slot, const RouterConfig& config) {
  const double blocker = std::max(p_guess, p_target) + 1.0;
  const std::size_t n = boundary_slot + 2;
  GateMatrix column(n, 1, blocker);
  const std::size_t probe_row = order == BatchOrder::ProbeFirst ? boundary_slot : boundary_slot + 1;
  const std::size_t victim_row = order == BatchOrder::ProbeFirst ? boundary_slot + 1 : boundary_slot;
  column(probe_row, 0) = p_guess;
  column(victim_row, 0) = p_target;

  RouterConfig cfg = config;
  cfg.batch_isolation = false;
  const auto a = route_with_capacity(column, boundary_slot + 1, cfg, {1, n}, 0);
  return {a.dropped(probe_row), a.dropped(victim_row)};
}

}  // namespace moeleak
