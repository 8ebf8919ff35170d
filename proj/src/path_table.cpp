#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "moeleak/attack.hpp"
#include "moeleak/errors.hpp"

namespace moeleak {

std::uint64_t hamming_ball_size(int bits, int beta) {
  if (bits < 0 || beta < 0) throw InvalidInput("hamming ball needs non-negative sizes");
  std::uint64_t total = 0;
  std::uint64_t binom = 1;  // C(bits, i)
  for (int i = 0; i <= std::min(bits, beta); ++i) {
    total += binom;
    binom = binom * static_cast<std::uint64_t>(bits - i) / static_cast<std::uint64_t>(i + 1);
  }
  return total;
}

namespace {

void flip_combinations(int bits, int remaining, int start, std::uint64_t mask,
                       std::vector<std::uint64_t>& out) {
  if (remaining == 0) {
    out.push_back(mask);
    return;
  }
  for (int b = start; b <= bits - remaining; ++b) {
    flip_combinations(bits, remaining - 1, b + 1, mask | (std::uint64_t{1} << b), out);
  }
}

}  // namespace

std::vector<RoutingPath> hamming_ball(const RoutingPath& estimate, int beta) {
  const int bits = static_cast<int>(estimate.size());
  if (beta < 0) throw InvalidInput("beta must be >= 0");
  std::vector<std::uint64_t> flips;
  flips.reserve(hamming_ball_size(bits, beta));
  for (int d = 0; d <= std::min(bits, beta); ++d) flip_combinations(bits, d, 0, 0, flips);

  std::vector<RoutingPath> out;
  out.reserve(flips.size());
  for (std::uint64_t f : flips) {
    out.emplace_back(estimate.experts(), estimate.layers(), estimate.bits() ^ f);
  }
  return out;
}

PathTable build_path_table(LocalModel& local, const PrefixCache& cache, TokenId token,
                           const RoutingPath& estimate, int beta, double tolerance) {
  PathTable table;
  table.estimate = estimate;
  table.beta = beta;
  table.tolerance = tolerance;
  table.paths = hamming_ball(estimate, beta);
  table.outputs.resize(table.paths.size());

  const auto n = static_cast<std::ptrdiff_t>(table.paths.size());
#pragma omp parallel for schedule(dynamic, 16)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    table.outputs[idx] = local.query_local(cache, token, table.paths[idx]);
  }
  return table;
}

std::size_t mismatch_count(const LogitVector& a, const LogitVector& b, double tolerance) {
  if (a.size() != b.size()) throw InvalidInput("logit vectors differ in length");
  std::size_t count = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!(std::fabs(a[i] - b[i]) <= tolerance)) ++count;
  }
  return count;
}

double max_abs_diff(const LogitVector& a, const LogitVector& b) {
  if (a.size() != b.size()) throw InvalidInput("logit vectors differ in length");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

RoutingPath recover_path(const PathTable& table, const LogitVector& observed,
                         std::size_t max_mismatch) {
  if (table.paths.empty()) throw InvalidInput("path table is empty");
  std::size_t best = 0;
  std::size_t best_dist = std::numeric_limits<std::size_t>::max();
  for (std::size_t i = 0; i < table.size(); ++i) {
    const std::size_t d = mismatch_count(table.outputs[i], observed, table.tolerance);
    if (d < best_dist || (d == best_dist && table.paths[i].bits() < table.paths[best].bits())) {
      best = i;
      best_dist = d;
    }
  }
  if (best_dist > max_mismatch) {
    throw UnrecoverablePath("closest routing path differs in " + std::to_string(best_dist) +
                            " logits (bound " + std::to_string(max_mismatch) + ")");
  }
  return table.paths[best];
}

GuessOutcome verify_guess(const LogitVector& out1, const LogitVector& out2, int expert,
                          const PathTable& table, double epsilon, std::size_t max_mismatch) {
  GuessOutcome outcome;
  if (max_abs_diff(out1, out2) <= epsilon) {
    outcome.skipped = true;
    return outcome;
  }
  try {
    outcome.path1 = recover_path(table, out1, max_mismatch);
    outcome.path2 = recover_path(table, out2, max_mismatch);
  } catch (const UnrecoverablePath&) {
    return outcome;
  }
  outcome.correct = outcome.path1->at(expert, 0) && !outcome.path2->at(expert, 0);
  return outcome;
}

}  // namespace moeleak
