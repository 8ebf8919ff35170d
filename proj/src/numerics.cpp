#include "moeleak/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "moeleak/errors.hpp"

namespace moeleak {

namespace {

// Seed of the fixed permutation used by TieMode::Unstable.
constexpr std::uint64_t kUnstableSeed = 0x5eed'b170'0c50'47ULL;

}  // namespace

std::string_view to_string(TieMode mode) {
  switch (mode) {
    case TieMode::StableAscending: return "stable-ascending";
    case TieMode::Unstable: return "unstable";
    case TieMode::Randomized: return "randomized";
  }
  return "unknown";
}

TieMode tie_mode_from_string(std::string_view name) {
  if (name == "stable-ascending" || name == "stable") return TieMode::StableAscending;
  if (name == "unstable") return TieMode::Unstable;
  if (name == "randomized") return TieMode::Randomized;
  throw InvalidInput("unknown tie mode: " + std::string(name));
}

std::string_view to_string(QuantSite site) {
  switch (site) {
    case QuantSite::RouterProbabilities: return "router-probabilities";
    case QuantSite::AttentionOutputs: return "attention-outputs";
    case QuantSite::Off: return "off";
  }
  return "unknown";
}

QuantSite quant_site_from_string(std::string_view name) {
  if (name == "router-probabilities") return QuantSite::RouterProbabilities;
  if (name == "attention-outputs") return QuantSite::AttentionOutputs;
  if (name == "off") return QuantSite::Off;
  throw InvalidInput("unknown quantization site: " + std::string(name));
}

std::uint64_t SplitMix64::next() noexcept {
  state_ += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = state_;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double SplitMix64::uniform() noexcept {
  return static_cast<double>(next() >> 11) * 0x1.0p-53;
}

std::uint64_t SplitMix64::below(std::uint64_t bound) noexcept {
  // Lemire's multiply-shift with rejection; unbiased.
  std::uint64_t x = next();
  __uint128_t m = static_cast<__uint128_t>(x) * bound;
  auto low = static_cast<std::uint64_t>(m);
  if (low < bound) {
    const std::uint64_t threshold = (0 - bound) % bound;
    while (low < threshold) {
      x = next();
      m = static_cast<__uint128_t>(x) * bound;
      low = static_cast<std::uint64_t>(m);
    }
  }
  return static_cast<std::uint64_t>(m >> 64);
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) noexcept {
  SplitMix64 g(a ^ (b * 0xD1B54A32D192ED03ULL));
  g.next();
  return g.next();
}

std::vector<std::size_t> tie_keys(std::size_t n, TieMode mode, std::uint64_t seed) {
  std::vector<std::size_t> keys(n);
  std::iota(keys.begin(), keys.end(), std::size_t{0});
  if (mode == TieMode::StableAscending || n < 2) return keys;

  SplitMix64 rng(mode == TieMode::Unstable ? mix_seed(kUnstableSeed, n) : mix_seed(seed, n));
  for (std::size_t i = n - 1; i > 0; --i) {
    std::swap(keys[i], keys[rng.below(i + 1)]);
  }
  if (mode == TieMode::Unstable && std::is_sorted(keys.begin(), keys.end())) {
    std::reverse(keys.begin(), keys.end());
  }
  return keys;
}

TopKSelection topk_with_keys(std::span<const double> priorities, std::size_t k,
                             std::span<const std::size_t> keys, TieMode mode) {
  if (k == 0) throw InvalidInput("top-k requires k >= 1");
  if (priorities.empty()) throw InvalidInput("top-k requires a non-empty vector");
  if (keys.size() != priorities.size()) throw InvalidInput("tie keys must match priorities");
  for (double p : priorities) {
    if (!std::isfinite(p)) throw InvalidInput("top-k priorities must be finite");
  }

  const std::size_t n = priorities.size();
  const std::size_t take = std::min(k, n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  // (value desc, key asc) is a strict total order, so the result does not
  // depend on the stability of the sorting algorithm.
  auto before = [&](std::size_t a, std::size_t b) {
    if (priorities[a] != priorities[b]) return priorities[a] > priorities[b];
    return keys[a] < keys[b];
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                    before);
  order.resize(take);

  TopKSelection sel;
  sel.k = k;
  sel.mode = mode;
  sel.values.reserve(take);
  for (std::size_t i : order) sel.values.push_back(priorities[i]);
  sel.indices = std::move(order);
  return sel;
}

TopKSelection stable_topk(std::span<const double> priorities, std::size_t k, TieMode mode,
                          std::uint64_t tie_seed) {
  const auto keys = tie_keys(priorities.size(), mode, tie_seed);
  return topk_with_keys(priorities, k, keys, mode);
}

double round_decimals(double value, int decimals) {
  const double scale = std::pow(10.0, decimals);
  return std::round(value * scale) / scale;
}

void quantize_inplace(std::span<double> values, int decimals) {
  const double scale = std::pow(10.0, decimals);
  for (double& v : values) v = std::round(v * scale) / scale;
}

std::vector<double> quantize(std::span<const double> values, const QuantizationPolicy& policy) {
  if (policy.decimals < 1) throw InvalidInput("quantization needs decimals >= 1");
  std::vector<double> out(values.begin(), values.end());
  if (policy.site != QuantSite::Off) quantize_inplace(out, policy.decimals);
  return out;
}

void softmax_inplace(std::span<double> values) {
  if (values.empty()) return;
  const double peak = *std::max_element(values.begin(), values.end());
  double total = 0.0;
  for (double& v : values) {
    v = std::exp(v - peak);
    total += v;
  }
  for (double& v : values) v /= total;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.begin(), logits.end());
  softmax_inplace(out);
  return out;
}

Matrix seeded_init(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  if (rows == 0 || cols == 0) throw InvalidInput("seeded_init requires positive dimensions");
  Matrix m(rows, cols);
  SplitMix64 rng(seed);
  for (double& v : m.data()) v = -0.1 + 0.2 * rng.uniform();
  return m;
}

}  // namespace moeleak
