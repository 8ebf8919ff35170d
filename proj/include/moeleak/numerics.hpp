#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace moeleak {

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Where rounding is applied in the forward pass.
enum class QuantSite { RouterProbabilities, AttentionOutputs, Off };

struct QuantizationPolicy {
  int decimals = 5;
  QuantSite site = QuantSite::RouterProbabilities;
};

/// How equal priorities are ordered inside a top-K buffer.
///  - StableAscending: lower index first (large-buffer accelerator behaviour).
///  - Unstable: a fixed, seeded, non-monotone permutation of the indices.
///  - Randomized: a permutation drawn from a caller-supplied seed (defense).
enum class TieMode { StableAscending, Unstable, Randomized };

std::string_view to_string(TieMode mode);
TieMode tie_mode_from_string(std::string_view name);
std::string_view to_string(QuantSite site);
QuantSite quant_site_from_string(std::string_view name);

struct TopKSelection {
  std::size_t k = 0;
  std::vector<std::size_t> indices;
  std::vector<double> values;
  TieMode mode = TieMode::StableAscending;
};

/// 64-bit splitmix stream. Platform independent; used for every seeded draw.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}
  std::uint64_t next() noexcept;
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept;
  /// Uniform integer in [0, bound).
  std::uint64_t below(std::uint64_t bound) noexcept;

 private:
  std::uint64_t state_;
};

/// Stateless 64-bit mixer for deriving sub-seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) noexcept;

/// Tie-break keys for `n` entries. Entry i wins a tie against j iff key[i] < key[j].
std::vector<std::size_t> tie_keys(std::size_t n, TieMode mode, std::uint64_t seed);

/// Top-k of `priorities` by value descending; ties resolved per `mode`.
/// k larger than the input returns the full ordering. Throws InvalidInput on
/// k == 0, empty input or non-finite priorities.
TopKSelection stable_topk(std::span<const double> priorities, std::size_t k,
                          TieMode mode = TieMode::StableAscending, std::uint64_t tie_seed = 0);

/// Same selection with caller-provided tie keys (see tie_keys).
TopKSelection topk_with_keys(std::span<const double> priorities, std::size_t k,
                             std::span<const std::size_t> keys, TieMode mode);

/// Round half away from zero to `decimals` places.
double round_decimals(double value, int decimals);

/// Rounds every value when the policy is active (site != Off).
std::vector<double> quantize(std::span<const double> values, const QuantizationPolicy& policy);
void quantize_inplace(std::span<double> values, int decimals);

std::vector<double> softmax(std::span<const double> logits);
void softmax_inplace(std::span<double> values);

/// rows x cols matrix with entries uniform in (-0.1, 0.1) drawn from SplitMix64(seed).
Matrix seeded_init(std::size_t rows, std::size_t cols, std::uint64_t seed);

}  // namespace moeleak
