#include <numeric>
#include <vector>

#include <benchmark/benchmark.h>

#include "moeleak/kernels.hpp"
#include "moeleak/numerics.hpp"

using namespace moeleak;

namespace {

// Rows of an adversarial batch: B = 32 sequences of L tokens.
constexpr std::size_t kSequences = 32;
constexpr std::size_t kHidden = 32;
constexpr std::size_t kFfn = 64;

template <auto Kernel>
void BM_Matmul(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0)) * kSequences;
  const Matrix a = seeded_init(rows, kHidden, 1);
  const Matrix b = seeded_init(kHidden, kHidden, 2);
  Matrix out(rows, kHidden);
  for (auto _ : state) {
    Kernel(a, b, out);
    benchmark::DoNotOptimize(out.data().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(rows));
}

template <auto Kernel>
void BM_Attention(benchmark::State& state) {
  const auto length = static_cast<std::size_t>(state.range(0));
  const std::size_t rows = length * kSequences;
  const Matrix q = seeded_init(rows, kHidden, 3);
  const Matrix k = seeded_init(rows, kHidden, 4);
  const Matrix v = seeded_init(rows, kHidden, 5);
  Matrix out(rows, kHidden);
  for (auto _ : state) {
    Kernel(q, k, v, kSequences, length, out);
    benchmark::DoNotOptimize(out.data().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(rows));
}

template <auto Kernel>
void BM_Ffn(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0)) * kSequences;
  const Matrix in = seeded_init(rows, kHidden, 6);
  const Matrix w1 = seeded_init(kHidden, kFfn, 7);
  const Matrix w2 = seeded_init(kFfn, kHidden, 8);
  std::vector<std::size_t> selected(rows);
  std::iota(selected.begin(), selected.end(), std::size_t{0});
  Matrix out(rows, kHidden);
  for (auto _ : state) {
    Kernel(in, selected, w1, w2, out);
    benchmark::DoNotOptimize(out.data().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(rows));
}

}  // namespace

BENCHMARK(BM_Matmul<kernels::serial::matmul>)->Name("matmul/serial")->Arg(20)->Arg(60);
BENCHMARK(BM_Matmul<kernels::parallel::matmul>)->Name("matmul/parallel")->Arg(20)->Arg(60);
BENCHMARK(BM_Attention<kernels::serial::causal_attention>)
    ->Name("attention/serial")
    ->Arg(20)
    ->Arg(60);
BENCHMARK(BM_Attention<kernels::parallel::causal_attention>)
    ->Name("attention/parallel")
    ->Arg(20)
    ->Arg(60);
BENCHMARK(BM_Ffn<kernels::serial::ffn_rows>)->Name("ffn/serial")->Arg(20)->Arg(60);
BENCHMARK(BM_Ffn<kernels::parallel::ffn_rows>)->Name("ffn/parallel")->Arg(20)->Arg(60);

BENCHMARK_MAIN();
