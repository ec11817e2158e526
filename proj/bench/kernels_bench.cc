// Serial reference kernels against their OpenMP counterparts on shapes that
// occur in training: codebook similarity (pairs x K) and dense layers.

#include <benchmark/benchmark.h>

#include <vector>

#include "dbgl/kernels.h"
#include "dbgl/rng.h"

namespace k = dbgl::kernels;

namespace {

std::vector<double> random_vector(std::size_t n, std::uint64_t seed) {
  dbgl::Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

// Rows x inner x cols taken from the benchmark arguments.
template <bool Parallel>
void BM_GemmNt(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto kk = static_cast<std::size_t>(state.range(1));
  const auto n = static_cast<std::size_t>(state.range(2));
  const auto a = random_vector(m * kk, 1);
  const auto b = random_vector(n * kk, 2);
  std::vector<double> c(m * n);
  for (auto _ : state) {
    if constexpr (Parallel)
      k::gemm_nt(a, b, c, m, kk, n);
    else
      k::serial::gemm_nt(a, b, c, m, kk, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(m * n * kk));
  state.counters["threads"] = Parallel ? k::max_threads() : 1;
}

template <bool Parallel>
void BM_Gemm(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto kk = static_cast<std::size_t>(state.range(1));
  const auto n = static_cast<std::size_t>(state.range(2));
  const auto a = random_vector(m * kk, 3);
  const auto b = random_vector(kk * n, 4);
  std::vector<double> c(m * n);
  for (auto _ : state) {
    if constexpr (Parallel)
      k::gemm(a, b, c, m, kk, n);
    else
      k::serial::gemm(a, b, c, m, kk, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(m * n * kk));
  state.counters["threads"] = Parallel ? k::max_threads() : 1;
}

template <bool Parallel>
void BM_Softmax(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto n = static_cast<std::size_t>(state.range(1));
  const auto x = random_vector(m * n, 5);
  std::vector<double> y(m * n);
  for (auto _ : state) {
    if constexpr (Parallel)
      k::softmax_rows(x, y, m, n);
    else
      k::serial::softmax_rows(x, y, m, n);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(m * n));
}

}  // namespace

// 256 patients x 16 variables against a 4096-entry codebook at d = 16.
BENCHMARK(BM_GemmNt<false>)->Args({4096, 16, 4096})->Args({512, 16, 4096})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GemmNt<true>)->Args({4096, 16, 4096})->Args({512, 16, 4096})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Gemm<false>)->Args({4096, 32, 16})->Args({256, 256, 256})->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_Gemm<true>)->Args({4096, 32, 16})->Args({256, 256, 256})->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_Softmax<false>)->Args({4096, 4096})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Softmax<true>)->Args({4096, 4096})->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
