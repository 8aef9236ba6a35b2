#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "tippo/kernels.hpp"

namespace {

using namespace tippo::kernels;

std::vector<double> random_values(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

template <auto Kernel>
void bm_matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const MatDims dims{n, n, n};
  const auto a = random_values(n * n, 1);
  const auto b = random_values(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    Kernel(a, b, c, dims, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

template <auto Kernel>
void bm_softmax(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto x = random_values(n * n, 3);
  std::vector<double> y(n * n);
  for (auto _ : state) {
    Kernel(x, y, n, n, 0);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n));
}

}  // namespace

BENCHMARK(bm_matmul<serial::matmul>)->Name("matmul/serial")->RangeMultiplier(4)->Range(16, 256);
BENCHMARK(bm_matmul<omp::matmul>)->Name("matmul/omp")->RangeMultiplier(4)->Range(16, 256);
BENCHMARK(bm_matmul<serial::matmul_nt>)->Name("matmul_nt/serial")->RangeMultiplier(4)->Range(16, 256);
BENCHMARK(bm_matmul<omp::matmul_nt>)->Name("matmul_nt/omp")->RangeMultiplier(4)->Range(16, 256);
BENCHMARK(bm_softmax<serial::softmax_rows>)->Name("softmax_rows/serial")->RangeMultiplier(4)->Range(16, 256);
BENCHMARK(bm_softmax<omp::softmax_rows>)->Name("softmax_rows/omp")->RangeMultiplier(4)->Range(16, 256);

BENCHMARK_MAIN();
