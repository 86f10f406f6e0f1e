// Serial reference kernels against the OpenMP versions.
#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "motb/numkit/kernels.hpp"

namespace {

namespace k = motb::kernels;

std::vector<float> random_vec(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> d(0.0f, 1.0f);
  std::vector<float> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

template <bool Parallel>
void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_vec(n * n, 1), b = random_vec(n * n, 2);
  std::vector<float> c(n * n);
  for (auto _ : state) {
    if constexpr (Parallel) k::matmul<float>(a, b, c, n, n, n);
    else k::serial::matmul<float>(a, b, c, n, n, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * n * n));
  state.counters["threads"] = Parallel ? k::max_threads() : 1;
}

template <bool Parallel>
void BM_MatmulNT(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_vec(n * n, 3), b = random_vec(n * n, 4);
  std::vector<float> c(n * n);
  for (auto _ : state) {
    if constexpr (Parallel) k::matmul_nt<float>(a, b, c, n, n, n);
    else k::serial::matmul_nt<float>(a, b, c, n, n, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * n * n));
}

template <bool Parallel>
void BM_Softmax(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto src = random_vec(n * n, 5);
  std::vector<float> x(n * n);
  for (auto _ : state) {
    x = src;
    if constexpr (Parallel) k::softmax_rows<float>(x, n, n);
    else k::serial::softmax_rows<float>(x, n, n);
    benchmark::DoNotOptimize(x.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * n));
}

}  // namespace

// 113 is the token count of a one-reference 6x6 sample.
BENCHMARK(BM_Matmul<false>)->Arg(32)->Arg(113)->Arg(256);
BENCHMARK(BM_Matmul<true>)->Arg(32)->Arg(113)->Arg(256);
BENCHMARK(BM_MatmulNT<false>)->Arg(113)->Arg(256);
BENCHMARK(BM_MatmulNT<true>)->Arg(113)->Arg(256);
BENCHMARK(BM_Softmax<false>)->Arg(113)->Arg(384);
BENCHMARK(BM_Softmax<true>)->Arg(113)->Arg(384);

BENCHMARK_MAIN();
