// Serial reference vs OpenMP kernels at routing/training sizes.
#include <benchmark/benchmark.h>

#include <cmath>
#include <vector>

#include "llmroute/common.hpp"
#include "llmroute/kernels.hpp"

namespace k = llmroute::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, std::uint64_t seed) {
  llmroute::Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform() * 2.0 - 1.0;
  return v;
}

template <bool Parallel>
void BM_AffineDense(benchmark::State& state) {
  const std::size_t rows = static_cast<std::size_t>(state.range(0)), cols = 256;
  const auto w = random_vec(rows * cols, 1), b = random_vec(cols, 2), x = random_vec(rows, 3);
  std::vector<double> out(cols);
  for (auto _ : state) {
    if constexpr (Parallel) k::parallel::affine_dense(w, cols, b, x, out);
    else k::serial::affine_dense(w, cols, b, x, out);
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Parallel>
void BM_AccumulateOuterDense(benchmark::State& state) {
  const std::size_t rows = static_cast<std::size_t>(state.range(0)), cols = 256, batch = 8;
  const auto hs = random_vec(batch * rows, 4), deltas = random_vec(batch * cols, 5);
  std::vector<double> grad(rows * cols);
  for (auto _ : state) {
    if constexpr (Parallel) k::parallel::accumulate_outer_dense(grad, rows, cols, hs, deltas, batch);
    else k::serial::accumulate_outer_dense(grad, rows, cols, hs, deltas, batch);
    benchmark::DoNotOptimize(grad.data());
  }
}

template <bool Parallel>
void BM_AdamW(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  auto p = random_vec(n, 6);
  const auto g = random_vec(n, 7);
  std::vector<double> m(n), v(n);
  std::uint64_t step = 0;
  for (auto _ : state) {
    ++step;
    if constexpr (Parallel) k::parallel::adamw_update(p, g, m, v, step, {});
    else k::serial::adamw_update(p, g, m, v, step, {});
    benchmark::DoNotOptimize(p.data());
  }
}

template <bool Parallel>
void BM_NearestCosine(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0)), dim = 384;
  const auto entries = random_vec(n * dim, 8), query = random_vec(dim, 9);
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < dim; ++j) s += entries[i * dim + j] * entries[i * dim + j];
    norms[i] = std::sqrt(s);
  }
  for (auto _ : state) {
    auto r = Parallel ? k::parallel::nearest_cosine(entries, norms, dim, query)
                      : k::serial::nearest_cosine(entries, norms, dim, query);
    benchmark::DoNotOptimize(r);
  }
}

}  // namespace

BENCHMARK(BM_AffineDense<false>)->Arg(1024)->Arg(8192);
BENCHMARK(BM_AffineDense<true>)->Arg(1024)->Arg(8192);
BENCHMARK(BM_AccumulateOuterDense<false>)->Arg(1024)->Arg(8192);
BENCHMARK(BM_AccumulateOuterDense<true>)->Arg(1024)->Arg(8192);
BENCHMARK(BM_AdamW<false>)->Arg(1 << 16)->Arg(1 << 21);
BENCHMARK(BM_AdamW<true>)->Arg(1 << 16)->Arg(1 << 21);
BENCHMARK(BM_NearestCosine<false>)->Arg(2000)->Arg(20000);
BENCHMARK(BM_NearestCosine<true>)->Arg(2000)->Arg(20000);

BENCHMARK_MAIN();
