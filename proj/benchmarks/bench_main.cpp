// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "qloop/analysis.hpp"
#include "qloop/loop_sim.hpp"
#include "qloop/lqr.hpp"
#include "qloop/matrix.hpp"
#include "qloop/rng.hpp"

using namespace qloop;

namespace {

Matrix random_matrix(std::size_t n, double scale, std::uint64_t seed) {
  RngStream rng(seed);
  Matrix m(n, n);
  for (auto& v : m.a) v = scale * (2.0 * rng.next_double() - 1.0);
  return m;
}

void BM_spectral_norm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix m = random_matrix(n, 2.0, 5);
  for (auto _ : state) benchmark::DoNotOptimize(spectral_norm(m, 1e-10));
}
BENCHMARK(BM_spectral_norm)->Arg(4)->Arg(8)->Arg(16)->Arg(32);

void BM_solve_dare(benchmark::State& state) {
  VectorPlant pl;
  pl.A = Matrix{{1.2, 0.3, 0.0, 0.1},
                {0.0, 1.1, 0.2, 0.0},
                {0.1, 0.0, 0.9, 0.3},
                {0.0, 0.1, 0.0, 1.05}};
  pl.B = Matrix{{1.0, 0.0}, {0.0, 0.2}, {0.3, 1.0}, {0.0, 0.4}};
  pl.W = Matrix::identity(4);
  pl.P0 = Matrix::identity(4);
  pl.Q = Matrix::identity(4);
  pl.R = Matrix::identity(2);
  for (auto _ : state) benchmark::DoNotOptimize(solve_dare(pl, 1e-10));
}
BENCHMARK(BM_solve_dare);

void BM_stationary_covariance(benchmark::State& state) {
  const Matrix A = random_matrix(3, 1.5, 7);
  Matrix G = random_matrix(3, 0.2, 8);
  const Matrix W = Matrix::identity(3);
  const double na = spectral_norm(A);
  const double ng = spectral_norm(G);
  const double w = 0.4 * (1.0 - ng * ng) / (na * na - ng * ng);
  const auto method = state.range(0) == 0 ? StationaryMethod::linear_system
                                          : StationaryMethod::fixed_point;
  for (auto _ : state)
    benchmark::DoNotOptimize(solve_stationary_covariance(A, G, W, w, method));
}
BENCHMARK(BM_stationary_covariance)->Arg(0)->Arg(1);

void BM_scalar_run(benchmark::State& state) {
  ScalarLoopConfig cfg = ScalarLoopConfig::direct_gain(3.3, 0.4);
  cfg.sw = SwitchModel::markov(0.05, 0.95);
  cfg.ch = ChannelModel::finite(6.0);
  cfg.horizon = static_cast<std::size_t>(state.range(0));
  cfg.seed = 99;
  for (auto _ : state) benchmark::DoNotOptimize(run_scalar(cfg));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_scalar_run)->Arg(300)->Arg(1000);

void BM_scalar_ensemble(benchmark::State& state) {
  ScalarLoopConfig cfg = ScalarLoopConfig::direct_gain(3.3, 0.4);
  cfg.sw = SwitchModel::markov(0.05, 0.95);
  cfg.ch = ChannelModel::finite(6.0);
  cfg.horizon = 300;
  cfg.seed = 99;
  EnsembleOptions opts;
  opts.threads = static_cast<std::size_t>(state.range(0));
  for (auto _ : state)
    benchmark::DoNotOptimize(run_ensemble(cfg, 2000, opts));
  state.SetItemsProcessed(state.iterations() * 2000 * 300);
}
BENCHMARK(BM_scalar_ensemble)->Arg(1)->Arg(4);

}  // namespace

BENCHMARK_MAIN();
