// SPDX-License-Identifier: Apache-2.0
//
// Stochastic execution of the intermittent quantized control loop. Each run
// owns one random stream split into the named substreams "init", "switch"
// and "noise", so fixing the switch path for conditional experiments leaves
// the noise draws untouched. Infinite channel capacity runs the loop
// unquantized (the analytic baseline); with finite capacity the transmitted
// value is the mid-rise codepoint for the current step size.
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "qloop/analysis.hpp"
#include "qloop/channel.hpp"
#include "qloop/matrix.hpp"
#include "qloop/quantizer.hpp"
#include "qloop/rng.hpp"
#include "qloop/switching.hpp"

namespace qloop {

struct ScalarLoopConfig {
  double alpha{0.0};
  double b{1.0};
  double l{0.0};  // control u_k = -l x_k^Delta
  double sigma_w2{1.0};
  double sigma_0_2{1.0};
  std::optional<double> x0_fixed;  // demo mode; otherwise x0 ~ N(0, sigma_0^2)
  SwitchModel sw;
  ChannelModel ch;
  std::size_t horizon{1};
  std::uint64_t seed{0};
  double divergence_threshold{1e9};
  // Quantizer support as a multiple of the step-size-implied standard
  // deviation. Unset runs the unbounded bin grid (codepoints are delivered
  // exactly; rate compliance is a diagnostic). The entropy-typical set is
  // entropy_typical_multiplier() ~ 2.066; clamping there saturates the
  // controller on ordinary excursions, so it is opt-in.
  std::optional<double> support_sigmas;

  double closed_gain() const { return alpha - b * l; }
  static ScalarLoopConfig direct_gain(double alpha, double closed_gain);
  void validate() const;
};

struct VectorLoopConfig {
  Matrix A;
  Matrix B;
  Matrix L;
  Matrix W;   // PD or exactly zero (noise-free runs)
  Matrix P0;  // PD
  std::optional<std::vector<double>> x0_fixed;
  SwitchModel sw;
  ChannelModel ch;
  std::size_t horizon{1};
  std::uint64_t seed{0};
  double divergence_threshold{1e9};
  std::optional<double> support_sigmas;

  Matrix closed() const { return A - B * L; }
  void validate() const;
};

struct Trace {
  std::size_t dim{1};
  std::size_t input_dim{1};
  std::vector<double> states;    // (steps()+1) * dim values, row per time
  std::vector<std::uint8_t> gammas;
  std::vector<double> inputs;    // steps() * input_dim, zero on open steps
  std::vector<double> deltas_sq; // Delta^2_{k | gamma_0:k-1} used at step k
  std::size_t overflow_count{0};           // clamp events (bounded support)
  std::size_t typicality_violations{0};    // codepoints outside the entropy-typical set
  std::optional<std::size_t> first_divergence;

  std::size_t steps() const { return gammas.size(); }
  double state(std::size_t k, std::size_t i = 0) const {
    return states[k * dim + i];
  }
  double state_norm2(std::size_t k) const;
};

Trace run_scalar(const ScalarLoopConfig& cfg);
Trace run_scalar(const ScalarLoopConfig& cfg, const RngStream& run_stream,
                 std::span<const std::uint8_t> forced_gammas = {});
Trace run_vector(const VectorLoopConfig& cfg);
Trace run_vector(const VectorLoopConfig& cfg, const RngStream& run_stream,
                 std::span<const std::uint8_t> forced_gammas = {});

/// First k with ||x_k||_2 > threshold.
std::optional<std::size_t> detect_divergence(const Trace& trace,
                                             double threshold);

struct EnsembleOptions {
  std::size_t threads{1};
  /// When non-empty, every run replays this switch path (noise stays i.i.d.
  /// across runs); used by the conditional-moment experiments.
  std::vector<std::uint8_t> forced_gammas{};
};

struct EnsembleStats {
  std::size_t runs{0};
  std::size_t dim{1};
  // Per time index k = 0..N: runs still alive at k (not yet diverged),
  // mean of x_k^2 (scalar) or ||x_k||^2 (vector) over them, a 3-sigma
  // normal-approximation half-width for that mean, and the fraction of runs
  // diverged at or before k.
  std::vector<std::size_t> alive;
  std::vector<double> moment;
  std::vector<double> ci_halfwidth;
  std::vector<double> diverged_fraction;
  // Vector runs: per-k sample covariance over alive runs.
  std::vector<Matrix> covariance;
  std::size_t diverged_runs{0};
  std::size_t overflow_total{0};
  std::size_t typicality_total{0};
};

/// M independent runs with per-run streams substream("run", i) of the master
/// seed. Aggregation is blocked and merged in index order, so the result is
/// identical for any thread count.
EnsembleStats run_ensemble(const ScalarLoopConfig& cfg, std::size_t runs,
                           const EnsembleOptions& opts = {});
EnsembleStats run_ensemble(const VectorLoopConfig& cfg, std::size_t runs,
                           const EnsembleOptions& opts = {});

}  // namespace qloop
