// SPDX-License-Identifier: Apache-2.0
//
// Closed-form stability bounds, capacity thresholds, asymptotic moments, and
// the generalized Lyapunov solvers for the intermittent quantized loop.
//
// Scalar notation used below: alpha is the open-loop gain, c = alpha - b l
// the closed-loop gain, G = (b l)^2 / 12 the quantization-noise gain, and
// eta = 2*pi*e / 2^(2C). omega^2 = alpha^2 pi + c^2 (1 - pi) with pi the
// outage probability.
#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "qloop/channel.hpp"
#include "qloop/matrix.hpp"
#include "qloop/switching.hpp"

namespace qloop {

/// Scalar plant with the controller folded in: only (alpha, closed gain)
/// enter the stability formulas. Constructed either directly from the target
/// closed-loop gain or from an LQR synthesis result.
struct ScalarLoop {
  double alpha{0.0};
  double closed_gain{0.0};
  double sigma_w2{1.0};
  double sigma_0_2{1.0};

  double bl() const { return alpha - closed_gain; }
  double quant_gain() const { return bl() * bl() / 12.0; }  // G
  void validate() const;
};

enum class Regime { infinite_capacity, finite_capacity, below_threshold };

const char* regime_name(Regime r);

struct StabilityReport {
  Regime regime{Regime::infinite_capacity};
  double bound{0.0};      // p_max (clamped to [0,1]) or (p/q)_max
  double raw_bound{0.0};  // formula value before clamping
  double capacity_threshold_bits{0.0};
  std::optional<double> asymptotic_second_moment;
  bool stable{false};  // stabilization possible for some intermittence level
  bool norm_criterion_unsatisfiable{false};  // ||A-BL|| >= 1 branch
};

/// (1/2) log2(pi e alpha^2 / 6): capacity below which no intermittence level
/// stabilizes the scalar loop. Both switch models share this threshold; the
/// variant expression log2(alpha^2/(6 pi e)) is negative for the running
/// example and is not used.
double capacity_threshold_bits(double alpha);

/// Bernoulli switch: p_max = (1 - c^2) / (alpha^2 - c^2) at infinite
/// capacity, (1 - c^2 - eta G) / (alpha^2 - c^2 - eta G) above threshold.
StabilityReport bernoulli_scalar_bound(const ScalarLoop& loop,
                                       const ChannelModel& ch);

/// Asymptotic state variance; +infinity when the stability condition fails
/// (boundary inclusive).
double bernoulli_scalar_asymptotic_var(const ScalarLoop& loop,
                                       const ChannelModel& ch, double p);

/// Markov switch: (p/q)_max = (1 - c^2) / (alpha^2 - 1), with - eta G in the
/// numerator at finite capacity.
StabilityReport markov_scalar_bound(const ScalarLoop& loop,
                                    const ChannelModel& ch);

double markov_scalar_asymptotic_var(const ScalarLoop& loop,
                                    const ChannelModel& ch, double p, double q);

/// Expected-variance sequence sigma_0^2 .. sigma_horizon^2 from the coupled
/// recursions
///   sigma_{k+1}^2 = omega_k^2 sigma_k^2 + (bl)^2 (1-pi_k) Delta_k^2/12 + sw2
///   Delta_{k+1}^2 = Delta_k^2 [omega_k^2 + eta G (1-pi_k)] + eta sw2
///                   + eps (1 - omega_k^2)
/// with pi_k constant (Bernoulli) or from the chain law (Markov). Infinite
/// capacity drops the quantization terms entirely.
std::vector<double> variance_sequence_scalar(const ScalarLoop& loop,
                                             const SwitchModel& sw,
                                             const ChannelModel& ch,
                                             std::size_t horizon);

/// Closed form of the infinite-capacity Bernoulli sequence at index k
/// (k = 0 returns sigma_0^2): omega^{2k} sigma_0^2 +
/// (1 - omega^{2k})/(1 - omega^2) sw2, with the omega^2 = 1 removable
/// singularity handled as sigma_0^2 + k sw2.
double bernoulli_variance_closed_form(const ScalarLoop& loop, double p,
                                      std::size_t k);

/// p_max = (1 - ||A-BL||^2) / (||A||^2 - ||A-BL||^2). ||A-BL|| >= 1 yields
/// bound 0 with the warning flag set. Throws DomainError when
/// ||A|| <= ||A-BL|| (open loop no worse than closed).
StabilityReport vector_bernoulli_bound(const Matrix& A, const Matrix& closed,
                                       double tol = 1e-12);

/// (p/q)_max = (1 - ||A-BL||^2) / (||A||^2 - 1). Throws DomainError when
/// ||A||_2 <= 1.
StabilityReport vector_markov_bound(const Matrix& A, const Matrix& closed,
                                    double tol = 1e-12);

/// One step of P <- w A P A' + (1-w) (A-BL) P (A-BL)' + W, symmetrized.
Matrix covariance_recursion(const Matrix& A, const Matrix& closed,
                            const Matrix& W, double weight, const Matrix& P);

enum class StationaryMethod { linear_system, fixed_point };

/// Stationary covariance of the averaged dynamics: solves
/// P = w A P A' + (1-w) (A-BL) P (A-BL)' + W either through the n(n+1)/2
/// linear equations in the lower-triangular unknowns s_ij or by fixed-point
/// iteration from W (residual <= 1e-9). Requires the contraction condition
/// w ||A||^2 + (1-w) ||A-BL||^2 < 1.
Matrix solve_stationary_covariance(const Matrix& A, const Matrix& closed,
                                   const Matrix& W, double weight,
                                   StationaryMethod method);

}  // namespace qloop
