// SPDX-License-Identifier: Apache-2.0
#include "qloop/analysis.hpp"

#include <cmath>
#include <limits>

namespace qloop {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

}  // namespace

void ScalarLoop::validate() const {
  if (!std::isfinite(alpha) || !std::isfinite(closed_gain))
    throw DomainError("scalar loop gains must be finite");
  if (!(std::abs(alpha) > 1.0))
    throw DomainError("scalar loop requires |alpha| > 1");
  if (!(sigma_w2 >= 0.0)) throw DomainError("sigma_w2 must be >= 0");
  if (!(sigma_0_2 >= 0.0)) throw DomainError("sigma_0_2 must be >= 0");
}

const char* regime_name(Regime r) {
  switch (r) {
    case Regime::infinite_capacity: return "infinite_capacity";
    case Regime::finite_capacity: return "finite_capacity";
    case Regime::below_threshold: return "below_threshold";
  }
  return "unknown";
}

double capacity_threshold_bits(double alpha) {
  return 0.5 * std::log2(std::numbers::pi * std::numbers::e * alpha * alpha / 6.0);
}

StabilityReport bernoulli_scalar_bound(const ScalarLoop& loop,
                                       const ChannelModel& ch) {
  loop.validate();
  ch.validate();
  StabilityReport rep;
  rep.capacity_threshold_bits = capacity_threshold_bits(loop.alpha);
  const double a2 = loop.alpha * loop.alpha;
  const double c2 = loop.closed_gain * loop.closed_gain;
  if (ch.is_infinite()) {
    rep.regime = Regime::infinite_capacity;
    rep.raw_bound = (1.0 - c2) / (a2 - c2);
  } else if (ch.capacity_bits > rep.capacity_threshold_bits) {
    rep.regime = Regime::finite_capacity;
    const double etaG = ch.eta() * loop.quant_gain();
    rep.raw_bound = (1.0 - c2 - etaG) / (a2 - c2 - etaG);
  } else {
    rep.regime = Regime::below_threshold;
    const double etaG = ch.eta() * loop.quant_gain();
    rep.raw_bound = (1.0 - c2 - etaG) / (a2 - c2 - etaG);
    rep.bound = 0.0;
    rep.stable = false;
    return rep;
  }
  if (c2 >= 1.0) {
    // No stabilizing closed loop at all.
    rep.bound = 0.0;
    rep.stable = false;
    return rep;
  }
  rep.bound = clamp01(rep.raw_bound);
  rep.stable = rep.bound > 0.0;
  return rep;
}

double bernoulli_scalar_asymptotic_var(const ScalarLoop& loop,
                                       const ChannelModel& ch, double p) {
  loop.validate();
  const double a2 = loop.alpha * loop.alpha;
  const double c2 = loop.closed_gain * loop.closed_gain;
  const double omega2 = a2 * p + c2 * (1.0 - p);
  if (ch.is_infinite()) {
    if (omega2 >= 1.0) return kInf;
    return loop.sigma_w2 / (1.0 - omega2);
  }
  if (!(ch.capacity_bits > capacity_threshold_bits(loop.alpha))) return kInf;
  const double G = loop.quant_gain();
  const double eta = ch.eta();
  const double denom = 1.0 - omega2 - eta * G * (1.0 - p);
  if (denom <= 0.0) return kInf;
  return (loop.sigma_w2 + G * (1.0 - p) * ch.epsilon) / denom;
}

StabilityReport markov_scalar_bound(const ScalarLoop& loop,
                                    const ChannelModel& ch) {
  loop.validate();
  ch.validate();
  StabilityReport rep;
  rep.capacity_threshold_bits = capacity_threshold_bits(loop.alpha);
  const double a2 = loop.alpha * loop.alpha;
  const double c2 = loop.closed_gain * loop.closed_gain;
  if (a2 == 1.0) throw DomainError("markov bound undefined at alpha^2 = 1");
  if (ch.is_infinite()) {
    rep.regime = Regime::infinite_capacity;
    rep.raw_bound = (1.0 - c2) / (a2 - 1.0);
  } else if (ch.capacity_bits > rep.capacity_threshold_bits) {
    rep.regime = Regime::finite_capacity;
    rep.raw_bound = (1.0 - c2 - ch.eta() * loop.quant_gain()) / (a2 - 1.0);
  } else {
    rep.regime = Regime::below_threshold;
    rep.raw_bound = (1.0 - c2 - ch.eta() * loop.quant_gain()) / (a2 - 1.0);
    rep.bound = 0.0;
    rep.stable = false;
    return rep;
  }
  // The ratio p/q is not a probability; only negative values are floored.
  rep.bound = rep.raw_bound < 0.0 ? 0.0 : rep.raw_bound;
  rep.stable = rep.bound > 0.0 && c2 < 1.0;
  return rep;
}

double markov_scalar_asymptotic_var(const ScalarLoop& loop,
                                    const ChannelModel& ch, double p,
                                    double q) {
  loop.validate();
  if (!(p + q > 0.0)) throw DomainError("markov asymptote requires p + q > 0");
  const double ratio = p / q;  // q = 0 with p > 0 gives +inf ratio: unstable
  const double a2 = loop.alpha * loop.alpha;
  const double c2 = loop.closed_gain * loop.closed_gain;
  if (!std::isfinite(ratio)) return kInf;
  if (ch.is_infinite()) {
    const double denom = 1.0 - c2 - ratio * (a2 - 1.0);
    if (denom <= 0.0) return kInf;
    return (1.0 + ratio) * loop.sigma_w2 / denom;
  }
  if (!(ch.capacity_bits > capacity_threshold_bits(loop.alpha))) return kInf;
  const double G = loop.quant_gain();
  const double etaG = ch.eta() * G;
  const double denom = (1.0 + ratio) - (a2 * ratio + c2 + etaG);
  if (denom <= 0.0) return kInf;
  return ((1.0 + ratio) * loop.sigma_w2 + ch.epsilon * G) / denom;
}

std::vector<double> variance_sequence_scalar(const ScalarLoop& loop,
                                             const SwitchModel& sw,
                                             const ChannelModel& ch,
                                             std::size_t horizon) {
  loop.validate();
  sw.validate();
  ch.validate();
  const double a2 = loop.alpha * loop.alpha;
  const double c2 = loop.closed_gain * loop.closed_gain;
  const double bl2 = loop.bl() * loop.bl();
  const double eta = ch.eta();
  const double G = loop.quant_gain();
  const bool quantized = !ch.is_infinite();

  std::vector<double> out;
  out.reserve(horizon + 1);
  double sigma2 = loop.sigma_0_2;
  double delta2 = quantized ? eta * loop.sigma_0_2 + ch.epsilon : 0.0;
  double pi = state_distribution(sw, 0);
  out.push_back(sigma2);
  for (std::size_t k = 0; k < horizon; ++k) {
    const double omega2 = a2 * pi + c2 * (1.0 - pi);
    double next = omega2 * sigma2 + loop.sigma_w2;
    if (quantized) next += bl2 * (1.0 - pi) * delta2 / 12.0;
    if (quantized)
      delta2 = delta2 * (omega2 + eta * G * (1.0 - pi)) + eta * loop.sigma_w2 +
               ch.epsilon * (1.0 - omega2);
    sigma2 = next;
    out.push_back(sigma2);
    if (sw.kind == SwitchKind::markov)
      pi = (1.0 - pi) * sw.p + pi * (1.0 - sw.q);
  }
  return out;
}

double bernoulli_variance_closed_form(const ScalarLoop& loop, double p,
                                      std::size_t k) {
  const double a2 = loop.alpha * loop.alpha;
  const double c2 = loop.closed_gain * loop.closed_gain;
  const double omega2 = a2 * p + c2 * (1.0 - p);
  if (k == 0) return loop.sigma_0_2;
  const double pw = std::pow(omega2, static_cast<double>(k));
  if (omega2 == 1.0)
    return loop.sigma_0_2 + static_cast<double>(k) * loop.sigma_w2;
  return pw * loop.sigma_0_2 + (1.0 - pw) / (1.0 - omega2) * loop.sigma_w2;
}

StabilityReport vector_bernoulli_bound(const Matrix& A, const Matrix& closed,
                                       double tol) {
  if (!A.square() || A.rows != closed.rows || A.cols != closed.cols)
    throw DimensionError("vector bound: square matrices of equal size required");
  const double na = spectral_norm(A, tol);
  const double nc = spectral_norm(closed, tol);
  StabilityReport rep;
  rep.regime = Regime::infinite_capacity;
  rep.capacity_threshold_bits = 0.0;
  if (na <= nc)
    throw DomainError("vector bound ill-posed: ||A|| <= ||A-BL||");
  rep.raw_bound = (1.0 - nc * nc) / (na * na - nc * nc);
  if (nc >= 1.0) {
    rep.bound = 0.0;
    rep.stable = false;
    rep.norm_criterion_unsatisfiable = true;
    return rep;
  }
  rep.bound = clamp01(rep.raw_bound);
  rep.stable = rep.bound > 0.0;
  return rep;
}

StabilityReport vector_markov_bound(const Matrix& A, const Matrix& closed,
                                    double tol) {
  if (!A.square() || A.rows != closed.rows || A.cols != closed.cols)
    throw DimensionError("vector bound: square matrices of equal size required");
  const double na = spectral_norm(A, tol);
  const double nc = spectral_norm(closed, tol);
  StabilityReport rep;
  rep.regime = Regime::infinite_capacity;
  rep.capacity_threshold_bits = 0.0;
  if (na <= 1.0)
    throw DomainError("markov vector bound ill-posed: ||A||_2 <= 1");
  rep.raw_bound = (1.0 - nc * nc) / (na * na - 1.0);
  if (nc >= 1.0) {
    rep.bound = 0.0;
    rep.stable = false;
    rep.norm_criterion_unsatisfiable = true;
    return rep;
  }
  rep.bound = rep.raw_bound < 0.0 ? 0.0 : rep.raw_bound;
  rep.stable = rep.bound > 0.0;
  return rep;
}

Matrix covariance_recursion(const Matrix& A, const Matrix& closed,
                            const Matrix& W, double weight, const Matrix& P) {
  if (!A.square() || A.rows != closed.rows || A.rows != W.rows ||
      A.rows != P.rows || !closed.square() || !W.square() || !P.square())
    throw DimensionError("covariance_recursion: n x n matrices required");
  if (!(weight >= 0.0 && weight <= 1.0))
    throw DomainError("covariance_recursion: weight must be in [0,1]");
  const Matrix open_term = A * P * transpose(A);
  const Matrix closed_term = closed * P * transpose(closed);
  return symmetrize(weight * open_term + (1.0 - weight) * closed_term + W);
}

namespace {

// Index of the lower-triangular unknown s_ij (i >= j, zero-based) in the
// packed vector.
std::size_t packed_index(std::size_t i, std::size_t j) {
  return i * (i + 1) / 2 + j;
}

Matrix stationary_by_linear_system(const Matrix& A, const Matrix& G,
                                   const Matrix& W, double w) {
  const std::size_t n = A.rows;
  const std::size_t m = n * (n + 1) / 2;
  // Row for equation (i,j), i >= j:
  //   sum_{l>k} [w(a_il a_jk + a_ik a_jl) + (1-w)(g_il g_jk + g_ik g_jl)] s_lk
  // + sum_l   [w a_il a_jl + (1-w) g_il g_jl] s_ll + w_ij = s_ij
  Matrix M(m, m, 0.0);
  Vec rhs(m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      const std::size_t row = packed_index(i, j);
      for (std::size_t l = 0; l < n; ++l) {
        for (std::size_t k = 0; k <= l; ++k) {
          double coef;
          if (k == l) {
            coef = w * A(i, l) * A(j, l) + (1.0 - w) * G(i, l) * G(j, l);
          } else {
            coef = w * (A(i, l) * A(j, k) + A(i, k) * A(j, l)) +
                   (1.0 - w) * (G(i, l) * G(j, k) + G(i, k) * G(j, l));
          }
          M(row, packed_index(l, k)) += coef;
        }
      }
      M(row, row) -= 1.0;       // move s_ij across
      rhs[row] = -W(i, j);      // ... and w_ij to the right-hand side
    }
  }
  const Vec s = solve_linear(M, rhs);
  Matrix P(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      P(i, j) = s[packed_index(i, j)];
      P(j, i) = P(i, j);
    }
  return P;
}

Matrix stationary_by_fixed_point(const Matrix& A, const Matrix& G,
                                 const Matrix& W, double w) {
  Matrix P = W;
  const std::size_t max_iter = 1000000;
  for (std::size_t it = 0; it < max_iter; ++it) {
    const Matrix next = covariance_recursion(A, G, W, w, P);
    const double res = max_abs(next - P);
    P = next;
    if (res <= 1e-9) return P;
  }
  throw ConvergenceError("stationary covariance fixed point did not settle");
}

}  // namespace

Matrix solve_stationary_covariance(const Matrix& A, const Matrix& closed,
                                   const Matrix& W, double weight,
                                   StationaryMethod method) {
  if (!A.square() || A.rows != closed.rows || A.rows != W.rows)
    throw DimensionError("solve_stationary_covariance: n x n matrices required");
  if (!(weight >= 0.0 && weight <= 1.0))
    throw DomainError("solve_stationary_covariance: weight must be in [0,1]");
  const double na = spectral_norm(A);
  const double nc = spectral_norm(closed);
  const double contraction = weight * na * na + (1.0 - weight) * nc * nc;
  if (!(contraction < 1.0))
    throw ConvergenceError(
        "averaged dynamics is not a contraction: w||A||^2 + (1-w)||A-BL||^2 = " +
        std::to_string(contraction));
  if (method == StationaryMethod::linear_system)
    return stationary_by_linear_system(A, closed, W, weight);
  return stationary_by_fixed_point(A, closed, W, weight);
}

}  // namespace qloop
