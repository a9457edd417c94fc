// SPDX-License-Identifier: Apache-2.0
#include "qloop/quantizer.hpp"

#include <cmath>
#include <limits>

namespace qloop {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kTwoPiE = 2.0 * std::numbers::pi * std::numbers::e;

void check_state(const QuantizerState& st) {
  if (!(st.delta_sq > 0.0))
    throw DomainError("quantizer state: delta_sq must be > 0");
}

}  // namespace

QuantizerState init_delta_scalar(double sigma_0_2, const ChannelModel& ch) {
  ch.validate();
  if (!(sigma_0_2 >= 0.0)) throw DomainError("sigma_0_2 must be >= 0");
  QuantizerState st;
  st.n = 1;
  st.eta = ch.eta();
  st.epsilon = ch.epsilon;
  st.delta_sq = st.eta * sigma_0_2 + st.epsilon;
  return st;
}

QuantizerState init_delta_vector(const Matrix& P0, std::size_t n,
                                 const ChannelModel& ch) {
  ch.validate();
  if (!P0.square() || P0.rows != n)
    throw DimensionError("init_delta_vector: P0 must be n x n");
  const double det = determinant(P0);
  if (!(det > 0.0))
    throw DomainError("init_delta_vector: det(P0) <= 0 violates P0 > 0");
  QuantizerState st;
  st.n = n;
  st.eta = ch.eta();
  st.epsilon = ch.epsilon;
  st.delta_sq =
      st.eta * std::pow(det, 1.0 / static_cast<double>(n)) + st.epsilon;
  return st;
}

QuantizerState update_delta_scalar(const QuantizerState& st, int gamma,
                                   double alpha, double closed_gain,
                                   double sigma_w2) {
  check_state(st);
  const double bl = alpha - closed_gain;
  const double G = bl * bl / 12.0;
  const double xi2 = gamma ? alpha * alpha : closed_gain * closed_gain;
  QuantizerState next = st;
  next.delta_sq = st.delta_sq * (xi2 + st.eta * G * (gamma ? 0.0 : 1.0)) +
                  st.eta * sigma_w2 + st.epsilon * (1.0 - xi2);
  next.k = st.k + 1;
  if (!(next.delta_sq > 0.0))
    throw DomainError("delta_sq lost positivity");  // cannot happen for eps > 0
  return next;
}

VectorDeltaCoeffs vector_delta_coeffs(const Matrix& A, const Matrix& closed,
                                      const Matrix& W, const ChannelModel& ch) {
  const auto n = static_cast<double>(A.rows);
  VectorDeltaCoeffs c;
  c.open_factor = std::pow(std::abs(determinant(A)), 2.0 / n);
  c.closed_factor = std::pow(std::abs(determinant(closed)), 2.0 / n);
  if (ch.is_infinite()) {
    c.noise_term = 0.0;
  } else {
    c.noise_term = kTwoPiE * std::exp2(-2.0 * ch.capacity_bits / n) *
                   std::pow(std::abs(determinant(W)), 1.0 / n);
  }
  return c;
}

QuantizerState update_delta_vector(const QuantizerState& st, int gamma,
                                   const Matrix& A, const Matrix& closed,
                                   const Matrix& W) {
  check_state(st);
  if (!A.square() || A.rows != st.n || closed.rows != st.n || W.rows != st.n)
    throw DimensionError("update_delta_vector: n x n matrices required");
  const auto n = static_cast<double>(st.n);
  const double open_f = std::pow(std::abs(determinant(A)), 2.0 / n);
  const double closed_f = std::pow(std::abs(determinant(closed)), 2.0 / n);
  // 2 pi e 2^(-2C/n) recovered from eta = 2 pi e 2^(-2C).
  const double noise =
      st.eta > 0.0
          ? kTwoPiE * std::pow(st.eta / kTwoPiE, 1.0 / n) *
                std::pow(std::abs(determinant(W)), 1.0 / n)
          : 0.0;
  QuantizerState next = st;
  next.delta_sq = st.delta_sq * (gamma ? open_f : closed_f) + noise + st.epsilon;
  next.k = st.k + 1;
  if (!(next.delta_sq > 0.0)) throw DomainError("delta_sq lost positivity");
  return next;
}

QuantizedValue quantize_uniform(double x, double delta,
                                double support_halfwidth) {
  if (!(delta > 0.0)) throw DomainError("quantize_uniform: delta must be > 0");
  QuantizedValue qv;
  double j = std::floor(x / delta);
  if (std::isfinite(support_halfwidth)) {
    // Even grid of 2*ceil(a/delta) bins covering [-a, a].
    const double half_bins = std::ceil(support_halfwidth / delta);
    const double jmax = half_bins - 1.0;
    const double jmin = -half_bins;
    if (j > jmax) {
      j = jmax;
      qv.overflowed = true;
    } else if (j < jmin) {
      j = jmin;
      qv.overflowed = true;
    }
  }
  // Indices saturate far outside any physical regime; keeps the cast defined.
  if (!(j >= -9.0e18)) j = -9.0e18;
  if (!(j <= 9.0e18)) j = 9.0e18;
  qv.bin_index = static_cast<long long>(j);
  qv.codepoint = delta * (j + 0.5);
  return qv;
}

std::vector<QuantizedValue> quantize_uniform(std::span<const double> x,
                                             const QuantizerState& st,
                                             double support_halfwidth) {
  check_state(st);
  const double delta = std::sqrt(st.delta_sq);
  std::vector<QuantizedValue> out;
  out.reserve(x.size());
  for (double xi : x) out.push_back(quantize_uniform(xi, delta, support_halfwidth));
  return out;
}

double rate_bits_scalar(const QuantizerState& st, double sigma2) {
  check_state(st);
  if (!(sigma2 > 0.0)) throw DomainError("rate_bits_scalar: sigma2 must be > 0");
  const double h = 0.5 * std::log2(kTwoPiE * sigma2);
  return h - 0.5 * std::log2(st.delta_sq);
}

RateDiagnostic rate_bits_vector(const QuantizerState& st,
                                double joint_entropy_bits, std::size_t n) {
  check_state(st);
  const double log_delta = 0.5 * std::log2(st.delta_sq);
  const auto nd = static_cast<double>(n);
  return RateDiagnostic{joint_entropy_bits - nd * log_delta,
                        (2.0 / nd) * joint_entropy_bits - nd * log_delta};
}

double implied_variance(const QuantizerState& st) {
  check_state(st);
  if (st.eta <= 0.0) return kInf;
  const auto n = static_cast<double>(st.n);
  const double eta_n = kTwoPiE * std::pow(st.eta / kTwoPiE, 1.0 / n);
  const double v = (st.delta_sq - st.epsilon) / eta_n;
  return v > 0.0 ? v : 0.0;
}

}  // namespace qloop
