// SPDX-License-Identifier: Apache-2.0
//
// Recursive uniform quantizer. The squared step size is a state variable
// updated from the realized switch draw only, so the decoder can mirror it
// without side information:
//   scalar: Delta_{k+1}^2 = Delta_k^2 [xi^2 + eta G (1-gamma)]
//                           + eta sw2 + eps (1 - xi^2),
//           xi^2 = alpha^2 gamma + c^2 (1-gamma)
//   vector: Delta_{k+1}^2 = Delta_k^2 [gamma |det A|^(2/n)
//                           + (1-gamma) |det(A-BL)|^(2/n)]
//                           + 2 pi e 2^(-2C/n) |det W|^(1/n) + eps
// The two recursions deliberately differ in their epsilon terms, and the
// vector initialization uses eta = 2 pi e / 2^(2C) while the vector update
// uses the per-dimension exponent; see README for why these asymmetries
// are kept.
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "qloop/channel.hpp"
#include "qloop/matrix.hpp"

namespace qloop {

struct QuantizerState {
  double delta_sq{0.0};  // conditional squared step size, > 0
  std::size_t k{0};      // time index
  std::size_t n{1};      // state dimension
  double eta{0.0};       // 2 pi e / 2^(2C); 0 at infinite capacity
  double epsilon{0.0};
};

/// Delta_0^2 = eta sigma_0^2 + eps.
QuantizerState init_delta_scalar(double sigma_0_2, const ChannelModel& ch);

/// Delta_0^2 = eta det(P0)^(1/n) + eps. Throws DomainError when det <= 0.
QuantizerState init_delta_vector(const Matrix& P0, std::size_t n,
                                 const ChannelModel& ch);

QuantizerState update_delta_scalar(const QuantizerState& st, int gamma,
                                   double alpha, double closed_gain,
                                   double sigma_w2);

QuantizerState update_delta_vector(const QuantizerState& st, int gamma,
                                   const Matrix& A, const Matrix& closed,
                                   const Matrix& W);

/// Precomputed coefficients for the vector update, for callers stepping the
/// recursion inside a simulation loop.
struct VectorDeltaCoeffs {
  double open_factor{0.0};    // |det A|^(2/n)
  double closed_factor{0.0};  // |det(A-BL)|^(2/n)
  double noise_term{0.0};     // 2 pi e 2^(-2C/n) |det W|^(1/n)
};

VectorDeltaCoeffs vector_delta_coeffs(const Matrix& A, const Matrix& closed,
                                      const Matrix& W, const ChannelModel& ch);

struct QuantizedValue {
  double codepoint{0.0};
  long long bin_index{0};
  bool overflowed{false};
};

/// Mid-rise uniform quantization: codepoint = Delta (floor(x/Delta) + 0.5).
/// A finite support half-width clamps to the outermost center of the even
/// bin grid covering [-a, a] (ceil(a/Delta) bins per side) and flags
/// overflow. Pass +infinity for an unbounded grid.
QuantizedValue quantize_uniform(double x, double delta,
                                double support_halfwidth);

std::vector<QuantizedValue> quantize_uniform(std::span<const double> x,
                                             const QuantizerState& st,
                                             double support_halfwidth);

/// Rate diagnostic for the scalar quantizer: h - log2(Delta) bits with
/// h = (1/2) log2(2 pi e sigma^2).
double rate_bits_scalar(const QuantizerState& st, double sigma2);

struct RateDiagnostic {
  double entropy_rule_bits{0.0};  // h - n log2(Delta)
  double entropy_power_rule_bits{0.0};  // (2/n) h - n log2(Delta)
};

/// Vector rate diagnostics against a joint differential entropy estimate
/// h (bits). Reports the volume-counting form and the alternate
/// entropy-power form; neither gates the simulation.
RateDiagnostic rate_bits_vector(const QuantizerState& st,
                                double joint_entropy_bits, std::size_t n);

/// Variance proxy the step size encodes: (Delta^2 - eps) / eta_n with
/// eta_n = 2 pi e 2^(-2C/n) (floored at 0). +infinity when capacity is
/// infinite: no typical-set constraint applies.
double implied_variance(const QuantizerState& st);

/// Half-width multiplier of the entropy-typical support set
/// [-2^(h-1), 2^(h-1)] in units of the implied standard deviation:
/// sqrt(2 pi e)/2.
inline constexpr double entropy_typical_multiplier() {
  return 2.0663656770260600886;  // sqrt(2 pi e) / 2
}

}  // namespace qloop
