// SPDX-License-Identifier: Apache-2.0
//
// Infinite-horizon discrete LQR synthesis by Riccati value iteration. The
// loop analysis only ever consumes the resulting gain and the closed-loop
// matrix A - B L.
#pragma once

#include <cstddef>
#include <cstdint>

#include "qloop/matrix.hpp"

namespace qloop {

struct ScalarPlant {
  double alpha{0.0};      // open-loop gain, |alpha| > 1
  double b{1.0};          // input gain, != 0
  double sigma_w2{1.0};   // process noise variance, >= 0
  double sigma_0_2{1.0};  // initial state variance, > 0
  double q_cost{1.0};     // state cost, > 0
  double r_cost{1.0};     // input cost, > 0

  void validate() const;
};

struct VectorPlant {
  Matrix A;   // n x n, diagonalizable assumed (not checked)
  Matrix B;   // n x m
  Matrix W;   // n x n, PD
  Matrix P0;  // n x n, PD
  Matrix Q;   // n x n, PD
  Matrix R;   // m x m, PD

  std::size_t n() const { return A.rows; }
  std::size_t m() const { return B.cols; }

  /// Dimension, positive-definiteness, and controllability checks
  /// (rank of [B AB ... A^{n-1}B]).
  void validate() const;
};

struct DareSolution {
  Matrix P;
  std::size_t iterations{0};
  double residual{0.0};  // inf-norm of the fixed-point defect
};

/// Fixed point of P = Q + A'PA - A'PB (R + B'PB)^{-1} B'PA, iterated from
/// P = Q until the residual drops below tol. Throws ConvergenceError when
/// max_iter is exhausted.
DareSolution solve_dare(const VectorPlant& plant, double tol = 1e-12,
                        std::size_t max_iter = 1000000);

struct GainResult {
  Matrix L;       // m x n
  Matrix closed;  // A - B L
  Matrix P;       // DARE solution backing the gain
};

GainResult lqr_gain(const VectorPlant& plant, double tol = 1e-12);

struct ScalarGain {
  double p{0.0};
  double l{0.0};
  double closed{0.0};  // alpha - b l
};

ScalarGain scalar_lqr_gain(double alpha, double b, double q_cost, double r_cost,
                           double tol = 1e-12);

/// Stability evidence for A - B L. schur_stable uses the power-norm test
/// ||closed^64||_2^(1/64) < 1; norm_contractive is the stricter
/// ||closed||_2 < 1 demanded by the intermittence bounds, which LQR does not
/// guarantee.
struct ClosedLoopCertificate {
  double closed_norm{0.0};
  double spectral_radius_estimate{0.0};
  bool schur_stable{false};
  bool norm_contractive{false};
};

ClosedLoopCertificate certify_closed_loop(const Matrix& closed);

struct WeightChoice {
  double q_cost{1.0};
  double r_cost{0.0};
  double achieved_closed{0.0};
};

/// Finds (q=1, r) by bisection so the scalar LQR closed-loop gain hits
/// target_closed. Reachable targets are sign(alpha) * (0, 1/|alpha|): the
/// cheap-control limit pushes the closed-loop pole to 0, the expensive limit
/// to the stable mirror 1/alpha. Throws DomainError outside that range.
WeightChoice weights_for_closed_gain(double alpha, double b,
                                     double target_closed, double tol = 1e-9);

}  // namespace qloop
