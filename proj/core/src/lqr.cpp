// SPDX-License-Identifier: Apache-2.0
#include "qloop/lqr.hpp"

#include <cmath>
#include <string>

namespace qloop {

void ScalarPlant::validate() const {
  if (!(std::abs(alpha) > 1.0))
    throw DomainError("scalar plant requires |alpha| > 1");
  if (b == 0.0) throw DomainError("scalar plant requires b != 0");
  if (!(sigma_w2 >= 0.0)) throw DomainError("sigma_w2 must be >= 0");
  if (!(sigma_0_2 > 0.0)) throw DomainError("sigma_0_2 must be > 0");
  if (!(q_cost > 0.0) || !(r_cost > 0.0))
    throw DomainError("LQR costs must be > 0");
}

namespace {

std::size_t matrix_rank(Matrix m) {
  // Row echelon with partial pivoting; tolerance relative to the largest entry.
  const double tol = 1e-10 * std::max(1.0, max_abs(m));
  std::size_t rank = 0;
  for (std::size_t col = 0; col < m.cols && rank < m.rows; ++col) {
    std::size_t piv = rank;
    double best = std::abs(m(rank, col));
    for (std::size_t r = rank + 1; r < m.rows; ++r)
      if (std::abs(m(r, col)) > best) {
        best = std::abs(m(r, col));
        piv = r;
      }
    if (best <= tol) continue;
    if (piv != rank)
      for (std::size_t j = 0; j < m.cols; ++j) std::swap(m(piv, j), m(rank, j));
    const double inv = 1.0 / m(rank, col);
    for (std::size_t r = rank + 1; r < m.rows; ++r) {
      const double f = m(r, col) * inv;
      if (f == 0.0) continue;
      for (std::size_t j = col; j < m.cols; ++j) m(r, j) -= f * m(rank, j);
    }
    ++rank;
  }
  return rank;
}

}  // namespace

void VectorPlant::validate() const {
  A.validate("A");
  B.validate("B");
  W.validate("W");
  P0.validate("P0");
  Q.validate("Q");
  R.validate("R");
  if (!A.square()) throw DimensionError("A must be square");
  const std::size_t nn = A.rows;
  const std::size_t mm = B.cols;
  if (B.rows != nn) throw DimensionError("B row count must match A");
  if (W.rows != nn || W.cols != nn) throw DimensionError("W must be n x n");
  if (P0.rows != nn || P0.cols != nn) throw DimensionError("P0 must be n x n");
  if (Q.rows != nn || Q.cols != nn) throw DimensionError("Q must be n x n");
  if (R.rows != mm || R.cols != mm) throw DimensionError("R must be m x m");
  if (!is_positive_definite(W)) throw DomainError("W must be positive definite");
  if (!is_positive_definite(P0)) throw DomainError("P0 must be positive definite");
  if (!is_positive_definite(Q)) throw DomainError("Q must be positive definite");
  if (!is_positive_definite(R)) throw DomainError("R must be positive definite");

  // Controllability: rank [B AB ... A^{n-1}B] = n.
  Matrix ctrl(nn, nn * mm);
  Matrix blk = B;
  for (std::size_t k = 0; k < nn; ++k) {
    for (std::size_t i = 0; i < nn; ++i)
      for (std::size_t j = 0; j < mm; ++j) ctrl(i, k * mm + j) = blk(i, j);
    blk = A * blk;
  }
  if (matrix_rank(ctrl) != nn)
    throw DomainError("(A,B) is not controllable");
}

namespace {

// Q + A'PA - A'PB (R + B'PB)^{-1} B'PA
Matrix riccati_step(const VectorPlant& pl, const Matrix& P) {
  const Matrix At = transpose(pl.A);
  const Matrix Bt = transpose(pl.B);
  const Matrix PA = P * pl.A;
  const Matrix PB = P * pl.B;
  const Matrix S = pl.R + Bt * PB;       // m x m, PD since R is PD
  const Matrix BtPA = Bt * PA;           // m x n
  // S^{-1} (B'PA), column by column.
  Matrix X(BtPA.rows, BtPA.cols);
  for (std::size_t j = 0; j < BtPA.cols; ++j) {
    Vec col(BtPA.rows);
    for (std::size_t i = 0; i < BtPA.rows; ++i) col[i] = BtPA(i, j);
    Vec sol = solve_linear(S, col);
    for (std::size_t i = 0; i < BtPA.rows; ++i) X(i, j) = sol[i];
  }
  // A'PB S^{-1} B'PA = (B'PA)' X.
  return symmetrize(pl.Q + At * PA - transpose(BtPA) * X);
}

}  // namespace

DareSolution solve_dare(const VectorPlant& plant, double tol,
                        std::size_t max_iter) {
  plant.validate();
  if (!(tol > 0.0)) throw DomainError("solve_dare: tol must be > 0");
  Matrix P = plant.Q;
  for (std::size_t it = 1; it <= max_iter; ++it) {
    Matrix next = riccati_step(plant, P);
    const double res = max_abs(next - P);
    P = next;
    if (res <= tol) return DareSolution{P, it, res};
  }
  throw ConvergenceError("solve_dare: no convergence within max_iter");
}

GainResult lqr_gain(const VectorPlant& plant, double tol) {
  const DareSolution sol = solve_dare(plant, tol);
  const Matrix Bt = transpose(plant.B);
  const Matrix S = plant.R + Bt * (sol.P * plant.B);
  const Matrix BtPA = Bt * (sol.P * plant.A);
  Matrix L(BtPA.rows, BtPA.cols);
  for (std::size_t j = 0; j < BtPA.cols; ++j) {
    Vec col(BtPA.rows);
    for (std::size_t i = 0; i < BtPA.rows; ++i) col[i] = BtPA(i, j);
    Vec sol_col = solve_linear(S, col);
    for (std::size_t i = 0; i < BtPA.rows; ++i) L(i, j) = sol_col[i];
  }
  return GainResult{L, plant.A - plant.B * L, sol.P};
}

ScalarGain scalar_lqr_gain(double alpha, double b, double q_cost, double r_cost,
                           double tol) {
  VectorPlant pl;
  pl.A = Matrix{{alpha}};
  pl.B = Matrix{{b}};
  pl.W = Matrix::identity(1);
  pl.P0 = Matrix::identity(1);
  pl.Q = Matrix{{q_cost}};
  pl.R = Matrix{{r_cost}};
  const GainResult g = lqr_gain(pl, tol);
  return ScalarGain{g.P(0, 0), g.L(0, 0), g.closed(0, 0)};
}

ClosedLoopCertificate certify_closed_loop(const Matrix& closed) {
  if (!closed.square())
    throw DimensionError("certify_closed_loop: square matrix required");
  ClosedLoopCertificate cert;
  cert.closed_norm = spectral_norm(closed);
  // rho(M) ~ ||M^64||^(1/64); 64 squarings-free products keep it simple.
  Matrix pw = closed;
  for (int i = 1; i < 64; ++i) pw = pw * closed;
  cert.spectral_radius_estimate = std::pow(spectral_norm(pw), 1.0 / 64.0);
  cert.schur_stable = cert.spectral_radius_estimate < 1.0;
  cert.norm_contractive = cert.closed_norm < 1.0;
  return cert;
}

WeightChoice weights_for_closed_gain(double alpha, double b,
                                     double target_closed, double tol) {
  if (!(std::abs(alpha) > 1.0))
    throw DomainError("weights_for_closed_gain requires |alpha| > 1");
  if (b == 0.0) throw DomainError("weights_for_closed_gain requires b != 0");
  const double sgn = alpha > 0.0 ? 1.0 : -1.0;
  const double limit = 1.0 / std::abs(alpha);
  const double t = sgn * target_closed;  // normalized to the alpha > 0 picture
  if (!(t > 0.0) || !(t < limit))
    throw DomainError(
        "target closed-loop gain unreachable by scalar LQR; reachable range is "
        "sign(alpha) * (0, 1/|alpha|) = (0, " +
        std::to_string(limit) + ") up to sign");

  // |closed(r)| grows monotonically from 0 (r -> 0) to 1/|alpha| (r -> inf).
  double lo = 0.0, hi = 1.0;
  while (std::abs(scalar_lqr_gain(alpha, b, 1.0, hi).closed) < t) {
    hi *= 4.0;
    if (hi > 1e18)
      throw ConvergenceError("weights_for_closed_gain: bracket exhausted");
  }
  for (int it = 0; it < 400; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double c = std::abs(scalar_lqr_gain(alpha, b, 1.0, mid).closed);
    if (std::abs(c - t) <= tol) {
      return WeightChoice{1.0, mid, sgn * c};
    }
    (c < t ? lo : hi) = mid;
  }
  const double r = 0.5 * (lo + hi);
  return WeightChoice{1.0, r, scalar_lqr_gain(alpha, b, 1.0, r).closed};
}

}  // namespace qloop
