// SPDX-License-Identifier: Apache-2.0
//
// Minimal dense real linear algebra for the small matrices (n <= ~32) used
// throughout the library. Plain O(n^3) algorithms, row-major storage, no
// blocking. Everything here is a pure function of its inputs.
#pragma once

#include <cstddef>
#include <initializer_list>
#include <optional>
#include <span>
#include <vector>

#include "qloop/errors.hpp"

namespace qloop {

using Vec = std::vector<double>;

struct Matrix {
  std::size_t rows{0};
  std::size_t cols{0};
  std::vector<double> a;  // row-major, rows*cols entries

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0);
  Matrix(std::initializer_list<std::initializer_list<double>> rows_init);

  static Matrix identity(std::size_t n);
  static Matrix diagonal(std::span<const double> d);

  double& operator()(std::size_t i, std::size_t j) { return a[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return a[i * cols + j]; }

  bool square() const { return rows == cols && rows > 0; }

  /// Throws DimensionError on empty shape or non-finite entries.
  void validate(const char* what = "matrix") const;
};

Matrix operator*(const Matrix& lhs, const Matrix& rhs);
Matrix operator+(const Matrix& lhs, const Matrix& rhs);
Matrix operator-(const Matrix& lhs, const Matrix& rhs);
Matrix operator*(double s, const Matrix& m);

Matrix transpose(const Matrix& m);
Vec matvec(const Matrix& m, std::span<const double> x);

/// Largest absolute entry; 0 for the zero matrix.
double max_abs(const Matrix& m);

/// (M + M') / 2.
Matrix symmetrize(const Matrix& m);

/// Symmetric within |m_ij - m_ji| <= tol_rel * max(1, max_abs(m)).
bool is_symmetric(const Matrix& m, double tol_rel = 1e-12);

/// det(M) via LU with partial pivoting. Exact zero is a valid result.
double determinant(const Matrix& m);

/// Largest singular value by power iteration on M'M with a deterministic
/// start vector (normalized all-ones; restarts with basis vectors if the
/// iterate stagnates at zero). Relative error <= tol. Zero matrix -> 0.
double spectral_norm(const Matrix& m, double tol = 1e-12);

/// Solves A x = b by Gaussian elimination with partial pivoting.
/// Throws SingularSystemError when a pivot falls below 1e-13 * max_abs(A).
Vec solve_linear(const Matrix& A, std::span<const double> b);

/// Lower-triangular L with L L' = M, or nullopt when M is not symmetric
/// positive definite (any pivot <= 0 fails).
std::optional<Matrix> cholesky_lower(const Matrix& m);

/// True iff M is symmetric within tolerance and Cholesky succeeds.
bool is_positive_definite(const Matrix& m);

}  // namespace qloop
