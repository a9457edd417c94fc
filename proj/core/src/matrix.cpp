// SPDX-License-Identifier: Apache-2.0
#include "qloop/matrix.hpp"

#include <cmath>
#include <cstdlib>
#include <limits>
#include <string>

namespace qloop {

Matrix::Matrix(std::size_t r, std::size_t c, double fill)
    : rows(r), cols(c), a(r * c, fill) {
  if (r == 0 || c == 0) throw DimensionError("matrix dimensions must be >= 1");
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows_init) {
  rows = rows_init.size();
  if (rows == 0) throw DimensionError("matrix dimensions must be >= 1");
  cols = rows_init.begin()->size();
  if (cols == 0) throw DimensionError("matrix dimensions must be >= 1");
  a.reserve(rows * cols);
  for (const auto& r : rows_init) {
    if (r.size() != cols) throw DimensionError("ragged initializer rows");
    a.insert(a.end(), r.begin(), r.end());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::diagonal(std::span<const double> d) {
  Matrix m(d.size(), d.size());
  for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
  return m;
}

void Matrix::validate(const char* what) const {
  if (rows == 0 || cols == 0 || a.size() != rows * cols)
    throw DimensionError(std::string(what) + ": malformed shape");
  for (double v : a)
    if (!std::isfinite(v))
      throw DimensionError(std::string(what) + ": non-finite entry");
}

Matrix operator*(const Matrix& lhs, const Matrix& rhs) {
  if (lhs.cols != rhs.rows) throw DimensionError("matmul shape mismatch");
  Matrix out(lhs.rows, rhs.cols);
  for (std::size_t i = 0; i < lhs.rows; ++i)
    for (std::size_t k = 0; k < lhs.cols; ++k) {
      const double lik = lhs(i, k);
      if (lik == 0.0) continue;
      for (std::size_t j = 0; j < rhs.cols; ++j) out(i, j) += lik * rhs(k, j);
    }
  return out;
}

Matrix operator+(const Matrix& lhs, const Matrix& rhs) {
  if (lhs.rows != rhs.rows || lhs.cols != rhs.cols)
    throw DimensionError("matrix add shape mismatch");
  Matrix out = lhs;
  for (std::size_t i = 0; i < out.a.size(); ++i) out.a[i] += rhs.a[i];
  return out;
}

Matrix operator-(const Matrix& lhs, const Matrix& rhs) {
  if (lhs.rows != rhs.rows || lhs.cols != rhs.cols)
    throw DimensionError("matrix sub shape mismatch");
  Matrix out = lhs;
  for (std::size_t i = 0; i < out.a.size(); ++i) out.a[i] -= rhs.a[i];
  return out;
}

Matrix operator*(double s, const Matrix& m) {
  Matrix out = m;
  for (double& v : out.a) v *= s;
  return out;
}

Matrix transpose(const Matrix& m) {
  Matrix out(m.cols, m.rows);
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j) out(j, i) = m(i, j);
  return out;
}

Vec matvec(const Matrix& m, std::span<const double> x) {
  if (x.size() != m.cols) throw DimensionError("matvec shape mismatch");
  Vec y(m.rows, 0.0);
  for (std::size_t i = 0; i < m.rows; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < m.cols; ++j) acc += m(i, j) * x[j];
    y[i] = acc;
  }
  return y;
}

double max_abs(const Matrix& m) {
  double best = 0.0;
  for (double v : m.a) best = std::max(best, std::abs(v));
  return best;
}

Matrix symmetrize(const Matrix& m) {
  if (!m.square()) throw DimensionError("symmetrize: square matrix required");
  Matrix out = m;
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < i; ++j) {
      const double v = 0.5 * (m(i, j) + m(j, i));
      out(i, j) = v;
      out(j, i) = v;
    }
  return out;
}

bool is_symmetric(const Matrix& m, double tol_rel) {
  if (!m.square()) return false;
  const double tol = tol_rel * std::max(1.0, max_abs(m));
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (std::abs(m(i, j) - m(j, i)) > tol) return false;
  return true;
}

double determinant(const Matrix& m) {
  if (!m.square()) throw DimensionError("determinant: square matrix required");
  m.validate("determinant input");
  const std::size_t n = m.rows;
  Matrix lu = m;
  double det = 1.0;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    double best = std::abs(lu(col, col));
    for (std::size_t r = col + 1; r < n; ++r) {
      const double v = std::abs(lu(r, col));
      if (v > best) {
        best = v;
        piv = r;
      }
    }
    if (best == 0.0) return 0.0;
    if (piv != col) {
      for (std::size_t j = 0; j < n; ++j) std::swap(lu(piv, j), lu(col, j));
      det = -det;
    }
    det *= lu(col, col);
    const double inv = 1.0 / lu(col, col);
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = lu(r, col) * inv;
      if (f == 0.0) continue;
      for (std::size_t j = col; j < n; ++j) lu(r, j) -= f * lu(col, j);
    }
  }
  return det;
}

namespace {

// One multiplication by M'M without forming the product matrix.
Vec apply_gram(const Matrix& m, const Vec& v) {
  Vec mv(m.rows, 0.0);
  for (std::size_t i = 0; i < m.rows; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < m.cols; ++j) acc += m(i, j) * v[j];
    mv[i] = acc;
  }
  Vec out(m.cols, 0.0);
  for (std::size_t i = 0; i < m.rows; ++i) {
    const double s = mv[i];
    if (s == 0.0) continue;
    for (std::size_t j = 0; j < m.cols; ++j) out[j] += m(i, j) * s;
  }
  return out;
}

double norm2(const Vec& v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

}  // namespace

double spectral_norm(const Matrix& m, double tol) {
  m.validate("spectral_norm input");
  if (tol <= 0.0) throw DomainError("spectral_norm: tol must be > 0");
  if (max_abs(m) == 0.0) return 0.0;

  const std::size_t n = m.cols;
  // Deterministic start: normalized all-ones. If the iterate collapses to
  // zero (start orthogonal to the top singular subspace), restart with e_1,
  // then e_2, ... ; some basis vector always has a nonzero image unless M = 0.
  Vec v(n, 1.0 / std::sqrt(static_cast<double>(n)));
  std::size_t restart = 0;
  double lambda = 0.0;
  const std::size_t max_iter = 200000;
  for (std::size_t it = 0; it < max_iter; ++it) {
    Vec w = apply_gram(m, v);
    const double wn = norm2(w);
    if (wn == 0.0) {
      if (restart >= n) return 0.0;
      v.assign(n, 0.0);
      v[restart++] = 1.0;
      lambda = 0.0;
      continue;
    }
    const double next = wn;  // Rayleigh quotient of M'M at unit v equals |w|
    for (std::size_t j = 0; j < n; ++j) v[j] = w[j] / wn;
    if (std::abs(next - lambda) <= tol * next && it > 0) {
      lambda = next;
      break;
    }
    lambda = next;
  }
  return std::sqrt(lambda);
}

Vec solve_linear(const Matrix& A, std::span<const double> b) {
  if (!A.square()) throw DimensionError("solve_linear: square matrix required");
  if (b.size() != A.rows) throw DimensionError("solve_linear: rhs size mismatch");
  A.validate("solve_linear input");
  const std::size_t n = A.rows;
  const double pivot_floor = 1e-13 * max_abs(A);
  Matrix lu = A;
  Vec x(b.begin(), b.end());
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    double best = std::abs(lu(col, col));
    for (std::size_t r = col + 1; r < n; ++r) {
      const double v = std::abs(lu(r, col));
      if (v > best) {
        best = v;
        piv = r;
      }
    }
    if (best < pivot_floor || best == 0.0)
      throw SingularSystemError("solve_linear: pivot below tolerance");
    if (piv != col) {
      for (std::size_t j = 0; j < n; ++j) std::swap(lu(piv, j), lu(col, j));
      std::swap(x[piv], x[col]);
    }
    const double inv = 1.0 / lu(col, col);
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = lu(r, col) * inv;
      if (f == 0.0) continue;
      for (std::size_t j = col; j < n; ++j) lu(r, j) -= f * lu(col, j);
      x[r] -= f * x[col];
    }
  }
  for (std::size_t i = n; i-- > 0;) {
    double acc = x[i];
    for (std::size_t j = i + 1; j < n; ++j) acc -= lu(i, j) * x[j];
    x[i] = acc / lu(i, i);
  }
  return x;
}

std::optional<Matrix> cholesky_lower(const Matrix& m) {
  if (!m.square()) return std::nullopt;
  const std::size_t n = m.rows;
  Matrix L(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double acc = m(i, j);
      for (std::size_t k = 0; k < j; ++k) acc -= L(i, k) * L(j, k);
      if (i == j) {
        if (acc <= 0.0) return std::nullopt;
        L(i, i) = std::sqrt(acc);
      } else {
        L(i, j) = acc / L(j, j);
      }
    }
  }
  return L;
}

bool is_positive_definite(const Matrix& m) {
  if (!m.square()) return false;
  if (!is_symmetric(m)) return false;
  return cholesky_lower(m).has_value();
}

}  // namespace qloop
