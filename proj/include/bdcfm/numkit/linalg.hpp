#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <string>

#include "bdcfm/errors.hpp"

namespace bdcfm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// (A + A') / 2.
inline Matrix symmetrize(const Matrix& a) { return 0.5 * (a + a.transpose()); }

inline bool is_symmetric(const Matrix& a, double rel_tol = 1e-10) {
  if (a.rows() != a.cols()) return false;
  const double scale = std::max(a.cwiseAbs().maxCoeff(), 1e-300);
  return (a - a.transpose()).cwiseAbs().maxCoeff() <= rel_tol * scale;
}

namespace detail {

// Plain Cholesky-Banachiewicz; returns false on the first nonpositive (or NaN) pivot.
inline bool try_cholesky(const Matrix& a, Matrix& lower) {
  const Eigen::Index n = a.rows();
  lower.setZero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    double pivot = a(j, j) - lower.row(j).head(j).squaredNorm();
    if (!(pivot > 0.0) || !std::isfinite(pivot)) return false;
    const double root = std::sqrt(pivot);
    lower(j, j) = root;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      lower(i, j) = (a(i, j) - lower.row(i).head(j).dot(lower.row(j).head(j))) / root;
    }
  }
  return true;
}

}  // namespace detail

/// Lower-triangular L with L L' = A. A single retry adds 1e-10 * trace(A) / dim to the
/// diagonal to absorb roundoff.
inline Matrix cholesky(const Matrix& a) {
  if (a.rows() != a.cols() || a.rows() == 0) {
    fail(ErrorCode::InvalidParameter, "cholesky: matrix must be square with dim >= 1");
  }
  Matrix lower;
  if (detail::try_cholesky(a, lower)) return lower;
  const double jitter = 1e-10 * a.trace() / static_cast<double>(a.rows());
  if (jitter > 0.0 && std::isfinite(jitter)) {
    Matrix shifted = a;
    shifted.diagonal().array() += jitter;
    if (detail::try_cholesky(shifted, lower)) return lower;
  }
  fail(ErrorCode::NotPositiveDefinite,
       "cholesky: matrix of dim " + std::to_string(a.rows()) + " is not positive definite");
}

struct LdlFactors {
  Matrix unit_lower;
  Vector diag;
};

/// A = L D L' with unit-diagonal L and positive D, without pivoting.
inline LdlFactors ldl(const Matrix& a) {
  if (a.rows() != a.cols() || a.rows() == 0) {
    fail(ErrorCode::InvalidParameter, "ldl: matrix must be square with dim >= 1");
  }
  const Eigen::Index n = a.rows();
  LdlFactors f{Matrix::Identity(n, n), Vector::Zero(n)};
  for (Eigen::Index j = 0; j < n; ++j) {
    double dj = a(j, j);
    for (Eigen::Index k = 0; k < j; ++k) dj -= f.unit_lower(j, k) * f.unit_lower(j, k) * f.diag(k);
    if (!(dj > 0.0) || !std::isfinite(dj)) {
      fail(ErrorCode::NotPositiveDefinite, "ldl: nonpositive pivot at index " + std::to_string(j));
    }
    f.diag(j) = dj;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      double v = a(i, j);
      for (Eigen::Index k = 0; k < j; ++k) v -= f.unit_lower(i, k) * f.unit_lower(j, k) * f.diag(k);
      f.unit_lower(i, j) = v / dj;
    }
  }
  return f;
}

/// Symmetric positive-definite matrix together with its Cholesky factor.
/// Construction symmetrizes the input and throws NotPositiveDefinite when factorization fails.
class SpdMatrix {
 public:
  explicit SpdMatrix(const Matrix& a) {
    if (a.rows() != a.cols() || a.rows() == 0) {
      fail(ErrorCode::InvalidParameter, "SpdMatrix: matrix must be square with dim >= 1");
    }
    if (!is_symmetric(a)) fail(ErrorCode::InvalidParameter, "SpdMatrix: matrix is not symmetric");
    value_ = symmetrize(a);
    lower_ = cholesky(value_);
  }

  static SpdMatrix identity(Eigen::Index dim) { return SpdMatrix(Matrix::Identity(dim, dim)); }

  Eigen::Index dim() const noexcept { return value_.rows(); }
  const Matrix& matrix() const noexcept { return value_; }
  const Matrix& cholesky_factor() const noexcept { return lower_; }

  Vector solve(const Vector& b) const {
    Vector z = lower_.triangularView<Eigen::Lower>().solve(b);
    return lower_.transpose().triangularView<Eigen::Upper>().solve(z);
  }

  Matrix inverse() const {
    const Matrix inv_lower =
        lower_.triangularView<Eigen::Lower>().solve(Matrix::Identity(dim(), dim()));
    return symmetrize(inv_lower.transpose() * inv_lower);
  }

  double log_determinant() const { return 2.0 * lower_.diagonal().array().log().sum(); }

 private:
  Matrix value_;
  Matrix lower_;
};

}  // namespace bdcfm
