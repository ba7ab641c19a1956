#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "bdcfm/errors.hpp"
#include "bdcfm/numkit/linalg.hpp"
#include "bdcfm/numkit/rng.hpp"

namespace bdcfm {

/// Gamma(shape, rate = 1) by Marsaglia and Tsang; shape < 1 is boosted through shape + 1.
inline double sample_gamma(double shape, RngStream& rng) {
  if (!(shape > 0.0) || !std::isfinite(shape)) {
    fail(ErrorCode::InvalidParameter, "gamma shape must be positive, got " + std::to_string(shape));
  }
  if (shape < 1.0) {
    const double boost = std::pow(rng.uniform(), 1.0 / shape);
    return sample_gamma(shape + 1.0, rng) * boost;
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    const double x = rng.normal();
    double v = 1.0 + c * x;
    if (v <= 0.0) continue;
    v = v * v * v;
    const double u = rng.uniform();
    const double x2 = x * x;
    if (u < 1.0 - 0.0331 * x2 * x2) return d * v;
    if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v;
  }
}

/// IG(a, b) with density proportional to x^(-a-1) exp(-b / x); mean b / (a - 1) for a > 1.
inline double sample_inverse_gamma(double shape, double scale, RngStream& rng) {
  if (!(shape > 0.0) || !(scale > 0.0) || !std::isfinite(shape) || !std::isfinite(scale)) {
    fail(ErrorCode::InvalidParameter, "inverse gamma requires shape > 0 and scale > 0, got (" +
                                          std::to_string(shape) + ", " + std::to_string(scale) +
                                          ")");
  }
  return scale / sample_gamma(shape, rng);
}

inline Vector standard_normal_vector(Eigen::Index dim, RngStream& rng) {
  Vector z(dim);
  for (Eigen::Index k = 0; k < dim; ++k) z(k) = rng.normal();
  return z;
}

/// N(mean, cov).
inline Vector sample_mvn(const Vector& mean, const SpdMatrix& cov, RngStream& rng) {
  if (mean.size() != cov.dim()) {
    fail(ErrorCode::DimensionMismatch, "sample_mvn: mean and covariance dimensions differ");
  }
  return mean + cov.cholesky_factor() * standard_normal_vector(mean.size(), rng);
}

/// N(P^-1 h, P^-1) given the lower Cholesky factor of the precision P.
inline Vector sample_mvn_canonical(const Vector& h, const Matrix& precision_lower,
                                   RngStream& rng) {
  const auto lower = precision_lower.triangularView<Eigen::Lower>();
  const auto upper = precision_lower.transpose().triangularView<Eigen::Upper>();
  Vector mean = upper.solve(lower.solve(h));
  return mean + upper.solve(standard_normal_vector(h.size(), rng));
}

/// IW(dof, scale) with density proportional to |W|^-(dof+L+1)/2 exp(-tr(W^-1 scale)/2);
/// mean scale / (dof - L - 1). Bartlett construction on the inverse.
inline SpdMatrix sample_inverse_wishart(double dof, const SpdMatrix& scale, RngStream& rng) {
  const Eigen::Index dim = scale.dim();
  if (!(dof > static_cast<double>(dim) - 1.0) || !std::isfinite(dof)) {
    fail(ErrorCode::InvalidParameter, "inverse Wishart requires dof > L - 1, got dof = " +
                                          std::to_string(dof) + " for L = " + std::to_string(dim));
  }
  Matrix bartlett = Matrix::Zero(dim, dim);
  for (Eigen::Index i = 0; i < dim; ++i) {
    bartlett(i, i) = std::sqrt(2.0 * sample_gamma(0.5 * (dof - static_cast<double>(i)), rng));
    for (Eigen::Index j = 0; j < i; ++j) bartlett(i, j) = rng.normal();
  }
  const Matrix bartlett_inv =
      bartlett.triangularView<Eigen::Lower>().solve(Matrix::Identity(dim, dim));
  const Matrix root = scale.cholesky_factor() * bartlett_inv.transpose();
  return SpdMatrix(symmetrize(root * root.transpose()));
}

inline Vector sample_dirichlet(std::span<const double> alpha, RngStream& rng) {
  if (alpha.empty()) fail(ErrorCode::InvalidParameter, "dirichlet: empty parameter vector");
  Vector draw(static_cast<Eigen::Index>(alpha.size()));
  for (std::size_t k = 0; k < alpha.size(); ++k) {
    if (!(alpha[k] > 0.0) || !std::isfinite(alpha[k])) {
      fail(ErrorCode::InvalidParameter, "dirichlet: parameters must be positive");
    }
    draw(static_cast<Eigen::Index>(k)) = sample_gamma(alpha[k], rng);
  }
  const double total = draw.sum();
  if (!(total > 0.0)) {
    // Every gamma underflowed (all alpha tiny): the mass sits on the largest parameter.
    draw.setZero();
    draw(std::distance(alpha.begin(), std::max_element(alpha.begin(), alpha.end()))) = 1.0;
    return draw;
  }
  return draw / total;
}

inline Vector sample_dirichlet(const Vector& alpha, RngStream& rng) {
  return sample_dirichlet(std::span<const double>(alpha.data(), alpha.size()), rng);
}

/// Draws a 1-based index with probability proportional to the weights.
inline int sample_categorical(std::span<const double> weights, RngStream& rng) {
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      fail(ErrorCode::InvalidParameter, "categorical: weights must be finite and nonnegative");
    }
    total += w;
  }
  if (!(total > 0.0)) fail(ErrorCode::InvalidParameter, "categorical: all weights are zero");
  const double target = rng.uniform() * total;
  double cumulative = 0.0;
  int last_positive = 0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    if (weights[k] <= 0.0) continue;
    cumulative += weights[k];
    last_positive = static_cast<int>(k) + 1;
    if (target < cumulative) return last_positive;
  }
  return last_positive;
}

/// Normalizes log-weights in place into probabilities (max-subtracted before exponentiation).
inline void normalize_log_weights(std::span<double> log_weights) {
  double top = -std::numeric_limits<double>::infinity();
  for (double lw : log_weights) {
    if (std::isnan(lw)) fail(ErrorCode::InvalidParameter, "categorical: NaN log-weight");
    top = std::max(top, lw);
  }
  if (!std::isfinite(top)) {
    fail(ErrorCode::InvalidParameter, "categorical: all weights underflow to zero");
  }
  double total = 0.0;
  for (double& lw : log_weights) {
    lw = std::exp(lw - top);
    total += lw;
  }
  for (double& lw : log_weights) lw /= total;
}

}  // namespace bdcfm
