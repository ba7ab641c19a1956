#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "bdcfm/model.hpp"
#include "bdcfm/numkit/distributions.hpp"
#include "bdcfm/numkit/rng.hpp"

namespace bdcfm::testkit {

inline RngStream test_rng(std::uint64_t seed, std::uint64_t subject = 0) {
  return {seed, make_stream_id(StreamKind::Test, 0, subject)};
}

// Running first-four-moment accumulator; gives standard errors for the mean and variance.
struct Moments {
  double n = 0.0;
  double s1 = 0.0;
  double s2 = 0.0;
  double s3 = 0.0;
  double s4 = 0.0;
  double shift = 0.0;
  bool shifted = false;

  void add(double raw) {
    if (!shifted) {
      shift = raw;
      shifted = true;
    }
    const double v = raw - shift;
    n += 1.0;
    s1 += v;
    s2 += v * v;
    s3 += v * v * v;
    s4 += v * v * v * v;
  }
  double mean() const { return shift + s1 / n; }
  double central2() const {
    const double m = s1 / n;
    return s2 / n - m * m;
  }
  double variance() const { return central2() * n / (n - 1.0); }
  double mean_se() const { return std::sqrt(central2() / n); }
  double central4() const {
    const double m = s1 / n;
    return s4 / n - 4.0 * m * s3 / n + 6.0 * m * m * s2 / n - 3.0 * m * m * m * m;
  }
  double variance_se() const {
    const double m2 = central2();
    return std::sqrt(std::max(central4() - m2 * m2, 0.0) / n);
  }
};

// Standard error of a correlated series' mean by non-overlapping batch means.
inline double batch_means_se(const std::vector<double>& x, int batches = 50) {
  const std::size_t size = x.size() / static_cast<std::size_t>(batches);
  std::vector<double> means;
  for (int b = 0; b < batches; ++b) {
    double s = 0.0;
    for (std::size_t k = 0; k < size; ++k) s += x[static_cast<std::size_t>(b) * size + k];
    means.push_back(s / static_cast<double>(size));
  }
  double m = 0.0;
  for (double v : means) m += v;
  m /= batches;
  double ss = 0.0;
  for (double v : means) ss += (v - m) * (v - m);
  return std::sqrt(ss / (batches - 1.0) / batches);
}

inline double mean_of(const std::vector<double>& x) {
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

// Regularized lower incomplete gamma P(s, z): series below s + 1, Lentz continued fraction above.
inline double regularized_gamma_p(double s, double z) {
  if (z <= 0.0) return 0.0;
  const double log_front = s * std::log(z) - z - std::lgamma(s);
  if (z < s + 1.0) {
    double term = 1.0 / s;
    double sum = term;
    for (int k = 1; k < 10000 && std::abs(term) > 1e-17 * std::abs(sum); ++k) {
      term *= z / (s + k);
      sum += term;
    }
    return sum * std::exp(log_front);
  }
  const double tiny = 1e-300;
  double b = z + 1.0 - s;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int k = 1; k < 10000; ++k) {
    const double an = -k * (k - s);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < 1e-16) break;
  }
  return 1.0 - std::exp(log_front) * h;
}

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, RngStream& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng.normal();
  return m;
}

// A A' + eps I with a random spread of eigenvalue scales.
inline Matrix random_spd(Eigen::Index dim, RngStream& rng) {
  const Matrix a = random_matrix(dim, dim, rng);
  Matrix s = a * a.transpose();
  s.diagonal().array() += 0.1 + rng.uniform();
  return symmetrize(s);
}

inline std::vector<int> random_labels(std::size_t n, int G, RngStream& rng) {
  std::vector<int> z(n);
  for (auto& v : z) v = 1 + static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(G));
  return z;
}

// Stochastic vector with every entry bounded away from zero.
inline Vector random_simplex(int G, RngStream& rng) {
  return sample_dirichlet(Vector::Constant(G, 3.0), rng);
}

// A valid state of the requested shape with data-independent random content.
inline ModelState random_state(int S, int T, int R, int L, int G, RngStream& rng) {
  ModelState s;
  s.loadings.B = Matrix::Zero(R, L);
  for (int r = 0; r < R; ++r) {
    for (int l = 0; l < std::min(r, L); ++l) s.loadings.B(r, l) = rng.normal();
    if (r < L) s.loadings.B(r, r) = 1.0;
  }
  s.loadings.tau2 = Vector::Constant(L, 1.0) + Vector::Constant(L, rng.uniform());
  s.uniqueness.sigma2 = Vector::Constant(R, 0.5) + Vector::Constant(R, rng.uniform());
  for (int g = 0; g < G; ++g) {
    s.clusters.mu.push_back(2.0 * random_matrix(L, 1, rng));
    if (g == 0) {
      Matrix d = Matrix::Zero(L, L);
      for (int l = 0; l < L; ++l) d(l, l) = 0.5 + rng.uniform();
      s.clusters.omega.push_back(d);
    } else {
      s.clusters.omega.push_back(random_spd(L, rng));
    }
  }
  s.markov.p = random_simplex(G, rng);
  s.markov.Q = Matrix(G, G);
  for (int j = 0; j < G; ++j) s.markov.Q.row(j) = random_simplex(G, rng).transpose();
  s.latent.S = S;
  s.latent.T = T;
  s.latent.X = random_matrix(L, static_cast<Eigen::Index>(S) * T, rng);
  s.latent.Z = random_labels(static_cast<std::size_t>(S) * T, G, rng);
  return s;
}

inline Dataset dataset_from(const Matrix& y, int S, int T) {
  Dataset d;
  d.S = S;
  d.T = T;
  d.R = static_cast<int>(y.rows());
  d.y = y;
  for (int i = 0; i < S; ++i) d.subject_ids.push_back("s" + std::to_string(i + 1));
  for (int r = 0; r < d.R; ++r) d.variable_names.push_back("v" + std::to_string(r + 1));
  for (int t = 0; t < T; ++t) d.times.push_back(t + 1);
  return d;
}

}  // namespace bdcfm::testkit
