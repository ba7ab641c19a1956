#pragma once

#include <optional>
#include <string>
#include <vector>

#include "bdcfm/errors.hpp"
#include "bdcfm/model.hpp"
#include "bdcfm/numkit/distributions.hpp"
#include "bdcfm/numkit/rng.hpp"

namespace bdcfm {

struct SimConfig {
  int S = 200;
  int T = 5;
  int R = 20;
  int G = 4;
  int L = 3;
  Vector p;
  Matrix Q;
  std::vector<Vector> mu;
  std::vector<Matrix> omega;
  /// Explicit R x L loadings; otherwise free entries are drawn i.i.d. N(0, 1) from the seed.
  std::optional<Matrix> loadings;
  /// Explicit uniquenesses; otherwise every variable gets `constant_uniqueness`.
  std::optional<Vector> uniquenesses;
  double constant_uniqueness = 1.0;
  std::uint64_t seed = 1;
};

/// Ground truth behind a simulated dataset.
struct SimTruth {
  ModelState state;  // B, σ², μ, Ω, p, Q, X, Z as generated; τ² holds the empirical column scales
};

/// The four-cluster, three-factor design with 200 subjects, 20 variables and 5 times.
inline SimConfig paper_simulation_config(std::uint64_t seed = 1) {
  SimConfig c;
  c.seed = seed;
  c.p = Vector(4);
  c.p << 0.45, 0.26, 0.16, 0.13;
  c.Q = Matrix(4, 4);
  c.Q << 0.75, 0.15, 0.10, 0.00,
         0.20, 0.55, 0.15, 0.10,
         0.25, 0.15, 0.50, 0.10,
         0.10, 0.15, 0.20, 0.55;
  auto vec3 = [](double a, double b, double d) {
    Vector v(3);
    v << a, b, d;
    return v;
  };
  c.mu = {vec3(7, 4, 5), vec3(-7, 3, -3), vec3(6, -3, -2), vec3(-6, -4, 3)};
  auto equicorrelated = [](double var, double cov) {
    Matrix m = Matrix::Constant(3, 3, cov);
    m.diagonal().setConstant(var);
    return m;
  };
  Matrix omega1 = Matrix::Zero(3, 3);
  omega1.diagonal() << 1.9, 1.1, 1.3;
  c.omega = {omega1, equicorrelated(2.0, 0.4), equicorrelated(3.0, 0.6), equicorrelated(4.0, 1.0)};
  return c;
}

inline void validate_sim_config(const SimConfig& c) {
  auto bad = [](const std::string& what) { fail(ErrorCode::InvalidParameter, "simulation: " + what); };
  if (c.S < 1 || c.T < 1 || c.G < 1 || c.L < 1 || c.R < c.L) bad("need S, T, G, L >= 1 and R >= L");
  if (c.p.size() != c.G || c.Q.rows() != c.G || c.Q.cols() != c.G) bad("p and Q must match G");
  if ((c.p.array() < 0.0).any() || std::abs(c.p.sum() - 1.0) > 1e-12) bad("p is not a probability vector");
  for (int j = 0; j < c.G; ++j) {
    if ((c.Q.row(j).array() < 0.0).any() || std::abs(c.Q.row(j).sum() - 1.0) > 1e-12) {
      bad("Q row " + std::to_string(j + 1) + " is not a probability vector");
    }
  }
  if (static_cast<int>(c.mu.size()) != c.G || static_cast<int>(c.omega.size()) != c.G) {
    bad("need one mean and covariance per cluster");
  }
  for (int g = 0; g < c.G; ++g) {
    if (c.mu[static_cast<std::size_t>(g)].size() != c.L) bad("cluster mean dimension differs from L");
    const Matrix& om = c.omega[static_cast<std::size_t>(g)];
    if (om.rows() != c.L || om.cols() != c.L) bad("cluster covariance dimension differs from L");
    SpdMatrix{om};
  }
  const Matrix& om1 = c.omega[0];
  if ((om1 - Matrix(om1.diagonal().asDiagonal())).cwiseAbs().maxCoeff() != 0.0) {
    bad("the first cluster covariance must be diagonal");
  }
  if (c.loadings && (c.loadings->rows() != c.R || c.loadings->cols() != c.L)) bad("loadings shape");
  if (c.uniquenesses && (c.uniquenesses->size() != c.R || (c.uniquenesses->array() <= 0.0).any())) {
    bad("uniquenesses must be R positive values");
  }
  if (!c.uniquenesses && !(c.constant_uniqueness > 0.0)) bad("uniqueness must be positive");
}

/// Z_i1 ~ p, Z_it ~ Q(Z_i,t-1, .), x_it ~ N(μ_g, Ω_g), y_it = B x_it + ε_it with ε ~ N(0, V).
inline std::pair<Dataset, SimTruth> simulate_dataset(const SimConfig& c) {
  validate_sim_config(c);
  RngStream global(c.seed, make_stream_id(StreamKind::Simulation, 0, 0));

  Matrix B = Matrix::Zero(c.R, c.L);
  if (c.loadings) {
    B = *c.loadings;
  } else {
    for (int r = 0; r < c.R; ++r)
      for (int l = 0; l < std::min(r, c.L); ++l) B(r, l) = global.normal();
  }
  for (int r = 0; r < c.L; ++r) {
    B(r, r) = 1.0;
    for (int l = r + 1; l < c.L; ++l) B(r, l) = 0.0;
  }
  const Vector sigma2 = c.uniquenesses ? *c.uniquenesses : Vector::Constant(c.R, c.constant_uniqueness);
  const Vector sd = sigma2.cwiseSqrt();

  std::vector<SpdMatrix> omega;
  for (const auto& om : c.omega) omega.emplace_back(om);

  Dataset data;
  data.S = c.S;
  data.T = c.T;
  data.R = c.R;
  data.y.resize(c.R, static_cast<Eigen::Index>(c.S) * c.T);
  for (int i = 0; i < c.S; ++i) data.subject_ids.push_back(std::to_string(i + 1));
  for (int r = 0; r < c.R; ++r) data.variable_names.push_back("y" + std::to_string(r + 1));
  for (int t = 0; t < c.T; ++t) data.times.push_back(t + 1);

  SimTruth truth;
  ModelState& s = truth.state;
  s.loadings.B = B;
  s.loadings.tau2 = Vector::Ones(c.L);
  for (int l = 0; l < c.L; ++l) {
    const Eigen::Index free = c.R - l - 1;
    if (free > 0) s.loadings.tau2(l) = std::max(B.col(l).tail(free).squaredNorm() / free, 1e-6);
  }
  s.uniqueness.sigma2 = sigma2;
  s.clusters.mu = c.mu;
  s.clusters.omega = c.omega;
  s.markov.p = c.p;
  s.markov.Q = c.Q;
  s.latent.S = c.S;
  s.latent.T = c.T;
  s.latent.X.resize(c.L, static_cast<Eigen::Index>(c.S) * c.T);
  s.latent.Z.assign(static_cast<std::size_t>(c.S) * c.T, 1);

  const std::vector<double> p(c.p.data(), c.p.data() + c.G);
  for (int i = 0; i < c.S; ++i) {
    RngStream rng(c.seed, make_stream_id(StreamKind::Simulation, 1, static_cast<std::uint64_t>(i)));
    int z = 0;
    for (int t = 0; t < c.T; ++t) {
      if (t == 0) {
        z = sample_categorical(p, rng);
      } else {
        const Vector row = c.Q.row(z - 1).transpose();
        z = sample_categorical(std::span<const double>(row.data(), row.size()), rng);
      }
      const auto g = static_cast<std::size_t>(z - 1);
      const Vector x = sample_mvn(c.mu[g], omega[g], rng);
      Vector y = B * x;
      for (int r = 0; r < c.R; ++r) y(r) += sd(r) * rng.normal();
      s.latent.z(i, t) = z;
      s.latent.x(i, t) = x;
      data.y.col(data.obs_index(i, t)) = y;
    }
  }
  return {std::move(data), std::move(truth)};
}

}  // namespace bdcfm
