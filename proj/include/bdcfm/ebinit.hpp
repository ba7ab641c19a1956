#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "bdcfm/errors.hpp"
#include "bdcfm/model.hpp"
#include "bdcfm/numkit/distributions.hpp"
#include "bdcfm/numkit/linalg.hpp"
#include "bdcfm/numkit/rng.hpp"

namespace bdcfm {

/// Intermediate quantities of the empirical-Bayes construction.
struct EbArtifacts {
  Matrix B_tilde;               // R x L unrotated loadings (data units)
  Matrix M;                     // L x L constraint transform
  Matrix B_hat;                 // R x L constrained loadings
  Vector V_hat;                 // R preliminary uniquenesses (data units)
  Vector V_hat_standardized;    // R, in (0, 1]
  Matrix X_hat;                 // (S*T) x L weighted least squares scores
  std::vector<int> labels;      // S*T k-means labels after size ordering, 1-based
  std::vector<int> cluster_order;  // cluster_order[g - 1] = raw k-means label of cluster g
  Matrix L1;                    // unit lower-triangular LDL factor of the cluster-1 covariance
  Vector D1;
  Matrix X_transformed;         // X_hat premultiplied (row-wise) by L1^-1
};

struct LoadingsFit {
  Matrix B_tilde;
  Vector V_hat;
  int iterations = 0;
};

struct FactorExtractionOptions {
  int max_iterations = 200;
  double tolerance = 1e-5;
};

/// Iterated principal-axis factoring of the correlation matrix of the stacked data, no rotation.
/// Returns loadings on the standardized scale; uniquenesses are 1 - communality in [0.005, 1].
inline LoadingsFit extract_loadings(const Matrix& y_stacked, int L,
                                    const FactorExtractionOptions& opt = {}) {
  const Eigen::Index n = y_stacked.rows();
  const Eigen::Index R = y_stacked.cols();
  if (L < 1 || L > R) fail(ErrorCode::InvalidParameter, "extract_loadings: need 1 <= L <= R");
  if (n <= R) fail(ErrorCode::InvalidParameter, "extract_loadings: need more observations than variables");
  if (!y_stacked.allFinite()) fail(ErrorCode::NonFiniteValue, "extract_loadings: non-finite data");

  const Eigen::RowVectorXd mean = y_stacked.colwise().mean();
  const Matrix centered = y_stacked.rowwise() - mean;
  Matrix corr = centered.transpose() * centered / static_cast<double>(n - 1);
  const Vector sd = corr.diagonal().cwiseSqrt();
  if ((sd.array() <= 0.0).any()) fail(ErrorCode::InvalidParameter, "extract_loadings: constant column");
  corr = symmetrize(sd.cwiseInverse().asDiagonal() * corr * sd.cwiseInverse().asDiagonal());

  constexpr double kMaxCommunality = 0.995;
  Vector h2(R);
  {
    const Matrix inv = corr.inverse();
    for (Eigen::Index r = 0; r < R; ++r) {
      const double smc = 1.0 - 1.0 / inv(r, r);
      h2(r) = std::isfinite(smc) ? std::clamp(smc, 0.0, kMaxCommunality) : kMaxCommunality;
    }
  }

  LoadingsFit fit;
  Matrix loadings(R, L);
  for (int it = 1; it <= opt.max_iterations; ++it) {
    Matrix reduced = corr;
    reduced.diagonal() = h2;
    Eigen::SelfAdjointEigenSolver<Matrix> eig(reduced);
    for (int k = 0; k < L; ++k) {
      const Eigen::Index col = R - 1 - k;  // eigenvalues ascend
      Vector v = eig.eigenvectors().col(col);
      if (v.sum() < 0.0) v = -v;
      loadings.col(k) = v * std::sqrt(std::max(eig.eigenvalues()(col), 0.0));
    }
    const Vector next = loadings.rowwise().squaredNorm().cwiseMin(kMaxCommunality);
    const double change = (next - h2).cwiseAbs().maxCoeff();
    h2 = next;
    fit.iterations = it;
    if (change < opt.tolerance) {
      fit.B_tilde = loadings;
      fit.V_hat = (Vector::Ones(R) - loadings.rowwise().squaredNorm()).cwiseMax(0.005).cwiseMin(1.0);
      return fit;
    }
  }
  fail(ErrorCode::ConvergenceFailure, "principal-axis factoring did not converge in " +
                                          std::to_string(opt.max_iterations) + " iterations");
}

struct ConstrainedLoadings {
  Matrix M;
  Matrix B_hat;
};

/// M = (top L x L block)^-1, so B_hat = B_tilde M has an exact identity top block.
inline ConstrainedLoadings constrain_loadings(const Matrix& B_tilde) {
  const Eigen::Index L = B_tilde.cols();
  if (B_tilde.rows() < L) fail(ErrorCode::DimensionMismatch, "constrain_loadings: need R >= L");
  const Matrix top = B_tilde.topRows(L);
  Eigen::JacobiSVD<Matrix> svd(top);
  const auto& sv = svd.singularValues();
  const double smallest = sv(L - 1);
  if (!(smallest > 0.0) || sv(0) / smallest > 1e8) {
    fail(ErrorCode::SingularTopBlock, "top block of the loadings is singular or ill-conditioned");
  }
  ConstrainedLoadings out{top.fullPivLu().inverse(), Matrix()};
  out.B_hat = B_tilde * out.M;
  out.B_hat.topRows(L).setIdentity();
  return out;
}

/// Row-wise weighted least squares scores (B'V^-1 B)^-1 B'V^-1 y. Output is (S*T) x L.
inline Matrix wls_scores(const Matrix& y_stacked, const Matrix& B_hat, const Vector& V_hat) {
  if (y_stacked.cols() != B_hat.rows() || V_hat.size() != B_hat.rows()) {
    fail(ErrorCode::DimensionMismatch, "wls_scores: dimensions disagree");
  }
  const Matrix weighted = B_hat.transpose() * V_hat.cwiseInverse().asDiagonal();
  const Matrix gram = symmetrize(weighted * B_hat);
  Eigen::JacobiSVD<Matrix> svd(gram);
  const auto& sv = svd.singularValues();
  if (!(sv(sv.size() - 1) > 0.0) || sv(0) / sv(sv.size() - 1) > 1e12) {
    fail(ErrorCode::SingularGram, "wls_scores: B'V^-1 B is singular");
  }
  const Matrix projector = gram.llt().solve(weighted);  // L x R
  return y_stacked * projector.transpose();
}

struct KMeansOptions {
  int restarts = 20;
  int max_iterations = 300;
  int max_attempts = 10;
  int min_cluster_size = 2;
};

namespace detail {

struct KMeansRun {
  std::vector<int> labels;  // 0-based
  double wcss = std::numeric_limits<double>::infinity();
};

inline KMeansRun kmeans_once(const Matrix& points, int G, int max_iterations, RngStream& rng) {
  const Eigen::Index n = points.rows();
  Matrix centers(G, points.cols());
  // k-means++ seeding
  centers.row(0) = points.row(static_cast<Eigen::Index>(rng.next_u64() % static_cast<std::uint64_t>(n)));
  Vector d2 = (points.rowwise() - centers.row(0)).rowwise().squaredNorm();
  for (int g = 1; g < G; ++g) {
    Eigen::Index chosen = 0;
    const double total = d2.sum();
    if (total > 0.0) {
      chosen = sample_categorical(std::span<const double>(d2.data(), d2.size()), rng) - 1;
    } else {
      chosen = static_cast<Eigen::Index>(rng.next_u64() % static_cast<std::uint64_t>(n));
    }
    centers.row(g) = points.row(chosen);
    d2 = d2.cwiseMin((points.rowwise() - centers.row(g)).rowwise().squaredNorm());
  }

  KMeansRun run;
  run.labels.assign(static_cast<std::size_t>(n), -1);
  for (int it = 0; it < max_iterations; ++it) {
    bool changed = false;
    for (Eigen::Index k = 0; k < n; ++k) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int g = 0; g < G; ++g) {
        const double d = (points.row(k) - centers.row(g)).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = g;
        }
      }
      if (run.labels[static_cast<std::size_t>(k)] != best) {
        run.labels[static_cast<std::size_t>(k)] = best;
        changed = true;
      }
    }
    Matrix sums = Matrix::Zero(G, points.cols());
    std::vector<int> counts(static_cast<std::size_t>(G), 0);
    for (Eigen::Index k = 0; k < n; ++k) {
      sums.row(run.labels[static_cast<std::size_t>(k)]) += points.row(k);
      counts[static_cast<std::size_t>(run.labels[static_cast<std::size_t>(k)])] += 1;
    }
    for (int g = 0; g < G; ++g) {
      if (counts[static_cast<std::size_t>(g)] > 0) centers.row(g) = sums.row(g) / counts[static_cast<std::size_t>(g)];
    }
    if (!changed) break;
  }
  run.wcss = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) {
    run.wcss += (points.row(k) - centers.row(run.labels[static_cast<std::size_t>(k)])).squaredNorm();
  }
  return run;
}

}  // namespace detail

struct KMeansResult {
  std::vector<int> labels;         // 1-based, label 1 is the largest cluster
  std::vector<int> cluster_order;  // cluster_order[g - 1] = raw label (1-based) before ordering
  double wcss = 0.0;
};

/// Best-of-restarts k-means, relabelled in decreasing order of cluster size
/// (ties broken by the smaller raw label).
inline KMeansResult kmeans_cluster(const Matrix& points, int G, RngStream& rng,
                                   const KMeansOptions& opt = {}) {
  const Eigen::Index n = points.rows();
  if (G < 1) fail(ErrorCode::InvalidParameter, "kmeans: G must be >= 1");
  if (n < G) fail(ErrorCode::InvalidParameter, "kmeans: fewer points than clusters");
  for (int attempt = 0; attempt < opt.max_attempts; ++attempt) {
    const std::uint64_t attempt_seed = rng.next_u64();
    detail::KMeansRun best;
    for (int restart = 0; restart < opt.restarts; ++restart) {
      RngStream sub(attempt_seed, make_stream_id(StreamKind::KMeans, static_cast<std::uint64_t>(attempt),
                                                 static_cast<std::uint64_t>(restart)));
      auto run = detail::kmeans_once(points, G, opt.max_iterations, sub);
      if (run.wcss < best.wcss) best = std::move(run);
    }
    std::vector<int> counts(static_cast<std::size_t>(G), 0);
    for (int lab : best.labels) counts[static_cast<std::size_t>(lab)] += 1;
    if (*std::min_element(counts.begin(), counts.end()) < std::min<Eigen::Index>(opt.min_cluster_size, n)) continue;

    std::vector<int> order(static_cast<std::size_t>(G));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return counts[static_cast<std::size_t>(a)] > counts[static_cast<std::size_t>(b)];
    });
    std::vector<int> rank(static_cast<std::size_t>(G));
    for (int g = 0; g < G; ++g) rank[static_cast<std::size_t>(order[static_cast<std::size_t>(g)])] = g + 1;

    KMeansResult out;
    out.wcss = best.wcss;
    for (int g : order) out.cluster_order.push_back(g + 1);
    out.labels.reserve(best.labels.size());
    for (int lab : best.labels) out.labels.push_back(rank[static_cast<std::size_t>(lab)]);
    return out;
  }
  fail(ErrorCode::EmptyCluster, "k-means left a cluster with fewer than " +
                                    std::to_string(opt.min_cluster_size) + " members after " +
                                    std::to_string(opt.max_attempts) + " attempts");
}

struct EbPriors {
  PriorSpec prior;
  Matrix L1;
  Vector D1;
  Matrix X_transformed;  // (S*T) x L
};

/// Cluster-specific priors from the scores and labels: the LDL factor of the cluster-1 sample
/// covariance maps scores to x L1^-T so cluster 1 becomes diagonal; each cluster's transformed
/// sample moments give m_g, C_g and S_Omega_g.
inline EbPriors build_priors(const Matrix& scores, const std::vector<int>& labels, int G) {
  const Eigen::Index L = scores.cols();
  if (static_cast<Eigen::Index>(labels.size()) != scores.rows()) {
    fail(ErrorCode::DimensionMismatch, "build_priors: one label per score row required");
  }
  std::vector<Vector> means(static_cast<std::size_t>(G), Vector::Zero(L));
  std::vector<Matrix> covs(static_cast<std::size_t>(G), Matrix::Zero(L, L));
  std::vector<int> counts(static_cast<std::size_t>(G), 0);
  for (Eigen::Index k = 0; k < scores.rows(); ++k) {
    const int g = labels[static_cast<std::size_t>(k)] - 1;
    if (g < 0 || g >= G) fail(ErrorCode::InvalidParameter, "build_priors: label out of range");
    means[static_cast<std::size_t>(g)] += scores.row(k).transpose();
    counts[static_cast<std::size_t>(g)] += 1;
  }
  for (int g = 0; g < G; ++g) {
    if (counts[static_cast<std::size_t>(g)] < 2) {
      fail(ErrorCode::EmptyCluster, "build_priors: cluster " + std::to_string(g + 1) +
                                        " has fewer than 2 members");
    }
    means[static_cast<std::size_t>(g)] /= counts[static_cast<std::size_t>(g)];
  }
  for (Eigen::Index k = 0; k < scores.rows(); ++k) {
    const auto g = static_cast<std::size_t>(labels[static_cast<std::size_t>(k)] - 1);
    const Vector d = scores.row(k).transpose() - means[g];
    covs[g].noalias() += d * d.transpose();
  }
  for (int g = 0; g < G; ++g) {
    covs[static_cast<std::size_t>(g)] = symmetrize(covs[static_cast<std::size_t>(g)] / (counts[static_cast<std::size_t>(g)] - 1));
  }

  EbPriors out;
  const LdlFactors f = ldl(covs[0]);
  out.L1 = f.unit_lower;
  out.D1 = f.diag;
  const Matrix L1_inv = f.unit_lower.triangularView<Eigen::UnitLower>().solve(Matrix::Identity(L, L));
  out.X_transformed = scores * L1_inv.transpose();

  out.prior = PriorSpec::defaults(G, static_cast<int>(L));
  out.prior.s2_omega = f.diag;
  for (int g = 0; g < G; ++g) {
    const auto gi = static_cast<std::size_t>(g);
    out.prior.m_mu[gi] = L1_inv * means[gi];
    Matrix c = symmetrize(L1_inv * covs[gi] * L1_inv.transpose());
    if (g == 0) c = f.diag.asDiagonal();
    SpdMatrix{c};
    out.prior.C_mu[gi] = c;
    if (g >= 1) out.prior.S_Omega[gi - 1] = c;
  }
  return out;
}

/// Starting state built from the empirical-Bayes artifacts.
inline ModelState initialize_state(const Dataset& data, const PriorSpec& prior,
                                   const EbArtifacts& eb) {
  const int L = static_cast<int>(eb.B_hat.cols());
  const int G = prior.G();
  ModelState s;
  s.loadings.B = eb.B_hat;
  s.loadings.B.topRows(L).triangularView<Eigen::StrictlyUpper>().setZero();
  s.loadings.B.topRows(L).diagonal().setOnes();
  s.loadings.tau2 = Vector::Constant(L, 0.1);
  for (int l = 0; l < L; ++l) {
    const Eigen::Index free = data.R - l - 1;
    if (free < 2) continue;
    const Vector col = s.loadings.B.col(l).tail(free);
    const double var = (col.array() - col.mean()).square().sum() / static_cast<double>(free - 1);
    s.loadings.tau2(l) = std::max(var, 0.1);
  }
  s.uniqueness.sigma2 = eb.V_hat;
  s.clusters.mu = prior.m_mu;
  s.clusters.omega = prior.C_mu;
  s.clusters.omega[0] = Matrix(prior.C_mu[0].diagonal().asDiagonal());

  s.latent.S = data.S;
  s.latent.T = data.T;
  s.latent.X = eb.X_transformed.transpose();
  s.latent.Z = eb.labels;

  const SweepStats st = compute_sweep_stats(s.latent, G);
  Vector p = prior.alpha + st.n_tg.row(0).transpose().cast<double>();
  s.markov.p = p / p.sum();
  Matrix Q = prior.alpha_rows + st.transitions.cast<double>();
  for (int j = 0; j < G; ++j) Q.row(j) /= Q.row(j).sum();
  s.markov.Q = Q;
  return s;
}

struct EbResult {
  PriorSpec prior;
  EbArtifacts artifacts;
  ModelState initial;
};

/// Full pipeline: factor extraction, constraint transform, scores, k-means, priors, initial state.
/// Loadings and uniquenesses are rescaled from the standardized fit back to data units.
inline EbResult empirical_bayes(const Dataset& data, int G, int L, RngStream& rng,
                                const KMeansOptions& kopt = {}) {
  validate_dataset(data);
  if (L < 1 || L > data.R) fail(ErrorCode::InvalidParameter, "need 1 <= L <= R");
  if (G < 1) fail(ErrorCode::InvalidParameter, "need G >= 1");
  const Matrix Y = data.stacked();
  const Eigen::RowVectorXd mean = Y.colwise().mean();
  const Vector sd = ((Y.rowwise() - mean).colwise().squaredNorm() /
                     static_cast<double>(Y.rows() - 1)).cwiseSqrt().transpose();

  EbResult res;
  EbArtifacts& eb = res.artifacts;
  const LoadingsFit fit = extract_loadings(Y, L);
  eb.B_tilde = sd.asDiagonal() * fit.B_tilde;
  eb.V_hat_standardized = fit.V_hat;
  eb.V_hat = sd.cwiseAbs2().cwiseProduct(fit.V_hat);
  auto constrained = constrain_loadings(eb.B_tilde);
  eb.M = std::move(constrained.M);
  eb.B_hat = std::move(constrained.B_hat);
  eb.X_hat = wls_scores(Y, eb.B_hat, eb.V_hat);

  KMeansResult km = kmeans_cluster(eb.X_hat, G, rng, kopt);
  eb.labels = std::move(km.labels);
  eb.cluster_order = std::move(km.cluster_order);

  EbPriors pri = build_priors(eb.X_hat, eb.labels, G);
  eb.L1 = std::move(pri.L1);
  eb.D1 = std::move(pri.D1);
  eb.X_transformed = std::move(pri.X_transformed);
  res.prior = std::move(pri.prior);
  res.initial = initialize_state(data, res.prior, eb);
  return res;
}

}  // namespace bdcfm
