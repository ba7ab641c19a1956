#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <functional>
#include <mutex>
#include <numbers>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "bdcfm/errors.hpp"
#include "bdcfm/model.hpp"
#include "bdcfm/numkit/distributions.hpp"
#include "bdcfm/numkit/linalg.hpp"
#include "bdcfm/numkit/rng.hpp"

namespace bdcfm {

struct SamplerConfig {
  int total_iterations = 50000;
  int burn_in = 10000;
  int thin = 10;
  std::uint64_t seed = 1;
  bool parallel_subjects = false;
  /// Multiply the t = 1 assignment weight by p_g. Off reproduces the published
  /// conditional, which conditions only on Z_{i2}.
  bool include_initial_prob_in_z1 = false;

  int stored_iterations() const noexcept { return (total_iterations - burn_in) / thin; }
};

inline void validate_sampler_config(const SamplerConfig& c) {
  if (c.total_iterations < 1 || c.burn_in < 0 || c.burn_in >= c.total_iterations || c.thin < 1) {
    fail(ErrorCode::InvalidParameter,
         "sampler config requires 0 <= burn-in < total iterations and thin >= 1");
  }
}

/// Identifies the random streams of one sweep. Per-subject updates draw from
/// (kind, iteration, subject) substreams, so results do not depend on thread scheduling.
struct DrawContext {
  std::uint64_t seed = 1;
  std::uint64_t iteration = 0;
  bool parallel = false;
  bool include_initial_prob_in_z1 = false;

  RngStream global(int update_slot) const {
    return {seed, make_stream_id(StreamKind::Global, iteration, static_cast<std::uint64_t>(update_slot))};
  }
  RngStream subject(StreamKind kind, int subject_index) const {
    return {seed, make_stream_id(kind, iteration, static_cast<std::uint64_t>(subject_index))};
  }
};

struct GaussianConditional {
  Vector mean;
  Matrix cov;
};

struct InverseGammaParams {
  double shape = 0.0;
  double scale = 0.0;
};

struct InverseWishartParams {
  double dof = 0.0;
  Matrix scale;
};

namespace detail {

template <typename Fn>
void for_each_subject(int subjects, bool parallel, Fn&& fn) {
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  if (!parallel || hw == 1 || subjects < 2) {
    for (int i = 0; i < subjects; ++i) fn(i);
    return;
  }
  const int workers = static_cast<int>(std::min<unsigned>(hw, static_cast<unsigned>(subjects)));
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (int i = w; i < subjects; i += workers) fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

inline Matrix inverse_of(const Matrix& spd) { return SpdMatrix(symmetrize(spd)).inverse(); }

// Σ_{Z_it = g} x_it and member count.
inline void cluster_sums(const LatentState& lat, int cluster, Vector& sum, int& count) {
  sum.setZero(lat.X.rows());
  count = 0;
  for (std::size_t k = 0; k < lat.Z.size(); ++k) {
    if (lat.Z[k] == cluster) {
      sum += lat.X.col(static_cast<Eigen::Index>(k));
      ++count;
    }
  }
}

inline Matrix cluster_scatter(const LatentState& lat, int cluster, const Vector& center) {
  const Eigen::Index L = lat.X.rows();
  Matrix scatter = Matrix::Zero(L, L);
  for (std::size_t k = 0; k < lat.Z.size(); ++k) {
    if (lat.Z[k] == cluster) {
      const Vector d = lat.X.col(static_cast<Eigen::Index>(k)) - center;
      scatter.noalias() += d * d.transpose();
    }
  }
  return symmetrize(scatter);
}

}  // namespace detail

// ---------------------------------------------------------------------------------------
// Closed-form full conditionals

/// x_it | Z_it = g: C = (B'V^-1 B + Ω_g^-1)^-1, m = C (B'V^-1 y + Ω_g^-1 μ_g).
inline GaussianConditional factor_conditional(const Matrix& B, const Vector& sigma2,
                                              const Matrix& omega, const Vector& mu,
                                              const Vector& y) {
  const Matrix bt_vinv = B.transpose() * sigma2.cwiseInverse().asDiagonal();
  const Matrix omega_inv = detail::inverse_of(omega);
  const Matrix cov = detail::inverse_of(bt_vinv * B + omega_inv);
  return {cov * (bt_vinv * y + omega_inv * mu), cov};
}

/// μ_g given the cluster-g members (cluster is 1-based).
inline GaussianConditional cluster_mean_conditional(const ModelState& s, const PriorSpec& prior,
                                                    int cluster) {
  Vector sum;
  int count = 0;
  detail::cluster_sums(s.latent, cluster, sum, count);
  const std::size_t g = static_cast<std::size_t>(cluster - 1);
  const Matrix prior_prec = detail::inverse_of(prior.C_mu[g]);
  const Matrix omega_inv = detail::inverse_of(s.clusters.omega[g]);
  const Matrix cov = detail::inverse_of(prior_prec + static_cast<double>(count) * omega_inv);
  return {cov * (prior_prec * prior.m_mu[g] + omega_inv * sum), cov};
}

/// One IG per diagonal entry of Ω_1.
inline std::vector<InverseGammaParams> omega1_conditional(const ModelState& s,
                                                          const PriorSpec& prior) {
  const int L = s.L();
  const Vector& mu1 = s.clusters.mu[0];
  Vector ss = Vector::Zero(L);
  int count = 0;
  for (std::size_t k = 0; k < s.latent.Z.size(); ++k) {
    if (s.latent.Z[k] == 1) {
      ss += (s.latent.X.col(static_cast<Eigen::Index>(k)) - mu1).cwiseAbs2();
      ++count;
    }
  }
  std::vector<InverseGammaParams> out(static_cast<std::size_t>(L));
  for (int l = 0; l < L; ++l) {
    const double n_star = prior.n_omega(l) + count;
    out[static_cast<std::size_t>(l)] = {0.5 * n_star,
                                        0.5 * (prior.n_omega(l) * prior.s2_omega(l) + ss(l))};
  }
  return out;
}

/// Ω_g for g >= 2 (1-based cluster).
inline InverseWishartParams omega_conditional(const ModelState& s, const PriorSpec& prior,
                                              int cluster) {
  Vector sum;
  int count = 0;
  detail::cluster_sums(s.latent, cluster, sum, count);
  const Matrix scatter =
      detail::cluster_scatter(s.latent, cluster, s.clusters.mu[static_cast<std::size_t>(cluster - 1)]);
  return {prior.n_Omega + count, symmetrize(prior.omega_scale(cluster) + scatter)};
}

/// Sufficient statistics for the loadings rows: Σ x x' (L x L) and Σ x y' (L x R).
struct LoadingsStats {
  Matrix xx;
  Matrix xy;
};

inline LoadingsStats loadings_stats(const Dataset& data, const LatentState& lat) {
  return {symmetrize(lat.X * lat.X.transpose()), lat.X * data.y.transpose()};
}

/// Free entries of row r (1-based, r >= 2): the first r - 1 when r <= L, all L when r > L.
inline GaussianConditional loadings_row_conditional(const LoadingsStats& st, const Vector& tau2,
                                                    double sigma2_r, int row, int L) {
  if (row < 2) fail(ErrorCode::InvalidParameter, "loadings row 1 is fixed");
  const int r = row - 1;
  const int free = std::min(r, L);
  Matrix prec = st.xx.topLeftCorner(free, free) / sigma2_r;
  prec.diagonal() += tau2.head(free).cwiseInverse();
  Vector rhs = st.xy.col(r).head(free);
  if (row <= L) rhs -= st.xx.col(r).head(free);  // residual y_r - x_r
  const Matrix cov = detail::inverse_of(prec);
  return {cov * (rhs / sigma2_r), cov};
}

inline GaussianConditional loadings_row_conditional(const Dataset& data, const ModelState& s,
                                                    const PriorSpec&, int row) {
  return loadings_row_conditional(loadings_stats(data, s.latent), s.loadings.tau2,
                                  s.uniqueness.sigma2(row - 1), row, s.L());
}

/// σ²_r (1-based r) given the current loadings and factors.
inline InverseGammaParams uniqueness_conditional(const Dataset& data, const ModelState& s,
                                                 const PriorSpec& prior, int row) {
  const Eigen::Index r = row - 1;
  const double ss = (data.y.row(r) - s.loadings.B.row(r) * s.latent.X).squaredNorm();
  const double n_obs = static_cast<double>(data.observations());
  return {0.5 * (prior.n_sigma + n_obs), 0.5 * (prior.n_sigma * prior.s2_sigma + ss)};
}

/// τ²_l (1-based l); the free entries are rows l+1..R of column l.
inline InverseGammaParams tau_conditional(const ModelState& s, const PriorSpec& prior, int factor) {
  const int R = s.R();
  const Eigen::Index l = factor - 1;
  const double ss = s.loadings.B.col(l).tail(R - factor).squaredNorm();
  return {0.5 * (prior.n_tau + R - factor), 0.5 * (prior.n_tau * prior.s2_tau + ss)};
}

inline Vector initial_prob_conditional(const ModelState& s, const PriorSpec& prior) {
  Vector a = prior.alpha;
  for (int i = 0; i < s.S(); ++i) a(s.latent.z(i, 0) - 1) += 1.0;
  return a;
}

/// Row j holds the Dirichlet parameters of q_j.
inline Matrix transition_conditional(const ModelState& s, const PriorSpec& prior) {
  const SweepStats st = compute_sweep_stats(s.latent, s.G());
  return prior.alpha_rows + st.transitions.cast<double>();
}

struct ClusterDensityCache {
  std::vector<SpdMatrix> omega;
  std::vector<double> log_norm;  // -0.5 log|Ω_g| - 0.5 L log 2π

  explicit ClusterDensityCache(const ClusterParams& c) {
    const double L = c.mu.empty() ? 0.0 : static_cast<double>(c.mu[0].size());
    for (const auto& om : c.omega) {
      omega.emplace_back(om);
      log_norm.push_back(-0.5 * omega.back().log_determinant() -
                         0.5 * L * std::log(2.0 * std::numbers::pi));
    }
  }

  double log_density(int g, const Vector& x, const Vector& mu) const {
    const Vector z = omega[static_cast<std::size_t>(g)].cholesky_factor().triangularView<Eigen::Lower>().solve(x - mu);
    return log_norm[static_cast<std::size_t>(g)] - 0.5 * z.squaredNorm();
  }
};

/// Normalized P(Z_it = g | rest) for g = 1..G, using the neighbours currently in the state.
inline Vector assignment_conditional(const ModelState& s, const ClusterDensityCache& cache,
                                     int subject, int time, bool include_initial_prob) {
  const int G = s.G();
  const int T = s.T();
  const Vector x = s.latent.x(subject, time);
  std::vector<double> logw(static_cast<std::size_t>(G));
  for (int g = 0; g < G; ++g) {
    double lw = cache.log_density(g, x, s.clusters.mu[static_cast<std::size_t>(g)]);
    if (time > 0) lw += std::log(s.markov.Q(s.latent.z(subject, time - 1) - 1, g));
    if (time + 1 < T) lw += std::log(s.markov.Q(g, s.latent.z(subject, time + 1) - 1));
    if (time == 0 && include_initial_prob) lw += std::log(s.markov.p(g));
    logw[static_cast<std::size_t>(g)] = lw;
  }
  normalize_log_weights(logw);
  return Eigen::Map<const Vector>(logw.data(), G);
}

inline Vector assignment_conditional(const ModelState& s, int subject, int time,
                                     bool include_initial_prob) {
  return assignment_conditional(s, ClusterDensityCache(s.clusters), subject, time,
                                include_initial_prob);
}

// ---------------------------------------------------------------------------------------
// Updates. Each returns the new value of one block and leaves the state untouched.

/// One Cholesky of the precision per cluster; C_it depends on (i, t) only through Z_it.
inline Matrix update_factors(const Dataset& data, const PriorSpec&, const ModelState& s,
                             const DrawContext& ctx) {
  const int G = s.G();
  const Matrix& B = s.loadings.B;
  const Matrix bt_vinv = B.transpose() * s.uniqueness.sigma2.cwiseInverse().asDiagonal();
  const Matrix gram = bt_vinv * B;
  std::vector<Matrix> precision_lower;
  std::vector<Vector> prior_shift;
  for (int g = 0; g < G; ++g) {
    const Matrix omega_inv = detail::inverse_of(s.clusters.omega[static_cast<std::size_t>(g)]);
    precision_lower.push_back(cholesky(symmetrize(gram + omega_inv)));
    prior_shift.push_back(omega_inv * s.clusters.mu[static_cast<std::size_t>(g)]);
  }
  const Matrix data_shift = bt_vinv * data.y;
  Matrix X(s.L(), data.observations());
  detail::for_each_subject(data.S, ctx.parallel, [&](int i) {
    RngStream rng = ctx.subject(StreamKind::Factors, i);
    for (int t = 0; t < data.T; ++t) {
      const Eigen::Index k = data.obs_index(i, t);
      const auto g = static_cast<std::size_t>(s.latent.Z[static_cast<std::size_t>(k)] - 1);
      X.col(k) = sample_mvn_canonical(data_shift.col(k) + prior_shift[g], precision_lower[g], rng);
    }
  });
  return X;
}

inline std::vector<Vector> update_cluster_means(const Dataset&, const PriorSpec& prior,
                                                const ModelState& s, const DrawContext& ctx) {
  RngStream rng = ctx.global(1);
  std::vector<Vector> mu;
  for (int g = 1; g <= s.G(); ++g) {
    const auto cond = cluster_mean_conditional(s, prior, g);
    mu.push_back(sample_mvn(cond.mean, SpdMatrix(cond.cov), rng));
  }
  return mu;
}

inline Matrix update_omega1(const Dataset&, const PriorSpec& prior, const ModelState& s,
                            const DrawContext& ctx) {
  RngStream rng = ctx.global(2);
  const auto cond = omega1_conditional(s, prior);
  Matrix omega = Matrix::Zero(s.L(), s.L());
  for (int l = 0; l < s.L(); ++l) {
    const auto& c = cond[static_cast<std::size_t>(l)];
    omega(l, l) = sample_inverse_gamma(c.shape, c.scale, rng);
  }
  return omega;
}

/// New Ω_2..Ω_G (entry g - 2 is cluster g).
inline std::vector<Matrix> update_omega_g(const Dataset&, const PriorSpec& prior,
                                          const ModelState& s, const DrawContext& ctx) {
  RngStream rng = ctx.global(3);
  std::vector<Matrix> out;
  for (int g = 2; g <= s.G(); ++g) {
    const auto cond = omega_conditional(s, prior, g);
    out.push_back(sample_inverse_wishart(cond.dof, SpdMatrix(cond.scale), rng).matrix());
  }
  return out;
}

inline Matrix update_loadings(const Dataset& data, const PriorSpec&, const ModelState& s,
                              const DrawContext& ctx) {
  RngStream rng = ctx.global(4);
  const int L = s.L();
  const LoadingsStats st = loadings_stats(data, s.latent);
  Matrix B = s.loadings.B;
  for (int row = 2; row <= s.R(); ++row) {
    const auto cond =
        loadings_row_conditional(st, s.loadings.tau2, s.uniqueness.sigma2(row - 1), row, L);
    const Vector draw = sample_mvn(cond.mean, SpdMatrix(cond.cov), rng);
    B.row(row - 1).head(draw.size()) = draw.transpose();
  }
  return B;
}

inline Vector update_uniquenesses(const Dataset& data, const PriorSpec& prior,
                                  const ModelState& s, const DrawContext& ctx) {
  RngStream rng = ctx.global(5);
  const Matrix resid = data.y - s.loadings.B * s.latent.X;
  const double n_obs = static_cast<double>(data.observations());
  Vector sigma2(s.R());
  for (int r = 0; r < s.R(); ++r) {
    sigma2(r) = sample_inverse_gamma(0.5 * (prior.n_sigma + n_obs),
                                     0.5 * (prior.n_sigma * prior.s2_sigma + resid.row(r).squaredNorm()),
                                     rng);
  }
  return sigma2;
}

inline Vector update_tau(const Dataset&, const PriorSpec& prior, const ModelState& s,
                         const DrawContext& ctx) {
  RngStream rng = ctx.global(6);
  Vector tau2(s.L());
  for (int l = 1; l <= s.L(); ++l) {
    const auto c = tau_conditional(s, prior, l);
    tau2(l - 1) = sample_inverse_gamma(c.shape, c.scale, rng);
  }
  return tau2;
}

inline Vector update_initial_probs(const Dataset&, const PriorSpec& prior, const ModelState& s,
                                   const DrawContext& ctx) {
  RngStream rng = ctx.global(7);
  return sample_dirichlet(initial_prob_conditional(s, prior), rng);
}

inline Matrix update_transition_matrix(const Dataset&, const PriorSpec& prior,
                                       const ModelState& s, const DrawContext& ctx) {
  RngStream rng = ctx.global(8);
  const Matrix a = transition_conditional(s, prior);
  Matrix Q(s.G(), s.G());
  for (int j = 0; j < s.G(); ++j) {
    const Vector row = a.row(j).transpose();
    Q.row(j) = sample_dirichlet(row, rng).transpose();
  }
  return Q;
}

/// Single-site updates sweeping t = 1..T within each subject; Z_{i,t-1} is already the new value.
inline std::vector<int> update_assignments(const Dataset&, const PriorSpec&, const ModelState& s,
                                           const DrawContext& ctx) {
  const ClusterDensityCache cache(s.clusters);
  std::vector<int> Z = s.latent.Z;
  const int G = s.G();
  const int T = s.T();
  detail::for_each_subject(s.S(), ctx.parallel, [&](int i) {
    RngStream rng = ctx.subject(StreamKind::Assignments, i);
    std::vector<double> logw(static_cast<std::size_t>(G));
    const std::size_t base = static_cast<std::size_t>(i) * T;
    for (int t = 0; t < T; ++t) {
      const Vector x = s.latent.X.col(static_cast<Eigen::Index>(base + t));
      for (int g = 0; g < G; ++g) {
        double lw = cache.log_density(g, x, s.clusters.mu[static_cast<std::size_t>(g)]);
        if (t > 0) lw += std::log(s.markov.Q(Z[base + t - 1] - 1, g));
        if (t + 1 < T) lw += std::log(s.markov.Q(g, Z[base + t + 1] - 1));
        if (t == 0 && ctx.include_initial_prob_in_z1) lw += std::log(s.markov.p(g));
        logw[static_cast<std::size_t>(g)] = lw;
      }
      normalize_log_weights(logw);
      Z[base + t] = sample_categorical(logw, rng);
    }
  });
  return Z;
}

// ---------------------------------------------------------------------------------------
// Sweep and chain driver

using UpdateObserver = std::function<void(std::string_view update, const ModelState&)>;

/// One Gibbs sweep in the order x, μ, Ω_1, Ω_g, B, σ², τ², p, Q, Z.
inline void sweep(const Dataset& data, const PriorSpec& prior, ModelState& s,
                  const DrawContext& ctx, const UpdateObserver& observe = {}) {
  auto done = [&](std::string_view name) {
    if (observe) observe(name, s);
  };
  s.latent.X = update_factors(data, prior, s, ctx);
  done("factors");
  s.clusters.mu = update_cluster_means(data, prior, s, ctx);
  done("cluster_means");
  s.clusters.omega[0] = update_omega1(data, prior, s, ctx);
  done("omega1");
  auto omegas = update_omega_g(data, prior, s, ctx);
  for (std::size_t k = 0; k < omegas.size(); ++k) s.clusters.omega[k + 1] = std::move(omegas[k]);
  done("omega_g");
  s.loadings.B = update_loadings(data, prior, s, ctx);
  done("loadings");
  s.uniqueness.sigma2 = update_uniquenesses(data, prior, s, ctx);
  done("uniquenesses");
  s.loadings.tau2 = update_tau(data, prior, s, ctx);
  done("tau");
  s.markov.p = update_initial_probs(data, prior, s, ctx);
  done("initial_probs");
  s.markov.Q = update_transition_matrix(data, prior, s, ctx);
  done("transition_matrix");
  s.latent.Z = update_assignments(data, prior, s, ctx);
  done("assignments");
}

struct RunHooks {
  UpdateObserver on_update;
  /// Called with every retained state (after thinning).
  std::function<void(int iteration, const ModelState&)> on_store;
  /// When set, retained draws are handed over every `flush_every` rows (and once at the end)
  /// and then dropped from memory.
  std::function<void(const std::vector<DrawBlock>& chunk, const std::vector<int>& iterations)>
      on_flush;
  int flush_every = 1000;
};

inline void check_fit_inputs(const Dataset& data, const PriorSpec& prior, const ModelState& s) {
  validate_dataset(data);
  validate_priors(prior);
  const auto violations = validate_state(s);
  if (!violations.empty()) {
    fail(ErrorCode::InvalidParameter, "initial state violates " + violations.front().invariant +
                                          " at " + violations.front().location);
  }
  if (s.R() != data.R || s.S() != data.S || s.T() != data.T || prior.G() != s.G() ||
      prior.L() != s.L()) {
    fail(ErrorCode::DimensionMismatch, "state, priors and dataset dimensions disagree");
  }
}

inline ChainOutput run_gibbs(const Dataset& data, const PriorSpec& prior, ModelState state,
                             const SamplerConfig& config, const RunHooks& hooks = {}) {
  validate_sampler_config(config);
  check_fit_inputs(data, prior, state);
  const auto start = std::chrono::steady_clock::now();

  ChainOutput out;
  out.S = data.S;
  out.T = data.T;
  out.R = data.R;
  out.L = state.L();
  out.G = state.G();
  out.blocks = make_draw_blocks(out.R, out.L, out.G);
  out.meta = {config.seed, config.total_iterations, config.burn_in, config.thin,
              config.include_initial_prob_in_z1, 0.0};
  Eigen::MatrixXi z_counts = Eigen::MatrixXi::Zero(data.observations(), out.G);
  std::vector<int> pending_iterations;

  auto flush = [&] {
    if (!hooks.on_flush || pending_iterations.empty()) return;
    hooks.on_flush(out.blocks, pending_iterations);
    for (auto& b : out.blocks) b.values.clear();
    pending_iterations.clear();
  };

  for (int it = 1; it <= config.total_iterations; ++it) {
    const DrawContext ctx{config.seed, static_cast<std::uint64_t>(it), config.parallel_subjects,
                          config.include_initial_prob_in_z1};
    try {
      sweep(data, prior, state, ctx, hooks.on_update);
    } catch (const Error& e) {
      throw Error(e.code(), "iteration " + std::to_string(it) + ": " + e.detail());
    }
    if (it <= config.burn_in || (it - config.burn_in) % config.thin != 0) continue;
    append_draw(out.blocks, state);
    ++out.stored_iterations;
    if (hooks.on_flush) {
      pending_iterations.push_back(it);
    } else {
      out.iterations.push_back(it);
    }
    for (std::size_t k = 0; k < state.latent.Z.size(); ++k) {
      z_counts(static_cast<Eigen::Index>(k), state.latent.Z[k] - 1) += 1;
    }
    if (hooks.on_store) hooks.on_store(it, state);
    if (hooks.on_flush && static_cast<int>(pending_iterations.size()) >= hooks.flush_every) flush();
  }
  flush();

  out.z_prob = z_counts.cast<double>() / static_cast<double>(std::max(out.stored_iterations, 1));
  out.z_mode = modal_labels(out.z_prob);
  out.meta.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

}  // namespace bdcfm
