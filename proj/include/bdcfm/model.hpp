#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "bdcfm/errors.hpp"
#include "bdcfm/numkit/linalg.hpp"

namespace bdcfm {

// Cluster labels are 1-based everywhere they leave the library (files, Z values, names).
// Observation (i, t) is stored in column i * T + t of the panel matrices.

/// Complete panel: S subjects x T times x R variables.
struct Dataset {
  int S = 0;
  int T = 0;
  int R = 0;
  Matrix y;  // R x (S*T)
  std::vector<std::string> subject_ids;
  std::vector<std::string> variable_names;
  std::vector<double> times;

  Eigen::Index obs_index(int subject, int time) const noexcept {
    return static_cast<Eigen::Index>(subject) * T + time;
  }
  auto observation(int subject, int time) const { return y.col(obs_index(subject, time)); }
  int observations() const noexcept { return S * T; }
  /// (S*T) x R, one observed vector per row.
  Matrix stacked() const { return y.transpose(); }
};

inline void validate_dataset(const Dataset& data) {
  if (data.S < 1 || data.T < 1 || data.R < 1) {
    fail(ErrorCode::DimensionMismatch, "dataset must have S, T, R >= 1");
  }
  if (data.y.rows() != data.R || data.y.cols() != static_cast<Eigen::Index>(data.S) * data.T) {
    fail(ErrorCode::DimensionMismatch, "dataset matrix shape does not match S, T, R");
  }
  if (!data.y.allFinite()) fail(ErrorCode::NonFiniteValue, "dataset contains non-finite values");
}

/// B is R x L lower-unitriangular in its top L x L block; free entries of column l have
/// prior variance tau2(l).
struct FactorLoadings {
  Matrix B;
  Vector tau2;
};

struct Uniquenesses {
  Vector sigma2;
};

/// mu[g] and omega[g] for g = 0..G-1 (cluster g+1). omega[0] is diagonal.
struct ClusterParams {
  std::vector<Vector> mu;
  std::vector<Matrix> omega;
  int G() const noexcept { return static_cast<int>(mu.size()); }
};

struct MarkovParams {
  Vector p;  // initial probabilities
  Matrix Q;  // Q(j, g) = P(Z_t = g + 1 | Z_{t-1} = j + 1)
};

struct LatentState {
  int S = 0;
  int T = 0;
  Matrix X;            // L x (S*T)
  std::vector<int> Z;  // S*T labels in 1..G

  int& z(int subject, int time) { return Z[static_cast<std::size_t>(subject) * T + time]; }
  int z(int subject, int time) const { return Z[static_cast<std::size_t>(subject) * T + time]; }
  auto x(int subject, int time) { return X.col(static_cast<Eigen::Index>(subject) * T + time); }
  auto x(int subject, int time) const {
    return X.col(static_cast<Eigen::Index>(subject) * T + time);
  }
};

/// One complete Gibbs configuration.
struct ModelState {
  FactorLoadings loadings;
  Uniquenesses uniqueness;
  ClusterParams clusters;
  MarkovParams markov;
  LatentState latent;

  int R() const noexcept { return static_cast<int>(loadings.B.rows()); }
  int L() const noexcept { return static_cast<int>(loadings.B.cols()); }
  int G() const noexcept { return clusters.G(); }
  int S() const noexcept { return latent.S; }
  int T() const noexcept { return latent.T; }
};

/// Hyperparameters. Inverse-gamma priors are IG(n/2, n s2 / 2).
struct PriorSpec {
  double n_tau = 1.0;
  double s2_tau = 1.0;
  double n_sigma = 2.2;
  double s2_sigma = 0.1 / 2.2;
  Vector n_omega;   // L
  Vector s2_omega;  // L
  double n_Omega = 0.0;
  std::vector<Matrix> S_Omega;  // entry g - 2 is the inverse-Wishart scale of cluster g >= 2
  std::vector<Vector> m_mu;     // G
  std::vector<Matrix> C_mu;     // G
  Vector alpha;                 // G
  Matrix alpha_rows;            // G x G

  int G() const noexcept { return static_cast<int>(m_mu.size()); }
  int L() const noexcept { return static_cast<int>(n_omega.size()); }
  const Matrix& omega_scale(int cluster) const {
    return S_Omega.at(static_cast<std::size_t>(cluster - 2));
  }

  /// Fixed defaults (n_tau = 1, n_tau s2_tau = 1, n_sigma = 2.2, n_sigma s2_sigma = 0.1,
  /// n_omega = 4, n_Omega = L + 2, alpha = 2) with unit cluster-level scales.
  static PriorSpec defaults(int G, int L) {
    PriorSpec p;
    p.n_omega = Vector::Constant(L, 4.0);
    p.s2_omega = Vector::Ones(L);
    p.n_Omega = L + 2.0;
    for (int g = 2; g <= G; ++g) p.S_Omega.push_back(Matrix::Identity(L, L));
    for (int g = 1; g <= G; ++g) {
      p.m_mu.push_back(Vector::Zero(L));
      p.C_mu.push_back(Matrix::Identity(L, L));
    }
    p.alpha = Vector::Constant(G, 2.0);
    p.alpha_rows = Matrix::Constant(G, G, 2.0);
    return p;
  }
};

inline void validate_priors(const PriorSpec& prior) {
  const int G = prior.G();
  const int L = prior.L();
  auto positive = [](double v) { return v > 0.0 && std::isfinite(v); };
  if (G < 1 || L < 1) fail(ErrorCode::InvalidParameter, "priors need G >= 1 and L >= 1");
  if (!positive(prior.n_tau) || !positive(prior.s2_tau) || !positive(prior.n_sigma) ||
      !positive(prior.s2_sigma) || !positive(prior.n_Omega)) {
    fail(ErrorCode::InvalidParameter, "prior counts and scales must be positive");
  }
  if (prior.s2_omega.size() != L || (prior.n_omega.array() <= 0.0).any() ||
      (prior.s2_omega.array() <= 0.0).any()) {
    fail(ErrorCode::InvalidParameter, "omega prior counts and scales must be positive");
  }
  if (static_cast<int>(prior.C_mu.size()) != G ||
      static_cast<int>(prior.S_Omega.size()) != G - 1 || prior.alpha.size() != G ||
      prior.alpha_rows.rows() != G || prior.alpha_rows.cols() != G) {
    fail(ErrorCode::DimensionMismatch, "prior block sizes inconsistent with G");
  }
  if ((prior.alpha.array() <= 0.0).any() || (prior.alpha_rows.array() <= 0.0).any()) {
    fail(ErrorCode::InvalidParameter, "Dirichlet parameters must be positive");
  }
  for (const auto& c : prior.C_mu) SpdMatrix{c};
  for (const auto& s : prior.S_Omega) SpdMatrix{s};
}

struct Violation {
  std::string invariant;
  std::string location;
};

namespace detail {
inline std::string idx(std::string_view name, int a) {
  return std::string(name) + "[" + std::to_string(a) + "]";
}
inline std::string idx(std::string_view name, int a, int b) {
  return std::string(name) + "[" + std::to_string(a) + "," + std::to_string(b) + "]";
}
}  // namespace detail

/// Reports every violated structural constraint; an empty result means the state is valid.
inline std::vector<Violation> validate_state(const ModelState& s, double tol = 1e-12) {
  std::vector<Violation> out;
  auto add = [&out](std::string inv, std::string loc) {
    out.push_back({std::move(inv), std::move(loc)});
  };
  const int R = s.R();
  const int L = s.L();
  const int G = s.G();
  const auto& B = s.loadings.B;
  if (L < 1 || R < L) add("dimensions", "B must be R x L with R >= L >= 1");
  for (int r = 0; r < std::min(R, L); ++r) {
    if (B(r, r) != 1.0) add("loadings diagonal", detail::idx("B", r + 1, r + 1));
    for (int l = r + 1; l < L; ++l) {
      if (B(r, l) != 0.0) add("loadings upper triangle", detail::idx("B", r + 1, l + 1));
    }
  }
  if (!B.allFinite()) add("finite", "B");
  if (s.loadings.tau2.size() != L) add("dimensions", "tau2");
  for (Eigen::Index l = 0; l < s.loadings.tau2.size(); ++l) {
    const double v = s.loadings.tau2(l);
    if (!(v > 0.0) || !std::isfinite(v)) add("tau2 positive", detail::idx("tau2", int(l) + 1));
  }
  if (s.uniqueness.sigma2.size() != R) add("dimensions", "sigma2");
  for (Eigen::Index r = 0; r < s.uniqueness.sigma2.size(); ++r) {
    const double v = s.uniqueness.sigma2(r);
    if (!(v > 0.0) || !std::isfinite(v)) add("sigma2 positive", detail::idx("sigma2", int(r) + 1));
  }
  if (G < 1 || static_cast<int>(s.clusters.omega.size()) != G) add("dimensions", "clusters");
  for (int g = 0; g < G && g < static_cast<int>(s.clusters.omega.size()); ++g) {
    const Matrix& om = s.clusters.omega[g];
    if (s.clusters.mu[g].size() != L || om.rows() != L || om.cols() != L) {
      add("dimensions", detail::idx("cluster", g + 1));
      continue;
    }
    if (!s.clusters.mu[g].allFinite()) add("finite", detail::idx("mu", g + 1));
    if (g == 0) {
      for (int a = 0; a < L; ++a) {
        if (!(om(a, a) > 0.0) || !std::isfinite(om(a, a))) {
          add("Omega1 positive diagonal", detail::idx("Omega1", a + 1, a + 1));
        }
        for (int b = 0; b < L; ++b) {
          if (a != b && om(a, b) != 0.0) add("Omega1 diagonality", detail::idx("Omega1", a + 1, b + 1));
        }
      }
    } else {
      Matrix lower;
      if (!is_symmetric(om) || !detail::try_cholesky(om, lower)) {
        add("Omega positive definite", detail::idx("Omega", g + 1));
      }
    }
  }
  const auto& p = s.markov.p;
  if (p.size() != G) {
    add("dimensions", "p");
  } else if ((p.array() < 0.0).any() || std::abs(p.sum() - 1.0) > tol) {
    add("initial probabilities simplex", "p");
  }
  const auto& Q = s.markov.Q;
  if (Q.rows() != G || Q.cols() != G) {
    add("dimensions", "Q");
  } else {
    for (int j = 0; j < G; ++j) {
      if ((Q.row(j).array() < 0.0).any() || std::abs(Q.row(j).sum() - 1.0) > tol) {
        add("transition row simplex", detail::idx("Q", j + 1));
      }
    }
  }
  const auto& lat = s.latent;
  if (lat.X.rows() != L || lat.X.cols() != static_cast<Eigen::Index>(lat.S) * lat.T ||
      lat.Z.size() != static_cast<std::size_t>(lat.S) * lat.T) {
    add("dimensions", "latent");
  } else {
    if (!lat.X.allFinite()) add("finite", "X");
    for (int i = 0; i < lat.S; ++i) {
      for (int t = 0; t < lat.T; ++t) {
        const int z = lat.z(i, t);
        if (z < 1 || z > G) add("assignment range", detail::idx("Z", i + 1, t + 1));
      }
    }
  }
  return out;
}

/// n_tg: T x G membership counts. transitions(j, g): number of (i, t >= 2) moving j -> g.
struct SweepStats {
  Eigen::MatrixXi n_tg;
  Eigen::MatrixXi transitions;
};

inline SweepStats compute_sweep_stats(const LatentState& latent, int G) {
  SweepStats st{Eigen::MatrixXi::Zero(latent.T, G), Eigen::MatrixXi::Zero(G, G)};
  for (int i = 0; i < latent.S; ++i) {
    for (int t = 0; t < latent.T; ++t) {
      const int g = latent.z(i, t) - 1;
      st.n_tg(t, g) += 1;
      if (t > 0) st.transitions(latent.z(i, t - 1) - 1, g) += 1;
    }
  }
  return st;
}

// ---------------------------------------------------------------------------------------
// Chain storage

/// Row-major table of stored draws for one parameter family.
struct DrawBlock {
  std::string name;
  std::vector<std::string> columns;
  std::vector<double> values;

  std::size_t cols() const noexcept { return columns.size(); }
  std::size_t rows() const noexcept { return columns.empty() ? 0 : values.size() / columns.size(); }
  double at(std::size_t row, std::size_t col) const { return values[row * cols() + col]; }
  std::vector<double> column(std::size_t col) const {
    std::vector<double> out(rows());
    for (std::size_t r = 0; r < out.size(); ++r) out[r] = at(r, col);
    return out;
  }
  std::ptrdiff_t find(std::string_view column_name) const {
    for (std::size_t c = 0; c < columns.size(); ++c) {
      if (columns[c] == column_name) return static_cast<std::ptrdiff_t>(c);
    }
    return -1;
  }
};

inline const std::vector<std::string>& draw_block_names() {
  static const std::vector<std::string> names{"B", "sigma2", "tau2", "mu", "Omega", "p", "Q"};
  return names;
}

/// Empty draw blocks with systematic 1-based column names (B[r,l], Omega[g,a,b] with a >= b, ...).
inline std::vector<DrawBlock> make_draw_blocks(int R, int L, int G) {
  std::vector<DrawBlock> blocks;
  for (const auto& name : draw_block_names()) blocks.push_back({name, {}, {}});
  for (int r = 1; r <= R; ++r)
    for (int l = 1; l <= L; ++l) blocks[0].columns.push_back(detail::idx("B", r, l));
  for (int r = 1; r <= R; ++r) blocks[1].columns.push_back(detail::idx("sigma2", r));
  for (int l = 1; l <= L; ++l) blocks[2].columns.push_back(detail::idx("tau2", l));
  for (int g = 1; g <= G; ++g)
    for (int l = 1; l <= L; ++l) blocks[3].columns.push_back(detail::idx("mu", g, l));
  for (int g = 1; g <= G; ++g)
    for (int a = 1; a <= L; ++a)
      for (int b = 1; b <= a; ++b)
        blocks[4].columns.push_back("Omega[" + std::to_string(g) + "," + std::to_string(a) + "," +
                                    std::to_string(b) + "]");
  for (int g = 1; g <= G; ++g) blocks[5].columns.push_back(detail::idx("p", g));
  for (int j = 1; j <= G; ++j)
    for (int g = 1; g <= G; ++g) blocks[6].columns.push_back(detail::idx("Q", j, g));
  return blocks;
}

inline void append_draw(std::vector<DrawBlock>& blocks, const ModelState& s) {
  const int R = s.R();
  const int L = s.L();
  const int G = s.G();
  auto& B = blocks[0].values;
  for (int r = 0; r < R; ++r)
    for (int l = 0; l < L; ++l) B.push_back(s.loadings.B(r, l));
  for (int r = 0; r < R; ++r) blocks[1].values.push_back(s.uniqueness.sigma2(r));
  for (int l = 0; l < L; ++l) blocks[2].values.push_back(s.loadings.tau2(l));
  for (int g = 0; g < G; ++g)
    for (int l = 0; l < L; ++l) blocks[3].values.push_back(s.clusters.mu[g](l));
  for (int g = 0; g < G; ++g)
    for (int a = 0; a < L; ++a)
      for (int b = 0; b <= a; ++b) blocks[4].values.push_back(s.clusters.omega[g](a, b));
  for (int g = 0; g < G; ++g) blocks[5].values.push_back(s.markov.p(g));
  for (int j = 0; j < G; ++j)
    for (int g = 0; g < G; ++g) blocks[6].values.push_back(s.markov.Q(j, g));
}

struct ChainMetadata {
  std::uint64_t seed = 0;
  int total_iterations = 0;
  int burn_in = 0;
  int thin = 1;
  bool include_initial_prob_in_z1 = false;
  double wall_seconds = 0.0;
};

/// Stored post-burn-in draws plus assignment frequencies.
struct ChainOutput {
  int S = 0;
  int T = 0;
  int R = 0;
  int L = 0;
  int G = 0;
  int stored_iterations = 0;
  std::vector<int> iterations;    // sweep index of each retained row
  std::vector<DrawBlock> blocks;  // B, sigma2, tau2, mu, Omega, p, Q
  Matrix z_prob;                  // (S*T) x G
  std::vector<int> z_mode;        // S*T, 1-based, ties to the smallest label
  ChainMetadata meta;

  const DrawBlock& block(std::string_view name) const {
    for (const auto& b : blocks) {
      if (b.name == name) return b;
    }
    fail(ErrorCode::InvalidParameter, "no draw block named " + std::string(name));
  }
  DrawBlock& block(std::string_view name) {
    return const_cast<DrawBlock&>(static_cast<const ChainOutput&>(*this).block(name));
  }
};

/// Modal label of each row of a probability table; ties go to the smallest label.
inline std::vector<int> modal_labels(const Matrix& prob) {
  std::vector<int> mode(static_cast<std::size_t>(prob.rows()), 1);
  for (Eigen::Index row = 0; row < prob.rows(); ++row) {
    Eigen::Index best = 0;
    for (Eigen::Index g = 1; g < prob.cols(); ++g) {
      if (prob(row, g) > prob(row, best)) best = g;
    }
    mode[static_cast<std::size_t>(row)] = static_cast<int>(best) + 1;
  }
  return mode;
}

}  // namespace bdcfm
