#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numbers>

#include "bdcfm/errors.hpp"
#include "bdcfm/gibbs.hpp"
#include "bdcfm/simgen.hpp"
#include "support.hpp"

using namespace bdcfm;
using bdcfm::testkit::test_rng;

namespace {

Matrix mat(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& r : rows) {
    Eigen::Index j = 0;
    for (double v : r) m(i, j++) = v;
    ++i;
  }
  return m;
}

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

// Minimal valid state: identity-topped loadings, unit variances, G clusters at the origin.
ModelState blank_state(int S, int T, int R, int L, int G) {
  ModelState s;
  s.loadings.B = Matrix::Zero(R, L);
  for (int l = 0; l < L; ++l) s.loadings.B(l, l) = 1.0;
  s.loadings.tau2 = Vector::Ones(L);
  s.uniqueness.sigma2 = Vector::Ones(R);
  for (int g = 0; g < G; ++g) {
    s.clusters.mu.push_back(Vector::Zero(L));
    s.clusters.omega.push_back(Matrix::Identity(L, L));
  }
  s.markov.p = Vector::Constant(G, 1.0 / G);
  s.markov.Q = Matrix::Constant(G, G, 1.0 / G);
  s.latent.S = S;
  s.latent.T = T;
  s.latent.X = Matrix::Zero(L, S * T);
  s.latent.Z.assign(static_cast<std::size_t>(S * T), 1);
  return s;
}

DrawContext context(std::uint64_t seed = 1, std::uint64_t iteration = 1) {
  return {seed, iteration, false, false};
}

}  // namespace

TEST(FactorConditional, IdentityPlugIn) {
  const int L = 3;
  const Vector y = vec({1.0, -2.0, 4.0});
  const auto c = factor_conditional(Matrix::Identity(L, L), Vector::Ones(L), Matrix::Identity(L, L),
                                    Vector::Zero(L), y);
  EXPECT_LT((c.cov - 0.5 * Matrix::Identity(L, L)).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LT((c.mean - 0.5 * y).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(FactorConditional, ScalarHandValue) {
  const auto c = factor_conditional(mat({{1.0}, {2.0}}), Vector::Ones(2), Matrix::Ones(1, 1),
                                    Vector::Zero(1), vec({1.0, 1.0}));
  EXPECT_NEAR(c.cov(0, 0), 1.0 / 6.0, 1e-14);
  EXPECT_NEAR(c.mean(0), 0.5, 1e-14);
}

TEST(UpdateFactors, PureFunctionOfStateAndStream) {
  const auto [data, truth] = simulate_dataset(paper_simulation_config(1));
  const ModelState before = truth.state;
  const Matrix a = update_factors(data, PriorSpec::defaults(4, 3), truth.state, context(3, 7));
  const Matrix b = update_factors(data, PriorSpec::defaults(4, 3), truth.state, context(3, 7));
  const Matrix c = update_factors(data, PriorSpec::defaults(4, 3), truth.state, context(3, 8));
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  EXPECT_EQ(truth.state.latent.X, before.latent.X);
}

TEST(UpdateFactors, ParallelMatchesSerial) {
  const auto [data, truth] = simulate_dataset(paper_simulation_config(2));
  DrawContext serial = context(5, 2);
  DrawContext parallel = serial;
  parallel.parallel = true;
  const PriorSpec prior = PriorSpec::defaults(4, 3);
  EXPECT_EQ(update_factors(data, prior, truth.state, serial),
            update_factors(data, prior, truth.state, parallel));
  EXPECT_EQ(update_assignments(data, prior, truth.state, serial),
            update_assignments(data, prior, truth.state, parallel));
  // Forced worker threads, independent of the host's core count.
  std::vector<int> order_serial, order_threads;
  bdcfm::detail::for_each_subject(50, false, [&](int i) { order_serial.push_back(i); });
  std::mutex m;
  bdcfm::detail::for_each_subject(50, true, [&](int i) {
    std::lock_guard lock(m);
    order_threads.push_back(i);
  });
  std::sort(order_threads.begin(), order_threads.end());
  EXPECT_EQ(order_serial, order_threads);
}

TEST(ClusterMeanConditional, ScalarHandValue) {
  ModelState s = blank_state(1, 1, 1, 1, 1);
  s.latent.X(0, 0) = 2.0;
  PriorSpec prior = PriorSpec::defaults(1, 1);
  const auto c = cluster_mean_conditional(s, prior, 1);
  EXPECT_NEAR(c.cov(0, 0), 0.5, 1e-14);
  EXPECT_NEAR(c.mean(0), 1.0, 1e-14);
}

TEST(ClusterMeanConditional, EmptyClusterIsPrior) {
  ModelState s = blank_state(2, 2, 3, 2, 2);
  PriorSpec prior = PriorSpec::defaults(2, 2);
  prior.m_mu[1] = vec({3.0, -1.0});
  prior.C_mu[1] = mat({{2.0, 0.5}, {0.5, 1.0}});
  const auto c = cluster_mean_conditional(s, prior, 2);
  EXPECT_LT((c.mean - prior.m_mu[1]).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((c.cov - prior.C_mu[1]).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Omega1Conditional, HandValue) {
  ModelState s = blank_state(2, 1, 1, 1, 1);
  s.latent.X(0, 0) = 1.0;
  s.latent.X(0, 1) = -1.0;
  PriorSpec prior = PriorSpec::defaults(1, 1);
  const auto c = omega1_conditional(s, prior);
  EXPECT_DOUBLE_EQ(c[0].shape, 3.0);
  EXPECT_DOUBLE_EQ(c[0].scale, 3.0);
}

TEST(Omega1Conditional, EmptyClusterIsPrior) {
  ModelState s = blank_state(2, 2, 2, 2, 2);
  s.latent.Z.assign(4, 2);
  PriorSpec prior = PriorSpec::defaults(2, 2);
  prior.s2_omega = vec({0.5, 2.0});
  const auto c = omega1_conditional(s, prior);
  EXPECT_DOUBLE_EQ(c[0].shape, 2.0);
  EXPECT_DOUBLE_EQ(c[0].scale, 1.0);
  EXPECT_DOUBLE_EQ(c[1].scale, 4.0);
}

TEST(UpdateOmega1, StaysDiagonalAndPositive) {
  const auto [data, truth] = simulate_dataset(paper_simulation_config(3));
  const PriorSpec prior = PriorSpec::defaults(4, 3);
  for (std::uint64_t it = 1; it <= 100; ++it) {
    const Matrix om = update_omega1(data, prior, truth.state, context(1, it));
    EXPECT_TRUE(om.isDiagonal(0.0));
    EXPECT_TRUE((om.diagonal().array() > 0.0).all());
  }
}

TEST(OmegaConditional, OneDimensionalHandValue) {
  ModelState s = blank_state(1, 1, 1, 1, 2);
  s.latent.Z = {2};
  s.latent.X(0, 0) = 3.0;
  s.clusters.mu[1](0) = 1.0;
  PriorSpec prior = PriorSpec::defaults(2, 1);
  EXPECT_EQ(prior.n_Omega, 3.0);
  const auto c = omega_conditional(s, prior, 2);
  EXPECT_DOUBLE_EQ(c.dof, 4.0);
  EXPECT_DOUBLE_EQ(c.scale(0, 0), 5.0);
  // IW(4, 5) in one dimension is IG(2, 2.5) with mean 2.5.
  testkit::Moments m;
  for (std::uint64_t it = 0; it < 200000; ++it) {
    m.add(update_omega_g(Dataset{}, prior, s, context(2, it))[0](0, 0));
  }
  EXPECT_NEAR(m.mean(), 2.5, 0.1);
}

TEST(OmegaConditional, EmptyClusterIsPrior) {
  ModelState s = blank_state(2, 2, 2, 2, 3);
  PriorSpec prior = PriorSpec::defaults(3, 2);
  prior.S_Omega[1] = mat({{3.0, 1.0}, {1.0, 2.0}});
  const auto c = omega_conditional(s, prior, 3);
  EXPECT_DOUBLE_EQ(c.dof, prior.n_Omega);
  EXPECT_EQ(c.scale, prior.S_Omega[1]);
}

TEST(LoadingsConditional, CaseOneHandValue) {
  // r = 2 <= L = 2; sum x1^2 = 4, sum x1 (y2 - x2) = 2.
  Dataset data = testkit::dataset_from(mat({{0.0}, {1.0}}), 1, 1);
  ModelState s = blank_state(1, 1, 2, 2, 1);
  s.latent.X = mat({{2.0}, {0.0}});
  const auto c = loadings_row_conditional(data, s, PriorSpec::defaults(1, 2), 2);
  ASSERT_EQ(c.mean.size(), 1);
  EXPECT_NEAR(c.cov(0, 0), 0.2, 1e-14);
  EXPECT_NEAR(c.mean(0), 0.4, 1e-14);
}

TEST(LoadingsConditional, CaseOneUsesResidualOfOwnFactor) {
  // Same sums as above with x2 = 1 and y2 = 2, so y2 - x2 is unchanged.
  Dataset data = testkit::dataset_from(mat({{0.0}, {2.0}}), 1, 1);
  ModelState s = blank_state(1, 1, 2, 2, 1);
  s.latent.X = mat({{2.0}, {1.0}});
  const auto c = loadings_row_conditional(data, s, PriorSpec::defaults(1, 2), 2);
  EXPECT_NEAR(c.mean(0), 0.4, 1e-14);
}

TEST(LoadingsConditional, CaseTwoHandValue) {
  // r = 2 > L = 1; x = 1 over four observations.
  Dataset data = testkit::dataset_from(mat({{1.0, 1.0, 1.0, 1.0}, {0.5, 1.5, -1.0, 2.0}}), 2, 2);
  ModelState s = blank_state(2, 2, 2, 1, 1);
  s.latent.X = Matrix::Ones(1, 4);
  const auto c = loadings_row_conditional(data, s, PriorSpec::defaults(1, 1), 2);
  EXPECT_NEAR(c.cov(0, 0), 0.2, 1e-14);
  EXPECT_NEAR(c.mean(0), 3.0 / 5.0, 1e-14);
}

TEST(UpdateLoadings, KeepsFixedEntries) {
  const auto [data, truth] = simulate_dataset(paper_simulation_config(4));
  const PriorSpec prior = PriorSpec::defaults(4, 3);
  ModelState s = truth.state;
  for (std::uint64_t it = 1; it <= 50; ++it) {
    s.loadings.B = update_loadings(data, prior, s, context(1, it));
    ASSERT_TRUE(validate_state(s).empty());
  }
  for (int r = 0; r < 3; ++r) {
    EXPECT_EQ(s.loadings.B(r, r), 1.0);
    for (int l = r + 1; l < 3; ++l) EXPECT_EQ(s.loadings.B(r, l), 0.0);
  }
}

TEST(UniquenessConditional, PerfectFit) {
  ModelState s = blank_state(2, 3, 2, 1, 1);
  s.loadings.B = mat({{1.0}, {2.0}});
  s.latent.X = mat({{1.0, 2.0, 3.0, -1.0, 0.0, 0.5}});
  Dataset data = testkit::dataset_from(s.loadings.B * s.latent.X, 2, 3);
  const PriorSpec prior = PriorSpec::defaults(1, 1);
  const auto c = uniqueness_conditional(data, s, prior, 2);
  EXPECT_DOUBLE_EQ(c.shape, (2.2 + 6) / 2);
  EXPECT_NEAR(c.scale, 0.05, 1e-14);
}

TEST(UniquenessConditional, HandValue) {
  ModelState s = blank_state(1, 1, 1, 1, 1);
  Dataset data = testkit::dataset_from(mat({{std::sqrt(3.0)}}), 1, 1);
  const auto c = uniqueness_conditional(data, s, PriorSpec::defaults(1, 1), 1);
  EXPECT_NEAR(c.shape, 1.6, 1e-14);
  EXPECT_NEAR(c.scale, 1.55, 1e-14);
}

TEST(TauConditional, ZeroColumn) {
  ModelState s = blank_state(1, 1, 20, 1, 1);
  const auto c = tau_conditional(s, PriorSpec::defaults(1, 1), 1);
  EXPECT_DOUBLE_EQ(c.shape, 10.0);
  EXPECT_DOUBLE_EQ(c.scale, 0.5);
}

TEST(TauConditional, HandValue) {
  ModelState s = blank_state(1, 1, 3, 1, 1);
  s.loadings.B = mat({{1.0}, {1.0}, {1.0}});
  const auto c = tau_conditional(s, PriorSpec::defaults(1, 1), 1);
  EXPECT_DOUBLE_EQ(c.shape, 1.5);
  EXPECT_DOUBLE_EQ(c.scale, 1.5);
}

TEST(TauConditional, SkipsFixedEntries) {
  // Column 2 of a 4 x 2 loadings matrix: rows 3..4 are free.
  ModelState s = blank_state(1, 1, 4, 2, 1);
  s.loadings.B = mat({{1, 0}, {7, 1}, {5, 2}, {5, 1}});
  const auto c = tau_conditional(s, PriorSpec::defaults(1, 2), 2);
  EXPECT_DOUBLE_EQ(c.shape, 1.5);
  EXPECT_DOUBLE_EQ(c.scale, 3.0);
}

TEST(InitialProbConditional, Counts) {
  ModelState s = blank_state(4, 2, 1, 1, 2);
  s.latent.Z = {1, 2, 1, 1, 2, 2, 1, 2};
  EXPECT_EQ(initial_prob_conditional(s, PriorSpec::defaults(2, 1)), vec({5.0, 3.0}));
  ModelState empty = blank_state(0, 2, 1, 1, 2);
  empty.latent.Z.clear();
  EXPECT_EQ(initial_prob_conditional(empty, PriorSpec::defaults(2, 1)), vec({2.0, 2.0}));
}

TEST(TransitionConditional, HandCounts) {
  ModelState s = blank_state(1, 3, 1, 1, 2);
  s.latent.Z = {1, 2, 2};
  const Matrix a = transition_conditional(s, PriorSpec::defaults(2, 1));
  EXPECT_EQ(a, mat({{2.0, 3.0}, {2.0, 3.0}}));
}

TEST(TransitionConditional, NoDeparturesIsPrior) {
  ModelState s = blank_state(3, 2, 1, 1, 3);
  s.latent.Z = {1, 2, 1, 1, 2, 2};
  const Matrix a = transition_conditional(s, PriorSpec::defaults(3, 1));
  EXPECT_EQ(a.row(2), Matrix::Constant(1, 3, 2.0));
}

TEST(UpdateSimplexBlocks, DrawsSumToOne) {
  const auto [data, truth] = simulate_dataset(paper_simulation_config(6));
  const PriorSpec prior = PriorSpec::defaults(4, 3);
  for (std::uint64_t it = 1; it <= 200; ++it) {
    const Vector p = update_initial_probs(data, prior, truth.state, context(1, it));
    ASSERT_NEAR(p.sum(), 1.0, 1e-12);
    const Matrix Q = update_transition_matrix(data, prior, truth.state, context(1, it));
    for (int j = 0; j < 4; ++j) ASSERT_NEAR(Q.row(j).sum(), 1.0, 1e-12);
  }
}

TEST(AssignmentConditional, LastTimeBoundary) {
  ModelState s = blank_state(1, 2, 1, 1, 2);
  s.clusters.mu = {vec({0.0}), vec({2.0})};
  s.markov.Q = mat({{0.75, 0.25}, {0.5, 0.5}});
  s.latent.X = mat({{-5.0, 1.0}});
  s.latent.Z = {1, 1};
  const Vector prob = assignment_conditional(s, 0, 1, false);
  EXPECT_NEAR(prob(0), 0.75, 1e-12);
  EXPECT_NEAR(prob(1), 0.25, 1e-12);
}

TEST(AssignmentConditional, FirstTimeBoundary) {
  ModelState s = blank_state(1, 2, 1, 1, 2);
  s.clusters.mu = {vec({0.0}), vec({2.0})};
  s.markov.p = vec({0.2, 0.8});
  s.markov.Q = mat({{0.6, 0.4}, {0.1, 0.9}});
  s.latent.X = mat({{1.0, 7.0}});
  s.latent.Z = {1, 2};
  // Equal densities, so the weights are q_{g2} alone or p_g q_{g2}.
  const Vector verbatim = assignment_conditional(s, 0, 0, false);
  EXPECT_NEAR(verbatim(0), 0.4 / 1.3, 1e-12);
  const Vector with_p = assignment_conditional(s, 0, 0, true);
  EXPECT_NEAR(with_p(0), 0.08 / (0.08 + 0.72), 1e-12);
}

TEST(AssignmentConditional, InteriorUsesBothNeighbours) {
  ModelState s = blank_state(1, 3, 1, 1, 2);
  s.clusters.mu = {vec({0.0}), vec({1.0})};
  s.clusters.omega = {Matrix::Identity(1, 1), Matrix::Constant(1, 1, 4.0)};
  s.markov.Q = mat({{0.7, 0.3}, {0.2, 0.8}});
  s.latent.X = mat({{0.0, 0.3, 0.0}});
  s.latent.Z = {2, 1, 1};
  auto dens = [](double x, double m, double v) {
    return std::exp(-0.5 * (x - m) * (x - m) / v) / std::sqrt(2 * std::numbers::pi * v);
  };
  const double w1 = dens(0.3, 0.0, 1.0) * 0.2 * 0.7;
  const double w2 = dens(0.3, 1.0, 4.0) * 0.8 * 0.2;
  const Vector prob = assignment_conditional(s, 0, 1, false);
  EXPECT_NEAR(prob(0), w1 / (w1 + w2), 1e-12);
  EXPECT_NEAR(prob.sum(), 1.0, 1e-12);
}

TEST(AssignmentConditional, SymmetricClustersAreEven) {
  ModelState s = blank_state(1, 3, 1, 2, 2);
  s.latent.X = mat({{0.3, -1.0, 2.0}, {0.1, 0.4, 0.0}});
  for (int t = 0; t < 3; ++t) {
    const Vector prob = assignment_conditional(s, 0, t, false);
    EXPECT_NEAR(prob(0), 0.5, 1e-12);
  }
}

TEST(AssignmentConditional, DistantClustersDoNotUnderflow) {
  ModelState s = blank_state(1, 1, 3, 3, 2);
  s.clusters.mu = {Vector::Constant(3, 0.0), Vector::Constant(3, 60.0)};
  s.latent.X = Matrix::Constant(3, 1, 30.5);
  const Vector prob = assignment_conditional(s, 0, 0, false);
  EXPECT_TRUE(prob.allFinite());
  EXPECT_NEAR(prob.sum(), 1.0, 1e-12);
  EXPECT_GT(prob(1), 0.99);
}

TEST(UpdateAssignments, SingleClusterIsAlwaysOne) {
  const auto [data, truth] = simulate_dataset([] {
    SimConfig c = paper_simulation_config(1);
    c.G = 1;
    c.p = vec({1.0});
    c.Q = Matrix::Ones(1, 1);
    c.mu.resize(1);
    c.omega.resize(1);
    return c;
  }());
  const auto Z = update_assignments(data, PriorSpec::defaults(1, 3), truth.state, context());
  EXPECT_TRUE(std::all_of(Z.begin(), Z.end(), [](int z) { return z == 1; }));
}

TEST(UpdateAssignments, FrequencyMatchesBoundaryConditional) {
  ModelState s = blank_state(1, 2, 1, 1, 2);
  s.clusters.mu = {vec({0.0}), vec({2.0})};
  s.markov.Q = mat({{0.75, 0.25}, {0.5, 0.5}});
  s.latent.X = mat({{0.0, 1.0}});
  s.latent.Z = {1, 1};
  // Pin Z_11 to cluster 1: a far-off factor makes its weight for cluster 2 negligible.
  s.latent.X(0, 0) = -40.0;
  int ones = 0;
  const int n = 100000;
  for (int k = 0; k < n; ++k) {
    const auto Z = update_assignments(Dataset{}, PriorSpec::defaults(2, 1), s, context(3, static_cast<std::uint64_t>(k)));
    ASSERT_EQ(Z[0], 1);
    if (Z[1] == 1) ++ones;
  }
  EXPECT_NEAR(ones / double(n), 0.75, 4.0 * std::sqrt(0.75 * 0.25 / n));
}

TEST(Sweep, ReportsUpdatesInOrder) {
  const auto [data, truth] = simulate_dataset(paper_simulation_config(7));
  ModelState s = truth.state;
  std::vector<std::string> names;
  sweep(data, PriorSpec::defaults(4, 3), s, context(),
        [&](std::string_view name, const ModelState&) { names.emplace_back(name); });
  EXPECT_EQ(names, (std::vector<std::string>{"factors", "cluster_means", "omega1", "omega_g", "loadings",
                                             "uniquenesses", "tau", "initial_probs", "transition_matrix",
                                             "assignments"}));
}

TEST(RunGibbs, StoredIterationsAndProbabilities) {
  SimConfig c = paper_simulation_config(8);
  c.S = 30;
  const auto [data, truth] = simulate_dataset(c);
  SamplerConfig cfg;
  cfg.total_iterations = 57;
  cfg.burn_in = 10;
  cfg.thin = 4;
  int stored = 0;
  RunHooks hooks;
  hooks.on_store = [&](int, const ModelState& s) {
    ++stored;
    const auto v = validate_state(s);
    ASSERT_TRUE(v.empty()) << v.front().invariant;
  };
  const ChainOutput out = run_gibbs(data, PriorSpec::defaults(4, 3), truth.state, cfg, hooks);
  EXPECT_EQ(out.stored_iterations, (57 - 10) / 4);
  EXPECT_EQ(stored, out.stored_iterations);
  EXPECT_EQ(out.iterations.front(), 14);
  EXPECT_EQ(out.iterations.back(), 54);
  for (const auto& b : out.blocks) EXPECT_EQ(static_cast<int>(b.rows()), out.stored_iterations);
  for (Eigen::Index k = 0; k < out.z_prob.rows(); ++k) ASSERT_NEAR(out.z_prob.row(k).sum(), 1.0, 1e-9);
}

TEST(RunGibbs, FlushedChunksEqualInMemoryDraws) {
  SimConfig c = paper_simulation_config(9);
  c.S = 20;
  const auto [data, truth] = simulate_dataset(c);
  SamplerConfig cfg;
  cfg.total_iterations = 40;
  cfg.burn_in = 5;
  cfg.thin = 1;
  const PriorSpec prior = PriorSpec::defaults(4, 3);
  const ChainOutput memory = run_gibbs(data, prior, truth.state, cfg);
  std::vector<DrawBlock> collected = make_draw_blocks(20, 3, 4);
  std::vector<int> its;
  int chunks = 0;
  RunHooks hooks;
  hooks.flush_every = 8;
  hooks.on_flush = [&](const std::vector<DrawBlock>& chunk, const std::vector<int>& iterations) {
    ++chunks;
    for (std::size_t b = 0; b < chunk.size(); ++b) {
      collected[b].values.insert(collected[b].values.end(), chunk[b].values.begin(), chunk[b].values.end());
    }
    its.insert(its.end(), iterations.begin(), iterations.end());
  };
  const ChainOutput flushed = run_gibbs(data, prior, truth.state, cfg, hooks);
  EXPECT_EQ(chunks, 5);
  EXPECT_EQ(its, memory.iterations);
  for (std::size_t b = 0; b < collected.size(); ++b) EXPECT_EQ(collected[b].values, memory.blocks[b].values);
  EXPECT_EQ(flushed.z_prob, memory.z_prob);
}

TEST(RunGibbs, RejectsBadConfigAndState) {
  const auto [data, truth] = simulate_dataset(paper_simulation_config(1));
  SamplerConfig cfg;
  cfg.total_iterations = 10;
  cfg.burn_in = 10;
  EXPECT_THROW(run_gibbs(data, PriorSpec::defaults(4, 3), truth.state, cfg), Error);
  cfg.burn_in = 0;
  cfg.thin = 0;
  EXPECT_THROW(run_gibbs(data, PriorSpec::defaults(4, 3), truth.state, cfg), Error);
  cfg.thin = 1;
  ModelState bad = truth.state;
  bad.loadings.B(0, 0) = 2.0;
  EXPECT_THROW(run_gibbs(data, PriorSpec::defaults(4, 3), bad, cfg), Error);
}

TEST(RunGibbs, ErrorsCarryIterationIndex) {
  SimConfig c = paper_simulation_config(2);
  c.S = 5;
  const auto [data, truth] = simulate_dataset(c);
  SamplerConfig cfg;
  cfg.total_iterations = 10;
  cfg.burn_in = 0;
  RunHooks hooks;
  hooks.on_update = [](std::string_view name, const ModelState&) {
    if (name == "tau") fail(ErrorCode::NotPositiveDefinite, "injected");
  };
  try {
    run_gibbs(data, PriorSpec::defaults(4, 3), truth.state, cfg, hooks);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NotPositiveDefinite);
    EXPECT_NE(std::string(e.what()).find("iteration 1"), std::string::npos) << e.what();
  }
}
