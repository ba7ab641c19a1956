#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "bdcfm/errors.hpp"
#include "bdcfm/model.hpp"
#include "bdcfm/simgen.hpp"

namespace bdcfm {

/// Linear interpolation between order statistics: position (n - 1) * prob of the sorted sample.
inline double quantile_sorted(const std::vector<double>& sorted, double prob) {
  if (sorted.empty()) fail(ErrorCode::InsufficientDraws, "quantile of an empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

struct Interval {
  double lower = 0.0;
  double upper = 0.0;
  bool contains(double v) const noexcept { return lower <= v && v <= upper; }
};

/// Equal-tailed interval at the given level.
inline Interval credible_interval(std::vector<double> values, double level = 0.95) {
  std::sort(values.begin(), values.end());
  const double tail = 0.5 * (1.0 - level);
  return {quantile_sorted(values, tail), quantile_sorted(values, 1.0 - tail)};
}

struct ParameterSummary {
  std::string name;
  std::string family;
  double mean = 0.0;
  double sd = 0.0;
  double lower = 0.0;
  double median = 0.0;
  double upper = 0.0;
};

struct CoverageFlag {
  std::string name;
  std::string family;
  double truth = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  bool covered = false;
};

struct FamilyCoverage {
  std::string family;
  int covered = 0;
  int total = 0;
};

struct CoverageReport {
  double fraction = 0.0;  // covered / total over the five families
  int covered = 0;
  int total = 0;
  std::vector<FamilyCoverage> families;
  std::vector<CoverageFlag> flags;
  std::vector<int> label_map;  // label_map[k - 1] = truth label matched to estimated label k

  double miss_rate() const noexcept { return 1.0 - fraction; }
};

struct SummaryReport {
  std::vector<ParameterSummary> parameters;
  std::vector<int> z_mode;
  std::optional<CoverageReport> coverage;
  std::optional<double> misclassification;
};

inline ParameterSummary summarize_values(std::string name, std::string family,
                                         std::vector<double> values) {
  if (values.size() < 2) fail(ErrorCode::InsufficientDraws, "need at least 2 stored draws");
  ParameterSummary s{std::move(name), std::move(family)};
  const double n = static_cast<double>(values.size());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.sd = std::sqrt(ss / (n - 1.0));
  std::sort(values.begin(), values.end());
  s.lower = quantile_sorted(values, 0.025);
  s.median = quantile_sorted(values, 0.5);
  s.upper = quantile_sorted(values, 0.975);
  // Constant columns can pick up roundoff in the mean.
  s.mean = std::clamp(s.mean, values.front(), values.back());
  return s;
}

/// Posterior mean, sd and equal-tailed 95% interval for every stored scalar.
inline SummaryReport summarize(const ChainOutput& chain) {
  if (chain.stored_iterations < 2) {
    fail(ErrorCode::InsufficientDraws, "summaries need at least 2 stored iterations");
  }
  SummaryReport rep;
  for (const auto& block : chain.blocks) {
    if (block.rows() < 2) fail(ErrorCode::InsufficientDraws, "block " + block.name + " has < 2 rows");
    for (std::size_t c = 0; c < block.cols(); ++c) {
      rep.parameters.push_back(summarize_values(block.columns[c], block.name, block.column(c)));
    }
  }
  rep.z_mode = chain.z_mode;
  return rep;
}

namespace detail {

// Minimum-cost perfect matching (Hungarian algorithm, potentials form). cost is n x n.
inline std::vector<int> hungarian(const std::vector<std::vector<double>>& cost) {
  const int n = static_cast<int>(cost.size());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> assignment(n);
  for (int j = 1; j <= n; ++j) assignment[p[j] - 1] = j - 1;
  return assignment;
}

}  // namespace detail

/// Matching of estimated to true labels maximizing agreement. Exhaustive search over
/// permutations for G <= 8, Hungarian algorithm beyond. Result[k - 1] = truth label for k.
inline std::vector<int> align_labels(const std::vector<int>& estimated,
                                     const std::vector<int>& truth, int G) {
  if (estimated.size() != truth.size()) {
    fail(ErrorCode::DimensionMismatch, "label vectors differ in length");
  }
  std::vector<std::vector<double>> agree(static_cast<std::size_t>(G), std::vector<double>(static_cast<std::size_t>(G), 0.0));
  for (std::size_t k = 0; k < estimated.size(); ++k) {
    const int e = estimated[k];
    const int t = truth[k];
    if (e < 1 || e > G || t < 1 || t > G) fail(ErrorCode::DimensionMismatch, "label outside 1..G");
    agree[static_cast<std::size_t>(e - 1)][static_cast<std::size_t>(t - 1)] += 1.0;
  }
  std::vector<int> perm(static_cast<std::size_t>(G));
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<int> best;
  if (G <= 8) {
    double best_score = -1.0;
    do {
      double score = 0.0;
      for (int e = 0; e < G; ++e) score += agree[static_cast<std::size_t>(e)][static_cast<std::size_t>(perm[static_cast<std::size_t>(e)])];
      if (score > best_score) {
        best_score = score;
        best = perm;
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
  } else {
    auto cost = agree;
    for (auto& row : cost)
      for (double& c : row) c = -c;
    best = detail::hungarian(cost);
  }
  for (int& b : best) b += 1;
  return best;
}

inline double misclassification_rate(const std::vector<int>& estimated, const std::vector<int>& truth,
                                     int G) {
  const auto map = align_labels(estimated, truth, G);
  std::size_t wrong = 0;
  for (std::size_t k = 0; k < estimated.size(); ++k) {
    if (map[static_cast<std::size_t>(estimated[k] - 1)] != truth[k]) ++wrong;
  }
  return estimated.empty() ? 0.0 : static_cast<double>(wrong) / static_cast<double>(estimated.size());
}

inline void check_truth_dims(const ChainOutput& chain, const SimTruth& truth) {
  const ModelState& s = truth.state;
  if (s.S() != chain.S || s.T() != chain.T || s.R() != chain.R || s.L() != chain.L ||
      s.G() != chain.G) {
    fail(ErrorCode::DimensionMismatch, "truth dimensions do not match the chain");
  }
}

/// Fraction of (i, t) whose modal assignment disagrees with the truth after optimal relabelling.
inline double misclassification(const ChainOutput& chain, const SimTruth& truth) {
  check_truth_dims(chain, truth);
  return misclassification_rate(chain.z_mode, truth.state.latent.Z, chain.G);
}

/// 95% interval coverage over loadings (free entries), cluster means, transition
/// probabilities, initial probabilities and uniquenesses. Cluster-indexed truths are
/// relabelled through the modal-assignment alignment first.
inline CoverageReport coverage_report(const ChainOutput& chain, const SimTruth& truth,
                                      double level = 0.95) {
  check_truth_dims(chain, truth);
  const ModelState& s = truth.state;
  CoverageReport rep;
  rep.label_map = align_labels(chain.z_mode, s.latent.Z, chain.G);
  const auto& map = rep.label_map;

  auto check = [&](const std::string& family, const DrawBlock& block, const std::string& column,
                   double truth_value) {
    const auto c = block.find(column);
    if (c < 0) fail(ErrorCode::DimensionMismatch, "chain is missing column " + column);
    const Interval ci = credible_interval(block.column(static_cast<std::size_t>(c)), level);
    rep.flags.push_back({column, family, truth_value, ci.lower, ci.upper, ci.contains(truth_value)});
  };
  auto name2 = [](const char* n, int a, int b) {
    return std::string(n) + "[" + std::to_string(a) + "," + std::to_string(b) + "]";
  };
  auto name1 = [](const char* n, int a) { return std::string(n) + "[" + std::to_string(a) + "]"; };

  for (int r = 1; r <= chain.R; ++r)
    for (int l = 1; l <= std::min(r - 1, chain.L); ++l)
      check("loadings", chain.block("B"), name2("B", r, l), s.loadings.B(r - 1, l - 1));
  for (int g = 1; g <= chain.G; ++g)
    for (int l = 1; l <= chain.L; ++l)
      check("means", chain.block("mu"), name2("mu", g, l),
            s.clusters.mu[static_cast<std::size_t>(map[static_cast<std::size_t>(g - 1)] - 1)](l - 1));
  for (int j = 1; j <= chain.G; ++j)
    for (int g = 1; g <= chain.G; ++g)
      check("transitions", chain.block("Q"), name2("Q", j, g),
            s.markov.Q(map[static_cast<std::size_t>(j - 1)] - 1, map[static_cast<std::size_t>(g - 1)] - 1));
  for (int g = 1; g <= chain.G; ++g)
    check("initial_probs", chain.block("p"), name1("p", g),
          s.markov.p(map[static_cast<std::size_t>(g - 1)] - 1));
  for (int r = 1; r <= chain.R; ++r)
    check("uniquenesses", chain.block("sigma2"), name1("sigma2", r), s.uniqueness.sigma2(r - 1));

  for (const char* fam : {"loadings", "means", "transitions", "initial_probs", "uniquenesses"}) {
    FamilyCoverage fc{fam, 0, 0};
    for (const auto& f : rep.flags) {
      if (f.family != fam) continue;
      ++fc.total;
      if (f.covered) ++fc.covered;
    }
    rep.covered += fc.covered;
    rep.total += fc.total;
    rep.families.push_back(fc);
  }
  rep.fraction = rep.total > 0 ? static_cast<double>(rep.covered) / rep.total : 1.0;
  return rep;
}

/// One row per (subject, time, cluster) plus the modal path.
struct AssignmentTable {
  Matrix prob;            // (S*T) x G
  std::vector<int> mode;  // S*T, ties to the smallest label
};

inline AssignmentTable assignment_probabilities(const ChainOutput& chain) {
  AssignmentTable tab{chain.z_prob, modal_labels(chain.z_prob)};
  return tab;
}

}  // namespace bdcfm
