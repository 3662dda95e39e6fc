#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "semcache/error.hpp"
#include "semcache/metrics.hpp"

namespace semcache {

struct ScoredPair {
  double similarity = 0.0;
  bool duplicate = false;
};

struct ThresholdProfile {
  double tau = 0.0;
  double beta = kDefaultBeta;
  double f_beta_at_tau = 0.0;
  double grid_step = 0.01;
};

struct ThresholdEvaluation {
  ConfusionCounts counts;
  MetricsReport metrics;
};

/// Predict duplicate iff similarity >= tau.
inline ThresholdEvaluation evaluate_at(std::span<const ScoredPair> pairs, double tau, double beta = kDefaultBeta) {
  if (pairs.empty()) throw Error(ErrorCode::EmptyInput, "no scored pairs");
  ConfusionCounts c;
  for (const auto& p : pairs) {
    if (p.similarity < -1.0 || p.similarity > 1.0) {
      throw Error(ErrorCode::InvalidArgument, "similarity outside [-1, 1]");
    }
    tally(c, classify_outcome(p.similarity >= tau, p.duplicate));
  }
  return {c, compute_metrics(c, beta)};
}

/// Grid point i of a sweep with the given step, clamped to 1. When 1/step is
/// a whole number the point is i / (1/step), so 0.01 * 70 comes out as 0.7.
inline double grid_tau(std::size_t i, double step) {
  const double inv = 1.0 / step;
  const double whole = std::round(inv);
  const double t = std::abs(inv - whole) < 1e-9 ? static_cast<double>(i) / whole : static_cast<double>(i) * step;
  return std::min(1.0, t);
}

inline std::size_t grid_points(double step) {
  if (!(step > 0.0 && step <= 1.0)) throw Error(ErrorCode::InvalidArgument, "grid_step must be in (0, 1]");
  return static_cast<std::size_t>(std::llround(1.0 / step)) + 1;
}

/// F_beta-optimal tau over {0, step, ..., 1}; ties go to the larger tau.
/// Counts at each grid point come from binary search over sorted scores.
inline ThresholdProfile tune(std::span<const ScoredPair> pairs, double beta = kDefaultBeta, double grid_step = 0.01) {
  const std::size_t points = grid_points(grid_step);
  std::vector<double> dup_scores, non_scores;
  for (const auto& p : pairs) (p.duplicate ? dup_scores : non_scores).push_back(p.similarity);
  if (dup_scores.empty() || non_scores.empty()) {
    throw Error(ErrorCode::InsufficientLabels, "tuning needs both duplicate and non-duplicate pairs");
  }
  std::sort(dup_scores.begin(), dup_scores.end());
  std::sort(non_scores.begin(), non_scores.end());

  auto at_or_above = [](const std::vector<double>& sorted, double tau) {
    return static_cast<std::uint64_t>(sorted.end() - std::lower_bound(sorted.begin(), sorted.end(), tau));
  };

  ThresholdProfile best{0.0, beta, -1.0, grid_step};
  for (std::size_t i = 0; i < points; ++i) {
    const double tau = grid_tau(i, grid_step);
    ConfusionCounts c;
    c.true_hit = at_or_above(dup_scores, tau);
    c.false_miss = dup_scores.size() - c.true_hit;
    c.false_hit = at_or_above(non_scores, tau);
    c.true_miss = non_scores.size() - c.false_hit;
    const double f = compute_metrics(c, beta).f_beta;
    if (f >= best.f_beta_at_tau) {
      best.tau = tau;
      best.f_beta_at_tau = f;
    }
  }
  return best;
}

}  // namespace semcache
