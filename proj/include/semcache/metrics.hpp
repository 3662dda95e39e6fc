#pragma once

#include <cstdint>
#include <string_view>

#include "semcache/error.hpp"

namespace semcache {

/// Hit/miss confusion matrix. In threshold tuning a "hit" is a pair predicted
/// duplicate; in a cache benchmark it is a served cache response.
struct ConfusionCounts {
  std::uint64_t true_hit = 0;
  std::uint64_t false_hit = 0;
  std::uint64_t true_miss = 0;
  std::uint64_t false_miss = 0;

  std::uint64_t total() const noexcept { return true_hit + false_hit + true_miss + false_miss; }

  ConfusionCounts& operator+=(const ConfusionCounts& o) noexcept {
    true_hit += o.true_hit;
    false_hit += o.false_hit;
    true_miss += o.true_miss;
    false_miss += o.false_miss;
    return *this;
  }

  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

struct MetricsReport {
  double precision = 0.0;
  double recall = 0.0;
  double f_beta = 0.0;
  double accuracy = 0.0;
  double beta = 0.5;
};

inline constexpr double kDefaultBeta = 0.5;

/// (1 + b^2) P R / (b^2 P + R); 0 when both are 0.
inline double f_beta_score(double precision, double recall, double beta) {
  const double b2 = beta * beta;
  const double denom = b2 * precision + recall;
  if (denom == 0.0) return 0.0;
  return (1.0 + b2) * precision * recall / denom;
}

/// Precision with no predicted hits is 0 if any duplicate existed to be found;
/// with no duplicates and no hits there was nothing to get wrong, so 1.
/// Recall with no duplicates is likewise 1.
inline MetricsReport compute_metrics(const ConfusionCounts& c, double beta = kDefaultBeta) {
  if (c.total() == 0) throw Error(ErrorCode::EmptyCounts, "no classified events");
  if (!(beta > 0.0)) throw Error(ErrorCode::InvalidArgument, "beta must be positive");
  const auto th = static_cast<double>(c.true_hit);
  const auto fh = static_cast<double>(c.false_hit);
  const auto fm = static_cast<double>(c.false_miss);
  const auto tm = static_cast<double>(c.true_miss);

  MetricsReport r;
  r.beta = beta;
  if (th + fh > 0) {
    r.precision = th / (th + fh);
  } else {
    r.precision = (th + fm > 0) ? 0.0 : 1.0;
  }
  r.recall = (th + fm > 0) ? th / (th + fm) : 1.0;
  r.accuracy = (th + tm) / static_cast<double>(c.total());
  r.f_beta = f_beta_score(r.precision, r.recall, beta);
  return r;
}

enum class Outcome { TrueHit, FalseHit, TrueMiss, FalseMiss };

constexpr std::string_view to_string(Outcome o) {
  switch (o) {
    case Outcome::TrueHit: return "TH";
    case Outcome::FalseHit: return "FH";
    case Outcome::TrueMiss: return "TM";
    case Outcome::FalseMiss: return "FM";
  }
  return "?";
}

/// `correct_entry` only matters for a hit on a query that has a duplicate:
/// returning some other entry is still a false hit.
constexpr Outcome classify_outcome(bool predicted_hit, bool duplicate_exists, bool correct_entry = true) {
  if (predicted_hit) return (duplicate_exists && correct_entry) ? Outcome::TrueHit : Outcome::FalseHit;
  return duplicate_exists ? Outcome::FalseMiss : Outcome::TrueMiss;
}

inline void tally(ConfusionCounts& c, Outcome o) noexcept {
  switch (o) {
    case Outcome::TrueHit: ++c.true_hit; break;
    case Outcome::FalseHit: ++c.false_hit; break;
    case Outcome::TrueMiss: ++c.true_miss; break;
    case Outcome::FalseMiss: ++c.false_miss; break;
  }
}

}  // namespace semcache
