#pragma once

// Evaluation measures for EMD approximations: correlations between true and
// predicted distances, relative-error quantiles, gradient cosine statistics
// and matching accuracy / bipartiteness.

#include "emdkit/core.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace emdkit {

class UndefinedCorrelation : public ArgumentError {
 public:
  using ArgumentError::ArgumentError;
};

namespace detail {

inline void check_paired(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size()) throw ArgumentError("correlation inputs differ in length");
  if (xs.size() < 2) throw ArgumentError("correlation needs at least two samples");
}

// Average ranks (1-based); ties share the mean of their positions.
inline std::vector<double> ranks(const std::vector<double>& xs) {
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return xs[a] < xs[b]; });
  std::vector<double> r(xs.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && xs[order[j + 1]] == xs[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace detail

inline double pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
  detail::check_paired(xs, ys);
  const double n = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx, dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw UndefinedCorrelation("correlation of a constant sample");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

inline double spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
  detail::check_paired(xs, ys);
  return pearson(detail::ranks(xs), detail::ranks(ys));
}

/// Kendall tau-b: (concordant - discordant) / sqrt((n0 - ties_x)(n0 - ties_y)).
inline double kendall_tau(const std::vector<double>& xs, const std::vector<double>& ys) {
  detail::check_paired(xs, ys);
  long long concordant = 0, discordant = 0, ties_x = 0, ties_y = 0;
  const std::size_t n = xs.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dx = xs[i] - xs[j], dy = ys[i] - ys[j];
      if (dx == 0.0 && dy == 0.0) {
        ++ties_x;
        ++ties_y;
      } else if (dx == 0.0) {
        ++ties_x;
      } else if (dy == 0.0) {
        ++ties_y;
      } else if ((dx > 0) == (dy > 0)) {
        ++concordant;
      } else {
        ++discordant;
      }
    }
  }
  const double n0 = static_cast<double>(n) * static_cast<double>(n - 1) / 2.0;
  const double denom = std::sqrt((n0 - static_cast<double>(ties_x)) * (n0 - static_cast<double>(ties_y)));
  if (denom == 0.0) throw UndefinedCorrelation("correlation of a constant sample");
  return static_cast<double>(concordant - discordant) / denom;
}

/// Linear interpolation between order statistics (type 7).
inline double quantile(std::vector<double> xs, double q) {
  if (xs.empty()) throw ArgumentError("quantile of an empty sample");
  if (q < 0.0 || q > 1.0) throw ArgumentError("quantile level outside [0, 1]");
  std::sort(xs.begin(), xs.end());
  const double h = q * static_cast<double>(xs.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, xs.size() - 1);
  return xs[lo] + (h - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
}

inline constexpr std::array<double, 3> kQuantileLevels{0.1, 0.5, 0.9};

struct QuantileTriple {
  double q10 = 0.0, q50 = 0.0, q90 = 0.0;
};

inline QuantileTriple quantiles(const std::vector<double>& xs) {
  return {quantile(xs, 0.1), quantile(xs, 0.5), quantile(xs, 0.9)};
}

// ---------------------------------------------------------------------------

/// One evaluated pair for one method.
struct EvalRecord {
  std::size_t pair_id = 0;
  std::string method;
  double true_distance = 0.0;
  double predicted_distance = 0.0;
  std::optional<Matching> truth;
  std::optional<SoftMatching> predicted;
  Matrix true_grad;       // d EMD / d v, one row per target point
  Matrix estimated_grad;  // same layout, empty when the method has none
};

struct RelativeErrors {
  std::vector<double> values;
  std::size_t excluded = 0;  // records with true distance <= 0
  QuantileTriple q;
};

inline RelativeErrors relative_errors(const std::vector<EvalRecord>& records) {
  RelativeErrors out;
  for (const auto& r : records) {
    if (!(r.true_distance > 0.0)) {
      ++out.excluded;
      continue;
    }
    out.values.push_back(std::abs(r.predicted_distance - r.true_distance) / r.true_distance);
  }
  if (!out.values.empty()) out.q = quantiles(out.values);
  return out;
}

inline constexpr int kCdfPoints = 201;

struct CdfPoint {
  double threshold;
  double cumulative_fraction;
};

struct GradientCosines {
  std::vector<double> values;
  std::size_t skipped = 0;  // zero rows on either side
  QuantileTriple q;
  std::vector<CdfPoint> cdf;
};

inline std::vector<CdfPoint> cosine_cdf(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  std::vector<CdfPoint> cdf;
  for (int k = 0; k < kCdfPoints; ++k) {
    const double t = -1.0 + 2.0 * k / (kCdfPoints - 1);
    const auto below = std::upper_bound(values.begin(), values.end(), t) - values.begin();
    cdf.push_back({t, values.empty() ? 0.0 : static_cast<double>(below) / static_cast<double>(values.size())});
  }
  return cdf;
}

inline GradientCosines gradient_cosines(const std::vector<EvalRecord>& records) {
  GradientCosines out;
  for (const auto& r : records) {
    if (r.estimated_grad.size() == 0) continue;
    for (Eigen::Index j = 0; j < r.true_grad.rows(); ++j) {
      const double nt = r.true_grad.row(j).norm(), ne = r.estimated_grad.row(j).norm();
      if (nt == 0.0 || ne == 0.0) {
        ++out.skipped;
        continue;
      }
      out.values.push_back(std::clamp(r.true_grad.row(j).dot(r.estimated_grad.row(j)) / (nt * ne), -1.0, 1.0));
    }
  }
  if (!out.values.empty()) out.q = quantiles(out.values);
  out.cdf = cosine_cdf(out.values);
  return out;
}

/// Percentages over all points of all records carrying a predicted matching.
struct MatchingMetrics {
  double accuracy = 0.0;
  double bipartite = 0.0;
  double bipartite_correct = 0.0;
  std::size_t points = 0;
};

struct MatchingCounts {
  std::size_t forward_correct = 0, backward_correct = 0, bipartite = 0, bipartite_correct = 0, points = 0;
};

inline MatchingCounts matching_counts(const Matching& truth, const SoftMatching& pred) {
  pred.validate(truth.size());
  const Matching inv = truth.inverse();
  MatchingCounts c;
  c.points = truth.size();
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool fwd = pred.forward[i] == truth[i];
    const bool bip = pred.backward[pred.forward[i]] == i;
    c.forward_correct += fwd;
    c.backward_correct += pred.backward[i] == inv[i];
    c.bipartite += bip;
    c.bipartite_correct += bip && fwd;
  }
  return c;
}

inline MatchingMetrics matching_metrics(const std::vector<EvalRecord>& records) {
  MatchingCounts total;
  for (const auto& r : records) {
    if (!r.truth || !r.predicted) continue;
    const auto c = matching_counts(*r.truth, *r.predicted);
    total.forward_correct += c.forward_correct;
    total.backward_correct += c.backward_correct;
    total.bipartite += c.bipartite;
    total.bipartite_correct += c.bipartite_correct;
    total.points += c.points;
  }
  MatchingMetrics m;
  m.points = total.points;
  if (total.points == 0) return m;
  const double n = static_cast<double>(total.points);
  m.accuracy = 100.0 * static_cast<double>(total.forward_correct + total.backward_correct) / (2.0 * n);
  m.bipartite = 100.0 * static_cast<double>(total.bipartite) / n;
  m.bipartite_correct = 100.0 * static_cast<double>(total.bipartite_correct) / n;
  return m;
}

// ---------------------------------------------------------------------------

/// All scalar measures for one method. Optional entries are absent when the
/// method provides no gradient or matching, or the sample is degenerate.
struct MetricSummary {
  std::string method;
  std::size_t records = 0;
  std::optional<double> r, rho, tau;
  std::optional<double> re10, re50, re90;
  std::optional<double> cs10, cs50, cs90;
  std::optional<double> accuracy, bipartite, bipartite_correct;
  std::size_t re_excluded = 0;
  std::size_t cs_skipped = 0;
  std::size_t tie_degenerate = 0;
};

inline MetricSummary summarize(const std::string& method, const std::vector<EvalRecord>& records) {
  MetricSummary s;
  s.method = method;
  s.records = records.size();
  std::vector<double> truth, pred;
  for (const auto& r : records) {
    truth.push_back(r.true_distance);
    pred.push_back(r.predicted_distance);
  }
  auto guarded = [&](auto fn) -> std::optional<double> {
    try {
      return fn(truth, pred);
    } catch (const ArgumentError&) {
      return std::nullopt;
    }
  };
  s.r = guarded(pearson);
  s.rho = guarded(spearman);
  s.tau = guarded(kendall_tau);
  const auto re = relative_errors(records);
  s.re_excluded = re.excluded;
  if (!re.values.empty()) {
    s.re10 = re.q.q10;
    s.re50 = re.q.q50;
    s.re90 = re.q.q90;
  }
  const auto cs = gradient_cosines(records);
  s.cs_skipped = cs.skipped;
  if (!cs.values.empty()) {
    s.cs10 = cs.q.q10;
    s.cs50 = cs.q.q50;
    s.cs90 = cs.q.q90;
  }
  const auto mm = matching_metrics(records);
  if (mm.points > 0) {
    s.accuracy = mm.accuracy;
    s.bipartite = mm.bipartite;
    s.bipartite_correct = mm.bipartite_correct;
  }
  return s;
}

}  // namespace emdkit
