#pragma once

// Exact earth mover's distance between equal-size clouds via optimal
// assignment, plus the exhaustive oracle and the analytic EMD gradient.

#include "emdkit/core.hpp"

#include <limits>
#include <numeric>

namespace emdkit {

struct AssignmentResult {
  Matching matching;
  double cost;
};

struct ExactResult {
  double distance;
  Matching matching;
};

namespace detail {

inline double assignment_cost(const CostMatrix& c, const std::vector<std::size_t>& assign) {
  double total = 0.0;
  for (std::size_t i = 0; i < assign.size(); ++i) total += c(i, assign[i]);
  return total;
}

}  // namespace detail

/// Minimum-cost perfect assignment by successive shortest augmenting paths
/// with dual potentials (Jonker-Volgenant style). O(N^3) worst case.
inline AssignmentResult hungarian(const CostMatrix& c) {
  if (!c.square()) throw ArgumentError("assignment needs a square cost matrix");
  const std::size_t n = c.rows();
  if (n == 0) throw ArgumentError("assignment needs a non-empty cost matrix");
  const double inf = std::numeric_limits<double>::infinity();
  const Matrix& a = c.values();

  // 1-based columns; column 0 is the virtual root of each search tree.
  std::vector<double> row_pot(n + 1, 0.0), col_pot(n + 1, 0.0), min_slack(n + 1);
  std::vector<std::size_t> col_owner(n + 1, 0), prev_col(n + 1, 0);
  std::vector<char> visited(n + 1);

  for (std::size_t row = 1; row <= n; ++row) {
    col_owner[0] = row;
    std::size_t cur = 0;
    std::fill(min_slack.begin(), min_slack.end(), inf);
    std::fill(visited.begin(), visited.end(), 0);
    do {
      visited[cur] = 1;
      const std::size_t r = col_owner[cur];
      const double* crow = a.data() + static_cast<std::ptrdiff_t>((r - 1) * n);
      double delta = inf;
      std::size_t next = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (visited[j]) continue;
        const double slack = crow[j - 1] - row_pot[r] - col_pot[j];
        if (slack < min_slack[j]) {
          min_slack[j] = slack;
          prev_col[j] = cur;
        }
        if (min_slack[j] < delta) {
          delta = min_slack[j];
          next = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (visited[j]) {
          row_pot[col_owner[j]] += delta;
          col_pot[j] -= delta;
        } else {
          min_slack[j] -= delta;
        }
      }
      cur = next;
    } while (col_owner[cur] != 0);
    // Flip the augmenting path back to the root.
    do {
      const std::size_t p = prev_col[cur];
      col_owner[cur] = col_owner[p];
      cur = p;
    } while (cur != 0);
  }

  std::vector<std::size_t> assign(n);
  for (std::size_t j = 1; j <= n; ++j) assign[col_owner[j] - 1] = j - 1;
  const double cost = detail::assignment_cost(c, assign);
  return {Matching(std::move(assign)), cost};
}

/// Exhaustive search over all N! permutations. Ties resolve to the
/// lexicographically smallest permutation. Refuses N > 8.
inline AssignmentResult brute_force(const CostMatrix& c) {
  if (!c.square()) throw ArgumentError("assignment needs a square cost matrix");
  const std::size_t n = c.rows();
  if (n == 0) throw ArgumentError("assignment needs a non-empty cost matrix");
  if (n > 8) throw RefusalError("brute-force assignment refuses N > 8");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::vector<std::size_t> best = perm;
  double best_cost = detail::assignment_cost(c, perm);
  while (std::next_permutation(perm.begin(), perm.end())) {
    const double cost = detail::assignment_cost(c, perm);
    if (cost < best_cost) {
      best_cost = cost;
      best = perm;
    }
  }
  return {Matching(std::move(best)), best_cost};
}

inline ExactResult emd(const PointCloud& u, const PointCloud& v) {
  auto r = hungarian(pairwise_cost(u, v, Norm::L2));
  return {r.cost, std::move(r.matching)};
}

/// d EMD / d v_j for a fixed matching: the unit vector from the matched source
/// point to v_j, or zero where the two coincide.
inline GradientField emd_gradient(const PointCloud& u, const PointCloud& v, const Matching& m) {
  if (m.size() != u.size() || u.size() != v.size())
    throw ArgumentError("matching does not fit the cloud pair");
  GradientField g{Matrix::Zero(v.points().rows(), v.points().cols())};
  for (std::size_t i = 0; i < u.size(); ++i)
    g.grads.row(static_cast<Eigen::Index>(m[i])) = detail::unit_direction(v.point(m[i]), u.point(i));
  return g;
}

}  // namespace emdkit
