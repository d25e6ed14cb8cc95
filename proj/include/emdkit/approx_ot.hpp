#pragma once

// Classical EMD approximations: Chamfer distance and entropy-regularized
// Sinkhorn scaling, with their matchings and gradients.

#include "emdkit/core.hpp"

#include <limits>

namespace emdkit {

struct ChamferResult {
  double distance;
  std::vector<std::size_t> nn_fwd;  // nearest target per source point
  std::vector<std::size_t> nn_bwd;  // nearest source per target point
};

/// Sum of nearest-neighbour distances in both directions. Clouds may differ in size.
inline ChamferResult chamfer(const PointCloud& u, const PointCloud& v, Norm norm = Norm::L2) {
  const Matrix c = detail::pairwise(u, v, norm);
  ChamferResult r{0.0, std::vector<std::size_t>(u.size()), std::vector<std::size_t>(v.size())};
  double fwd = 0.0, bwd = 0.0;
  for (Eigen::Index i = 0; i < c.rows(); ++i) {
    const Eigen::Index best = detail::argmin(c.row(i));
    r.nn_fwd[static_cast<std::size_t>(i)] = static_cast<std::size_t>(best);
    fwd += c(i, best);
  }
  for (Eigen::Index j = 0; j < c.cols(); ++j) {
    const Eigen::Index best = detail::argmin(c.col(j));
    r.nn_bwd[static_cast<std::size_t>(j)] = static_cast<std::size_t>(best);
    bwd += c(best, j);
  }
  r.distance = fwd + bwd;
  return r;
}

/// Chamfer as an EMD estimator: the mean of the two directed sums.
inline double chamfer_emd_estimate(const ChamferResult& r) { return 0.5 * r.distance; }

/// Gradient of the Chamfer sum w.r.t. each target point, argmins held fixed.
inline GradientField chamfer_gradient(const PointCloud& u, const PointCloud& v, const ChamferResult& r,
                                      Norm norm = Norm::L2) {
  if (r.nn_fwd.size() != u.size() || r.nn_bwd.size() != v.size())
    throw ArgumentError("chamfer result does not fit the cloud pair");
  GradientField g{Matrix::Zero(v.points().rows(), v.points().cols())};
  auto term = [&](std::size_t i, std::size_t j) -> Eigen::RowVectorXd {
    if (norm == Norm::L2) return detail::unit_direction(v.point(j), u.point(i));
    return 2.0 * (v.point(j) - u.point(i));
  };
  for (std::size_t i = 0; i < u.size(); ++i)
    g.grads.row(static_cast<Eigen::Index>(r.nn_fwd[i])) += term(i, r.nn_fwd[i]);
  for (std::size_t j = 0; j < v.size(); ++j)
    g.grads.row(static_cast<Eigen::Index>(j)) += term(r.nn_bwd[j], j);
  return g;
}

// ---------------------------------------------------------------------------

enum class SinkhornStatus { Converged, IterLimit, NumericalFailure };

inline const char* to_string(SinkhornStatus s) {
  switch (s) {
    case SinkhornStatus::Converged: return "converged";
    case SinkhornStatus::IterLimit: return "iter_limit";
    case SinkhornStatus::NumericalFailure: return "numerical_failure";
  }
  return "?";
}

/// Transport plan with uniform 1/N marginals; distance = <plan, c>.
struct SinkhornResult {
  Matrix plan;
  double distance = std::numeric_limits<double>::quiet_NaN();
  int iterations_run = 0;
  SinkhornStatus status = SinkhornStatus::NumericalFailure;
  double marginal_violation = std::numeric_limits<double>::quiet_NaN();

  bool ok() const { return status != SinkhornStatus::NumericalFailure; }
};

inline constexpr double kSinkhornDefaultTolerance = 1e-9;
inline constexpr double kSinkhornDefaultRelativeLambda = 0.1;

/// Regularization expressed as a multiple of the mean cost.
inline double relative_lambda(const CostMatrix& c, double multiplier = kSinkhornDefaultRelativeLambda) {
  return multiplier * c.mean();
}

/// Plain Sinkhorn-Knopp scaling of exp(-c / lambda) toward uniform marginals.
/// Underflow or overflow is reported as NumericalFailure rather than stabilized.
inline SinkhornResult sinkhorn(const CostMatrix& c, double lambda, int max_iters,
                               double tol = kSinkhornDefaultTolerance) {
  if (!(lambda > 0.0)) throw ArgumentError("sinkhorn lambda must be positive");
  if (!(tol > 0.0)) throw ArgumentError("sinkhorn tolerance must be positive");
  if (!c.square() || c.rows() == 0) throw ArgumentError("sinkhorn needs a square cost matrix");
  const Eigen::Index n = static_cast<Eigen::Index>(c.rows());
  const double mass = 1.0 / static_cast<double>(n);

  SinkhornResult r;
  // std::exp rather than the vectorized exp, which clamps instead of underflowing.
  const Matrix kernel = (-c.values().array() / lambda).unaryExpr([](double x) { return std::exp(x); }).matrix();
  if (!kernel.allFinite() || (kernel.rowwise().sum().array() <= 0.0).any() ||
      (kernel.colwise().sum().array() <= 0.0).any())
    return r;

  Vector a = Vector::Ones(n), b = Vector::Ones(n);
  double violation = std::numeric_limits<double>::infinity();
  int it = 0;
  while (it < max_iters) {
    a = (mass / (kernel * b).array()).matrix();
    b = (mass / (kernel.transpose() * a).array()).matrix();
    ++it;
    if (!a.allFinite() || !b.allFinite()) {
      r.iterations_run = it;
      return r;
    }
    // Columns are exact after the b-update; the rows carry the violation.
    violation = (a.array() * (kernel * b).array() - mass).abs().maxCoeff();
    if (!std::isfinite(violation)) {
      r.iterations_run = it;
      return r;
    }
    if (violation <= tol) break;
  }

  r.plan = a.asDiagonal() * kernel * b.asDiagonal();
  if (!r.plan.allFinite()) {
    r.iterations_run = it;
    return r;
  }
  r.iterations_run = it;
  r.marginal_violation = violation;
  r.distance = (r.plan.array() * c.values().array()).sum();
  r.status = violation <= tol ? SinkhornStatus::Converged : SinkhornStatus::IterLimit;
  return r;
}

/// Sinkhorn cost rescaled to the assignment convention (unit mass per point).
inline double sinkhorn_emd_estimate(const SinkhornResult& r) {
  return static_cast<double>(r.plan.rows()) * r.distance;
}

/// Row/column argmax of the plan; ties go to the smallest index.
inline SoftMatching sinkhorn_matching(const SinkhornResult& r) {
  if (!r.ok()) throw StateError("sinkhorn result is a numerical failure");
  SoftMatching sm{std::vector<std::size_t>(static_cast<std::size_t>(r.plan.rows())),
                  std::vector<std::size_t>(static_cast<std::size_t>(r.plan.cols()))};
  for (Eigen::Index i = 0; i < r.plan.rows(); ++i) {
    const Eigen::Index best = detail::argmax(r.plan.row(i));
    sm.forward[static_cast<std::size_t>(i)] = static_cast<std::size_t>(best);
  }
  for (Eigen::Index j = 0; j < r.plan.cols(); ++j) {
    const Eigen::Index best = detail::argmax(r.plan.col(j));
    sm.backward[static_cast<std::size_t>(j)] = static_cast<std::size_t>(best);
  }
  return sm;
}

/// Gradient of <plan, c(u, v)> w.r.t. v with the plan frozen.
inline GradientField sinkhorn_gradient(const PointCloud& u, const PointCloud& v, const SinkhornResult& r) {
  if (!r.ok()) throw StateError("sinkhorn result is a numerical failure");
  if (static_cast<std::size_t>(r.plan.rows()) != u.size() ||
      static_cast<std::size_t>(r.plan.cols()) != v.size())
    throw ArgumentError("plan does not fit the cloud pair");
  GradientField g{Matrix::Zero(v.points().rows(), v.points().cols())};
  for (std::size_t j = 0; j < v.size(); ++j) {
    auto row = g.grads.row(static_cast<Eigen::Index>(j));
    for (std::size_t i = 0; i < u.size(); ++i) {
      const double w = r.plan(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      if (w != 0.0) row += w * detail::unit_direction(v.point(j), u.point(i));
    }
  }
  return g;
}

}  // namespace emdkit
