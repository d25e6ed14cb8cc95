#pragma once

// Gradient descent on the target cloud, driven either by a learned model's
// gradient or by the exact EMD gradient.

#include "emdkit/report.hpp"

namespace emdkit {

struct DescentResult {
  PointCloud target;
  std::vector<DescentStep> steps;  // steps + 1 rows, the first before any update
};

/// `model == nullptr` descends along the exact gradient of the optimal matching.
inline DescentResult descend(const PointCloud& u, const PointCloud& v, int steps, double lr,
                             const nn::AnyModel<float>* model) {
  if (steps < 0) throw ArgumentError("step count must be nonnegative");
  if (!(lr > 0)) throw ArgumentError("learning rate must be positive");
  Matrix x = v.points();
  DescentResult out{v, {}};
  for (int k = 0;; ++k) {
    const PointCloud cur(x);
    const ExactResult exact = emd(u, cur);
    Matrix grad;
    double predicted = exact.distance;
    if (model) {
      const auto pr = std::visit([&](const auto& m) { return nn::predict(m, u, cur); }, *model);
      predicted = pr.distance;
      grad = pr.gradient;
    } else {
      grad = emd_gradient(u, cur, exact.matching).grads;
    }
    out.steps.push_back({k, exact.distance, predicted});
    if (k == steps) {
      out.target = cur;
      break;
    }
    x -= lr * grad;
  }
  return out;
}

}  // namespace emdkit
