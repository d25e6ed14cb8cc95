#pragma once

#include "emdkit/core.hpp"

#include <filesystem>
#include <functional>
#include <string>

namespace emdkit::test {

inline PointCloud random_cloud(std::size_t n, std::size_t d, Rng& rng, double scale = 1.0) {
  Matrix m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-scale, scale);
  return PointCloud(std::move(m));
}

inline CostMatrix random_costs(std::size_t n, Rng& rng) {
  Matrix m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform();
  return CostMatrix(std::move(m));
}

/// Central differences of f with respect to every coordinate of v.
inline Matrix numeric_gradient(const std::function<double(const PointCloud&)>& f, const PointCloud& v,
                               double h = 1e-6) {
  Matrix g(v.points().rows(), v.points().cols());
  for (Eigen::Index k = 0; k < g.size(); ++k) {
    Matrix plus = v.points(), minus = v.points();
    plus.data()[k] += h;
    minus.data()[k] -= h;
    g.data()[k] = (f(PointCloud(plus)) - f(PointCloud(minus))) / (2 * h);
  }
  return g;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) { return (a - b).cwiseAbs().maxCoeff(); }

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("emdkit_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace emdkit::test
