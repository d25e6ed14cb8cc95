#pragma once

// Geometric primitives shared by every solver: point clouds, matchings,
// cost matrices and seeded random streams.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace emdkit {

class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class RefusalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IngestionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// An unordered set of N points in R^D (D is 2 or 3). Immutable.
class PointCloud {
 public:
  explicit PointCloud(Matrix points) : points_(std::move(points)) {
    if (points_.rows() < 1) throw ArgumentError("point cloud needs at least one point");
    if (points_.cols() != 2 && points_.cols() != 3)
      throw ArgumentError("point cloud dimension must be 2 or 3, got " +
                          std::to_string(points_.cols()));
    if (!points_.allFinite()) throw ArgumentError("point cloud has non-finite coordinates");
  }

  PointCloud(std::initializer_list<std::initializer_list<double>> rows)
      : PointCloud(from_rows(rows)) {}

  std::size_t size() const { return static_cast<std::size_t>(points_.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(points_.cols()); }
  const Matrix& points() const { return points_; }
  auto point(std::size_t i) const { return points_.row(static_cast<Eigen::Index>(i)); }

  friend bool operator==(const PointCloud& a, const PointCloud& b) {
    return a.points_.rows() == b.points_.rows() && a.points_.cols() == b.points_.cols() &&
           a.points_ == b.points_;
  }

 private:
  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const auto n = static_cast<Eigen::Index>(rows.size());
    const auto d = n > 0 ? static_cast<Eigen::Index>(rows.begin()->size()) : 0;
    Matrix m(n, d);
    Eigen::Index i = 0;
    for (const auto& r : rows) {
      if (static_cast<Eigen::Index>(r.size()) != d) throw ArgumentError("ragged point rows");
      Eigen::Index j = 0;
      for (double x : r) m(i, j++) = x;
      ++i;
    }
    return m;
  }

  Matrix points_;
};

/// Bijection source index -> target index, stored in permutation form.
class Matching {
 public:
  explicit Matching(std::vector<std::size_t> assign) : assign_(std::move(assign)) {
    std::vector<char> seen(assign_.size(), 0);
    for (std::size_t j : assign_) {
      if (j >= assign_.size() || seen[j])
        throw ArgumentError("matching is not a permutation");
      seen[j] = 1;
    }
  }

  static Matching identity(std::size_t n) {
    std::vector<std::size_t> a(n);
    for (std::size_t i = 0; i < n; ++i) a[i] = i;
    return Matching(std::move(a));
  }

  std::size_t size() const { return assign_.size(); }
  std::size_t operator[](std::size_t i) const { return assign_[i]; }
  const std::vector<std::size_t>& assign() const { return assign_; }

  Matching inverse() const {
    std::vector<std::size_t> inv(assign_.size());
    for (std::size_t i = 0; i < assign_.size(); ++i) inv[assign_[i]] = i;
    return Matching(std::move(inv));
  }

  friend bool operator==(const Matching&, const Matching&) = default;

 private:
  std::vector<std::size_t> assign_;
};

/// Directed argmax maps read off a plan or attention matrix. Need not be bijective.
struct SoftMatching {
  std::vector<std::size_t> forward;   // source i -> target
  std::vector<std::size_t> backward;  // target j -> source

  static SoftMatching from(const Matching& m) { return {m.assign(), m.inverse().assign()}; }

  void validate(std::size_t n) const {
    if (forward.size() != n || backward.size() != n)
      throw ArgumentError("soft matching size does not match cloud size");
    for (auto j : forward)
      if (j >= n) throw ArgumentError("soft matching index out of range");
    for (auto i : backward)
      if (i >= n) throw ArgumentError("soft matching index out of range");
  }

  bool forward_is_bijective() const { return is_perm(forward); }
  bool backward_is_bijective() const { return is_perm(backward); }

 private:
  static bool is_perm(const std::vector<std::size_t>& a) {
    std::vector<char> seen(a.size(), 0);
    for (auto j : a) {
      if (j >= a.size() || seen[j]) return false;
      seen[j] = 1;
    }
    return true;
  }
};

/// Nonnegative finite transport costs, c(i, j) = cost of moving u_i to v_j.
class CostMatrix {
 public:
  explicit CostMatrix(Matrix c) : c_(std::move(c)) {
    if (!c_.allFinite()) throw ArgumentError("cost matrix has non-finite entries");
    if (c_.size() > 0 && c_.minCoeff() < 0.0) throw ArgumentError("cost matrix has negative entries");
  }

  std::size_t rows() const { return static_cast<std::size_t>(c_.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(c_.cols()); }
  bool square() const { return c_.rows() == c_.cols(); }
  double operator()(std::size_t i, std::size_t j) const {
    return c_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
  const Matrix& values() const { return c_; }
  double mean() const { return c_.size() ? c_.mean() : 0.0; }

 private:
  Matrix c_;
};

enum class Norm { L2, L2Squared };

/// Per-point gradient rows of a distance w.r.t. one cloud.
struct GradientField {
  Matrix grads;
};

namespace detail {

inline double point_distance(const PointCloud& u, std::size_t i, const PointCloud& v, std::size_t j,
                             Norm norm) {
  const double sq = (u.point(i) - v.point(j)).squaredNorm();
  return norm == Norm::L2 ? std::sqrt(sq) : sq;
}

// Rectangular cost for solvers (Chamfer) that accept clouds of different size.
inline Matrix pairwise(const PointCloud& u, const PointCloud& v, Norm norm) {
  if (u.dim() != v.dim()) throw ArgumentError("point clouds differ in dimension");
  Matrix c(u.size(), v.size());
  for (std::size_t i = 0; i < u.size(); ++i)
    for (std::size_t j = 0; j < v.size(); ++j)
      c(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          point_distance(u, i, v, j, norm);
  return c;
}

// Unit vector (a - b) / |a - b|, zero when the points coincide.
template <typename A, typename B>
Eigen::RowVectorXd unit_direction(const A& a, const B& b) {
  Eigen::RowVectorXd diff = a - b;
  const double len = diff.norm();
  if (len == 0.0) return Eigen::RowVectorXd::Zero(diff.size());
  return diff / len;
}

// First index of the extreme value, so ties resolve to the smallest index.
template <typename V>
Eigen::Index argmax(const V& xs) {
  Eigen::Index best = 0;
  for (Eigen::Index k = 1; k < xs.size(); ++k)
    if (xs(k) > xs(best)) best = k;
  return best;
}

template <typename V>
Eigen::Index argmin(const V& xs) {
  Eigen::Index best = 0;
  for (Eigen::Index k = 1; k < xs.size(); ++k)
    if (xs(k) < xs(best)) best = k;
  return best;
}

}  // namespace detail

inline CostMatrix pairwise_cost(const PointCloud& u, const PointCloud& v, Norm norm = Norm::L2) {
  if (u.size() != v.size()) throw ArgumentError("point clouds differ in size");
  return CostMatrix(detail::pairwise(u, v, norm));
}

/// Row i of the result is row perm[i] of the input.
inline PointCloud apply_permutation(const PointCloud& cloud, const Matching& perm) {
  if (perm.size() != cloud.size()) throw ArgumentError("permutation length differs from cloud size");
  Matrix out(cloud.points().rows(), cloud.points().cols());
  for (std::size_t i = 0; i < cloud.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = cloud.point(perm[i]);
  return PointCloud(std::move(out));
}

// ---------------------------------------------------------------------------
// Seeded randomness. Every consumer derives its own sub-stream from the run
// seed so generation, model init and batch order never share state.

struct Seed {
  std::uint64_t value = 0;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Rng {
 public:
  explicit Rng(Seed seed) : seed_(seed.value), engine_(splitmix64(seed.value)) {}

  /// Independent stream keyed by (this stream's seed, tag, index).
  Rng substream(std::string_view tag, std::uint64_t index = 0) const {
    const std::uint64_t h = splitmix64(fnv1a(tag, splitmix64(seed_)) ^ splitmix64(index + 1));
    return Rng(Seed{h});
  }

  std::uint64_t seed() const { return seed_; }

  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  // Uniform on (lo, hi].
  double uniform_open_closed(double lo, double hi) { return hi - uniform(0.0, 1.0) * (hi - lo); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }
  bool coin() { return index(2) == 1; }

  template <typename It>
  void shuffle(It first, It last) {
    std::shuffle(first, last, engine_);
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace emdkit
