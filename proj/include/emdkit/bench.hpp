#pragma once

// Wall-clock scaling harness: median time per (method, N) and the
// least-squares slope of log t against log N.

#include "emdkit/eval.hpp"

#include <chrono>

namespace emdkit {

struct TimingSample {
  std::string method;
  std::size_t n = 0;
  double median_seconds = 0.0;
  int trials = 0;
};

struct BenchResult {
  std::vector<TimingSample> samples;
  std::map<std::string, double> slopes;  // methods with at least two sizes
};

inline double median(std::vector<double> xs) {
  if (xs.empty()) throw ArgumentError("median of an empty sample");
  std::sort(xs.begin(), xs.end());
  const std::size_t h = xs.size() / 2;
  return xs.size() % 2 ? xs[h] : 0.5 * (xs[h - 1] + xs[h]);
}

/// Slope of the least-squares line through (log x, log y).
inline double loglog_slope(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.size() < 2) throw ArgumentError("slope fit needs two or more points");
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (!(xs[i] > 0) || !(ys[i] > 0)) throw ArgumentError("log-log fit needs positive values");
    mx += std::log(xs[i]);
    my += std::log(ys[i]);
  }
  mx /= static_cast<double>(xs.size());
  my /= static_cast<double>(xs.size());
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = std::log(xs[i]) - mx;
    sxy += dx * (std::log(ys[i]) - my);
    sxx += dx * dx;
  }
  if (sxx == 0) throw ArgumentError("slope fit needs distinct sizes");
  return sxy / sxx;
}

struct BenchConfig {
  std::vector<std::string> methods{"exact", "deepemd"};
  std::vector<std::size_t> sizes{128, 256, 512, 1024};
  int trials = 5;
  SinkhornOptions sinkhorn;
  std::uint64_t seed = 0;
};

namespace detail {

/// Time of one distance evaluation, end to end from the two clouds.
inline double time_once(const std::string& method, const PointCloud& u, const PointCloud& v,
                        const SinkhornOptions& sk, const nn::AnyModel<float>* model) {
  volatile double sink = 0.0;
  const auto t0 = std::chrono::steady_clock::now();
  if (method == "exact") {
    sink = emd(u, v).distance;
  } else if (method == "chamfer") {
    sink = chamfer_emd_estimate(chamfer(u, v, Norm::L2));
  } else if (method == "sinkhorn") {
    const CostMatrix c = pairwise_cost(u, v, Norm::L2);
    sink = sinkhorn_emd_estimate(sinkhorn(c, sk.resolve(c), sk.iters, sk.tol));
  } else if (is_learned(method)) {
    if (!model) throw ArgumentError(method + " timing needs a model");
    sink = std::visit(
        [&](const auto& m) -> double {
          using M = std::decay_t<decltype(m)>;
          if constexpr (std::is_same_v<M, nn::DeepEmd<float>>)
            return nn::estimate_distance(u, v, nn::predict_matching(m.forward(u, v)));
          else
            return static_cast<double>(m.forward(u, v));
        },
        *model);
  } else {
    throw ArgumentError("unknown method: " + method);
  }
  (void)sink;
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

/// `models` maps learned method names to the model timed for them.
inline BenchResult bench(const BenchConfig& cfg, const std::map<std::string, const nn::AnyModel<float>*>& models = {}) {
  if (cfg.trials < 3) throw ArgumentError("bench needs at least 3 trials");
  if (cfg.sizes.empty()) throw ArgumentError("bench needs at least one size");
  BenchResult out;
  const Rng root(Seed{cfg.seed});
  for (const auto& method : cfg.methods) {
    const nn::AnyModel<float>* model = nullptr;
    if (is_learned(method)) {
      auto it = models.find(method);
      if (it == models.end() || !it->second) throw ArgumentError(method + " timing needs a model");
      model = it->second;
    }
    std::vector<double> ns, ts;
    for (std::size_t n : cfg.sizes) {
      // Solver time varies a lot between instances, so every trial draws its own pair.
      Rng rng = root.substream("bench", n);
      auto timed_pair = [&] {
        const ShapeSpec su = random_shape(rng), sv = random_shape(rng);
        const PointCloud u = sample_shape_cloud(su, n, rng), v = sample_shape_cloud(sv, n, rng);
        return detail::time_once(method, u, v, cfg.sinkhorn, model);
      };
      timed_pair();  // warmup
      std::vector<double> runs;
      for (int t = 0; t < cfg.trials; ++t) runs.push_back(timed_pair());
      const double med = median(runs);
      out.samples.push_back({method, n, med, cfg.trials});
      ns.push_back(static_cast<double>(n));
      ts.push_back(med);
    }
    if (ns.size() >= 2) out.slopes[method] = loglog_slope(ns, ts);
  }
  return out;
}

}  // namespace emdkit
