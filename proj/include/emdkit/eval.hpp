#pragma once

// Runs each distance method over a labeled pair set and collects EvalRecords.

#include "emdkit/approx_ot.hpp"
#include "emdkit/datagen.hpp"
#include "emdkit/exact_ot.hpp"
#include "emdkit/metrics.hpp"
#include "emdkit/nn/checkpoint.hpp"
#include "emdkit/nn/train.hpp"
#include "emdkit/parallel.hpp"

#include <set>

namespace emdkit {

inline const std::vector<std::string>& known_methods() {
  static const std::vector<std::string> names{"exact", "chamfer", "sinkhorn", "deepemd", "mlp"};
  return names;
}

inline bool is_learned(const std::string& method) { return method == "deepemd" || method == "mlp"; }

struct SinkhornOptions {
  int iters = 100;
  double lambda = kSinkhornDefaultRelativeLambda;
  bool absolute = false;  // lambda is a multiplier of the mean cost unless set
  double tol = kSinkhornDefaultTolerance;

  double resolve(const CostMatrix& c) const { return absolute ? lambda : relative_lambda(c, lambda); }
};

struct EvalOptions {
  std::vector<std::string> methods{"exact", "chamfer", "sinkhorn"};
  SinkhornOptions sinkhorn;
  std::size_t threads = 1;
};

struct MethodReport {
  std::string method;
  std::vector<EvalRecord> records;  // failed pairs omitted
  std::size_t failures = 0;
  std::size_t tie_degenerate = 0;
  MetricSummary summary;
  GradientCosines cosines;
};

namespace detail {

inline bool has_repeated_point(const PointCloud& c) {
  std::set<std::vector<double>> seen;
  for (std::size_t i = 0; i < c.size(); ++i) {
    const auto row = c.point(i);
    if (!seen.insert({row.begin(), row.end()}).second) return true;
  }
  return false;
}

}  // namespace detail

/// One record, or nullopt when the method fails numerically on this pair.
inline std::optional<EvalRecord> evaluate_pair(const std::string& method, std::size_t id, const LabeledPair& p,
                                               const SinkhornOptions& sk, const nn::AnyModel<float>* model) {
  const auto& u = p.pair.source;
  const auto& v = p.pair.target;
  EvalRecord r;
  r.pair_id = id;
  r.method = method;
  r.true_distance = p.distance;
  r.truth = p.matching;
  r.true_grad = emd_gradient(u, v, p.matching).grads;
  if (method == "exact") {
    const auto e = emd(u, v);
    r.predicted_distance = e.distance;
    r.predicted = SoftMatching::from(e.matching);
    r.estimated_grad = emd_gradient(u, v, e.matching).grads;
  } else if (method == "chamfer") {
    const auto c = chamfer(u, v, Norm::L2);
    r.predicted_distance = chamfer_emd_estimate(c);
    r.predicted = SoftMatching{c.nn_fwd, c.nn_bwd};
    r.estimated_grad = chamfer_gradient(u, v, c, Norm::L2).grads;
  } else if (method == "sinkhorn") {
    const CostMatrix c = pairwise_cost(u, v, Norm::L2);
    const auto s = sinkhorn(c, sk.resolve(c), sk.iters, sk.tol);
    if (!s.ok()) return std::nullopt;
    r.predicted_distance = sinkhorn_emd_estimate(s);
    r.predicted = sinkhorn_matching(s);
    r.estimated_grad = sinkhorn_gradient(u, v, s).grads;
  } else if (is_learned(method)) {
    if (!model) throw ArgumentError(method + " evaluation needs a checkpoint");
    const auto pr = std::visit([&](const auto& m) { return nn::predict(m, u, v); }, *model);
    if (!std::isfinite(pr.distance) || !pr.gradient.allFinite()) return std::nullopt;
    r.predicted_distance = pr.distance;
    r.predicted = pr.matching;
    r.estimated_grad = pr.gradient;
  } else {
    throw ArgumentError("unknown method: " + method);
  }
  return r;
}

inline MethodReport evaluate_method(const std::string& method, const std::vector<LabeledPair>& pairs,
                                    const EvalOptions& opt, const nn::AnyModel<float>* model) {
  if (is_learned(method)) {
    if (!model) throw ArgumentError(method + " evaluation needs a checkpoint");
    const bool kind_ok = method == "deepemd" ? std::holds_alternative<nn::DeepEmd<float>>(*model)
                                             : std::holds_alternative<nn::Mlp<float>>(*model);
    if (!kind_ok) throw ArgumentError("checkpoint does not hold a " + method + " model");
    const int d = nn::model_dim(*model);
    for (const auto& p : pairs)
      if (static_cast<int>(p.pair.source.dim()) != d)
        throw ArgumentError("checkpoint dimension " + std::to_string(d) + " does not match dataset dimension " +
                            std::to_string(p.pair.source.dim()));
  }
  std::vector<std::optional<EvalRecord>> slots(pairs.size());
  parallel_for(pairs.size(), opt.threads,
               [&](std::size_t k) { slots[k] = evaluate_pair(method, k, pairs[k], opt.sinkhorn, model); });
  MethodReport rep;
  rep.method = method;
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    if (detail::has_repeated_point(pairs[k].pair.source) || detail::has_repeated_point(pairs[k].pair.target))
      ++rep.tie_degenerate;
    if (slots[k])
      rep.records.push_back(std::move(*slots[k]));
    else
      ++rep.failures;
  }
  rep.summary = summarize(method, rep.records);
  rep.summary.tie_degenerate = rep.tie_degenerate;
  rep.cosines = gradient_cosines(rep.records);
  return rep;
}

}  // namespace emdkit
