#pragma once

// Distance regressor: a point-wise perceptron summed over each cloud, and a
// head applied to both concatenation orders so the output is symmetric.

#include "emdkit/nn/layers.hpp"

#include <nlohmann/json.hpp>

namespace emdkit::nn {

struct MlpConfig {
  int dim = 2;
  std::vector<int> backbone{4, 8, 16};
  int embedding = 128;
  std::vector<int> head{256, 128, 64, 16};

  void validate() const {
    if (dim != 2 && dim != 3) throw ArgumentError("mlp input dimension must be 2 or 3");
    if (embedding < 1) throw ArgumentError("bad mlp embedding size");
    for (int h : backbone)
      if (h < 1) throw ArgumentError("bad mlp hidden size");
    for (int h : head)
      if (h < 1) throw ArgumentError("bad mlp hidden size");
  }
};

inline nlohmann::ordered_json to_json(const MlpConfig& c) {
  return {{"dim", c.dim}, {"backbone", c.backbone}, {"embedding", c.embedding}, {"head", c.head}};
}

inline MlpConfig mlp_config_from_json(const nlohmann::ordered_json& j) {
  MlpConfig c;
  c.dim = j.at("dim").get<int>();
  c.backbone = j.at("backbone").get<std::vector<int>>();
  c.embedding = j.at("embedding").get<int>();
  c.head = j.at("head").get<std::vector<int>>();
  c.validate();
  return c;
}

template <typename S>
struct MlpParams {
  using Scalar = S;
  Perceptron<S> backbone;
  Perceptron<S> head;

  void collect(ParamList<S>& out, const std::string& prefix) {
    backbone.collect(out, prefix + "g.");
    head.collect(out, prefix + "h.");
  }
};

template <typename S>
class Mlp {
 public:
  using Scalar = S;
  using Params = MlpParams<S>;

  Mlp(MlpConfig cfg, Params params) : cfg_(std::move(cfg)), params_(std::move(params)) { cfg_.validate(); }

  static Mlp init(const MlpConfig& cfg, Rng rng) {
    cfg.validate();
    Params p;
    p.backbone = Perceptron<S>::init(cfg.dim, cfg.backbone, cfg.embedding, rng);
    p.head = Perceptron<S>::init(2 * cfg.embedding, cfg.head, 1, rng);
    return Mlp(cfg, std::move(p));
  }

  const MlpConfig& config() const { return cfg_; }
  Params& params() { return params_; }
  const Params& params() const { return params_; }

  /// h(e_u ++ e_v) + h(e_v ++ e_u). Each head pass is a separate 1-row
  /// evaluation, so swapping the clouds only swaps the two summands.
  S forward(const PointCloud& u, const PointCloud& v) const {
    check(u, v);
    const Mat<S> eu = embed(u, nullptr), ev = embed(v, nullptr);
    return head_value(concat(eu, ev), nullptr) + head_value(concat(ev, eu), nullptr);
  }

  struct Backward {
    S prediction;
    Mat<S> d_source;  // d prediction / d u, per point
    Mat<S> d_target;
  };

  /// Prediction and its gradient scaled by `seed` (d loss / d prediction),
  /// accumulating parameter gradients into `grads`.
  Backward backward(const PointCloud& u, const PointCloud& v, S seed, Params& grads) const {
    check(u, v);
    typename Perceptron<S>::Cache cu, cv, h1, h2;
    const Mat<S> eu = embed(u, &cu), ev = embed(v, &cv);
    const Mat<S> z1 = concat(eu, ev), z2 = concat(ev, eu);
    const S pred = head_value(z1, &h1) + head_value(z2, &h2);
    const Mat<S> dy = Mat<S>::Constant(1, 1, seed);
    const Mat<S> dz1 = params_.head.backward(dy, h1, grads.head);
    const Mat<S> dz2 = params_.head.backward(dy, h2, grads.head);
    const Eigen::Index e = cfg_.embedding;
    const Mat<S> deu = dz1.leftCols(e) + dz2.rightCols(e);
    const Mat<S> dev = dz1.rightCols(e) + dz2.leftCols(e);
    Backward out{pred, {}, {}};
    out.d_source = params_.backbone.backward(deu.replicate(static_cast<Eigen::Index>(u.size()), 1), cu,
                                             grads.backbone);
    out.d_target = params_.backbone.backward(dev.replicate(static_cast<Eigen::Index>(v.size()), 1), cv,
                                             grads.backbone);
    return out;
  }

  /// d prediction / d v, per target point.
  GradientField input_gradient(const PointCloud& u, const PointCloud& v) const {
    Params scratch = zeros_like(params_);
    return {backward(u, v, S(1), scratch).d_target.template cast<double>()};
  }

 private:
  void check(const PointCloud& u, const PointCloud& v) const {
    if (static_cast<int>(u.dim()) != cfg_.dim || static_cast<int>(v.dim()) != cfg_.dim)
      throw ArgumentError("cloud dimension does not match the model");
  }

  Mat<S> embed(const PointCloud& c, typename Perceptron<S>::Cache* cache) const {
    return params_.backbone.forward(to_tokens<S>(c.points()), cache).colwise().sum();
  }

  static Mat<S> concat(const Mat<S>& a, const Mat<S>& b) {
    Mat<S> z(1, a.cols() + b.cols());
    z << a, b;
    return z;
  }

  S head_value(const Mat<S>& z, typename Perceptron<S>::Cache* cache) const {
    return params_.head.forward(z, cache)(0, 0);
  }

  MlpConfig cfg_;
  Params params_;
};

/// Squared error of one prediction.
template <typename S>
S mlp_loss(S predicted, S target) {
  const S d = target - predicted;
  return d * d;
}

/// Mean squared error over a batch.
template <typename S>
S mlp_batch_loss(const std::vector<S>& predicted, const std::vector<S>& target) {
  if (predicted.size() != target.size() || predicted.empty()) throw ArgumentError("batch sizes differ");
  double sum = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) sum += mlp_loss(predicted[i], target[i]);
  return static_cast<S>(sum / static_cast<double>(predicted.size()));
}

}  // namespace emdkit::nn
