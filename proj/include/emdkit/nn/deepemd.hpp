#pragma once

// Transformer matcher: both clouds are concatenated into one token sequence,
// tagged with a learned per-cloud embedding, encoded with full attention,
// and read out through a single-head attention whose off-diagonal blocks
// score source/target correspondences.

#include "emdkit/nn/layers.hpp"

#include <nlohmann/json.hpp>

namespace emdkit::nn {

struct DeepEmdConfig {
  int dim = 2;
  int layers = 8;
  int heads = 6;
  int d_model = 78;
  int ffn_mult = 4;
  // Attention logits are divided by d_k; true switches to sqrt(d_k).
  bool sqrt_scale = false;

  int head_dim() const { return d_model / heads; }
  int ffn_width() const { return ffn_mult * d_model; }

  void validate() const {
    if (dim != 2 && dim != 3) throw ArgumentError("deepemd input dimension must be 2 or 3");
    if (layers < 0 || heads < 1 || d_model < 1 || ffn_mult < 1) throw ArgumentError("bad deepemd config");
    if (d_model % heads != 0) throw ArgumentError("d_model must be divisible by heads");
  }
};

inline nlohmann::ordered_json to_json(const DeepEmdConfig& c) {
  return {{"dim", c.dim},           {"layers", c.layers},     {"heads", c.heads},
          {"d_model", c.d_model},   {"ffn_mult", c.ffn_mult}, {"sqrt_scale", c.sqrt_scale}};
}

inline DeepEmdConfig deepemd_config_from_json(const nlohmann::ordered_json& j) {
  DeepEmdConfig c;
  c.dim = j.at("dim").get<int>();
  c.layers = j.at("layers").get<int>();
  c.heads = j.at("heads").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.ffn_mult = j.at("ffn_mult").get<int>();
  c.sqrt_scale = j.at("sqrt_scale").get<bool>();
  c.validate();
  return c;
}

template <typename S>
struct DeepEmdParams {
  using Scalar = S;
  Linear<S> input;
  Mat<S> group;  // 2 x d_model: row 0 tags source tokens, row 1 target tokens
  std::vector<EncoderLayer<S>> layers;
  Mat<S> wq, wk;  // output head, d_model x d_model, no bias

  void collect(ParamList<S>& out, const std::string& prefix) {
    input.collect(out, prefix + "input.");
    out.push_back({prefix + "group", &group});
    for (std::size_t l = 0; l < layers.size(); ++l) layers[l].collect(out, prefix + "layer" + std::to_string(l) + ".");
    out.push_back({prefix + "head.wq", &wq});
    out.push_back({prefix + "head.wk", &wk});
  }
};

/// Correspondence logits: a_t(i, j) relates u_i to v_j, a_b(i, j) relates v_i to u_j.
template <typename S>
struct AttentionOutput {
  Mat<S> a_t;
  Mat<S> a_b;
};

template <typename S>
class DeepEmd {
 public:
  using Scalar = S;
  using Params = DeepEmdParams<S>;

  DeepEmd(DeepEmdConfig cfg, Params params) : cfg_(cfg), params_(std::move(params)) { cfg_.validate(); }

  static DeepEmd init(const DeepEmdConfig& cfg, Rng rng) {
    cfg.validate();
    Params p;
    const Eigen::Index d = cfg.d_model;
    p.input = Linear<S>::init(cfg.dim, d, rng);
    p.group = Mat<S>::Zero(2, d);
    for (int l = 0; l < cfg.layers; ++l) p.layers.push_back(EncoderLayer<S>::init(d, cfg.ffn_width(), rng));
    p.wq = Linear<S>::init(d, d, rng, false).w;
    p.wk = Linear<S>::init(d, d, rng, false).w;
    return DeepEmd(cfg, std::move(p));
  }

  const DeepEmdConfig& config() const { return cfg_; }
  Params& params() { return params_; }
  const Params& params() const { return params_; }

  AttentionOutput<S> forward(const PointCloud& u, const PointCloud& v) const {
    check(u, v);
    Mat<S> h = encode(u, v, nullptr);
    return head(h, u.size(), nullptr);
  }

  /// Mean cross-entropy of both directed blocks against the ground-truth matching.
  S loss(const PointCloud& u, const PointCloud& v, const Matching& m) const {
    return cross_entropy(forward(u, v), m, nullptr, nullptr);
  }

  /// Loss plus its gradient, accumulated into `grads`.
  S loss_and_backward(const PointCloud& u, const PointCloud& v, const Matching& m, Params& grads) const {
    check(u, v);
    const std::size_t n = u.size();
    if (m.size() != n) throw ArgumentError("matching does not fit the cloud pair");
    Cache cache;
    Mat<S> h = encode(u, v, &cache);
    HeadCache hc;
    AttentionOutput<S> out = head(h, n, &hc);
    Mat<S> da_t, da_b;
    const S l = cross_entropy(out, m, &da_t, &da_b);

    const Eigen::Index N = static_cast<Eigen::Index>(n);
    const S inv = S(1) / output_scale_divisor();
    Mat<S> dQo(2 * N, cfg_.d_model), dKo(2 * N, cfg_.d_model);
    dQo.topRows(N).noalias() = da_t * hc.K.bottomRows(N) * inv;
    dQo.bottomRows(N).noalias() = da_b * hc.K.topRows(N) * inv;
    dKo.bottomRows(N).noalias() = da_t.transpose() * hc.Q.topRows(N) * inv;
    dKo.topRows(N).noalias() = da_b.transpose() * hc.Q.bottomRows(N) * inv;
    grads.wq.noalias() += h.transpose() * dQo;
    grads.wk.noalias() += h.transpose() * dKo;
    Mat<S> dh = dQo * params_.wq.transpose();
    dh.noalias() += dKo * params_.wk.transpose();

    const S scale = encoder_scale();
    for (std::size_t l = params_.layers.size(); l-- > 0;)
      dh = params_.layers[l].backward(dh, cache.layers[l], cfg_.heads, scale, grads.layers[l]);
    grads.group.row(0) += dh.topRows(N).colwise().sum();
    grads.group.row(1) += dh.bottomRows(N).colwise().sum();
    params_.input.backward(cache.tokens, dh, grads.input);
    return l;
  }

  static S cross_entropy(const AttentionOutput<S>& out, const Matching& m, Mat<S>* da_t, Mat<S>* da_b) {
    const Eigen::Index n = out.a_t.rows();
    if (static_cast<Eigen::Index>(m.size()) != n) throw ArgumentError("matching does not fit the logits");
    const Matching inv = m.inverse();
    double total = 0.0;
    auto directed = [&](const Mat<S>& logits, const std::vector<std::size_t>& target, Mat<S>* grad) {
      double sum = 0.0;
      if (grad) grad->resize(n, n);
      for (Eigen::Index i = 0; i < n; ++i) {
        const auto row = logits.row(i);
        const S mx = row.maxCoeff();
        Eigen::Array<S, 1, Eigen::Dynamic> e = (row.array() - mx).exp();
        const S z = e.sum();
        const auto t = static_cast<Eigen::Index>(target[static_cast<std::size_t>(i)]);
        sum += static_cast<double>(std::log(z) + mx - row(t));
        if (grad) {
          grad->row(i) = (e / z).matrix();
          (*grad)(i, t) -= S(1);
          grad->row(i) /= static_cast<S>(n);
        }
      }
      return sum / static_cast<double>(n);
    };
    total += directed(out.a_t, m.assign(), da_t);
    total += directed(out.a_b, inv.assign(), da_b);
    return static_cast<S>(total);
  }

 private:
  struct Cache {
    Mat<S> tokens;
    std::vector<typename EncoderLayer<S>::Cache> layers;
  };
  struct HeadCache {
    Mat<S> Q, K;
  };

  void check(const PointCloud& u, const PointCloud& v) const {
    if (u.size() != v.size()) throw ArgumentError("deepemd needs clouds of equal size");
    if (u.dim() != v.dim() || static_cast<int>(u.dim()) != cfg_.dim)
      throw ArgumentError("cloud dimension does not match the model");
  }

  S encoder_scale() const {
    const double dk = cfg_.head_dim();
    return static_cast<S>(cfg_.sqrt_scale ? 1.0 / std::sqrt(dk) : 1.0 / dk);
  }
  S output_scale_divisor() const {
    const double dk = cfg_.d_model;
    return static_cast<S>(cfg_.sqrt_scale ? std::sqrt(dk) : dk);
  }

  Mat<S> encode(const PointCloud& u, const PointCloud& v, Cache* cache) const {
    const Eigen::Index n = static_cast<Eigen::Index>(u.size());
    Mat<S> tokens(2 * n, cfg_.dim);
    tokens.topRows(n) = to_tokens<S>(u.points());
    tokens.bottomRows(n) = to_tokens<S>(v.points());
    Mat<S> x = params_.input.forward(tokens);
    x.topRows(n).rowwise() += params_.group.row(0);
    x.bottomRows(n).rowwise() += params_.group.row(1);
    const S scale = encoder_scale();
    if (cache) {
      cache->tokens = std::move(tokens);
      cache->layers.resize(params_.layers.size());
    }
    for (std::size_t l = 0; l < params_.layers.size(); ++l)
      x = params_.layers[l].forward(x, cfg_.heads, scale, cache ? &cache->layers[l] : nullptr);
    return x;
  }

  AttentionOutput<S> head(const Mat<S>& h, std::size_t n_points, HeadCache* hc) const {
    const Eigen::Index n = static_cast<Eigen::Index>(n_points);
    Mat<S> Q = h * params_.wq;
    Mat<S> K = h * params_.wk;
    const S inv = S(1) / output_scale_divisor();
    AttentionOutput<S> out;
    out.a_t.noalias() = Q.topRows(n) * K.bottomRows(n).transpose() * inv;
    out.a_b.noalias() = Q.bottomRows(n) * K.topRows(n).transpose() * inv;
    if (hc) {
      hc->Q = std::move(Q);
      hc->K = std::move(K);
    }
    return out;
  }

  DeepEmdConfig cfg_;
  Params params_;
};

// ---------------------------------------------------------------------------
// Reading a matching and a distance off the logits.

/// Row argmax of each block; ties resolve to the smallest index.
template <typename S>
SoftMatching predict_matching(const AttentionOutput<S>& out) {
  SoftMatching sm;
  for (Eigen::Index i = 0; i < out.a_t.rows(); ++i)
    sm.forward.push_back(static_cast<std::size_t>(detail::argmax(out.a_t.row(i))));
  for (Eigen::Index i = 0; i < out.a_b.rows(); ++i)
    sm.backward.push_back(static_cast<std::size_t>(detail::argmax(out.a_b.row(i))));
  return sm;
}

/// Mean of the two directed matched-cost sums.
inline double estimate_distance(const PointCloud& u, const PointCloud& v, const SoftMatching& sm) {
  sm.validate(u.size());
  if (u.size() != v.size()) throw ArgumentError("clouds differ in size");
  double fwd = 0.0, bwd = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) fwd += (u.point(i) - v.point(sm.forward[i])).norm();
  for (std::size_t j = 0; j < v.size(); ++j) bwd += (v.point(j) - u.point(sm.backward[j])).norm();
  return 0.5 * (fwd + bwd);
}

/// Gradient of estimate_distance w.r.t. the target cloud with the matching frozen.
inline GradientField surrogate_gradient(const PointCloud& u, const PointCloud& v, const SoftMatching& sm) {
  sm.validate(u.size());
  if (u.size() != v.size()) throw ArgumentError("clouds differ in size");
  GradientField g{Matrix::Zero(v.points().rows(), v.points().cols())};
  for (std::size_t j = 0; j < v.size(); ++j)
    g.grads.row(static_cast<Eigen::Index>(j)) += 0.5 * detail::unit_direction(v.point(j), u.point(sm.backward[j]));
  for (std::size_t i = 0; i < u.size(); ++i)
    g.grads.row(static_cast<Eigen::Index>(sm.forward[i])) +=
        0.5 * detail::unit_direction(v.point(sm.forward[i]), u.point(i));
  return g;
}

}  // namespace emdkit::nn
