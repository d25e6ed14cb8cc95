#pragma once

// Differentiable building blocks with explicit reverse passes. Every layer
// keeps its parameters as named dense tensors; a gradient accumulator is
// simply another instance of the same struct holding zeros.

#include "emdkit/core.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <vector>

namespace emdkit::nn {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename S>
using Col = Eigen::Matrix<S, Eigen::Dynamic, 1>;

template <typename S>
struct NamedTensor {
  std::string name;
  Mat<S>* value;
};

template <typename S>
using ParamList = std::vector<NamedTensor<S>>;

/// Tensors of a parameter struct in its canonical order.
template <typename P>
auto tensor_list(P& p) {
  ParamList<typename P::Scalar> out;
  p.collect(out, "");
  return out;
}

template <typename P>
P zeros_like(const P& p) {
  P z = p;
  for (auto& t : tensor_list(z)) t.value->setZero();
  return z;
}

template <typename P>
std::size_t parameter_count(const P& p) {
  P copy = p;
  std::size_t n = 0;
  for (auto& t : tensor_list(copy)) n += static_cast<std::size_t>(t.value->size());
  return n;
}

/// dst += src, tensor by tensor.
template <typename P>
void accumulate(P& dst, P& src) {
  auto d = tensor_list(dst);
  auto s = tensor_list(src);
  for (std::size_t i = 0; i < d.size(); ++i) *d[i].value += *s[i].value;
}

template <typename S>
Mat<S> to_tokens(const Matrix& points) {
  return points.template cast<S>();
}

// ---------------------------------------------------------------------------

/// y = x w + b, w stored in x out layout.
template <typename S>
struct Linear {
  using Scalar = S;
  Mat<S> w;
  Mat<S> b;  // 1 x out, empty when the layer has no bias

  static Linear init(Eigen::Index in, Eigen::Index out, Rng& rng, bool bias = true) {
    Linear l;
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    l.w.resize(in, out);
    for (Eigen::Index i = 0; i < l.w.size(); ++i) l.w.data()[i] = static_cast<S>(rng.uniform(-bound, bound));
    if (bias) {
      l.b.resize(1, out);
      for (Eigen::Index i = 0; i < l.b.size(); ++i) l.b.data()[i] = static_cast<S>(rng.uniform(-bound, bound));
    }
    return l;
  }

  Mat<S> forward(const Mat<S>& x) const {
    Mat<S> y(x.rows(), w.cols());
    y.noalias() = x * w;
    if (b.size()) y.rowwise() += b.row(0);
    return y;
  }

  Mat<S> backward(const Mat<S>& x, const Mat<S>& dy, Linear& g) const {
    g.w.noalias() += x.transpose() * dy;
    if (b.size()) g.b += dy.colwise().sum();
    Mat<S> dx(dy.rows(), w.rows());
    dx.noalias() = dy * w.transpose();
    return dx;
  }

  void collect(ParamList<S>& out, const std::string& prefix) {
    out.push_back({prefix + "w", &w});
    if (b.size()) out.push_back({prefix + "b", &b});
  }
};

template <typename S>
Mat<S> relu(const Mat<S>& x) {
  return x.cwiseMax(S(0));
}

/// Gradient through a ReLU given its output.
template <typename S>
Mat<S> relu_backward(const Mat<S>& y, const Mat<S>& dy) {
  return (y.array() > S(0)).select(dy, S(0));
}

// ---------------------------------------------------------------------------

template <typename S>
struct LayerNorm {
  using Scalar = S;
  static constexpr double kEps = 1e-5;
  Mat<S> gamma;
  Mat<S> beta;

  struct Cache {
    Mat<S> xhat;
    Col<S> inv_std;
  };

  static LayerNorm init(Eigen::Index d) {
    return {Mat<S>::Ones(1, d), Mat<S>::Zero(1, d)};
  }

  Mat<S> forward(const Mat<S>& x, Cache* cache) const {
    const S inv_d = S(1) / static_cast<S>(x.cols());
    Col<S> mean = x.rowwise().sum() * inv_d;
    Mat<S> centered = x.colwise() - mean;
    Col<S> var = centered.array().square().rowwise().sum() * inv_d;
    Col<S> inv_std = (var.array() + static_cast<S>(kEps)).rsqrt();
    Mat<S> xhat = centered.array().colwise() * inv_std.array();
    Mat<S> y = (xhat.array().rowwise() * gamma.row(0).array()).rowwise() + beta.row(0).array();
    if (cache) {
      cache->xhat = std::move(xhat);
      cache->inv_std = std::move(inv_std);
    }
    return y;
  }

  Mat<S> backward(const Mat<S>& dy, const Cache& c, LayerNorm& g) const {
    g.gamma += (dy.array() * c.xhat.array()).colwise().sum().matrix();
    g.beta += dy.colwise().sum();
    const S inv_d = S(1) / static_cast<S>(dy.cols());
    Mat<S> dxhat = dy.array().rowwise() * gamma.row(0).array();
    Col<S> mean_d = dxhat.rowwise().sum() * inv_d;
    Col<S> mean_dx = (dxhat.array() * c.xhat.array()).rowwise().sum() * inv_d;
    Mat<S> dx = ((dxhat.colwise() - mean_d).array() - c.xhat.array().colwise() * mean_dx.array()).colwise() *
                c.inv_std.array();
    return dx;
  }

  void collect(ParamList<S>& out, const std::string& prefix) {
    out.push_back({prefix + "gamma", &gamma});
    out.push_back({prefix + "beta", &beta});
  }
};

// ---------------------------------------------------------------------------

/// Row-wise softmax, max-shifted.
template <typename S, typename M>
void softmax_rows_inplace(M&& s) {
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    auto row = s.row(i);
    const S mx = row.maxCoeff();
    row = (row.array() - mx).exp();
    row /= row.sum();
  }
}

/// Multi-head full attention over all tokens.
template <typename S>
struct MultiHeadAttention {
  using Scalar = S;
  Linear<S> q, k, v, o;

  struct Cache {
    Mat<S> x, Q, K, V, concat;
    std::vector<Mat<S>> probs;
  };

  static MultiHeadAttention init(Eigen::Index d, Rng& rng) {
    MultiHeadAttention a;
    a.q = Linear<S>::init(d, d, rng);
    a.k = Linear<S>::init(d, d, rng);
    a.v = Linear<S>::init(d, d, rng);
    a.o = Linear<S>::init(d, d, rng);
    return a;
  }

  Mat<S> forward(const Mat<S>& x, int heads, S scale, Cache* cache) const {
    const Eigen::Index t = x.rows(), d = x.cols(), dk = d / heads;
    Mat<S> Q = q.forward(x), K = k.forward(x), V = v.forward(x);
    Mat<S> concat(t, d);
    if (cache) cache->probs.resize(static_cast<std::size_t>(heads));
    // Without a cache, scores are formed a row block at a time to stay in cache.
    const Eigen::Index block = cache ? t : std::min<Eigen::Index>(t, 128);
    Mat<S> scores;
    for (int h = 0; h < heads; ++h) {
      const auto Kh = K.middleCols(h * dk, dk);
      const auto Vh = V.middleCols(h * dk, dk);
      for (Eigen::Index r0 = 0; r0 < t; r0 += block) {
        const Eigen::Index rows = std::min(block, t - r0);
        scores.resize(rows, t);
        scores.noalias() = (Q.block(r0, h * dk, rows, dk) * scale) * Kh.transpose();
        if (cache) {
          softmax_rows_inplace<S>(scores);
          concat.block(r0, h * dk, rows, dk).noalias() = scores * Vh;
          cache->probs[static_cast<std::size_t>(h)] = scores;
        } else {
          // Normalize after the value product: rows x dk instead of rows x t divisions.
          Eigen::Array<S, Eigen::Dynamic, 1> z(rows);
          for (Eigen::Index i = 0; i < rows; ++i) {
            auto row = scores.row(i);
            row = (row.array() - row.maxCoeff()).exp();
            z(i) = row.sum();
          }
          auto out = concat.block(r0, h * dk, rows, dk);
          out.noalias() = scores * Vh;
          out.array().colwise() /= z;
        }
      }
    }
    Mat<S> y = o.forward(concat);
    if (cache) {
      cache->x = x;
      cache->Q = std::move(Q);
      cache->K = std::move(K);
      cache->V = std::move(V);
      cache->concat = std::move(concat);
    }
    return y;
  }

  Mat<S> backward(const Mat<S>& dy, const Cache& c, int heads, S scale, MultiHeadAttention& g) const {
    const Eigen::Index t = c.x.rows(), d = c.x.cols(), dk = d / heads;
    Mat<S> dconcat = o.backward(c.concat, dy, g.o);
    Mat<S> dQ(t, d), dK(t, d), dV(t, d);
    Mat<S> dP(t, t);
    for (int h = 0; h < heads; ++h) {
      const Mat<S>& P = c.probs[static_cast<std::size_t>(h)];
      const auto dOh = dconcat.middleCols(h * dk, dk);
      dV.middleCols(h * dk, dk).noalias() = P.transpose() * dOh;
      dP.noalias() = dOh * c.V.middleCols(h * dk, dk).transpose();
      // Softmax Jacobian: dS = P * (dP - rowsum(dP * P)).
      Col<S> dot = (dP.array() * P.array()).rowwise().sum();
      Mat<S> dS = P.array() * (dP.colwise() - dot).array();
      dS *= scale;
      dQ.middleCols(h * dk, dk).noalias() = dS * c.K.middleCols(h * dk, dk);
      dK.middleCols(h * dk, dk).noalias() = dS.transpose() * c.Q.middleCols(h * dk, dk);
    }
    Mat<S> dx = q.backward(c.x, dQ, g.q);
    dx += k.backward(c.x, dK, g.k);
    dx += v.backward(c.x, dV, g.v);
    return dx;
  }

  void collect(ParamList<S>& out, const std::string& prefix) {
    q.collect(out, prefix + "q.");
    k.collect(out, prefix + "k.");
    v.collect(out, prefix + "v.");
    o.collect(out, prefix + "o.");
  }
};

/// Post-norm encoder layer: x' = LN(x + MHA(x)); y = LN(x' + FFN(x')).
template <typename S>
struct EncoderLayer {
  using Scalar = S;
  MultiHeadAttention<S> attn;
  LayerNorm<S> ln1;
  Linear<S> ff1, ff2;
  LayerNorm<S> ln2;

  struct Cache {
    typename MultiHeadAttention<S>::Cache attn;
    typename LayerNorm<S>::Cache ln1, ln2;
    Mat<S> x1, hidden;
  };

  static EncoderLayer init(Eigen::Index d, Eigen::Index ffn, Rng& rng) {
    EncoderLayer e;
    e.attn = MultiHeadAttention<S>::init(d, rng);
    e.ln1 = LayerNorm<S>::init(d);
    e.ff1 = Linear<S>::init(d, ffn, rng);
    e.ff2 = Linear<S>::init(ffn, d, rng);
    e.ln2 = LayerNorm<S>::init(d);
    return e;
  }

  Mat<S> forward(const Mat<S>& x, int heads, S scale, Cache* c) const {
    Mat<S> x1 = ln1.forward(x + attn.forward(x, heads, scale, c ? &c->attn : nullptr), c ? &c->ln1 : nullptr);
    Mat<S> hidden = relu(ff1.forward(x1));
    Mat<S> y = ln2.forward(x1 + ff2.forward(hidden), c ? &c->ln2 : nullptr);
    if (c) {
      c->x1 = std::move(x1);
      c->hidden = std::move(hidden);
    }
    return y;
  }

  Mat<S> backward(const Mat<S>& dy, const Cache& c, int heads, S scale, EncoderLayer& g) const {
    Mat<S> dsum2 = ln2.backward(dy, c.ln2, g.ln2);
    Mat<S> dhidden = relu_backward(c.hidden, ff2.backward(c.hidden, dsum2, g.ff2));
    Mat<S> dx1 = dsum2 + ff1.backward(c.x1, dhidden, g.ff1);
    Mat<S> dsum1 = ln1.backward(dx1, c.ln1, g.ln1);
    return dsum1 + attn.backward(dsum1, c.attn, heads, scale, g.attn);
  }

  void collect(ParamList<S>& out, const std::string& prefix) {
    attn.collect(out, prefix + "attn.");
    ln1.collect(out, prefix + "ln1.");
    ff1.collect(out, prefix + "ff1.");
    ff2.collect(out, prefix + "ff2.");
    ln2.collect(out, prefix + "ln2.");
  }
};

/// Stack of affine maps with ReLU between consecutive layers (none after the last).
template <typename S>
struct Perceptron {
  using Scalar = S;
  std::vector<Linear<S>> layers;

  struct Cache {
    std::vector<Mat<S>> inputs;  // input to each layer (post-activation)
  };

  static Perceptron init(Eigen::Index in, const std::vector<int>& hidden, Eigen::Index out, Rng& rng) {
    Perceptron p;
    Eigen::Index prev = in;
    for (int h : hidden) {
      p.layers.push_back(Linear<S>::init(prev, h, rng));
      prev = h;
    }
    p.layers.push_back(Linear<S>::init(prev, out, rng));
    return p;
  }

  Mat<S> forward(const Mat<S>& x, Cache* c) const {
    Mat<S> a = x;
    if (c) c->inputs.clear();
    for (std::size_t l = 0; l < layers.size(); ++l) {
      if (c) c->inputs.push_back(a);
      a = layers[l].forward(a);
      if (l + 1 < layers.size()) a = relu(a);
    }
    return a;
  }

  Mat<S> backward(const Mat<S>& dy, const Cache& c, Perceptron& g) const {
    Mat<S> d = dy;
    for (std::size_t l = layers.size(); l-- > 0;) {
      d = layers[l].backward(c.inputs[l], d, g.layers[l]);
      if (l > 0) d = relu_backward(c.inputs[l], d);
    }
    return d;
  }

  void collect(ParamList<S>& out, const std::string& prefix) {
    for (std::size_t l = 0; l < layers.size(); ++l) layers[l].collect(out, prefix + std::to_string(l) + ".");
  }
};

}  // namespace emdkit::nn
