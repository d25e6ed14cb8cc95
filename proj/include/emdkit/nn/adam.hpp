#pragma once

#include "emdkit/nn/layers.hpp"

#include <cstdint>

namespace emdkit::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

inline constexpr double kDeepEmdLearningRate = 1e-3;
inline constexpr double kMlpLearningRate = 1e-4;

/// First and second moments, one tensor per parameter tensor.
template <typename S>
struct AdamState {
  std::int64_t step = 0;
  std::vector<Mat<S>> m, v;

  static AdamState zeros_for(const ParamList<S>& params) {
    AdamState st;
    for (const auto& p : params) {
      st.m.push_back(Mat<S>::Zero(p.value->rows(), p.value->cols()));
      st.v.push_back(Mat<S>::Zero(p.value->rows(), p.value->cols()));
    }
    return st;
  }
};

/// One bias-corrected Adam update in place.
template <typename S>
void adam_step(const ParamList<S>& params, const ParamList<S>& grads, AdamState<S>& st, const AdamConfig& cfg) {
  if (params.size() != grads.size() || st.m.size() != params.size())
    throw ArgumentError("adam: parameter, gradient and state lists differ");
  ++st.step;
  const double t = static_cast<double>(st.step);
  const S b1 = static_cast<S>(cfg.beta1), b2 = static_cast<S>(cfg.beta2);
  const S c1 = static_cast<S>(1.0 / (1.0 - std::pow(cfg.beta1, t)));
  const S c2 = static_cast<S>(1.0 / (1.0 - std::pow(cfg.beta2, t)));
  const S lr = static_cast<S>(cfg.lr), eps = static_cast<S>(cfg.eps);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& m = st.m[k];
    auto& v = st.v[k];
    const auto& g = *grads[k].value;
    m = b1 * m + (S(1) - b1) * g;
    v = b2 * v + (S(1) - b2) * g.cwiseProduct(g);
    params[k].value->array() -= lr * (m.array() * c1) / ((v.array() * c2).sqrt() + eps);
  }
}

}  // namespace emdkit::nn
