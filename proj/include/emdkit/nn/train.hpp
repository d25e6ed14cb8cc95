#pragma once

// Supervised training of either architecture on labeled pairs: batched Adam
// epochs with deterministic batch order, per-epoch validation and
// best-by-validation snapshots.

#include "emdkit/datagen.hpp"
#include "emdkit/exact_ot.hpp"
#include "emdkit/metrics.hpp"
#include "emdkit/nn/checkpoint.hpp"
#include "emdkit/parallel.hpp"

#include <chrono>
#include <functional>
#include <limits>
#include <map>

namespace emdkit::nn {

class BatchingError : public ArgumentError {
 public:
  using ArgumentError::ArgumentError;
};

struct TrainConfig {
  std::string model = "deepemd";
  DeepEmdConfig deepemd;
  MlpConfig mlp;
  AdamConfig adam;
  int epochs = 1;
  int batch = 16;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::string dataset_hash;
};

/// Estimated distance and target-cloud gradient of a trained model.
struct Prediction {
  double distance;
  Matrix gradient;
  std::optional<SoftMatching> matching;
};

template <typename S>
Prediction predict(const DeepEmd<S>& net, const PointCloud& u, const PointCloud& v) {
  const SoftMatching sm = predict_matching(net.forward(u, v));
  return {estimate_distance(u, v, sm), surrogate_gradient(u, v, sm).grads, sm};
}

template <typename S>
Prediction predict(const Mlp<S>& net, const PointCloud& u, const PointCloud& v) {
  return {static_cast<double>(net.forward(u, v)), net.input_gradient(u, v).grads, std::nullopt};
}

/// Loss of one labeled pair plus its gradient, accumulated into `grads`.
template <typename S>
S example_loss_and_backward(const DeepEmd<S>& net, const LabeledPair& p, typename DeepEmd<S>::Params& grads) {
  return net.loss_and_backward(p.pair.source, p.pair.target, p.matching, grads);
}

template <typename S>
S example_loss_and_backward(const Mlp<S>& net, const LabeledPair& p, typename Mlp<S>::Params& grads) {
  const S pred = net.forward(p.pair.source, p.pair.target);
  const S target = static_cast<S>(p.distance);
  net.backward(p.pair.source, p.pair.target, S(2) * (pred - target), grads);
  return mlp_loss(pred, target);
}

/// Batches of equal cardinality. Order within and across batches comes from
/// the epoch's own sub-stream.
inline std::vector<std::vector<std::size_t>> make_batches(const std::vector<LabeledPair>& data, int batch,
                                                          Rng rng) {
  if (batch < 1) throw ArgumentError("batch size must be positive");
  std::map<std::size_t, std::vector<std::size_t>> by_size;
  for (std::size_t i = 0; i < data.size(); ++i) by_size[data[i].pair.source.size()].push_back(i);
  std::vector<std::vector<std::size_t>> batches;
  for (auto& [n, idx] : by_size) {
    rng.shuffle(idx.begin(), idx.end());
    for (std::size_t k = 0; k < idx.size(); k += static_cast<std::size_t>(batch))
      batches.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(k),
                           idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), k + batch)));
  }
  rng.shuffle(batches.begin(), batches.end());
  return batches;
}

/// Gradient buffers reused across steps, one per batch slot, so the summed
/// gradient does not depend on how slots are spread over workers.
template <typename Net>
struct StepScratch {
  std::vector<typename Net::Params> slots;
  std::vector<double> losses;
  typename Net::Params total;
};

/// Mean batch loss and its gradient (in `scratch.total`).
template <typename Net>
double batch_gradient(const Net& net, const std::vector<LabeledPair>& data, const std::vector<std::size_t>& batch,
                      std::size_t threads, StepScratch<Net>& scratch) {
  if (batch.empty()) throw BatchingError("empty batch");
  const std::size_t n = data[batch[0]].pair.source.size();
  for (auto i : batch)
    if (data[i].pair.source.size() != n || data[i].pair.target.size() != n)
      throw BatchingError("batch mixes cloud cardinalities");
  if (scratch.slots.size() < batch.size()) scratch.slots.resize(batch.size(), zeros_like(net.params()));
  scratch.losses.assign(batch.size(), 0.0);
  parallel_for(batch.size(), threads, [&](std::size_t k) {
    for (auto& t : tensor_list(scratch.slots[k])) t.value->setZero();
    scratch.losses[k] = static_cast<double>(example_loss_and_backward(net, data[batch[k]], scratch.slots[k]));
  });
  scratch.total = scratch.slots[0];
  for (std::size_t k = 1; k < batch.size(); ++k) accumulate(scratch.total, scratch.slots[k]);
  const auto inv = static_cast<typename Net::Scalar>(1.0 / static_cast<double>(batch.size()));
  for (auto& t : tensor_list(scratch.total)) *t.value *= inv;
  double loss = 0.0;
  for (double l : scratch.losses) loss += l;
  return loss / static_cast<double>(batch.size());
}

struct ValidationScore {
  double r = std::numeric_limits<double>::quiet_NaN();
  double cs50 = std::numeric_limits<double>::quiet_NaN();
};

template <typename Net>
ValidationScore validate(const Net& net, const std::vector<LabeledPair>& val, std::size_t threads) {
  ValidationScore s;
  if (val.empty()) return s;
  std::vector<EvalRecord> records(val.size());
  parallel_for(val.size(), threads, [&](std::size_t k) {
    const auto& p = val[k];
    const Prediction pr = predict(net, p.pair.source, p.pair.target);
    auto& r = records[k];
    r.true_distance = p.distance;
    r.predicted_distance = pr.distance;
    r.true_grad = emd_gradient(p.pair.source, p.pair.target, p.matching).grads;
    r.estimated_grad = pr.gradient;
  });
  const MetricSummary m = summarize("val", records);
  if (m.r) s.r = *m.r;
  if (m.cs50) s.cs50 = *m.cs50;
  return s;
}

template <typename Net>
Checkpoint snapshot(const std::string& kind, const nlohmann::ordered_json& config, Net& net,
                    const AdamState<typename Net::Scalar>& adam, const AdamConfig& adam_cfg, const TrainingMeta& meta) {
  auto params = tensor_list(net.params());
  Checkpoint c;
  c.model = kind;
  c.config = config;
  c.params = to_records(params);
  c.adam_step = adam.step;
  c.adam = adam_cfg;
  c.adam_m = to_records(params, adam.m);
  c.adam_v = to_records(params, adam.v);
  c.meta = meta;
  return c;
}

struct TrainOutcome {
  Checkpoint last;
  Checkpoint best;
  std::vector<EpochLog> log;  // with wall-clock seconds
};

namespace detail {

template <typename Net>
TrainOutcome run_training(Net net, const std::string& kind, const nlohmann::ordered_json& config,
                          const TrainConfig& cfg, const std::vector<LabeledPair>& train,
                          const std::vector<LabeledPair>& val, const Checkpoint* resume,
                          const Checkpoint* resume_best, const std::function<void(const EpochLog&)>& on_epoch) {
  using S = typename Net::Scalar;
  auto params = tensor_list(net.params());
  AdamState<S> adam = AdamState<S>::zeros_for(params);
  AdamConfig adam_cfg = cfg.adam;
  TrainingMeta meta;
  meta.seed = cfg.seed;
  meta.dataset_hash = cfg.dataset_hash;
  meta.batch = cfg.batch;
  TrainOutcome out;
  if (resume) {
    from_records(resume->params, params);
    adam.step = resume->adam_step;
    adam.m = mats_from_records(resume->adam_m, params);
    adam.v = mats_from_records(resume->adam_v, params);
    adam_cfg = resume->adam;
    meta = resume->meta;
    if (meta.batch != cfg.batch) throw ArgumentError("resumed run must keep the batch size");
    out.best = resume_best ? *resume_best : *resume;
  }

  const Rng root(Seed{cfg.seed});
  StepScratch<Net> scratch;
  const auto t0 = std::chrono::steady_clock::now();
  out.last = snapshot(kind, config, net, adam, adam_cfg, meta);
  if (!resume) out.best = out.last;
  for (int epoch = meta.epochs_done + 1; epoch <= cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (const auto& b : make_batches(train, cfg.batch, root.substream("batches", static_cast<std::uint64_t>(epoch)))) {
      const double loss = batch_gradient(net, train, b, cfg.threads, scratch);
      adam_step(params, tensor_list(scratch.total), adam, adam_cfg);
      loss_sum += loss * static_cast<double>(b.size());
      seen += b.size();
    }
    const ValidationScore vs = validate(net, val, cfg.threads);
    EpochLog e{epoch, seen ? loss_sum / static_cast<double>(seen) : 0.0, vs.r, vs.cs50,
               std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()};
    meta.epochs_done = epoch;
    meta.history.push_back({e.epoch, e.train_loss, e.val_r, e.val_cs50, 0.0});
    // NaN validation (no val split) never beats the incumbent; the last epoch stands in.
    const bool improved = std::isnan(vs.r) ? true : vs.r > meta.best_val_r;
    if (improved) {
      meta.best_epoch = epoch;
      if (!std::isnan(vs.r)) meta.best_val_r = vs.r;
    }
    out.last = snapshot(kind, config, net, adam, adam_cfg, meta);
    if (improved) out.best = out.last;
    out.log.push_back(e);
    if (on_epoch) on_epoch(e);
  }
  return out;
}

}  // namespace detail

inline std::string dataset_hash(const std::vector<LabeledPair>& data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : data) h = fnv1a(to_json(p).dump(), h);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Trains in single precision. `resume` continues a run bit-exactly from its
/// last checkpoint; `resume_best` is that run's best snapshot so far.
inline TrainOutcome train(const TrainConfig& cfg, const std::vector<LabeledPair>& train_set,
                          const std::vector<LabeledPair>& val_set, const Checkpoint* resume = nullptr,
                          const Checkpoint* resume_best = nullptr,
                          const std::function<void(const EpochLog&)>& on_epoch = {}) {
  if (train_set.empty()) throw ArgumentError("training set is empty");
  if (cfg.epochs < 0) throw ArgumentError("epochs must be nonnegative");
  const Rng model_rng = Rng(Seed{cfg.seed}).substream("model");
  if (resume && resume->model != cfg.model) throw ArgumentError("checkpoint holds a different model kind");
  if (cfg.model == "deepemd") {
    auto mcfg = resume ? deepemd_config_from_json(resume->config) : cfg.deepemd;
    return detail::run_training(DeepEmd<float>::init(mcfg, model_rng), "deepemd", to_json(mcfg), cfg, train_set,
                                val_set, resume, resume_best, on_epoch);
  }
  if (cfg.model == "mlp") {
    auto mcfg = resume ? mlp_config_from_json(resume->config) : cfg.mlp;
    return detail::run_training(Mlp<float>::init(mcfg, model_rng), "mlp", to_json(mcfg), cfg, train_set, val_set,
                                resume, resume_best, on_epoch);
  }
  throw ArgumentError("unknown model kind: " + cfg.model);
}

}  // namespace emdkit::nn
