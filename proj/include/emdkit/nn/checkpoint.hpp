#pragma once

// Checkpoint file: a single JSON document holding the model config, every
// parameter tensor by name and shape, the optimizer state and run metadata.

#include "emdkit/nn/adam.hpp"
#include "emdkit/nn/deepemd.hpp"
#include "emdkit/nn/mlp.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <variant>

namespace emdkit::nn {

inline constexpr const char* kCheckpointFormat = "emdkit-checkpoint/1";

struct TensorRecord {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> data;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_r = 0.0;
  double val_cs50 = 0.0;
  double wall_seconds = 0.0;
};

struct TrainingMeta {
  std::uint64_t seed = 0;
  std::string dataset_hash;
  int epochs_done = 0;
  int batch = 0;
  int best_epoch = 0;
  double best_val_r = -2.0;
  std::vector<EpochLog> history;  // wall time excluded
};

struct Checkpoint {
  std::string model;  // "mlp" or "deepemd"
  nlohmann::ordered_json config;
  std::vector<TensorRecord> params;
  std::int64_t adam_step = 0;
  AdamConfig adam;
  std::vector<TensorRecord> adam_m, adam_v;
  TrainingMeta meta;
};

template <typename S>
std::vector<TensorRecord> to_records(const ParamList<S>& list) {
  std::vector<TensorRecord> out;
  for (const auto& t : list) {
    TensorRecord r{t.name, {static_cast<std::size_t>(t.value->rows()), static_cast<std::size_t>(t.value->cols())}, {}};
    r.data.reserve(static_cast<std::size_t>(t.value->size()));
    for (Eigen::Index i = 0; i < t.value->size(); ++i) r.data.push_back(static_cast<double>(t.value->data()[i]));
    out.push_back(std::move(r));
  }
  return out;
}

template <typename S>
std::vector<TensorRecord> to_records(const ParamList<S>& names, const std::vector<Mat<S>>& values) {
  std::vector<TensorRecord> out;
  for (std::size_t k = 0; k < values.size(); ++k) {
    TensorRecord r{names[k].name, {static_cast<std::size_t>(values[k].rows()), static_cast<std::size_t>(values[k].cols())}, {}};
    for (Eigen::Index i = 0; i < values[k].size(); ++i) r.data.push_back(static_cast<double>(values[k].data()[i]));
    out.push_back(std::move(r));
  }
  return out;
}

/// Copies records into tensors with matching names and shapes.
template <typename S>
void from_records(const std::vector<TensorRecord>& records, const ParamList<S>& list) {
  if (records.size() != list.size())
    throw ArgumentError("checkpoint has " + std::to_string(records.size()) + " tensors, model expects " +
                        std::to_string(list.size()));
  for (std::size_t k = 0; k < list.size(); ++k) {
    const auto& r = records[k];
    auto& t = *list[k].value;
    if (r.name != list[k].name || r.shape.size() != 2 || r.shape[0] != static_cast<std::size_t>(t.rows()) ||
        r.shape[1] != static_cast<std::size_t>(t.cols()) || r.data.size() != static_cast<std::size_t>(t.size()))
      throw ArgumentError("checkpoint tensor '" + r.name + "' does not match model tensor '" + list[k].name + "'");
    for (std::size_t i = 0; i < r.data.size(); ++i) t.data()[i] = static_cast<S>(r.data[i]);
  }
}

template <typename S>
std::vector<Mat<S>> mats_from_records(const std::vector<TensorRecord>& records, const ParamList<S>& shapes) {
  std::vector<Mat<S>> out;
  for (const auto& p : shapes) out.push_back(Mat<S>::Zero(p.value->rows(), p.value->cols()));
  ParamList<S> refs;
  for (std::size_t k = 0; k < out.size(); ++k) refs.push_back({shapes[k].name, &out[k]});
  from_records(records, refs);
  return out;
}

// ---------------------------------------------------------------------------

inline nlohmann::ordered_json to_json(const TensorRecord& r) {
  return {{"name", r.name}, {"shape", r.shape}, {"data", r.data}};
}

inline TensorRecord tensor_from_json(const nlohmann::ordered_json& j) {
  return {j.at("name").get<std::string>(), j.at("shape").get<std::vector<std::size_t>>(),
          j.at("data").get<std::vector<double>>()};
}

// Non-finite values (no validation split) are stored as null.
inline nlohmann::ordered_json nullable(double x) {
  return std::isfinite(x) ? nlohmann::ordered_json(x) : nlohmann::ordered_json();
}

inline double from_nullable(const nlohmann::ordered_json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

inline nlohmann::ordered_json to_json(const EpochLog& e) {
  return {{"epoch", e.epoch},
          {"train_loss", nullable(e.train_loss)},
          {"val_r", nullable(e.val_r)},
          {"val_cs50", nullable(e.val_cs50)}};
}

inline nlohmann::ordered_json to_json(const Checkpoint& c) {
  using J = nlohmann::ordered_json;
  auto tensors = [](const std::vector<TensorRecord>& rs) {
    J a = J::array();
    for (const auto& r : rs) a.push_back(to_json(r));
    return a;
  };
  J history = J::array();
  for (const auto& e : c.meta.history) history.push_back(to_json(e));
  J j;
  j["format"] = kCheckpointFormat;
  j["model"] = c.model;
  j["config"] = c.config;
  j["params"] = tensors(c.params);
  j["optimizer"] = {{"kind", "adam"},       {"step", c.adam_step},     {"lr", c.adam.lr},
                    {"beta1", c.adam.beta1}, {"beta2", c.adam.beta2},   {"eps", c.adam.eps},
                    {"m", tensors(c.adam_m)}, {"v", tensors(c.adam_v)}};
  j["meta"] = {{"seed", c.meta.seed},
               {"dataset_hash", c.meta.dataset_hash},
               {"epochs_done", c.meta.epochs_done},
               {"batch", c.meta.batch},
               {"best_epoch", c.meta.best_epoch},
               {"best_val_r", nullable(c.meta.best_val_r)},
               {"history", history}};
  return j;
}

inline Checkpoint checkpoint_from_json(const nlohmann::ordered_json& j) {
  if (j.value("format", std::string{}) != kCheckpointFormat)
    throw IngestionError("not an emdkit checkpoint (format tag mismatch)");
  auto tensors = [](const nlohmann::ordered_json& a) {
    std::vector<TensorRecord> out;
    for (const auto& t : a) out.push_back(tensor_from_json(t));
    return out;
  };
  Checkpoint c;
  c.model = j.at("model").get<std::string>();
  c.config = j.at("config");
  c.params = tensors(j.at("params"));
  const auto& o = j.at("optimizer");
  c.adam_step = o.at("step").get<std::int64_t>();
  c.adam = {o.at("lr").get<double>(), o.at("beta1").get<double>(), o.at("beta2").get<double>(),
            o.at("eps").get<double>()};
  c.adam_m = tensors(o.at("m"));
  c.adam_v = tensors(o.at("v"));
  const auto& m = j.at("meta");
  c.meta.seed = m.at("seed").get<std::uint64_t>();
  c.meta.dataset_hash = m.at("dataset_hash").get<std::string>();
  c.meta.epochs_done = m.at("epochs_done").get<int>();
  c.meta.batch = m.at("batch").get<int>();
  c.meta.best_epoch = m.at("best_epoch").get<int>();
  c.meta.best_val_r = from_nullable(m.at("best_val_r"));
  for (const auto& e : m.at("history"))
    c.meta.history.push_back({e.at("epoch").get<int>(), from_nullable(e.at("train_loss")),
                              from_nullable(e.at("val_r")), from_nullable(e.at("val_cs50")), 0.0});
  return c;
}

inline std::string serialize(const Checkpoint& c) { return to_json(c).dump() + "\n"; }

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestionError("cannot write checkpoint " + path.string());
  out << serialize(c);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open checkpoint " + path.string());
  return checkpoint_from_json(nlohmann::ordered_json::parse(in));
}

// ---------------------------------------------------------------------------

/// A loaded model of either architecture.
template <typename S>
using AnyModel = std::variant<Mlp<S>, DeepEmd<S>>;

template <typename S>
AnyModel<S> model_from_checkpoint(const Checkpoint& c) {
  if (c.model == "deepemd") {
    auto cfg = deepemd_config_from_json(c.config);
    auto m = DeepEmd<S>::init(cfg, Rng(Seed{0}));
    from_records(c.params, tensor_list(m.params()));
    return m;
  }
  if (c.model == "mlp") {
    auto cfg = mlp_config_from_json(c.config);
    auto m = Mlp<S>::init(cfg, Rng(Seed{0}));
    from_records(c.params, tensor_list(m.params()));
    return m;
  }
  throw IngestionError("unknown model kind in checkpoint: " + c.model);
}

template <typename S>
int model_dim(const AnyModel<S>& m) {
  return std::visit([](const auto& x) { return x.config().dim; }, m);
}

}  // namespace emdkit::nn
