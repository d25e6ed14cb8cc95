#pragma once

// CSV and JSON writers for eval, timing, training and descent outputs.

#include "emdkit/bench.hpp"
#include "emdkit/eval.hpp"
#include "emdkit/nn/checkpoint.hpp"

#include <nlohmann/json.hpp>

#include <charconv>
#include <filesystem>
#include <fstream>
#include <ostream>

namespace emdkit {

/// Shortest round-trip text for a double; "nan"/"inf" spelled out.
inline std::string fmt(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

inline std::string fmt(const std::optional<double>& x) { return x ? fmt(*x) : std::string{}; }

inline std::ofstream open_output(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestionError("cannot write " + path.string());
  return out;
}

inline void write_eval_csv(std::ostream& os, const MethodReport& rep) {
  os << "pair_id,method,points,true_distance,predicted_distance,relative_error\n";
  for (const auto& r : rep.records) {
    const double re = r.true_distance > 0 ? std::abs(r.predicted_distance - r.true_distance) / r.true_distance
                                          : std::numeric_limits<double>::quiet_NaN();
    os << r.pair_id << ',' << r.method << ',' << r.true_grad.rows() << ',' << fmt(r.true_distance) << ','
       << fmt(r.predicted_distance) << ',' << fmt(re) << '\n';
  }
}

inline void write_cdf_csv(std::ostream& os, const GradientCosines& cs) {
  os << "threshold,cumulative_fraction\n";
  for (const auto& p : cs.cdf) os << fmt(p.threshold) << ',' << fmt(p.cumulative_fraction) << '\n';
}

inline nlohmann::ordered_json to_json(const MetricSummary& s) {
  auto opt = [](const std::optional<double>& x) { return x ? nlohmann::ordered_json(*x) : nlohmann::ordered_json(); };
  return {{"method", s.method},
          {"records", s.records},
          {"r", opt(s.r)},
          {"rho", opt(s.rho)},
          {"tau", opt(s.tau)},
          {"RE_0.1", opt(s.re10)},
          {"RE_0.5", opt(s.re50)},
          {"RE_0.9", opt(s.re90)},
          {"CS_0.1", opt(s.cs10)},
          {"CS_0.5", opt(s.cs50)},
          {"CS_0.9", opt(s.cs90)},
          {"accuracy", opt(s.accuracy)},
          {"B", opt(s.bipartite)},
          {"B_corr", opt(s.bipartite_correct)},
          {"re_excluded", s.re_excluded},
          {"cs_skipped", s.cs_skipped},
          {"tie_degenerate", s.tie_degenerate}};
}

inline nlohmann::ordered_json summary_json(const std::vector<MethodReport>& reports) {
  nlohmann::ordered_json methods = nlohmann::ordered_json::object();
  for (const auto& r : reports) {
    auto j = to_json(r.summary);
    j["failures"] = r.failures;
    methods[r.method] = j;
  }
  return {{"methods", methods}};
}

inline void write_timing_csv(std::ostream& os, const BenchResult& b) {
  os << "method,N,median_seconds,trials,slope\n";
  for (const auto& s : b.samples) {
    auto it = b.slopes.find(s.method);
    os << s.method << ',' << s.n << ',' << fmt(s.median_seconds) << ',' << s.trials << ','
       << (it == b.slopes.end() ? std::string{} : fmt(it->second)) << '\n';
  }
}

inline void write_metrics_header(std::ostream& os) { os << "epoch,train_loss,val_r,val_cs50,wall_seconds\n"; }

inline void write_metrics_row(std::ostream& os, const nn::EpochLog& e) {
  os << e.epoch << ',' << fmt(e.train_loss) << ',' << fmt(e.val_r) << ',' << fmt(e.val_cs50) << ','
     << fmt(e.wall_seconds) << '\n';
}

struct DescentStep {
  int step;
  double true_emd;
  double predicted;
};

inline void write_trajectory_csv(std::ostream& os, const std::vector<DescentStep>& steps) {
  os << "step,true_emd,predicted\n";
  for (const auto& s : steps) os << s.step << ',' << fmt(s.true_emd) << ',' << fmt(s.predicted) << '\n';
}

}  // namespace emdkit
