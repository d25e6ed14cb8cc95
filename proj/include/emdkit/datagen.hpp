#pragma once

// Synthetic Syn2D shapes, point-cloud file ingestion, augmented pair
// construction and exact ground-truth labeling.

#include "emdkit/core.hpp"
#include "emdkit/exact_ot.hpp"
#include "emdkit/parallel.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>

namespace emdkit {

enum class ShapeKind { Circle, Square };

/// Parameters of one Syn2D outline. Circles use center/radius, squares use
/// center/rotation/scale (side length).
struct ShapeSpec {
  ShapeKind kind = ShapeKind::Circle;
  std::array<double, 2> center{0.5, 0.5};
  double radius = 0.5;
  double rotation = 0.0;
  double scale = 1.0;
};

enum class AugScheme { Original, NoiseTarget, AdditiveNoise, PerturbedResample, CorruptedOther };

inline constexpr std::array<AugScheme, 5> kAllSchemes{AugScheme::Original, AugScheme::NoiseTarget,
                                                      AugScheme::AdditiveNoise,
                                                      AugScheme::PerturbedResample,
                                                      AugScheme::CorruptedOther};

inline const char* to_string(AugScheme s) {
  switch (s) {
    case AugScheme::Original: return "original";
    case AugScheme::NoiseTarget: return "noise_target";
    case AugScheme::AdditiveNoise: return "additive_noise";
    case AugScheme::PerturbedResample: return "perturbed_resample";
    case AugScheme::CorruptedOther: return "corrupted_other";
  }
  return "?";
}

inline AugScheme parse_scheme(std::string_view name) {
  for (auto s : kAllSchemes)
    if (name == to_string(s)) return s;
  throw ArgumentError("unknown augmentation scheme: " + std::string(name));
}

struct CloudPair {
  PointCloud source;
  PointCloud target;
  AugScheme tag = AugScheme::Original;
};

struct LabeledPair {
  CloudPair pair;
  double distance;
  Matching matching;
};

// ---------------------------------------------------------------------------
// Shapes

namespace shape_ranges {
inline constexpr double kCircleCenterLo = 0.0, kCircleCenterHi = 1.0;
inline constexpr double kRadiusLo = 0.0, kRadiusHi = 1.0;
inline constexpr double kSquareCenterLo = -0.5, kSquareCenterHi = 0.5;
inline constexpr double kRotationLo = 0.0, kRotationHi = std::numbers::pi / 2.0;
inline constexpr double kScaleLo = 0.5, kScaleHi = 1.0;
inline constexpr double kPerturbFraction = 0.05;
// Lower clamp for the half-open (0, 1] ranges.
inline constexpr double kOpenFloor = 1e-6;
}  // namespace shape_ranges

inline ShapeSpec random_shape(Rng& rng) {
  using namespace shape_ranges;
  ShapeSpec s;
  s.kind = rng.coin() ? ShapeKind::Square : ShapeKind::Circle;
  if (s.kind == ShapeKind::Circle) {
    s.center = {rng.uniform_open_closed(kCircleCenterLo, kCircleCenterHi),
                rng.uniform_open_closed(kCircleCenterLo, kCircleCenterHi)};
    s.radius = rng.uniform_open_closed(kRadiusLo, kRadiusHi);
  } else {
    s.center = {rng.uniform(kSquareCenterLo, kSquareCenterHi), rng.uniform(kSquareCenterLo, kSquareCenterHi)};
    s.rotation = rng.uniform(kRotationLo, kRotationHi);
    s.scale = rng.uniform(kScaleLo, kScaleHi);
  }
  return s;
}

/// Jitters every parameter by up to 5% of its range, clamped back into range.
inline ShapeSpec perturb_shape(const ShapeSpec& s, Rng& rng) {
  using namespace shape_ranges;
  auto jitter = [&](double x, double lo, double hi, double floor) {
    const double span = (hi - lo) * kPerturbFraction;
    return std::clamp(x + rng.uniform(-span, span), floor, hi);
  };
  ShapeSpec p = s;
  if (s.kind == ShapeKind::Circle) {
    for (auto& c : p.center) c = jitter(c, kCircleCenterLo, kCircleCenterHi, kOpenFloor);
    p.radius = jitter(p.radius, kRadiusLo, kRadiusHi, kOpenFloor);
  } else {
    for (auto& c : p.center) c = jitter(c, kSquareCenterLo, kSquareCenterHi, kSquareCenterLo);
    p.rotation = jitter(p.rotation, kRotationLo, kRotationHi, kRotationLo);
    p.scale = jitter(p.scale, kScaleLo, kScaleHi, kScaleLo);
  }
  return p;
}

/// Point on the outline at curve parameter t in [0, 1).
inline std::array<double, 2> shape_point(const ShapeSpec& s, double t) {
  if (s.kind == ShapeKind::Circle) {
    const double angle = 2.0 * std::numbers::pi * t;
    return {s.center[0] + s.radius * std::cos(angle), s.center[1] + s.radius * std::sin(angle)};
  }
  const double h = 0.5 * s.scale;
  const double walk = 4.0 * t;
  const int side = std::min(3, static_cast<int>(walk));
  const double f = 2.0 * h * (walk - side);
  double x = 0.0, y = 0.0;
  switch (side) {
    case 0: x = -h + f; y = -h; break;
    case 1: x = h; y = -h + f; break;
    case 2: x = h - f; y = h; break;
    default: x = -h; y = h - f; break;
  }
  const double cr = std::cos(s.rotation), sr = std::sin(s.rotation);
  return {s.center[0] + cr * x - sr * y, s.center[1] + sr * x + cr * y};
}

/// Distance from p to the outline (zero on the curve).
inline double distance_to_shape(const ShapeSpec& s, std::array<double, 2> p) {
  const double dx = p[0] - s.center[0], dy = p[1] - s.center[1];
  if (s.kind == ShapeKind::Circle) return std::abs(std::hypot(dx, dy) - s.radius);
  const double cr = std::cos(s.rotation), sr = std::sin(s.rotation);
  const double x = std::abs(cr * dx + sr * dy), y = std::abs(-sr * dx + cr * dy);
  const double h = 0.5 * s.scale;
  if (x <= h && y <= h) return h - std::max(x, y);
  return std::hypot(std::max(x - h, 0.0), std::max(y - h, 0.0));
}

/// n points uniform along the outline (circumference or perimeter).
inline PointCloud sample_shape_cloud(const ShapeSpec& s, std::size_t n, Rng& rng) {
  if (n == 0) throw ArgumentError("need at least one point");
  Matrix pts(static_cast<Eigen::Index>(n), 2);
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    const auto p = shape_point(s, rng.uniform());
    pts(i, 0) = p[0];
    pts(i, 1) = p[1];
  }
  return PointCloud(std::move(pts));
}

inline constexpr double kNoiseSigmaLo = 0.1, kNoiseSigmaHi = 1.1;

/// Standard-normal points, all scaled by a single sigma.
inline PointCloud scaled_noise(const Matrix& unit_normals, double sigma) {
  return PointCloud(unit_normals * sigma);
}

inline PointCloud noise_cloud(std::size_t n, std::size_t d, Rng& rng) {
  if (n == 0) throw ArgumentError("need at least one point");
  const double sigma = rng.uniform(kNoiseSigmaLo, kNoiseSigmaHi);
  Matrix z(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = rng.normal();
  return scaled_noise(z, sigma);
}

// ---------------------------------------------------------------------------
// Pair construction

/// Deterministic core of the augmentation: builds the pair from already drawn
/// ingredients. `resampled` is the near-copy of u (perturbed shape or fresh
/// resample of the same source).
inline CloudPair compose_pair(const PointCloud& u, const PointCloud& v, AugScheme scheme,
                              const PointCloud& noise, const PointCloud& resampled) {
  if (u.size() != v.size() || u.dim() != v.dim() || noise.size() != u.size() ||
      noise.dim() != u.dim() || resampled.size() != u.size() || resampled.dim() != u.dim())
    throw ArgumentError("augmentation inputs differ in shape");
  switch (scheme) {
    case AugScheme::Original: return {u, v, scheme};
    case AugScheme::NoiseTarget: return {u, noise, scheme};
    case AugScheme::AdditiveNoise: return {u, PointCloud(u.points() + noise.points()), scheme};
    case AugScheme::PerturbedResample:
      return {u, PointCloud(resampled.points() + noise.points()), scheme};
    case AugScheme::CorruptedOther: return {u, PointCloud(v.points() + noise.points()), scheme};
  }
  throw ArgumentError("unknown augmentation scheme");
}

/// Uniform subsample of n rows without replacement (rows keep file order).
inline PointCloud subsample(const Matrix& full, std::size_t n, Rng& rng) {
  if (static_cast<std::size_t>(full.rows()) < n)
    throw IngestionError("cloud has " + std::to_string(full.rows()) + " points, need " + std::to_string(n));
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(full.rows()));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<Eigen::Index>(i);
  if (idx.size() > n) {
    // Partial Fisher-Yates, then restore file order.
    for (std::size_t i = 0; i < n; ++i) std::swap(idx[i], idx[i + rng.index(idx.size() - i)]);
    idx.resize(n);
    std::sort(idx.begin(), idx.end());
  }
  Matrix out(static_cast<Eigen::Index>(n), full.cols());
  for (std::size_t i = 0; i < n; ++i) out.row(static_cast<Eigen::Index>(i)) = full.row(idx[i]);
  return PointCloud(std::move(out));
}

/// Where a source cloud came from; needed to draw its near-copy.
struct CloudOrigin {
  std::optional<ShapeSpec> shape;
  const Matrix* file_points = nullptr;
};

inline CloudPair augment(const PointCloud& u, const PointCloud& v, AugScheme scheme, const CloudOrigin& origin,
                         Rng& rng) {
  const PointCloud noise = noise_cloud(u.size(), u.dim(), rng);
  if (scheme != AugScheme::PerturbedResample) return compose_pair(u, v, scheme, noise, u);
  if (origin.shape) {
    const ShapeSpec p = perturb_shape(*origin.shape, rng);
    return compose_pair(u, v, scheme, noise, sample_shape_cloud(p, u.size(), rng));
  }
  if (origin.file_points) return compose_pair(u, v, scheme, noise, subsample(*origin.file_points, u.size(), rng));
  throw ArgumentError("perturbed resample needs the source shape or file points");
}

// ---------------------------------------------------------------------------
// Cloud files: one point per line, whitespace-separated coordinates,
// blank lines and '#' comments ignored.

inline Matrix read_cloud_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open cloud file " + path.string());
  std::vector<double> flat;
  std::size_t dim = 0, line_no = 0;
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    std::vector<double> row;
    std::string tok;
    while (fields >> tok) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw IngestionError(path.string() + ":" + std::to_string(line_no) + ": malformed field '" + tok + "'");
      }
    }
    if (row.empty()) continue;
    if (dim == 0) dim = row.size();
    if (row.size() != dim)
      throw IngestionError(path.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(dim) +
                           " fields, got " + std::to_string(row.size()));
    flat.insert(flat.end(), row.begin(), row.end());
  }
  if (dim == 0) throw IngestionError(path.string() + ": no points");
  if (dim != 2 && dim != 3) throw IngestionError(path.string() + ": dimension must be 2 or 3");
  Matrix m(static_cast<Eigen::Index>(flat.size() / dim), static_cast<Eigen::Index>(dim));
  std::copy(flat.begin(), flat.end(), m.data());
  if (!m.allFinite()) throw IngestionError(path.string() + ": non-finite coordinates");
  return m;
}

inline void write_cloud_file(const std::filesystem::path& path, const PointCloud& cloud) {
  std::ofstream out(path);
  if (!out) throw IngestionError("cannot write cloud file " + path.string());
  char buf[64];
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    for (std::size_t k = 0; k < cloud.dim(); ++k) {
      std::snprintf(buf, sizeof buf, "%.17g", cloud.points()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)));
      out << (k ? " " : "") << buf;
    }
    out << '\n';
  }
}

/// Cloud files in `path` (a directory, sorted by name, or a single file).
inline std::vector<std::filesystem::path> list_cloud_files(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  if (fs::is_regular_file(path)) return {path};
  if (!fs::is_directory(path)) throw IngestionError("no such cloud directory: " + path.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(path))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IngestionError("no cloud files in " + path.string());
  return files;
}

/// Full-resolution clouds, checked for a common dimension.
inline std::vector<Matrix> read_cloud_dir(const std::filesystem::path& path) {
  std::vector<Matrix> clouds;
  std::vector<std::string> problems;
  for (const auto& f : list_cloud_files(path)) {
    try {
      clouds.push_back(read_cloud_file(f));
    } catch (const IngestionError& e) {
      problems.emplace_back(e.what());
    }
  }
  if (problems.empty() && !clouds.empty())
    for (std::size_t i = 1; i < clouds.size(); ++i)
      if (clouds[i].cols() != clouds[0].cols())
        problems.push_back("cloud " + std::to_string(i) + " has dimension " + std::to_string(clouds[i].cols()) +
                           ", expected " + std::to_string(clouds[0].cols()));
  if (!problems.empty()) {
    std::string msg = "cloud ingestion failed:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw IngestionError(msg);
  }
  return clouds;
}

/// Loads every cloud under `path`, subsampling each to exactly n points.
inline std::vector<PointCloud> load_clouds(const std::filesystem::path& path, std::size_t n, Rng& rng) {
  std::vector<PointCloud> out;
  for (const auto& full : read_cloud_dir(path)) out.push_back(subsample(full, n, rng));
  return out;
}

// ---------------------------------------------------------------------------
// Dataset building

enum class DataSource { Syn2D, Files };

struct DatasetConfig {
  DataSource source = DataSource::Syn2D;
  std::string files_dir;
  std::size_t points = 200;
  std::size_t train_pairs = 0;
  std::size_t val_pairs = 0;
  std::vector<AugScheme> schemes{kAllSchemes.begin(), kAllSchemes.end()};
  std::size_t threads = 1;
};

struct DatasetManifest {
  std::uint64_t seed = 0;
  std::map<std::string, std::size_t> counts;
  std::size_t points = 0;
  std::size_t dim = 0;
  std::map<std::string, double> scheme_proportions;
  std::string source;
};

struct Dataset {
  std::vector<LabeledPair> train;
  std::vector<LabeledPair> val;
  DatasetManifest manifest;
};

inline LabeledPair label_pair(CloudPair pair) {
  auto r = emd(pair.source, pair.target);
  return {std::move(pair), r.distance, std::move(r.matching)};
}

namespace detail {

inline std::vector<LabeledPair> build_split(const DatasetConfig& cfg, const std::vector<Matrix>& files,
                                            const Rng& split_rng, std::size_t count) {
  std::vector<std::optional<LabeledPair>> slots(count);
  // Each pair owns a sub-stream, so pairs can be built in any order.
  parallel_for(count, cfg.threads, [&](std::size_t k) {
    Rng rng = split_rng.substream("pair", k);
    const AugScheme scheme = cfg.schemes[k % cfg.schemes.size()];
    if (cfg.source == DataSource::Syn2D) {
      const ShapeSpec su = random_shape(rng), sv = random_shape(rng);
      const PointCloud u = sample_shape_cloud(su, cfg.points, rng);
      const PointCloud v = sample_shape_cloud(sv, cfg.points, rng);
      slots[k] = label_pair(augment(u, v, scheme, CloudOrigin{su, nullptr}, rng));
    } else {
      const std::size_t a = rng.index(files.size());
      std::size_t b = a;
      if (files.size() > 1) b = (a + 1 + rng.index(files.size() - 1)) % files.size();
      const PointCloud u = subsample(files[a], cfg.points, rng);
      const PointCloud v = subsample(files[b], cfg.points, rng);
      slots[k] = label_pair(augment(u, v, scheme, CloudOrigin{std::nullopt, &files[a]}, rng));
    }
  });
  std::vector<LabeledPair> out;
  out.reserve(count);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

}  // namespace detail

inline Dataset build_dataset(const DatasetConfig& cfg, Seed seed) {
  if (cfg.points == 0) throw ArgumentError("points per cloud must be positive");
  if (cfg.schemes.empty()) throw ArgumentError("need at least one augmentation scheme");
  std::vector<Matrix> files;
  std::size_t dim = 2;
  if (cfg.source == DataSource::Files) {
    files = read_cloud_dir(cfg.files_dir);
    dim = static_cast<std::size_t>(files.front().cols());
    for (std::size_t i = 0; i < files.size(); ++i)
      if (static_cast<std::size_t>(files[i].rows()) < cfg.points)
        throw IngestionError("cloud " + std::to_string(i) + " has fewer than " + std::to_string(cfg.points) +
                             " points");
  }
  const Rng data_rng = Rng(seed).substream("data");
  Dataset ds;
  ds.train = detail::build_split(cfg, files, data_rng.substream("train"), cfg.train_pairs);
  ds.val = detail::build_split(cfg, files, data_rng.substream("val"), cfg.val_pairs);

  auto& m = ds.manifest;
  m.seed = seed.value;
  m.counts = {{"train", ds.train.size()}, {"val", ds.val.size()}};
  m.points = cfg.points;
  m.dim = dim;
  m.source = cfg.source == DataSource::Syn2D ? "syn2d" : "files:" + cfg.files_dir;
  std::map<std::string, std::size_t> per_scheme;
  for (const auto* split : {&ds.train, &ds.val})
    for (const auto& p : *split) ++per_scheme[to_string(p.pair.tag)];
  const double total = static_cast<double>(ds.train.size() + ds.val.size());
  for (auto s : cfg.schemes)
    m.scheme_proportions[to_string(s)] = total > 0 ? static_cast<double>(per_scheme[to_string(s)]) / total : 0.0;
  return ds;
}

// ---------------------------------------------------------------------------
// Serialization: one JSON object per line, manifest as a sibling JSON file.

using ojson = nlohmann::ordered_json;

inline ojson cloud_to_json(const PointCloud& c) {
  ojson rows = ojson::array();
  for (std::size_t i = 0; i < c.size(); ++i) {
    ojson row = ojson::array();
    for (std::size_t k = 0; k < c.dim(); ++k)
      row.push_back(c.points()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline PointCloud cloud_from_json(const ojson& rows) {
  if (!rows.is_array() || rows.empty()) throw IngestionError("cloud must be a non-empty array of points");
  const std::size_t d = rows.at(0).size();
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != d) throw IngestionError("ragged cloud rows");
    for (std::size_t k = 0; k < d; ++k)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k].get<double>();
  }
  return PointCloud(std::move(m));
}

inline ojson to_json(const LabeledPair& p) {
  ojson j;
  j["source"] = cloud_to_json(p.pair.source);
  j["target"] = cloud_to_json(p.pair.target);
  j["tag"] = to_string(p.pair.tag);
  j["distance"] = p.distance;
  j["matching"] = p.matching.assign();
  return j;
}

inline LabeledPair labeled_pair_from_json(const ojson& j) {
  CloudPair pair{cloud_from_json(j.at("source")), cloud_from_json(j.at("target")),
                 parse_scheme(j.at("tag").get<std::string>())};
  if (pair.source.size() != pair.target.size() || pair.source.dim() != pair.target.dim())
    throw IngestionError("pair clouds differ in shape");
  Matching m(j.at("matching").get<std::vector<std::size_t>>());
  if (m.size() != pair.source.size()) throw IngestionError("matching length differs from cloud size");
  return {std::move(pair), j.at("distance").get<double>(), std::move(m)};
}

inline void write_pairs(const std::filesystem::path& path, const std::vector<LabeledPair>& pairs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestionError("cannot write " + path.string());
  for (const auto& p : pairs) out << to_json(p).dump() << '\n';
}

inline std::vector<LabeledPair> read_pairs(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open " + path.string());
  std::vector<LabeledPair> out;
  std::vector<std::string> problems;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(labeled_pair_from_json(ojson::parse(line)));
    } catch (const std::exception& e) {
      problems.push_back("record " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!problems.empty()) {
    std::string msg = "dataset " + path.string() + " has bad records:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw IngestionError(msg);
  }
  return out;
}

inline ojson to_json(const DatasetManifest& m) {
  ojson j;
  j["format"] = "emdkit-dataset/1";
  j["seed"] = m.seed;
  j["counts"] = m.counts;
  j["points"] = m.points;
  j["dim"] = m.dim;
  j["scheme_proportions"] = m.scheme_proportions;
  j["source"] = m.source;
  return j;
}

inline DatasetManifest manifest_from_json(const ojson& j) {
  DatasetManifest m;
  m.seed = j.at("seed").get<std::uint64_t>();
  m.counts = j.at("counts").get<std::map<std::string, std::size_t>>();
  m.points = j.at("points").get<std::size_t>();
  m.dim = j.at("dim").get<std::size_t>();
  m.scheme_proportions = j.at("scheme_proportions").get<std::map<std::string, double>>();
  m.source = j.at("source").get<std::string>();
  return m;
}

inline void write_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  std::filesystem::create_directories(dir);
  write_pairs(dir / "train.jsonl", ds.train);
  write_pairs(dir / "val.jsonl", ds.val);
  std::ofstream(dir / "manifest.json", std::ios::binary) << to_json(ds.manifest).dump(2) << '\n';
}

inline Dataset read_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw IngestionError("no manifest.json in " + dir.string());
  ds.manifest = manifest_from_json(ojson::parse(mf));
  ds.train = read_pairs(dir / "train.jsonl");
  if (std::filesystem::exists(dir / "val.jsonl")) ds.val = read_pairs(dir / "val.jsonl");
  if (ds.train.size() != ds.manifest.counts["train"] || ds.val.size() != ds.manifest.counts["val"])
    throw IngestionError("manifest counts do not match the records in " + dir.string());
  return ds;
}

}  // namespace emdkit
