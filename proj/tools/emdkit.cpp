// emdkit command-line entry point: gen, train, eval, bench, descend.

#include "emdkit/descend.hpp"
#include "emdkit/report.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace fs = std::filesystem;
using namespace emdkit;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;

class NumericalFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Common {
  std::uint64_t seed = 0;
  std::size_t threads = default_threads();
  std::string out = ".";
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--seed", c.seed, "Random seed")->capture_default_str();
  sub->add_option("--threads", c.threads, "Worker threads (default: EMDKIT_THREADS or all cores)")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  sub->add_option("--out", c.out, "Output directory")->capture_default_str();
}

struct SourceOpts {
  std::string source = "syn2d";
  std::size_t pairs = 100;
  std::size_t points = 200;
};

DatasetConfig dataset_config(const SourceOpts& s, std::size_t threads) {
  DatasetConfig cfg;
  if (s.source == "syn2d") {
    cfg.source = DataSource::Syn2D;
  } else if (s.source.rfind("files:", 0) == 0 && s.source.size() > 6) {
    cfg.source = DataSource::Files;
    cfg.files_dir = s.source.substr(6);
  } else {
    throw ArgumentError("--source must be syn2d or files:<dir>");
  }
  if (s.points == 0) throw ArgumentError("--points must be positive");
  cfg.points = s.points;
  cfg.threads = threads;
  return cfg;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto end = s.find(',', start);
    const std::string item = s.substr(start, end == std::string::npos ? std::string::npos : end - start);
    if (!item.empty()) out.push_back(item);
    if (end == std::string::npos) break;
    start = end + 1;
  }
  return out;
}

void dump_config(const CLI::App* sub, const fs::path& dir) {
  open_output(dir / (sub->get_name() + "_config.toml")) << "[" << sub->get_name() << "]\n"
                                                           << sub->config_to_str(true, false);
}

std::vector<LabeledPair> load_split(const std::string& data, const std::string& split) {
  if (!fs::is_directory(data)) throw ArgumentError("dataset directory not found: " + data);
  Dataset ds = read_dataset(data);
  if (split == "train") return std::move(ds.train);
  if (split == "val") return std::move(ds.val);
  throw ArgumentError("--split must be train or val");
}

// ---------------------------------------------------------------------------

struct GenOpts {
  Common c;
  SourceOpts s;
  std::size_t val_pairs = 0;
  std::string schemes;
};

int run_gen(const CLI::App* sub, const GenOpts& o) {
  DatasetConfig cfg = dataset_config(o.s, o.c.threads);
  cfg.train_pairs = o.s.pairs;
  cfg.val_pairs = o.val_pairs;
  if (!o.schemes.empty()) {
    cfg.schemes.clear();
    for (const auto& name : split_list(o.schemes)) cfg.schemes.push_back(parse_scheme(name));
  }
  const Dataset ds = build_dataset(cfg, Seed{o.c.seed});
  write_dataset(o.c.out, ds);
  dump_config(sub, o.c.out);
  std::cout << "wrote " << ds.train.size() << " train and " << ds.val.size() << " val pairs (" << ds.manifest.points
            << " points, dim " << ds.manifest.dim << ") to " << o.c.out << "\n";
  for (const auto& [scheme, frac] : ds.manifest.scheme_proportions) std::cout << "  " << scheme << " " << frac << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct ModelOpts {
  std::string model = "deepemd";
  int layers = nn::DeepEmdConfig{}.layers;
  int heads = nn::DeepEmdConfig{}.heads;
  int dmodel = nn::DeepEmdConfig{}.d_model;
  bool sqrt_scale = false;
};

void add_model_opts(CLI::App* sub, ModelOpts& m) {
  sub->add_option("--model", m.model, "Architecture")->check(CLI::IsMember({"mlp", "deepemd"}))->capture_default_str();
  sub->add_option("--layers", m.layers, "Encoder layers")->check(CLI::PositiveNumber)->capture_default_str();
  sub->add_option("--heads", m.heads, "Attention heads")->check(CLI::PositiveNumber)->capture_default_str();
  sub->add_option("--dmodel", m.dmodel, "Model width")->check(CLI::PositiveNumber)->capture_default_str();
  sub->add_flag("--sqrt-scale", m.sqrt_scale, "Scale attention logits by 1/sqrt(d_k) instead of 1/d_k");
}

nn::DeepEmdConfig deepemd_config(const ModelOpts& m, int dim) {
  nn::DeepEmdConfig c;
  c.dim = dim;
  c.layers = m.layers;
  c.heads = m.heads;
  c.d_model = m.dmodel;
  c.sqrt_scale = m.sqrt_scale;
  c.validate();
  return c;
}

struct TrainOpts {
  Common c;
  ModelOpts m;
  std::string data;
  std::optional<double> lr;
  int epochs = 10;
  int batch = 16;
  std::string resume;
};

int run_train(const CLI::App* sub, const TrainOpts& o) {
  if (!fs::is_directory(o.data)) throw ArgumentError("dataset directory not found: " + o.data);
  const Dataset ds = read_dataset(o.data);
  const int dim = static_cast<int>(ds.manifest.dim);
  nn::TrainConfig cfg;
  cfg.model = o.m.model;
  cfg.deepemd = deepemd_config(o.m, dim);
  cfg.mlp.dim = dim;
  cfg.adam.lr = o.lr.value_or(o.m.model == "mlp" ? nn::kMlpLearningRate : nn::kDeepEmdLearningRate);
  if (!(cfg.adam.lr > 0)) throw ArgumentError("--lr must be positive");
  cfg.epochs = o.epochs;
  if (o.batch < 1) throw ArgumentError("--batch must be positive");
  cfg.batch = o.batch;
  cfg.seed = o.c.seed;
  cfg.threads = o.c.threads;
  cfg.dataset_hash = nn::dataset_hash(ds.train);

  const fs::path out = o.c.out;
  std::optional<nn::Checkpoint> resume, resume_best;
  if (!o.resume.empty()) {
    resume = nn::load_checkpoint(o.resume);
    if (resume->meta.dataset_hash != cfg.dataset_hash) throw ArgumentError("checkpoint was trained on another dataset");
    if (resume->meta.seed != cfg.seed) throw ArgumentError("resume needs the original --seed");
    if (fs::exists(out / "best.ckpt.json")) {
      auto b = nn::load_checkpoint(out / "best.ckpt.json");
      if (b.meta.dataset_hash == cfg.dataset_hash && b.meta.seed == cfg.seed &&
          b.meta.epochs_done <= resume->meta.epochs_done)
        resume_best = std::move(b);
    }
  }
  fs::create_directories(out);
  dump_config(sub, out);

  std::ofstream log;
  if (resume && fs::exists(out / "metrics.csv")) {
    log = std::ofstream(out / "metrics.csv", std::ios::binary | std::ios::app);
  } else {
    log = open_output(out / "metrics.csv");
    write_metrics_header(log);
  }
  const auto outcome = nn::train(cfg, ds.train, ds.val, resume ? &*resume : nullptr,
                                 resume_best ? &*resume_best : nullptr, [&](const nn::EpochLog& e) {
                                   write_metrics_row(log, e);
                                   log.flush();
                                   std::cout << "epoch " << e.epoch << " loss " << fmt(e.train_loss) << " val_r "
                                             << fmt(e.val_r) << " val_cs50 " << fmt(e.val_cs50) << "\n";
                                 });
  for (const auto& e : outcome.log)
    if (!std::isfinite(e.train_loss)) throw NumericalFailure("training loss became non-finite");
  nn::save_checkpoint(out / "last.ckpt.json", outcome.last);
  nn::save_checkpoint(out / "best.ckpt.json", outcome.best);
  std::cout << "best epoch " << outcome.best.meta.best_epoch << ", checkpoints in " << out.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct SinkhornCli {
  int iters = 100;
  double lambda = kSinkhornDefaultRelativeLambda;
  bool absolute = false;
};

void add_sinkhorn_opts(CLI::App* sub, SinkhornCli& s) {
  sub->add_option("--iters", s.iters, "Sinkhorn iterations")->check(CLI::PositiveNumber)->capture_default_str();
  sub->add_option("--lambda", s.lambda, "Sinkhorn regularization (multiple of the mean cost)")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  sub->add_flag("--lambda-absolute", s.absolute, "Treat --lambda as an absolute value");
}

SinkhornOptions sinkhorn_options(const SinkhornCli& s) { return {s.iters, s.lambda, s.absolute}; }

struct EvalOpts {
  Common c;
  SourceOpts s;
  SinkhornCli sk;
  std::string methods = "exact,chamfer,sinkhorn";
  std::string data;
  std::string split = "val";
  std::string ckpt;
};

std::vector<LabeledPair> eval_pairs(const CLI::App* sub, const std::string& data, const std::string& split,
                                    const SourceOpts& s, const Common& c) {
  if (!data.empty()) {
    if (sub->count("--points") || sub->count("--source") || sub->count("--pairs"))
      throw ArgumentError("--data cannot be combined with --source, --pairs or --points");
    return load_split(data, split);
  }
  DatasetConfig cfg = dataset_config(s, c.threads);
  cfg.val_pairs = s.pairs;
  return build_dataset(cfg, Seed{c.seed}).val;
}

int run_eval(const CLI::App* sub, const EvalOpts& o) {
  const auto methods = split_list(o.methods);
  if (methods.empty()) throw ArgumentError("--methods is empty");
  for (const auto& m : methods)
    if (std::find(known_methods().begin(), known_methods().end(), m) == known_methods().end())
      throw ArgumentError("unknown method: " + m);
  std::optional<nn::AnyModel<float>> model;
  if (std::any_of(methods.begin(), methods.end(), is_learned)) {
    if (o.ckpt.empty()) throw ArgumentError("learned methods need --ckpt");
    model = nn::model_from_checkpoint<float>(nn::load_checkpoint(o.ckpt));
  }
  const auto pairs = eval_pairs(sub, o.data, o.split, o.s, o.c);
  if (pairs.empty()) throw ArgumentError("no pairs to evaluate");

  EvalOptions opt;
  opt.sinkhorn = sinkhorn_options(o.sk);
  opt.threads = o.c.threads;
  const fs::path out = o.c.out;
  fs::create_directories(out);
  dump_config(sub, out);
  std::vector<MethodReport> reports;
  bool all_failed = false;
  for (const auto& m : methods) {
    reports.push_back(evaluate_method(m, pairs, opt, model ? &*model : nullptr));
    const auto& rep = reports.back();
    auto csv = open_output(out / ("eval_" + m + ".csv"));
    write_eval_csv(csv, rep);
    auto cdf = open_output(out / ("cdf_" + m + ".csv"));
    write_cdf_csv(cdf, rep.cosines);
    const auto& s = rep.summary;
    std::cout << m << ": r " << fmt(s.r) << " rho " << fmt(s.rho) << " tau " << fmt(s.tau) << " RE_0.5 "
              << fmt(s.re50) << " CS_0.5 " << fmt(s.cs50) << " accuracy " << fmt(s.accuracy);
    if (rep.failures) std::cout << " (" << rep.failures << " of " << pairs.size() << " pairs failed)";
    std::cout << "\n";
    all_failed = all_failed || rep.records.empty();
  }
  open_output(out / "summary.json") << summary_json(reports).dump(2) << '\n';
  if (all_failed) throw NumericalFailure("every pair failed for at least one method");
  return 0;
}

// ---------------------------------------------------------------------------

struct BenchOpts {
  Common c;
  ModelOpts m;
  SinkhornCli sk;
  std::string methods = "exact,deepemd";
  std::string ns = "128,256,512,1024";
  int trials = 5;
  std::string ckpt;
};

int run_bench(const CLI::App* sub, const BenchOpts& o) {
  BenchConfig cfg;
  cfg.methods = split_list(o.methods);
  cfg.sizes.clear();
  for (const auto& n : split_list(o.ns)) {
    std::size_t pos = 0;
    long v = 0;
    try {
      v = std::stol(n, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != n.size() || v < 1) throw ArgumentError("bad size in --Ns: " + n);
    cfg.sizes.push_back(static_cast<std::size_t>(v));
  }
  cfg.trials = o.trials;
  cfg.sinkhorn = sinkhorn_options(o.sk);
  cfg.seed = o.c.seed;

  std::map<std::string, nn::AnyModel<float>> owned;
  if (!o.ckpt.empty()) {
    const auto ck = nn::load_checkpoint(o.ckpt);
    owned.emplace(ck.model, nn::model_from_checkpoint<float>(ck));
  }
  const Rng init_rng = Rng(Seed{o.c.seed}).substream("bench-model");
  if (!owned.count("deepemd")) owned.emplace("deepemd", nn::DeepEmd<float>::init(deepemd_config(o.m, 2), init_rng));
  if (!owned.count("mlp")) owned.emplace("mlp", nn::Mlp<float>::init(nn::MlpConfig{}, init_rng));
  std::map<std::string, const nn::AnyModel<float>*> models;
  for (const auto& [k, v] : owned) models[k] = &v;

  const fs::path out = o.c.out;
  fs::create_directories(out);
  dump_config(sub, out);
  const BenchResult r = bench(cfg, models);
  auto csv = open_output(out / "timing.csv");
  write_timing_csv(csv, r);
  write_timing_csv(std::cout, r);
  return 0;
}

// ---------------------------------------------------------------------------

struct DescendOpts {
  Common c;
  SourceOpts s;
  std::string data;
  std::string split = "val";
  std::size_t index = 0;
  std::string ckpt;
  bool oracle = false;
  int steps = 100;
  double lr = 1e-2;
};

int run_descend(const CLI::App* sub, const DescendOpts& o) {
  std::optional<nn::AnyModel<float>> model;
  if (!o.oracle) {
    if (o.ckpt.empty()) throw ArgumentError("descend needs --ckpt or --oracle");
    model = nn::model_from_checkpoint<float>(nn::load_checkpoint(o.ckpt));
  }
  SourceOpts s = o.s;
  if (o.data.empty() && !sub->count("--pairs")) s.pairs = o.index + 1;
  const auto pairs = eval_pairs(sub, o.data, o.split, s, o.c);
  if (o.index >= pairs.size()) throw ArgumentError("--index is past the last pair");
  const auto& p = pairs[o.index].pair;
  if (model && static_cast<std::size_t>(nn::model_dim(*model)) != p.source.dim())
    throw ArgumentError("checkpoint dimension does not match the pair");
  const fs::path out = o.c.out;
  fs::create_directories(out);
  dump_config(sub, out);
  const DescentResult r = descend(p.source, p.target, o.steps, o.lr, model ? &*model : nullptr);
  auto csv = open_output(out / "trajectory.csv");
  write_trajectory_csv(csv, r.steps);
  open_output(out / "descend_pair.json")
      << nlohmann::ordered_json{{"source", cloud_to_json(p.source)}, {"target", cloud_to_json(r.target)}}.dump()
      << '\n';
  std::cout << "true EMD " << fmt(r.steps.front().true_emd) << " -> " << fmt(r.steps.back().true_emd) << " after "
            << o.steps << " steps\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Earth mover's distance toolkit for point clouds"};
  app.set_config("--config", "", "Key-value config file (flags override it)");
  app.require_subcommand(1);

  GenOpts gen;
  auto* gen_cmd = app.add_subcommand("gen", "Generate a labeled pair dataset");
  add_common(gen_cmd, gen.c);
  gen_cmd->add_option("--source", gen.s.source, "syn2d or files:<dir>")->capture_default_str();
  gen_cmd->add_option("--pairs", gen.s.pairs, "Training pairs")->capture_default_str();
  gen_cmd->add_option("--val-pairs", gen.val_pairs, "Validation pairs")->capture_default_str();
  gen_cmd->add_option("--points", gen.s.points, "Points per cloud")->capture_default_str();
  gen_cmd->add_option("--schemes", gen.schemes, "Comma-separated augmentation schemes (default: all)");

  TrainOpts train;
  auto* train_cmd = app.add_subcommand("train", "Train a model on a generated dataset");
  add_common(train_cmd, train.c);
  add_model_opts(train_cmd, train.m);
  train_cmd->add_option("--data", train.data, "Dataset directory")->required();
  train_cmd->add_option("--lr", train.lr, "Learning rate (default 1e-3 for deepemd, 1e-4 for mlp)");
  train_cmd->add_option("--epochs", train.epochs, "Total epochs")->check(CLI::NonNegativeNumber)->capture_default_str();
  train_cmd->add_option("--batch", train.batch, "Pairs per batch")->capture_default_str();
  train_cmd->add_option("--resume", train.resume, "Checkpoint to continue from");

  EvalOpts ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate distance methods against exact EMD");
  add_common(eval_cmd, ev.c);
  add_sinkhorn_opts(eval_cmd, ev.sk);
  eval_cmd->add_option("--methods", ev.methods, "exact, chamfer, sinkhorn, deepemd, mlp")->capture_default_str();
  eval_cmd->add_option("--data", ev.data, "Dataset directory (otherwise pairs are generated)");
  eval_cmd->add_option("--split", ev.split, "Dataset split")->check(CLI::IsMember({"train", "val"}))->capture_default_str();
  eval_cmd->add_option("--ckpt", ev.ckpt, "Checkpoint for learned methods");
  eval_cmd->add_option("--source", ev.s.source, "syn2d or files:<dir> for generated pairs")->capture_default_str();
  eval_cmd->add_option("--pairs", ev.s.pairs, "Generated pairs")->capture_default_str();
  eval_cmd->add_option("--points", ev.s.points, "Points per generated cloud")->capture_default_str();

  BenchOpts bn;
  auto* bench_cmd = app.add_subcommand("bench", "Time methods over cloud sizes");
  add_common(bench_cmd, bn.c);
  add_model_opts(bench_cmd, bn.m);
  add_sinkhorn_opts(bench_cmd, bn.sk);
  bench_cmd->add_option("--methods", bn.methods, "Methods to time")->capture_default_str();
  bench_cmd->add_option("--Ns", bn.ns, "Comma-separated cloud sizes")->capture_default_str();
  bench_cmd->add_option("--trials", bn.trials, "Timed trials per size, one random pair each (after one warmup pair)")
      ->check(CLI::Range(3, 1000))
      ->capture_default_str();
  bench_cmd->add_option("--ckpt", bn.ckpt, "Checkpoint to time (default: untrained model from flags)");

  DescendOpts ds;
  auto* descend_cmd = app.add_subcommand("descend", "Gradient descent of a target cloud toward a source");
  add_common(descend_cmd, ds.c);
  descend_cmd->add_option("--ckpt", ds.ckpt, "Model whose gradient drives the descent");
  descend_cmd->add_flag("--oracle", ds.oracle, "Use the exact EMD gradient instead of a model");
  descend_cmd->add_option("--steps", ds.steps, "Gradient steps")->check(CLI::NonNegativeNumber)->capture_default_str();
  descend_cmd->add_option("--lr", ds.lr, "Step size")->check(CLI::PositiveNumber)->capture_default_str();
  descend_cmd->add_option("--data", ds.data, "Dataset directory (otherwise the pair is generated)");
  descend_cmd->add_option("--split", ds.split, "Dataset split")->check(CLI::IsMember({"train", "val"}))->capture_default_str();
  descend_cmd->add_option("--index", ds.index, "Pair index within the split")->capture_default_str();
  descend_cmd->add_option("--source", ds.s.source, "syn2d or files:<dir> for a generated pair")->capture_default_str();
  descend_cmd->add_option("--pairs", ds.s.pairs, "Generated pairs to draw from");
  descend_cmd->add_option("--points", ds.s.points, "Points per generated cloud")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (gen_cmd->parsed()) return run_gen(gen_cmd, gen);
    if (train_cmd->parsed()) return run_train(train_cmd, train);
    if (eval_cmd->parsed()) return run_eval(eval_cmd, ev);
    if (bench_cmd->parsed()) return run_bench(bench_cmd, bn);
    if (descend_cmd->parsed()) return run_descend(descend_cmd, ds);
  } catch (const NumericalFailure& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const IngestionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: malformed input: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitUsage;
}
