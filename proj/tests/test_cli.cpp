#include "emdkit/datagen.hpp"
#include "support.hpp"

#include <catch_amalgamated.hpp>
#include <nlohmann/json.hpp>

#include <sys/wait.h>

#include <fstream>
#include <sstream>

using namespace emdkit;
namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(EMDKIT_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines(const fs::path& p) {
  std::istringstream in(slurp(p));
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

nlohmann::json summary(const fs::path& dir) { return nlohmann::json::parse(slurp(dir / "summary.json")); }

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

}  // namespace

TEST_CASE("cli gen", "[cli]") {
  const auto dir = test::scratch_dir("cli_gen");
  REQUIRE(run("gen --pairs 100 --val-pairs 10 --points 16 --seed 4 --threads 2 --out " + q(dir / "a")) == 0);
  REQUIRE(run("gen --pairs 100 --val-pairs 10 --points 16 --seed 4 --threads 1 --out " + q(dir / "b")) == 0);
  CHECK(lines(dir / "a" / "train.jsonl").size() == 100);
  CHECK(lines(dir / "a" / "val.jsonl").size() == 10);
  for (const char* f : {"train.jsonl", "val.jsonl", "manifest.json"})
    CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
  CHECK(fs::exists(dir / "a" / "gen_config.toml"));
  const auto ds = read_dataset(dir / "a");
  CHECK(ds.train.front().pair.source.size() == 16);

  CHECK(run("gen --points 0 --out " + q(dir / "c")) == 2);
  CHECK(run("gen --schemes bogus --out " + q(dir / "c")) == 2);
  CHECK(run("gen --source files:" + q(dir / "missing") + " --out " + q(dir / "c")) == 2);
  CHECK(run("nonsense") == 2);
}

TEST_CASE("cli gen from cloud files", "[cli]") {
  const auto dir = test::scratch_dir("cli_files");
  Rng rng(Seed{1});
  fs::create_directories(dir / "clouds");
  for (int i = 0; i < 4; ++i) write_cloud_file(dir / "clouds" / ("c" + std::to_string(i) + ".xyz"), test::random_cloud(30, 3, rng));
  REQUIRE(run("gen --source files:" + q(dir / "clouds") + " --pairs 5 --points 10 --out " + q(dir / "ds")) == 0);
  const auto ds = read_dataset(dir / "ds");
  CHECK(ds.train.size() == 5);
  CHECK(ds.train.front().pair.source.dim() == 3);
  CHECK(run("gen --source files:" + q(dir / "clouds") + " --pairs 5 --points 31 --out " + q(dir / "x")) == 2);
}

TEST_CASE("cli train, eval and descend", "[cli]") {
  const auto dir = test::scratch_dir("cli_pipeline");
  const auto data = dir / "data", model = dir / "model";
  REQUIRE(run("gen --pairs 12 --val-pairs 6 --points 8 --seed 2 --out " + q(data)) == 0);
  const std::string tiny = " --layers 1 --heads 2 --dmodel 8 --batch 4 ";
  REQUIRE(run("train --data " + q(data) + tiny + "--epochs 2 --seed 2 --out " + q(model)) == 0);
  CHECK(fs::exists(model / "last.ckpt.json"));
  CHECK(fs::exists(model / "best.ckpt.json"));
  const auto metrics = lines(model / "metrics.csv");
  REQUIRE(metrics.size() == 3);
  CHECK(metrics[0] == "epoch,train_loss,val_r,val_cs50,wall_seconds");

  auto lr_of = [&](const std::string& extra, const std::string& name) {
    REQUIRE(run("train --data " + q(data) + tiny + "--epochs 0 --out " + q(dir / name) + extra) == 0);
    return nlohmann::json::parse(slurp(dir / name / "last.ckpt.json")).at("optimizer").at("lr").get<double>();
  };
  CHECK(lr_of("", "lr_deepemd") == 1e-3);
  CHECK(lr_of(" --model mlp", "lr_mlp") == 1e-4);
  CHECK(lr_of(" --lr 0.5", "lr_set") == 0.5);
  CHECK(run("train --data " + q(dir / "nothing") + " --out " + q(dir / "z")) == 2);

  SECTION("resume matches an uninterrupted run") {
    REQUIRE(run("train --data " + q(data) + tiny + "--epochs 1 --seed 2 --out " + q(dir / "half")) == 0);
    REQUIRE(run("train --data " + q(data) + tiny + "--epochs 2 --seed 2 --out " + q(dir / "half") + " --resume " +
                q(dir / "half" / "last.ckpt.json")) == 0);
    CHECK(slurp(dir / "half" / "last.ckpt.json") == slurp(model / "last.ckpt.json"));
    CHECK(slurp(dir / "half" / "best.ckpt.json") == slurp(model / "best.ckpt.json"));
    CHECK(lines(dir / "half" / "metrics.csv").size() == 3);
    CHECK(run("train --data " + q(data) + tiny + "--epochs 2 --seed 3 --out " + q(dir / "half") + " --resume " +
              q(dir / "half" / "last.ckpt.json")) == 2);
  }

  SECTION("eval") {
    REQUIRE(run("eval --methods exact,chamfer --data " + q(data) + " --out " + q(dir / "ev")) == 0);
    const auto s = summary(dir / "ev");
    CHECK(s["methods"]["exact"]["r"].get<double>() == Catch::Approx(1.0));
    CHECK(s["methods"]["exact"]["RE_0.5"].get<double>() == 0.0);
    for (const char* k : {"r", "rho", "tau", "RE_0.1", "RE_0.5", "RE_0.9", "CS_0.1", "CS_0.5", "CS_0.9", "accuracy", "B",
                          "B_corr"})
      CHECK(s["methods"]["chamfer"].contains(k));
    CHECK(lines(dir / "ev" / "eval_chamfer.csv").size() == 7);
    CHECK(lines(dir / "ev" / "cdf_chamfer.csv").size() == 202);

    REQUIRE(run("eval --methods deepemd --ckpt " + q(model / "best.ckpt.json") + " --data " + q(data) + " --out " +
                q(dir / "ev_model")) == 0);
    CHECK(summary(dir / "ev_model")["methods"]["deepemd"]["records"] == 6);
    CHECK(run("eval --methods deepemd --data " + q(data) + " --out " + q(dir / "x")) == 2);
    CHECK(run("eval --methods mlp --ckpt " + q(model / "best.ckpt.json") + " --data " + q(data) + " --out " +
              q(dir / "x")) == 2);
    CHECK(run("eval --methods exact --data " + q(data) + " --points 9 --out " + q(dir / "x")) == 2);

    Rng rng(Seed{1});
    fs::create_directories(dir / "c3");
    for (int i = 0; i < 3; ++i)
      write_cloud_file(dir / "c3" / ("c" + std::to_string(i) + ".xyz"), test::random_cloud(20, 3, rng));
    CHECK(run("eval --methods deepemd --ckpt " + q(model / "best.ckpt.json") + " --source files:" + q(dir / "c3") +
              " --pairs 2 --points 8 --out " + q(dir / "x")) == 2);
  }

  SECTION("sinkhorn improves with iterations") {
    // At the default regularization ten iterations are already near the entropic fixed point.
    const std::string gen = " --methods sinkhorn --lambda 0.02 --pairs 50 --points 32 --seed 5 --out ";
    REQUIRE(run("eval --iters 10" + gen + q(dir / "sk10")) == 0);
    REQUIRE(run("eval --iters 100" + gen + q(dir / "sk100")) == 0);
    CHECK(summary(dir / "sk100")["methods"]["sinkhorn"]["RE_0.5"].get<double>() <
          summary(dir / "sk10")["methods"]["sinkhorn"]["RE_0.5"].get<double>());
    CHECK(run("eval --methods sinkhorn --lambda 1e-3 --lambda-absolute --iters 100 --pairs 5 --points 16 --out " +
              q(dir / "skfail")) != 1);
  }

  SECTION("descend") {
    REQUIRE(run("descend --oracle --steps 0 --data " + q(data) + " --split val --out " + q(dir / "d0")) == 0);
    const auto pair = nlohmann::json::parse(slurp(dir / "d0" / "descend_pair.json"));
    const auto ds = read_dataset(data);
    CHECK(cloud_from_json(pair.at("target")).points() == ds.val.front().pair.target.points());
    CHECK(lines(dir / "d0" / "trajectory.csv").size() == 2);

    REQUIRE(run("descend --oracle --steps 50 --lr 0.01 --data " + q(data) + " --split val --out " + q(dir / "d1")) ==
            0);
    const auto traj = lines(dir / "d1" / "trajectory.csv");
    REQUIRE(traj.size() == 52);
    auto emd_at = [&](const std::string& row) { return std::stod(row.substr(row.find(',') + 1)); };
    CHECK(emd_at(traj.back()) < emd_at(traj[1]));
    REQUIRE(run("descend --ckpt " + q(model / "best.ckpt.json") + " --steps 3 --points 8 --out " + q(dir / "d2")) == 0);
    CHECK(run("descend --steps 3 --out " + q(dir / "x")) == 2);
  }
}

TEST_CASE("cli bench", "[cli]") {
  const auto dir = test::scratch_dir("cli_bench");
  REQUIRE(run("bench --methods exact,deepemd --Ns 8,16,32 --trials 3 --layers 1 --dmodel 8 --heads 2 --out " +
              q(dir)) == 0);
  const auto rows = lines(dir / "timing.csv");
  REQUIRE(rows.size() == 7);
  CHECK(rows[0] == "method,N,median_seconds,trials,slope");
  CHECK(run("bench --trials 2 --out " + q(dir)) == 2);
}
