#include "emdkit/bench.hpp"
#include "emdkit/report.hpp"
#include "support.hpp"

#include <catch_amalgamated.hpp>

#include <sstream>

using namespace emdkit;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

TEST_CASE("correlations on hand cases", "[metrics]") {
  const std::vector<double> a{1, 2, 3, 4, 5}, rev{5, 4, 3, 2, 1};
  CHECK(pearson(a, a) == 1.0);
  CHECK(spearman(a, a) == 1.0);
  CHECK(kendall_tau(a, a) == 1.0);
  CHECK(pearson(a, rev) == -1.0);
  CHECK(spearman(a, rev) == -1.0);
  CHECK(kendall_tau(a, rev) == -1.0);
  CHECK_THAT(kendall_tau({1, 2, 3, 4}, {1, 3, 2, 4}), WithinAbs(2.0 / 3.0, 1e-15));
  CHECK_THAT(spearman({1, 2, 3, 4}, {1, 3, 2, 4}), WithinAbs(0.8, 1e-15));

  const std::vector<double> y{70, 29, 85, 61, 80, 34, 60, 31, 73, 66};
  CHECK_THAT(kendall_tau({17, 86, 60, 77, 47, 3, 70, 87, 88, 92}, y), WithinAbs(-0.06666666666666667, 1e-15));
  CHECK_THAT(kendall_tau({17, 86, 60, 77, 47, 3, 70, 47, 88, 92}, y), WithinAbs(0.04494665749754947, 1e-15));

  CHECK_THROWS_AS(pearson({1, 1, 1}, {1, 2, 3}), UndefinedCorrelation);
  CHECK_THROWS_AS(spearman({1, 2, 3}, {2, 2, 2}), UndefinedCorrelation);
  CHECK_THROWS_AS(kendall_tau({4, 4}, {1, 2}), UndefinedCorrelation);
  CHECK_THROWS_AS(pearson({1}, {1}), ArgumentError);
  CHECK_THROWS_AS(pearson({1, 2}, {1, 2, 3}), ArgumentError);
}

TEST_CASE("rank correlations ignore monotone transforms", "[metrics]") {
  Rng rng(Seed{1});
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<double> x, y, cubed;
    for (int i = 0; i < 30; ++i) {
      x.push_back(rng.uniform(-2, 2));
      y.push_back(x.back() + rng.uniform(-1, 1));
      cubed.push_back(x.back() * x.back() * x.back());
    }
    CHECK(spearman(x, y) == spearman(cubed, y));
    CHECK(kendall_tau(x, y) == kendall_tau(cubed, y));
    CHECK(pearson(x, y) == Catch::Approx(pearson(y, x)).epsilon(1e-14));
    CHECK(std::abs(pearson(x, y)) <= 1.0);
  }
}

TEST_CASE("quantiles interpolate linearly", "[metrics]") {
  CHECK(quantile({3, 1, 2}, 0.5) == 2.0);
  CHECK(quantile({1, 2, 3, 4}, 0.5) == 2.5);
  CHECK_THAT(quantile({0, 10}, 0.1), WithinAbs(1.0, 1e-15));
  CHECK(quantile({7}, 0.9) == 7.0);
  CHECK_THROWS_AS(quantile({}, 0.5), ArgumentError);
  CHECK_THROWS_AS(quantile({1}, 1.5), ArgumentError);
}

namespace {

EvalRecord record(double truth, double pred) {
  EvalRecord r;
  r.true_distance = truth;
  r.predicted_distance = pred;
  return r;
}

}  // namespace

TEST_CASE("relative error quantiles", "[metrics]") {
  const auto re = relative_errors({record(1, 1.1), record(1, 0.8), record(2, 2.6), record(0, 1)});
  CHECK(re.excluded == 1);
  CHECK_THAT(re.q.q50, WithinAbs(0.2, 1e-12));

  Rng rng(Seed{2});
  std::vector<EvalRecord> rs;
  for (int i = 0; i < 10000; ++i) rs.push_back(record(1.0, 1.0 + rng.uniform(0, 1)));
  CHECK_THAT(relative_errors(rs).q.q90, WithinAbs(0.9, 0.03));
}

TEST_CASE("gradient cosines", "[metrics]") {
  EvalRecord r;
  r.true_grad = PointCloud({{1, 0}, {0, 2}, {0, 0}, {1, 1}}).points();
  r.estimated_grad = PointCloud({{3, 0}, {0, -1}, {1, 0}, {0, 0}}).points();
  const auto cs = gradient_cosines({r});
  CHECK(cs.values == std::vector<double>{1.0, -1.0});
  CHECK(cs.skipped == 2);
  REQUIRE(cs.cdf.size() == 201);
  CHECK(cs.cdf.front().threshold == -1.0);
  CHECK(cs.cdf.back().threshold == 1.0);
  CHECK(cs.cdf.front().cumulative_fraction == 0.5);
  CHECK(cs.cdf[100].cumulative_fraction == 0.5);
  CHECK(cs.cdf.back().cumulative_fraction == 1.0);
  for (std::size_t k = 1; k < cs.cdf.size(); ++k)
    CHECK(cs.cdf[k].cumulative_fraction >= cs.cdf[k - 1].cumulative_fraction);

  Rng rng(Seed{3});
  EvalRecord big;
  big.true_grad = test::random_cloud(500, 2, rng, 2.0).points().array() - 1.0;
  big.estimated_grad = test::random_cloud(500, 2, rng, 2.0).points().array() - 1.0;
  const auto q = gradient_cosines({big}).q;
  CHECK(q.q10 <= q.q50);
  CHECK(q.q50 <= q.q90);
}

TEST_CASE("matching metrics", "[metrics]") {
  const Matching truth = Matching::identity(4);
  const auto c = matching_counts(truth, SoftMatching{{0, 0, 0, 0}, {0, 0, 0, 0}});
  CHECK(c.forward_correct == 1);
  CHECK(c.backward_correct == 1);
  CHECK(c.bipartite == 1);
  CHECK(c.bipartite_correct == 1);

  EvalRecord r;
  r.truth = truth;
  r.predicted = SoftMatching{{0, 0, 0, 0}, {0, 0, 0, 0}};
  auto m = matching_metrics({r});
  CHECK(m.accuracy == 25.0);
  CHECK(m.bipartite == 25.0);
  CHECK(m.bipartite_correct == 25.0);

  // A consistent but wrong swap is bipartite without being correct.
  r.predicted = SoftMatching{{1, 0, 2, 3}, {1, 0, 2, 3}};
  m = matching_metrics({r});
  CHECK(m.accuracy == 50.0);
  CHECK(m.bipartite == 100.0);
  CHECK(m.bipartite_correct == 50.0);

  Rng rng(Seed{4});
  for (int rep = 0; rep < 200; ++rep) {
    SoftMatching sm;
    for (int i = 0; i < 6; ++i) {
      sm.forward.push_back(rng.index(6));
      sm.backward.push_back(rng.index(6));
    }
    EvalRecord e;
    e.truth = Matching({3, 1, 4, 0, 5, 2});
    e.predicted = sm;
    const auto mm = matching_metrics({e});
    CHECK(mm.accuracy >= mm.bipartite_correct);
    CHECK(mm.bipartite >= mm.bipartite_correct);
  }
  CHECK_THROWS_AS(matching_counts(truth, SoftMatching{{0, 1}, {0, 1}}), ArgumentError);
}

TEST_CASE("exact solver scores perfectly against itself", "[metrics][eval]") {
  DatasetConfig cfg;
  cfg.points = 12;
  cfg.train_pairs = 30;
  const auto pairs = build_dataset(cfg, Seed{5}).train;
  const auto rep = evaluate_method("exact", pairs, EvalOptions{}, nullptr);
  const auto& s = rep.summary;
  CHECK(rep.failures == 0);
  CHECK(s.records == 30);
  CHECK(*s.r == Catch::Approx(1.0).epsilon(1e-12));
  CHECK(*s.re50 <= 1e-12);
  CHECK(*s.cs50 == Catch::Approx(1.0).epsilon(1e-12));
  CHECK(*s.accuracy == Catch::Approx(100.0));
  CHECK(*s.bipartite == Catch::Approx(100.0));
  CHECK(*s.bipartite_correct == Catch::Approx(100.0));

  const auto ch = evaluate_method("chamfer", pairs, EvalOptions{}, nullptr);
  CHECK(ch.summary.re90.has_value());
  CHECK(ch.summary.accuracy.has_value());
  CHECK_THROWS_AS(evaluate_method("deepemd", pairs, EvalOptions{}, nullptr), ArgumentError);
  CHECK_THROWS_AS(evaluate_method("bogus", pairs, EvalOptions{}, nullptr), ArgumentError);
}

TEST_CASE("evaluation does not depend on the thread count", "[metrics][eval]") {
  DatasetConfig cfg;
  cfg.points = 10;
  cfg.train_pairs = 20;
  const auto pairs = build_dataset(cfg, Seed{6}).train;
  EvalOptions one, many;
  many.threads = 4;
  for (const std::string m : {"chamfer", "sinkhorn"}) {
    std::ostringstream a, b;
    write_eval_csv(a, evaluate_method(m, pairs, one, nullptr));
    write_eval_csv(b, evaluate_method(m, pairs, many, nullptr));
    CHECK(a.str() == b.str());
  }
}

TEST_CASE("median and log-log slope", "[bench]") {
  CHECK(median({3, 1, 2}) == 2.0);
  CHECK(median({4, 1, 2, 3}) == 2.5);
  CHECK_THROWS_AS(median({}), ArgumentError);
  const std::vector<double> n{128, 256, 512, 1024};
  std::vector<double> t;
  for (double x : n) t.push_back(3e-9 * std::pow(x, 2.7));
  CHECK_THAT(loglog_slope(n, t), WithinAbs(2.7, 1e-12));
  CHECK_THROWS_AS(loglog_slope({1}, {1}), ArgumentError);
  CHECK_THROWS_AS(loglog_slope({1, 2}, {0, 1}), ArgumentError);
  CHECK_THROWS_AS(loglog_slope({2, 2}, {1, 3}), ArgumentError);
}

TEST_CASE("bench output schema", "[bench]") {
  BenchConfig cfg;
  cfg.methods = {"exact", "chamfer"};
  cfg.sizes = {8, 16, 32};
  cfg.trials = 3;
  const auto res = bench(cfg);
  CHECK(res.samples.size() == 6);
  CHECK(res.slopes.size() == 2);
  std::ostringstream os;
  write_timing_csv(os, res);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  CHECK(line == "method,N,median_seconds,trials,slope");
  int rows = 0;
  while (std::getline(is, line)) ++rows;
  CHECK(rows == 6);
  cfg.trials = 2;
  CHECK_THROWS_AS(bench(cfg), ArgumentError);
  cfg.trials = 3;
  cfg.methods = {"deepemd"};
  CHECK_THROWS_AS(bench(cfg), ArgumentError);
}

TEST_CASE("number formatting round-trips", "[report]") {
  CHECK(fmt(100.0) == "100");
  CHECK(fmt(0.1) == "0.1");
  CHECK(fmt(std::nan("")) == "nan");
  CHECK(fmt(-INFINITY) == "-inf");
  CHECK(fmt(std::optional<double>{}).empty());
  Rng rng(Seed{7});
  for (int i = 0; i < 1000; ++i) {
    const double x = rng.uniform(-1e6, 1e6) * std::pow(10.0, rng.uniform(-20, 20));
    CHECK(std::stod(fmt(x)) == x);
  }
}

TEST_CASE("summary json carries every metric", "[report]") {
  MethodReport rep;
  rep.method = "chamfer";
  rep.summary.method = "chamfer";
  rep.summary.r = 0.5;
  const auto j = summary_json({rep});
  const auto& m = j.at("methods").at("chamfer");
  for (const char* k : {"r", "rho", "tau", "RE_0.1", "RE_0.5", "RE_0.9", "CS_0.1", "CS_0.5", "CS_0.9", "accuracy",
                        "B", "B_corr", "failures", "tie_degenerate"})
    CHECK(m.contains(k));
  CHECK(m.at("r") == 0.5);
  CHECK(m.at("rho").is_null());
}
