#include "emdkit/approx_ot.hpp"
#include "emdkit/exact_ot.hpp"
#include "support.hpp"

#include <catch_amalgamated.hpp>

using namespace emdkit;
using Catch::Matchers::WithinAbs;

TEST_CASE("chamfer hand cases", "[chamfer]") {
  Rng rng(Seed{3});
  const auto x = test::random_cloud(20, 2, rng);
  CHECK(chamfer(x, x).distance == 0.0);
  const PointCloud u{{0, 0}, {1, 0}}, v{{1, 0.1}, {0, 0.1}};
  const auto r = chamfer(u, v, Norm::L2Squared);
  CHECK_THAT(r.distance, WithinAbs(0.04, 1e-15));
  CHECK(r.nn_fwd == std::vector<std::size_t>{1, 0});
  CHECK(r.nn_bwd == std::vector<std::size_t>{1, 0});
}

TEST_CASE("chamfer matches a double loop", "[chamfer]") {
  Rng rng(Seed{4});
  const auto u = test::random_cloud(64, 2, rng), v = test::random_cloud(64, 2, rng);
  for (Norm norm : {Norm::L2, Norm::L2Squared}) {
    double expect = 0;
    for (std::size_t i = 0; i < 64; ++i) {
      double best = 1e300;
      for (std::size_t j = 0; j < 64; ++j) {
        const double d = (u.point(i) - v.point(j)).squaredNorm();
        best = std::min(best, norm == Norm::L2 ? std::sqrt(d) : d);
      }
      expect += best;
    }
    for (std::size_t j = 0; j < 64; ++j) {
      double best = 1e300;
      for (std::size_t i = 0; i < 64; ++i) {
        const double d = (u.point(i) - v.point(j)).squaredNorm();
        best = std::min(best, norm == Norm::L2 ? std::sqrt(d) : d);
      }
      expect += best;
    }
    CHECK_THAT(chamfer(u, v, norm).distance, WithinAbs(expect, 1e-10));
  }
}

TEST_CASE("chamfer accepts clouds of different sizes", "[chamfer]") {
  const auto r = chamfer(PointCloud{{0, 0}}, PointCloud{{1, 0}, {2, 0}});
  CHECK_THAT(r.distance, WithinAbs(1.0 + 1.0 + 2.0, 1e-15));
  CHECK_THROWS_AS(chamfer(PointCloud{{0, 0}}, PointCloud{{0, 0, 0}}), ArgumentError);
}

TEST_CASE("chamfer gradient", "[chamfer]") {
  Rng rng(Seed{8});
  const auto x = test::random_cloud(10, 2, rng);
  CHECK(chamfer_gradient(x, x, chamfer(x, x)).grads.isZero());

  const PointCloud u{{0, 0}}, v{{3, 4}};
  const auto g = chamfer_gradient(u, v, chamfer(u, v)).grads;
  CHECK_THAT(g(0, 0), WithinAbs(1.2, 1e-15));
  CHECK_THAT(g(0, 1), WithinAbs(1.6, 1e-15));

  for (Norm norm : {Norm::L2, Norm::L2Squared})
    for (int rep = 0; rep < 10; ++rep) {
      const auto a = test::random_cloud(8, 2, rng), b = test::random_cloud(8, 2, rng);
      const Matrix num =
          test::numeric_gradient([&](const PointCloud& y) { return chamfer(a, y, norm).distance; }, b);
      CHECK(test::max_abs_diff(chamfer_gradient(a, b, chamfer(a, b, norm), norm).grads, num) <= 1e-4);
    }
}

TEST_CASE("sinkhorn on a constant cost is uniform", "[sinkhorn]") {
  const auto r = sinkhorn(CostMatrix(Matrix::Constant(5, 5, 0.7)), 0.1, 50);
  REQUIRE(r.ok());
  CHECK(r.status == SinkhornStatus::Converged);
  CHECK((r.plan.array() - 1.0 / 25).abs().maxCoeff() < 1e-15);
  CHECK_THAT(r.distance, WithinAbs(0.7, 1e-14));
  CHECK_THAT(sinkhorn_emd_estimate(r), WithinAbs(3.5, 1e-13));
}

TEST_CASE("sinkhorn 2x2 fixed point", "[sinkhorn]") {
  Matrix c(2, 2);
  c << 0, 1, 1, 0;
  const auto r = sinkhorn(CostMatrix(c), 0.1, 100);
  REQUIRE(r.ok());
  // Closed form: off-diagonal mass 0.5 e^{-10} / (1 + e^{-10}).
  const double off = 0.5 * std::exp(-10.0) / (1.0 + std::exp(-10.0));
  CHECK_THAT(r.plan(0, 1), WithinAbs(off, 1e-15));
  CHECK_THAT(r.plan(0, 0), WithinAbs(0.5 - off, 1e-15));
  CHECK(r.plan(0, 0) > 0.49);
  CHECK(r.plan(1, 1) > 0.49);
  CHECK(r.distance >= 0.0);
  CHECK_THAT(r.distance, WithinAbs(2 * off, 1e-15));
}

TEST_CASE("sinkhorn marginals and status", "[sinkhorn]") {
  Rng rng(Seed{12});
  const auto u = test::random_cloud(32, 2, rng), v = test::random_cloud(32, 2, rng);
  const auto c = pairwise_cost(u, v);
  const auto r = sinkhorn(c, relative_lambda(c), 10000);
  REQUIRE(r.status == SinkhornStatus::Converged);
  CHECK(r.marginal_violation <= kSinkhornDefaultTolerance);
  CHECK((r.plan.rowwise().sum().array() - 1.0 / 32).abs().maxCoeff() <= 1e-8);
  CHECK((r.plan.colwise().sum().array() - 1.0 / 32).abs().maxCoeff() <= 1e-12);
  // The entropic plan never beats the optimal assignment.
  CHECK(sinkhorn_emd_estimate(r) >= emd(u, v).distance - 1e-9);

  const auto short_run = sinkhorn(c, relative_lambda(c) * 0.05, 2);
  CHECK(short_run.status == SinkhornStatus::IterLimit);
  CHECK(short_run.iterations_run == 2);
}

TEST_CASE("sinkhorn reports underflow instead of crashing", "[sinkhorn]") {
  Rng rng(Seed{13});
  const auto u = test::random_cloud(16, 2, rng), v = test::random_cloud(16, 2, rng, 1.0);
  Matrix shifted = v.points();
  shifted.col(0).array() += 3.0;
  const auto c = pairwise_cost(u, PointCloud(shifted));
  const auto r = sinkhorn(c, 1e-3, 100);
  CHECK(r.status == SinkhornStatus::NumericalFailure);
  CHECK_FALSE(r.ok());
  CHECK(std::isnan(r.distance));
  CHECK_THROWS_AS(sinkhorn_matching(r), StateError);
  CHECK_THROWS_AS(sinkhorn_gradient(u, PointCloud(shifted), r), StateError);
  CHECK_THROWS_AS(sinkhorn(c, 0.0, 10), ArgumentError);
}

TEST_CASE("smaller regularization fails more often", "[sinkhorn]") {
  Rng rng(Seed{21});
  auto failures = [&](double lambda) {
    Rng local(Seed{99});
    int n = 0;
    for (int rep = 0; rep < 30; ++rep) {
      const auto u = test::random_cloud(32, 2, local), v = test::random_cloud(32, 2, local, 2.0);
      n += !sinkhorn(pairwise_cost(u, v), lambda, 200).ok();
    }
    return n;
  };
  const int tight = failures(0.002), loose = failures(0.02);
  CHECK(tight > loose);
  CHECK(loose == 0);
}

TEST_CASE("sinkhorn matching conventions", "[sinkhorn]") {
  SinkhornResult r;
  r.status = SinkhornStatus::Converged;
  r.plan.resize(2, 2);
  r.plan << 0.4, 0.1, 0.1, 0.4;
  auto sm = sinkhorn_matching(r);
  CHECK(sm.forward == std::vector<std::size_t>{0, 1});
  CHECK(sm.backward == std::vector<std::size_t>{0, 1});
  r.plan.setConstant(0.25);
  sm = sinkhorn_matching(r);
  CHECK(sm.forward == std::vector<std::size_t>{0, 0});
  CHECK(sm.backward == std::vector<std::size_t>{0, 0});
}

TEST_CASE("sinkhorn matching approaches the optimal one", "[sinkhorn]") {
  Rng rng(Seed{31});
  for (int rep = 0; rep < 10; ++rep) {
    const auto u = test::random_cloud(6, 2, rng);
    Matrix jittered = u.points();
    for (Eigen::Index k = 0; k < jittered.size(); ++k) jittered.data()[k] += rng.uniform(-0.05, 0.05);
    const PointCloud v(jittered);
    const auto exact = emd(u, v).matching;
    const auto r = sinkhorn(pairwise_cost(u, v), 0.01, 5000);
    REQUIRE(r.ok());
    const auto sm = sinkhorn_matching(r);
    int agree = 0;
    for (std::size_t i = 0; i < 6; ++i) agree += sm.forward[i] == exact[i];
    CHECK(agree >= 5);
  }
}

TEST_CASE("sinkhorn gradient", "[sinkhorn]") {
  Rng rng(Seed{41});
  SECTION("identity plan on identical clouds") {
    const auto x = test::random_cloud(6, 2, rng);
    const auto r = sinkhorn(pairwise_cost(x, x), 0.001, 1000);
    REQUIRE(r.ok());
    CHECK(sinkhorn_gradient(x, x, r).grads.cwiseAbs().maxCoeff() < 1e-6);
  }
  SECTION("one-hot plan reduces to the matching gradient") {
    const auto u = test::random_cloud(5, 2, rng), v = test::random_cloud(5, 2, rng);
    const Matching m({3, 0, 4, 1, 2});
    SinkhornResult r;
    r.status = SinkhornStatus::Converged;
    r.plan = Matrix::Zero(5, 5);
    for (std::size_t i = 0; i < 5; ++i) r.plan(i, m[i]) = 1.0 / 5;
    CHECK(test::max_abs_diff(5.0 * sinkhorn_gradient(u, v, r).grads, emd_gradient(u, v, m).grads) < 1e-15);
  }
  SECTION("finite differences with the plan frozen") {
    for (int rep = 0; rep < 10; ++rep) {
      const auto u = test::random_cloud(8, 2, rng), v = test::random_cloud(8, 2, rng);
      const auto c = pairwise_cost(u, v);
      const auto r = sinkhorn(c, relative_lambda(c), 100);
      REQUIRE(r.ok());
      const Matrix num = test::numeric_gradient(
          [&](const PointCloud& y) { return (r.plan.array() * pairwise_cost(u, y).values().array()).sum(); }, v);
      CHECK(test::max_abs_diff(sinkhorn_gradient(u, v, r).grads, num) <= 1e-4);
    }
  }
}
