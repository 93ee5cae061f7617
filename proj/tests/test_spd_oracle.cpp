#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include <Eigen/Dense>

#include "odergru/errors.hpp"
#include "odergru/spd_oracle.hpp"
#include "odergru/verify.hpp"
#include "test_util.hpp"

using namespace odergru;

namespace {

SpdPoint random_spd(std::size_t d, std::mt19937_64& rng, double spread = 1.0) {
  return cholesky_compose(random_cholesky_point(d, rng, spread));
}

SymmetricTangent random_sym(std::size_t d, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Eigen::MatrixXd a(d, d);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = nd(rng);
  return SymmetricTangent(0.5 * (a + a.transpose()));
}

Eigen::MatrixXd diag(std::initializer_list<double> v) {
  Eigen::VectorXd d(v.size());
  Eigen::Index i = 0;
  for (double x : v) d[i++] = x;
  return d.asDiagonal();
}

}  // namespace

TEST_CASE("cholesky_decompose examples") {
  CHECK(cholesky_decompose(SpdPoint::identity(3)) == CholeskyPoint::identity(3));
  Eigen::MatrixXd s(2, 2);
  s << 4, 2, 2, 5;
  const CholeskyPoint l = cholesky_decompose(SpdPoint(s));
  CHECK(l[0] == doctest::Approx(2.0));
  CHECK(l[1] == doctest::Approx(1.0));
  CHECK(l[2] == doctest::Approx(2.0));
  CHECK((l.dense() * l.dense().transpose() - s).cwiseAbs().maxCoeff() <= 1e-12);

  std::mt19937_64 rng(1);
  for (int k = 0; k < 200; ++k) {
    const CholeskyPoint x = random_cholesky_point(1 + k % 8, rng, 0.5);
    CHECK(testutil::max_abs_diff(cholesky_decompose(cholesky_compose(x)).entries(), x.entries()) <= 1e-12);
  }
}

TEST_CASE("SpdPoint construction errors") {
  Eigen::MatrixXd asym(2, 2);
  asym << 1, 0.5, 0.4, 1;
  CHECK_THROWS_AS(SpdPoint{asym}, std::invalid_argument);
  Eigen::MatrixXd indef(2, 2);
  indef << 1, 2, 2, 1;
  try {
    SpdPoint p(indef);
    FAIL("expected FactorizationError");
  } catch (const FactorizationError& e) {
    CHECK(e.pivot() == 1);
  }
}

TEST_CASE("spd_exp and spd_log") {
  const SpdPoint id = SpdPoint::identity(3);
  CHECK((spd_exp(id, SymmetricTangent(Eigen::MatrixXd::Zero(3, 3))).matrix() - id.matrix()).cwiseAbs().maxCoeff() <=
        1e-14);

  std::mt19937_64 rng(2);
  const SymmetricTangent q = random_sym(3, rng);
  const Eigen::MatrixXd expected = symmetric_function(q.matrix(), [](double x) { return std::exp(x); });
  CHECK((spd_exp(id, q).matrix() - expected).cwiseAbs().maxCoeff() <= 1e-12);

  const double e = std::exp(1.0);
  CHECK((spd_log(SpdPoint::identity(2), SpdPoint(diag({e, e}))).matrix() - Eigen::MatrixXd::Identity(2, 2))
            .cwiseAbs()
            .maxCoeff() <= 1e-12);

  const SpdPoint p = random_spd(4, rng);
  CHECK(spd_log(p, p).matrix().cwiseAbs().maxCoeff() <= 1e-10);

  double worst = 0.0;
  for (int k = 0; k < 500; ++k) {
    const std::size_t d = 1 + std::size_t(k % 8);
    const SpdPoint a = random_spd(d, rng, 0.5), b = random_spd(d, rng, 0.5);
    const SpdPoint out = spd_exp(a, random_sym(d, rng, 0.2));
    CHECK(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(out.matrix()).eigenvalues().minCoeff() > 0.0);
    worst = std::max(worst, (spd_exp(a, spd_log(a, b)).matrix() - b.matrix()).cwiseAbs().maxCoeff() /
                                std::max(1.0, b.matrix().cwiseAbs().maxCoeff()));
  }
  CHECK(worst <= 1e-8);
}

TEST_CASE("affine_invariant_distance") {
  std::mt19937_64 rng(3);
  const SpdPoint p = random_spd(3, rng);
  CHECK(affine_invariant_distance(p, p) <= 1e-12);
  CHECK(affine_invariant_distance(SpdPoint::identity(2), SpdPoint(diag({std::exp(2.0), 1.0}))) ==
        doctest::Approx(1.0));
  for (int k = 0; k < 50; ++k) {
    const SpdPoint p1 = random_spd(4, rng), p2 = random_spd(4, rng);
    Eigen::MatrixXd a = Eigen::MatrixXd::Random(4, 4) + 3.0 * Eigen::MatrixXd::Identity(4, 4);
    const SpdPoint q1(a.transpose() * p1.matrix() * a), q2(a.transpose() * p2.matrix() * a);
    CHECK(std::abs(affine_invariant_distance(q1, q2) - affine_invariant_distance(p1, p2)) <= 1e-8);
    CHECK(affine_invariant_distance(p1, p2) == doctest::Approx(affine_invariant_distance(p2, p1)));
  }
}

TEST_CASE("karcher_flow_mean") {
  std::mt19937_64 rng(4);
  const CholeskyPoint x = random_cholesky_point(3, rng);
  std::vector<CholeskyPoint> same(4, x);
  const auto r = karcher_flow_mean(std::span<const CholeskyPoint>(same));
  CHECK(r.iterations <= 1);
  CHECK(testutil::max_abs_diff(r.mean.entries(), x.entries()) <= 1e-14);

  for (int k = 0; k < 50; ++k) {
    std::vector<CholeskyPoint> pts;
    const std::size_t d = 2 + std::size_t(k % 7);
    for (int i = 0; i < 5; ++i) pts.push_back(random_cholesky_point(d, rng));
    const auto kr = karcher_flow_mean(std::span<const CholeskyPoint>(pts));
    CHECK(kr.iterations <= 100);
    CHECK(testutil::max_abs_diff(kr.mean.entries(), frechet_mean(pts).entries()) <= 1e-8);
  }

  std::vector<SpdPoint> spd{SpdPoint::identity(2), SpdPoint(diag({4, 4}))};
  const auto sr = karcher_flow_mean(std::span<const SpdPoint>(spd));
  CHECK((sr.mean.matrix() - diag({2, 2})).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("karcher_flow_mean reports non-convergence") {
  std::mt19937_64 rng(5);
  std::vector<SpdPoint> pts;
  for (int i = 0; i < 5; ++i) pts.push_back(random_spd(3, rng));
  KarcherOptions opts;
  opts.max_iter = 1;
  opts.tol = 1e-300;
  try {
    karcher_flow_mean(std::span<const SpdPoint>(pts), opts);
    FAIL("expected ConvergenceError");
  } catch (const ConvergenceError& e) {
    CHECK(e.residual() > 0.0);
  }
}

TEST_CASE("complexity_benchmark small sanity") {
  const std::vector<std::size_t> dims{2, 4};
  const auto rows = complexity_benchmark(dims, 100, 1);
  REQUIRE(rows.size() == 2);
  for (const auto& r : rows) {
    CHECK(r.t_closed_ns > 0.0);
    CHECK(r.t_closed_ns < 1e9);
    CHECK(r.t_karcher_ns < 1e9);
  }
  std::ostringstream os;
  write_bench_csv(os, rows);
  CHECK(os.str().rfind("d,n,t_closed_ns,t_karcher_ns\n", 0) == 0);
}

TEST_CASE("loglog_slope") {
  std::vector<double> x{1, 2, 4, 8}, y{3, 12, 48, 192};
  CHECK(loglog_slope(x, y) == doctest::Approx(2.0));
}
