#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "odergru/errors.hpp"
#include "odergru/geometry.hpp"
#include "odergru/verify.hpp"

using namespace odergru;

namespace {

CholeskyPoint p2(double a, double b, double c) { return CholeskyPoint(2, {a, b, c}); }
TangentLower t2(double a, double b, double c) { return TangentLower(2, {a, b, c}); }
CholeskyPoint diag2(double a, double c) { return p2(a, 0.0, c); }

double max_abs(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("packed layout") {
  CHECK(packed_size(4) == 10);
  CHECK(packed_index(2, 1) == 4);
  CHECK(diag_index(3) == 9);
  CHECK(dim_from_packed_size(10) == 4);
  CHECK_THROWS_AS(dim_from_packed_size(7), DimensionMismatch);

  std::mt19937_64 rng(1);
  const CholeskyPoint x = random_cholesky_point(5, rng);
  const Eigen::MatrixXd m = x.dense();
  CHECK(m.triangularView<Eigen::StrictlyUpper>().toDenseMatrix().isZero(0.0));
  CHECK(CholeskyPoint::from_dense(m) == x);
  const TangentLower v = random_tangent(5, rng);
  CHECK(TangentLower::from_dense(v.dense()) == v);
}

TEST_CASE("CholeskyPoint rejects invalid entries") {
  CHECK_THROWS_AS(p2(1.0, 0.0, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(p2(-1.0, 0.0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(p2(1.0, std::nan(""), 1.0), NonFiniteError);
  CHECK_THROWS_AS(CholeskyPoint(2, {1.0, 1.0}), DimensionMismatch);
}

TEST_CASE("strict_lower and diag_part") {
  CHECK(strict_lower(CholeskyPoint::identity(2)) == TangentLower(2));
  CHECK(strict_lower(p2(1, 0.5, 2)) == t2(0, 0.5, 0));
  std::mt19937_64 rng(2);
  for (int k = 0; k < 100; ++k) {
    const CholeskyPoint x = random_cholesky_point(4, rng);
    CHECK(strict_lower(strict_lower(x)) == strict_lower(x));
    TangentLower rebuilt = strict_lower(x);
    const auto d = diag_part(x);
    for (std::size_t i = 0; i < 4; ++i) rebuilt[diag_index(i)] = d[i];
    CHECK(rebuilt == x.as_tangent());
  }
  CHECK(diag_part(CholeskyPoint::identity(3)) == std::vector<double>{1, 1, 1});
  CHECK(diag_part(p2(1, 0.5, 2)) == std::vector<double>{1, 2});
}

TEST_CASE("metric") {
  const TangentLower id = t2(1, 0, 1);
  CHECK(metric(CholeskyPoint::identity(2), id, id) == doctest::Approx(2.0));
  CHECK(metric(diag2(2, 2), id, id) == doctest::Approx(0.5));
  // strict-lower entries count once, unweighted
  CHECK(metric(diag2(2, 2), t2(0, 3, 0), t2(0, 5, 0)) == doctest::Approx(15.0));
  std::mt19937_64 rng(3);
  for (int k = 0; k < 100; ++k) {
    const CholeskyPoint b = random_cholesky_point(3, rng);
    const TangentLower u = random_tangent(3, rng), v = random_tangent(3, rng);
    CHECK(metric(b, u, u) > 0.0);
    CHECK(metric(b, u, v) == metric(b, v, u));
  }
  CHECK(metric(CholeskyPoint::identity(3), TangentLower(3), TangentLower(3)) == 0.0);
  CHECK_THROWS_AS(metric(CholeskyPoint::identity(3), id, id), DimensionMismatch);
}

TEST_CASE("distance") {
  CHECK(distance(CholeskyPoint::identity(2), CholeskyPoint::identity(2)) == 0.0);
  CHECK(distance(CholeskyPoint::identity(2), diag2(std::exp(1.0), std::exp(1.0))) == doctest::Approx(std::sqrt(2.0)));
  CHECK(distance(p2(1, 1, 1), p2(1, 4, 1)) == doctest::Approx(3.0));
  CHECK_THROWS_AS(distance(CholeskyPoint::identity(2), CholeskyPoint::identity(3)), DimensionMismatch);
}

TEST_CASE("exp_map and log_map examples") {
  std::mt19937_64 rng(4);
  const CholeskyPoint x = random_cholesky_point(3, rng);
  CHECK(exp_map(x, TangentLower(3)) == x);
  CHECK(log_map(x, x) == TangentLower(3));

  const CholeskyPoint e = exp_map(CholeskyPoint::identity(2), t2(std::log(2.0), 0, std::log(3.0)));
  CHECK(e[0] == doctest::Approx(2.0));
  CHECK(e[1] == 0.0);
  CHECK(e[2] == doctest::Approx(3.0));

  CHECK(exp_map(p2(1, 0.5, 2), t2(0, 1, 0)) == p2(1, 1.5, 2));

  const TangentLower l = log_map(CholeskyPoint::identity(2), diag2(2, 3));
  CHECK(l[0] == doctest::Approx(std::log(2.0)));
  CHECK(l[2] == doctest::Approx(std::log(3.0)));

  TangentLower bad(2);
  bad[1] = INFINITY;
  CHECK_THROWS_AS(exp_map(x.dim() == 2 ? x : CholeskyPoint::identity(2), bad), NonFiniteError);
  TangentLower huge = t2(1e6, 0, 0);
  CHECK_THROWS_AS(exp_map(CholeskyPoint::identity(2), huge), NonFiniteError);
}

TEST_CASE("exp/log round trip on 1000 random pairs") {
  std::mt19937_64 rng(5);
  double worst = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const std::size_t d = 2 + std::size_t(k % 6);
    const CholeskyPoint base = random_cholesky_point(d, rng), x = random_cholesky_point(d, rng);
    const TangentLower v = random_tangent(d, rng);
    worst = std::max(worst, max_abs(exp_map(base, log_map(base, x)).entries(), x.entries()));
    worst = std::max(worst, max_abs(log_map(base, exp_map(base, v)).entries(), v.entries()));
  }
  CHECK(worst <= 1e-10);
}

TEST_CASE("frechet_mean") {
  std::mt19937_64 rng(6);
  const CholeskyPoint x = random_cholesky_point(4, rng);
  std::vector<CholeskyPoint> copies(5, x);
  CHECK(max_abs(frechet_mean(copies).entries(), x.entries()) <= 1e-14);

  std::vector<CholeskyPoint> two{diag2(1, 1), diag2(4, 4)};
  const CholeskyPoint m = frechet_mean(two);
  CHECK(m[0] == doctest::Approx(2.0));
  CHECK(m[2] == doctest::Approx(2.0));
  CHECK_THROWS_AS(frechet_mean(std::vector<CholeskyPoint>{}), std::invalid_argument);
}

TEST_CASE("frechet_mean is a local minimizer of the squared-distance sum") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<CholeskyPoint> pts;
    for (int i = 0; i < 6; ++i) pts.push_back(random_cholesky_point(3, rng));
    const CholeskyPoint mu = frechet_mean(pts);
    auto objective = [&](const CholeskyPoint& c) {
      double s = 0.0;
      for (const auto& p : pts) s += std::pow(distance(c, p), 2);
      return s;
    };
    const double f0 = objective(mu);
    for (int k = 0; k < 20; ++k) {
      TangentLower step = random_tangent(3, rng);
      const double n = std::sqrt(metric(mu, step, step));
      for (double& e : step.entries()) e *= 1e-3 / n;
      CHECK(objective(exp_map(mu, step)) >= f0 - 1e-12);
    }
  }
}

TEST_CASE("weighted_frechet_mean") {
  std::mt19937_64 rng(8);
  std::vector<CholeskyPoint> pts;
  for (int i = 0; i < 4; ++i) pts.push_back(random_cholesky_point(3, rng));
  TangentLower ones(3);
  for (double& e : ones.entries()) e = 1.0;
  std::vector<TangentLower> w(4, ones);
  CHECK(max_abs(weighted_frechet_mean(pts, w).entries(), frechet_mean(pts).entries()) <= 1e-14);

  std::vector<CholeskyPoint> one{pts[0]};
  std::vector<TangentLower> w1{ones};
  CHECK(max_abs(weighted_frechet_mean(one, w1).entries(), pts[0].entries()) <= 1e-14);

  // scalar weights 0.25, 0.75 on diag(1,1), diag(16,16); the 1/N = 1/2 factor
  // is undone by doubling the weights: exp(0.75 ln 16) = 8
  std::vector<CholeskyPoint> dp{diag2(1, 1), diag2(16, 16)};
  std::vector<TangentLower> sw{t2(0.5, 0.5, 0.5), t2(1.5, 1.5, 1.5)};
  const CholeskyPoint m = weighted_frechet_mean(dp, sw);
  CHECK(m[0] == doctest::Approx(8.0));
  CHECK(m[2] == doctest::Approx(8.0));

  // negative weights keep the diagonal positive
  std::vector<TangentLower> neg{t2(-3, -3, -3), t2(-5, 2, -7)};
  CHECK(weighted_frechet_mean(dp, neg).min_diag() > 0.0);

  CHECK_THROWS_AS(weighted_frechet_mean(dp, w1), DimensionMismatch);
}

TEST_CASE("translate group") {
  std::mt19937_64 rng(9);
  const CholeskyPoint x = random_cholesky_point(3, rng), y = random_cholesky_point(3, rng);
  CHECK(translate(x, CholeskyPoint::identity(3)) == x);
  CHECK(translate(x, y) == translate(y, x));
  const CholeskyPoint r = translate(diag2(2, 3), diag2(0.5, 1.0 / 3.0));
  CHECK(r[0] == doctest::Approx(1.0));
  CHECK(r[2] == doctest::Approx(1.0));
  CHECK(max_abs(translate(x, group_inverse(x)).entries(), CholeskyPoint::identity(3).entries()) <= 1e-15);
}

TEST_CASE("split_activation") {
  const CholeskyPoint z = split_activation(TangentLower(2));
  CHECK(z[0] == doctest::Approx(std::log(2.0)));
  CHECK(z[1] == 0.0);
  CHECK(z[2] == doctest::Approx(std::log(2.0)));

  const CholeskyPoint small = split_activation(t2(-40, 0, -800));
  CHECK(small[0] >= kPositiveFloor);
  CHECK(small[2] >= kPositiveFloor);
  CHECK(small.min_diag() > 0.0);

  std::mt19937_64 rng(10);
  for (int k = 0; k < 100; ++k) {
    const CholeskyPoint a = split_activation(random_tangent(4, rng, 5.0));
    for (std::size_t i = 1; i < 4; ++i)
      for (std::size_t j = 0; j < i; ++j) {
        CHECK(a.at(i, j) > -1.0);
        CHECK(a.at(i, j) < 1.0);
      }
  }
}

TEST_CASE("sigmoid_gate and one_minus") {
  const CholeskyPoint g = sigmoid_gate(TangentLower(3));
  for (double e : g.entries()) CHECK(e == 0.5);

  std::mt19937_64 rng(11);
  for (int k = 0; k < 100; ++k) {
    const TangentLower a = random_tangent(3, rng, 3.0);
    TangentLower b = a;
    for (double& e : b.entries()) e += 0.1;
    const CholeskyPoint ga = sigmoid_gate(a), gb = sigmoid_gate(b);
    for (std::size_t p = 0; p < ga.size(); ++p) CHECK(gb[p] > ga[p]);
    const TangentLower c = one_minus(ga);
    for (std::size_t p = 0; p < ga.size(); ++p) CHECK(c[p] + ga[p] == doctest::Approx(1.0));
  }
  CHECK(sigmoid_gate(t2(-800, 0, -800)).min_diag() >= kPositiveFloor);
}

TEST_CASE("closure of point-valued operations") {
  std::mt19937_64 rng(12);
  for (std::size_t d : {2, 3, 8, 32}) {
    double lo = INFINITY;
    for (int k = 0; k < 2500; ++k) {
      const CholeskyPoint a = random_cholesky_point(d, rng, 2.0), b = random_cholesky_point(d, rng, 2.0);
      const TangentLower v = random_tangent(d, rng, 3.0);
      lo = std::min({lo, exp_map(a, v).min_diag(), translate(a, b).min_diag(), group_inverse(a).min_diag(),
                     split_activation(v).min_diag(), sigmoid_gate(v).min_diag(), hadamard(a, b).min_diag()});
    }
    CHECK(lo > 0.0);
  }
}

TEST_CASE("non-finite inputs are rejected") {
  TangentLower nan(2);
  nan[0] = std::nan("");
  CHECK_THROWS_AS(split_activation(nan), NonFiniteError);
  CHECK_THROWS_AS(sigmoid_gate(nan), NonFiniteError);
  CHECK_THROWS_AS(metric(CholeskyPoint::identity(2), nan, nan), NonFiniteError);
}
