#include <doctest.h>

#include <cmath>
#include <random>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include "odergru/errors.hpp"
#include "odergru/manifold_ode.hpp"
#include "odergru/spd_oracle.hpp"
#include "odergru/verify.hpp"
#include "test_util.hpp"

using namespace odergru;

namespace {

class ConstantField final : public VectorField {
 public:
  explicit ConstantField(std::vector<double> c) : c_(std::move(c)) {}
  std::size_t state_size() const override { return c_.size(); }
  std::size_t param_count() const override { return 0; }
  void eval(std::span<const double>, double, std::span<double> out) const override {
    std::copy(c_.begin(), c_.end(), out.begin());
  }
  void vjp(std::span<const double>, double, std::span<const double>, std::span<double>,
           std::span<double>) const override {}

 private:
  std::vector<double> c_;
};

TangentLower as_tangent(std::size_t d, std::span<const double> e) { return TangentLower(d, {e.begin(), e.end()}); }

std::vector<double> vec(const PackedLower& p) { return {p.entries().begin(), p.entries().end()}; }

VectorFieldParams random_field(std::size_t state, std::mt19937_64& rng, std::vector<std::size_t> hidden = {8}) {
  VectorFieldConfig fc;
  fc.hidden = std::move(hidden);
  return VectorFieldParams::init(state, fc, rng());
}

// Parameter count of every layer below the output layer.
std::size_t hidden_block(const VectorFieldParams& p) {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < p.weights.size(); ++l) n += p.weights[l].size() + p.biases[l].size();
  return n;
}

OdeConfig cfg_with(std::size_t n, OdeBackward b = OdeBackward::unrolled) {
  OdeConfig c;
  c.n_steps = n;
  c.backward = b;
  return c;
}

}  // namespace

TEST_CASE("vector field basics") {
  std::mt19937_64 rng(1);
  VectorFieldConfig fc;
  fc.zero_output = true;
  const VectorFieldParams zero = VectorFieldParams::init(10, fc, 3);
  const TangentLower u = random_tangent(4, rng);
  const TangentLower fz = vector_field(u, 0.7, zero);
  for (double v : fz.entries()) CHECK(v == 0.0);

  VectorFieldParams p = random_field(10, rng);
  const std::size_t in = p.sizes[0];
  REQUIRE(in == 11);
  for (std::size_t o = 0; o < p.sizes[1]; ++o) p.weights[0][o * in + 10] = 0.0;
  CHECK(vector_field(u, 0.1, p) == vector_field(u, 0.9, p));

  CHECK_THROWS_AS(vector_field(random_tangent(3, rng), 0.0, p), DimensionMismatch);
}

TEST_CASE("vector field vjp matches finite differences") {
  std::mt19937_64 rng(2);
  for (int k = 0; k < 10; ++k) {
    const VectorFieldParams p = random_field(10, rng, {8, 6});
    const MlpVectorField f(p, 2.0);
    const std::vector<double> u = testutil::random_vector(10, rng), cot = testutil::random_vector(10, rng);
    const double t = 0.3 * k;
    std::vector<double> gu(10, 0.0), gp(f.param_count(), 0.0);
    f.vjp(u, t, cot, gu, gp);
    auto fu = [&](std::span<const double> x) {
      std::vector<double> out(10);
      f.eval(x, t, out);
      return testutil::dot(out, cot);
    };
    auto fp = [&](std::span<const double> flat) {
      VectorFieldParams q = p;
      unflatten(q, flat);
      std::vector<double> out(10);
      MlpVectorField(q, 2.0).eval(u, t, out);
      return testutil::dot(out, cot);
    };
    CHECK(testutil::rel_err(gu, testutil::fd_gradient(u, fu, 1e-5)) <= 1e-4);
    CHECK(testutil::rel_err(gp, testutil::fd_gradient(flatten(p), fp, 1e-5)) <= 1e-4);
  }
}

TEST_CASE("ode_solve examples") {
  std::mt19937_64 rng(3);
  const TangentLower u0 = random_tangent(3, rng);

  VectorFieldConfig fc;
  fc.zero_output = true;
  const VectorFieldParams zp = VectorFieldParams::init(6, fc, 1);
  const MlpVectorField zero(zp, 1.0);
  CHECK(ode_solve(zero, u0, 0.2, 3.7, cfg_with(16)) == u0);
  CHECK(ode_solve(zero, u0, 1.0, 1.0, cfg_with(16)) == u0);

  const std::vector<double> c{0.5, -1.0, 2.0, 0.25, 0.0, -3.0};
  const ConstantField cf(c);
  const TangentLower out = ode_solve(cf, u0, 0.0, 0.75, cfg_with(16));
  for (std::size_t i = 0; i < 6; ++i) CHECK(out[i] == doctest::Approx(u0[i] + 0.75 * c[i]).epsilon(1e-14));

  CHECK(euler_steps(0.0, 1.0, cfg_with(16)) == 16);
  CHECK(euler_steps(0.0, 0.01, cfg_with(16)) == 1);
  CHECK(euler_steps(0.0, 0.5, cfg_with(3)) == 2);
  CHECK_THROWS(ode_solve(cf, u0, 1.0, 0.5, cfg_with(16)));
}

TEST_CASE("Euler convergence order on f(u) = -u") {
  std::mt19937_64 rng(4);
  const LinearVectorField f(-Eigen::MatrixXd::Identity(6, 6));
  const TangentLower u0 = random_tangent(3, rng);
  std::vector<double> ns, errs;
  for (std::size_t n : {4, 8, 16, 32, 64}) {
    const TangentLower u = ode_solve(f, u0, 0.0, 1.0, cfg_with(n));
    double e = 0.0;
    for (std::size_t i = 0; i < 6; ++i) e = std::max(e, std::abs(u[i] - std::exp(-1.0) * u0[i]));
    ns.push_back(double(n));
    errs.push_back(e);
  }
  for (std::size_t i = 1; i < errs.size(); ++i) CHECK(errs[i] < errs[i - 1]);
  const double order = -loglog_slope(ns, errs);
  CHECK(order >= 0.8);
  CHECK(order <= 1.2);
}

TEST_CASE("non-finite state is reported with its step") {
  const LinearVectorField f(1e300 * Eigen::MatrixXd::Identity(3, 3));
  TangentLower u0(2);
  for (double& e : u0.entries()) e = 1.0;
  try {
    ode_solve(f, u0, 0.0, 1.0, cfg_with(16));
    FAIL("expected NonFiniteError");
  } catch (const NonFiniteError& e) {
    CHECK(std::string(e.what()).find("step") != std::string::npos);
  }
}

TEST_CASE("backward_unrolled") {
  std::mt19937_64 rng(5);
  SUBCASE("identity step passes the gradient through") {
    VectorFieldConfig fc;
    fc.zero_output = true;
    const VectorFieldParams zp = VectorFieldParams::init(10, fc, 1);
    const MlpVectorField zero(zp, 1.0);
    OdeTape tape;
    ode_solve(zero, random_tangent(4, rng), 0.0, 0.01, cfg_with(16), &tape);
    REQUIRE(tape.steps == 1);
    const TangentLower g = random_tangent(4, rng);
    const OdeGrads og = backward_unrolled(g, tape, zero);
    CHECK(og.u0 == g);
    // only the (zero) output layer sees a gradient; everything below it is cut off
    for (std::size_t i = 0; i < hidden_block(zp); ++i) CHECK(og.params[i] == 0.0);
  }
  SUBCASE("finite differences, 20 cases") {
    for (int k = 0; k < 20; ++k) {
      const VectorFieldParams p = random_field(10, rng);
      const MlpVectorField f(p, 1.0);
      const TangentLower u0 = random_tangent(4, rng), g = random_tangent(4, rng);
      const double t0 = 0.1 * k, t1 = t0 + 0.05 + 0.04 * k;
      OdeTape tape;
      ode_solve(f, u0, t0, t1, cfg_with(8), &tape);
      const OdeGrads og = backward_unrolled(g, tape, f);
      auto fu = [&](std::span<const double> x) {
        return testutil::dot(ode_solve(f, as_tangent(4, x), t0, t1, cfg_with(8)).entries(), g.entries());
      };
      auto fp = [&](std::span<const double> flat) {
        VectorFieldParams q = p;
        unflatten(q, flat);
        return testutil::dot(ode_solve(MlpVectorField(q, 1.0), u0, t0, t1, cfg_with(8)).entries(), g.entries());
      };
      CHECK(testutil::rel_err(og.u0.entries(), testutil::fd_gradient(vec(u0), fu, 1e-5)) <= 1e-4);
      CHECK(testutil::rel_err(og.params, testutil::fd_gradient(flatten(p), fp, 1e-5)) <= 1e-4);
    }
  }
  SUBCASE("adjoint-mode tape has no states") {
    const VectorFieldParams p = random_field(3, rng);
    const MlpVectorField f(p, 1.0);
    OdeTape tape;
    ode_solve(f, random_tangent(2, rng), 0.0, 1.0, cfg_with(4, OdeBackward::adjoint), &tape);
    CHECK_THROWS_AS(backward_unrolled(random_tangent(2, rng), tape, f), std::logic_error);
    CHECK_THROWS_AS(backward_unrolled(random_tangent(2, rng), OdeTape{}, f), std::logic_error);
  }
}

TEST_CASE("interval additivity") {
  std::mt19937_64 rng(6);
  const VectorFieldParams p = random_field(10, rng);
  const MlpVectorField f(p, 1.0);
  const TangentLower u0 = random_tangent(4, rng), g = random_tangent(4, rng);
  const OdeConfig cfg = cfg_with(16);

  OdeTape whole, first, second;
  const TangentLower direct = ode_solve(f, u0, 0.0, 1.0, cfg, &whole);
  const TangentLower mid = ode_solve(f, u0, 0.0, 0.5, cfg, &first);
  const TangentLower split = ode_solve(f, mid, 0.5, 1.0, cfg, &second);
  CHECK(testutil::max_abs_diff(direct.entries(), split.entries()) <= 1e-14);

  const OdeGrads gw = backward_unrolled(g, whole, f);
  const OdeGrads g2 = backward_unrolled(g, second, f);
  const OdeGrads g1 = backward_unrolled(g2.u0, first, f);
  CHECK(testutil::max_abs_diff(gw.u0.entries(), g1.u0.entries()) <= 1e-10);
  std::vector<double> sum(gw.params.size());
  for (std::size_t i = 0; i < sum.size(); ++i) sum[i] = g1.params[i] + g2.params[i];
  CHECK(testutil::max_abs_diff(gw.params, sum) <= 1e-10);
}

TEST_CASE("backward_adjoint") {
  std::mt19937_64 rng(7);
  SUBCASE("zero field") {
    VectorFieldConfig fc;
    fc.zero_output = true;
    const VectorFieldParams zp = VectorFieldParams::init(10, fc, 1);
    const MlpVectorField zero(zp, 1.0);
    const TangentLower u = random_tangent(4, rng), g = random_tangent(4, rng);
    const OdeGrads og = backward_adjoint(g, u, 0.0, 1.0, zero, cfg_with(16, OdeBackward::adjoint));
    CHECK(og.u0 == g);
    for (std::size_t i = 0; i < hidden_block(zp); ++i) CHECK(og.params[i] == 0.0);
  }
  SUBCASE("linear field against the matrix exponential") {
    Eigen::MatrixXd a(3, 3);
    a << -0.5, 0.3, 0.0, 0.2, -0.1, 0.4, -0.3, 0.0, 0.2;
    const LinearVectorField f(a);
    const TangentLower u0 = random_tangent(2, rng), g = random_tangent(2, rng);
    const double T = 1.3;
    const OdeConfig cfg = cfg_with(4096, OdeBackward::adjoint);
    const TangentLower u_end = ode_solve(f, u0, 0.0, T, cfg);
    const OdeGrads og = backward_adjoint(g, u_end, 0.0, T, f, cfg);
    const Eigen::Map<const Eigen::VectorXd> gv(g.entries().data(), 3);
    const Eigen::VectorXd exact = (a.transpose() * T).exp() * gv;
    CHECK(testutil::rel_err(og.u0.entries(), std::span<const double>(exact.data(), 3)) <= 1e-3);
  }
  SUBCASE("agrees with unrolled at 128 steps") {
    for (int k = 0; k < 10; ++k) {
      const VectorFieldParams p = random_field(10, rng, {16});
      const MlpVectorField f(p, 1.0);
      const TangentLower u0 = random_tangent(4, rng), g = random_tangent(4, rng);
      OdeTape tape;
      const TangentLower u_end = ode_solve(f, u0, 0.0, 1.0, cfg_with(128), &tape);
      const OdeGrads gu = backward_unrolled(g, tape, f);
      const OdeGrads ga = backward_adjoint(g, u_end, 0.0, 1.0, f, cfg_with(128, OdeBackward::adjoint));
      CHECK(testutil::rel_err(ga.u0.entries(), gu.u0.entries()) <= 1e-3);
      CHECK(testutil::rel_err(ga.params, gu.params) <= 1e-3);
    }
  }
}

TEST_CASE("evolve_hidden") {
  std::mt19937_64 rng(8);
  const CholeskyPoint h = random_cholesky_point(4, rng);
  const VectorFieldParams p = random_field(10, rng);
  const MlpVectorField f(p, 1.0);

  CHECK(evolve_hidden(h, 0.4, 0.4, f, cfg_with(16)) == h);
  OdeConfig off = cfg_with(16);
  off.enabled = false;
  CHECK(evolve_hidden(h, 0.0, 1.0, f, off) == h);

  VectorFieldConfig fc;
  fc.zero_output = true;
  const VectorFieldParams zp = VectorFieldParams::init(10, fc, 1);
  CHECK(testutil::max_abs_diff(evolve_hidden(h, 0.0, 2.0, MlpVectorField(zp, 1.0), cfg_with(16)).entries(),
                               h.entries()) <= 1e-12);

  double lo = INFINITY;
  for (int k = 0; k < 2000; ++k) {
    const VectorFieldParams q = random_field(10, rng);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double t0 = u(rng), dt = u(rng);
    lo = std::min(lo, evolve_hidden(random_cholesky_point(4, rng, 2.0), t0, t0 + dt, MlpVectorField(q, 1.0),
                                    cfg_with(16))
                          .min_diag());
  }
  CHECK(lo > 0.0);
}

TEST_CASE("evolve_backward") {
  std::mt19937_64 rng(9);
  for (auto mode : {OdeBackward::unrolled, OdeBackward::adjoint}) {
    for (int k = 0; k < 5; ++k) {
      const VectorFieldParams p = random_field(10, rng);
      const MlpVectorField f(p, 1.0);
      const CholeskyPoint h = random_cholesky_point(4, rng, 0.5);
      const TangentLower g = random_tangent(4, rng);
      const OdeConfig cfg = cfg_with(mode == OdeBackward::adjoint ? 256 : 8, mode);
      EvolveTape tape;
      evolve_hidden(h, 0.2, 0.9, f, cfg, &tape);
      std::vector<double> gp(f.param_count(), 0.0);
      const TangentLower gh = evolve_backward(g, tape, f, cfg, gp);

      auto fh = [&](std::span<const double> e) {
        return testutil::dot(evolve_hidden(CholeskyPoint(4, {e.begin(), e.end()}), 0.2, 0.9, f, cfg).entries(),
                             g.entries());
      };
      auto fp = [&](std::span<const double> flat) {
        VectorFieldParams q = p;
        unflatten(q, flat);
        return testutil::dot(evolve_hidden(h, 0.2, 0.9, MlpVectorField(q, 1.0), cfg).entries(), g.entries());
      };
      const double tol = mode == OdeBackward::adjoint ? 1e-2 : 1e-4;
      CHECK(testutil::rel_err(gh.entries(), testutil::fd_gradient(vec(h), fh, 1e-5)) <= tol);
      CHECK(testutil::rel_err(gp, testutil::fd_gradient(flatten(p), fp, 1e-5)) <= tol);
    }
  }
  SUBCASE("identity evolution has an identity backward") {
    const VectorFieldParams p = random_field(10, rng);
    const MlpVectorField f(p, 1.0);
    EvolveTape tape;
    evolve_hidden(random_cholesky_point(4, rng), 0.5, 0.5, f, cfg_with(16), &tape);
    CHECK(tape.identity);
    const TangentLower g = random_tangent(4, rng);
    std::vector<double> gp(f.param_count(), 0.0);
    CHECK(evolve_backward(g, tape, f, cfg_with(16), gp) == g);
    for (double v : gp) CHECK(v == 0.0);
  }
}
