#include "odergru/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "odergru/errors.hpp"
#include "odergru/manifold_ode.hpp"
#include "odergru/rgru.hpp"
#include "odergru/spd_oracle.hpp"

namespace odergru {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Fault injected by Mutation::log_sign: the strict-lower part of the log map
// comes out as X + K instead of X - K.
TangentLower faulty_log(const CholeskyPoint& k, const CholeskyPoint& x) {
  TangentLower v = log_map(k, x);
  for (std::size_t i = 1; i < k.dim(); ++i)
    for (std::size_t j = 0; j < i; ++j) v[packed_index(i, j)] = x.at(i, j) + k.at(i, j);
  return v;
}

}  // namespace

double median(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

CholeskyPoint random_cholesky_point(std::size_t dim, std::mt19937_64& rng, double spread) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> e(packed_size(dim));
  for (std::size_t i = 0; i < dim; ++i)
    for (std::size_t j = 0; j <= i; ++j) e[packed_index(i, j)] = i == j ? std::exp(spread * u(rng)) : spread * n(rng);
  return CholeskyPoint(dim, std::move(e));
}

TangentLower random_tangent(std::size_t dim, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> n(0.0, scale);
  TangentLower t(dim);
  for (double& x : t.entries()) x = n(rng);
  return t;
}

// --- 1. round trips -----------------------------------------------------------

CheckResult check_round_trips(Mutation m) {
  const auto t0 = Clock::now();
  CheckResult r{1, "geometry round trips", false, "", 0.0};
  auto log_fn = m == Mutation::log_sign ? faulty_log : log_map;
  std::mt19937_64 rng(101);
  double worst = 0.0;
  std::size_t pairs = 0;
  for (std::size_t d : {2, 3, 8, 32}) {
    for (int k = 0; k < 10000; ++k) {
      const CholeskyPoint base = random_cholesky_point(d, rng);
      if (k % 2 == 0) {
        const TangentLower v = random_tangent(d, rng);
        worst = std::max(worst, max_abs_diff(log_fn(base, exp_map(base, v)).entries(), v.entries()));
      } else {
        const CholeskyPoint x = random_cholesky_point(d, rng);
        worst = std::max(worst, max_abs_diff(exp_map(base, log_fn(base, x)).entries(), x.entries()));
      }
      ++pairs;
    }
  }
  r.seconds = seconds_since(t0);
  r.passed = worst <= 1e-10 && r.seconds < 30.0;
  r.detail = fmt("max |err| %.2e over %zu pairs (<= 1e-10), %.1fs (< 30s)", worst, pairs, r.seconds);
  return r;
}

// --- 2. metric axioms -----------------------------------------------------------

CheckResult check_metric_axioms() {
  const auto t0 = Clock::now();
  CheckResult r{2, "metric axioms", false, "", 0.0};
  std::mt19937_64 rng(202);
  bool symmetric = true;
  double ident = 0.0, slack = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const std::size_t d = 2 + std::size_t(k % 7);
    const CholeskyPoint a = random_cholesky_point(d, rng), b = random_cholesky_point(d, rng),
                        c = random_cholesky_point(d, rng);
    symmetric = symmetric && distance(a, b) == distance(b, a);
    ident = std::max(ident, distance(a, a));
    slack = std::max(slack, distance(a, c) - distance(a, b) - distance(b, c));
  }
  r.seconds = seconds_since(t0);
  r.passed = symmetric && ident <= 1e-12 && slack <= 1e-12;
  r.detail = fmt("symmetry %s, max d(a,a) %.1e (<= 1e-12), max triangle excess %.1e (<= 1e-12)",
                 symmetric ? "exact" : "BROKEN", ident, slack);
  return r;
}

// --- 3. closed-form mean vs Karcher flow ------------------------------------------

CheckResult check_mean_oracle() {
  const auto t0 = Clock::now();
  CheckResult r{3, "mean oracle equivalence", false, "", 0.0};
  std::mt19937_64 rng(303);
  double worst = 0.0;
  int max_iter = 0;
  bool ok = true;
  for (int k = 0; k < 50; ++k) {
    const std::size_t d = 2 + std::size_t(k % 7);  // 2..8
    std::vector<CholeskyPoint> pts;
    for (int i = 0; i < 5; ++i) pts.push_back(random_cholesky_point(d, rng));
    try {
      const auto kf = karcher_flow_mean(pts);
      worst = std::max(worst, max_abs_diff(kf.mean.entries(), frechet_mean(pts).entries()));
      max_iter = std::max(max_iter, kf.iterations);
    } catch (const ConvergenceError&) {
      ok = false;
    }
  }
  r.seconds = seconds_since(t0);
  r.passed = ok && worst <= 1e-8 && max_iter <= 100;
  r.detail = fmt("max |closed - karcher| %.2e (<= 1e-8), max iterations %d (<= 100)%s", worst, max_iter,
                 ok ? "" : ", NON-CONVERGENCE");
  return r;
}

// --- 4. group structure ---------------------------------------------------------------

CheckResult check_group_structure() {
  const auto t0 = Clock::now();
  CheckResult r{4, "group structure", false, "", 0.0};
  std::mt19937_64 rng(404);
  double e_id = 0.0, e_inv = 0.0, e_comm = 0.0, e_assoc = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const std::size_t d = 2 + std::size_t(k % 7);
    const CholeskyPoint a = random_cholesky_point(d, rng), b = random_cholesky_point(d, rng),
                        c = random_cholesky_point(d, rng), id = CholeskyPoint::identity(d);
    e_id = std::max({e_id, max_abs_diff(translate(a, id).entries(), a.entries()),
                     max_abs_diff(translate(id, a).entries(), a.entries())});
    e_inv = std::max(e_inv, max_abs_diff(translate(a, group_inverse(a)).entries(), id.entries()));
    e_comm = std::max(e_comm, max_abs_diff(translate(a, b).entries(), translate(b, a).entries()));
    e_assoc = std::max(e_assoc, max_abs_diff(translate(translate(a, b), c).entries(),
                                             translate(a, translate(b, c)).entries()));
  }
  r.seconds = seconds_since(t0);
  r.passed = std::max({e_id, e_inv, e_comm, e_assoc}) <= 1e-12;
  r.detail = fmt("identity %.1e, inverse %.1e, commutativity %.1e, associativity %.1e (each <= 1e-12)", e_id, e_inv,
                 e_comm, e_assoc);
  return r;
}

// --- 5. state closure -------------------------------------------------------------------

CheckResult check_state_closure() {
  const auto t0 = Clock::now();
  CheckResult r{5, "state closure", false, "", 0.0};
  std::mt19937_64 rng(505);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  double min_rgru = INFINITY, min_ode = INFINITY;
  std::size_t failures = 0;
  std::string first_error;

  for (int k = 0; k < 10000; ++k) {
    const std::size_t d = 2 + std::size_t(k % 5);
    RgruConfig cfg;
    cfg.dim = d;
    cfg.candidate = k % 3 == 0 ? CandidateActivation::sigmoid : CandidateActivation::softplus;
    cfg.positive_weight_diag = k % 4 != 0;
    RgruParams p = RgruParams::init(cfg, std::uint64_t(k));
    const double scale = 0.5 + 2.5 * u01(rng);
    p.visit(ParamVisitor([&](std::string_view, std::span<double> v) {
      for (double& x : v) x = scale * n(rng);
    }));
    try {
      RgruState s{random_cholesky_point(d, rng, 1.5), 0};
      s = step(s, random_cholesky_point(d, rng, 1.5), p, cfg);
      min_rgru = std::min(min_rgru, s.h.min_diag());
    } catch (const std::exception& e) {
      if (failures++ == 0) first_error = e.what();
    }
  }

  for (int k = 0; k < 10000; ++k) {
    const std::size_t d = 2 + std::size_t(k % 5);
    VectorFieldConfig vc;
    vc.hidden = {16};
    VectorFieldParams fp = VectorFieldParams::init(packed_size(d), vc, std::uint64_t(k));
    const double scale = 0.5 + 2.5 * u01(rng);
    fp.visit(ParamVisitor([&](std::string_view, std::span<double> v) {
      for (double& x : v) x *= scale;
    }));
    MlpVectorField f(fp, 1.0);
    OdeConfig oc;
    oc.n_steps = 1 + std::size_t(k % 32);
    const double ta = u01(rng), tb = ta + u01(rng);
    try {
      const CholeskyPoint h = evolve_hidden(random_cholesky_point(d, rng, 1.5), ta, tb, f, oc);
      min_ode = std::min(min_ode, h.min_diag());
    } catch (const std::exception& e) {
      if (failures++ == 0) first_error = e.what();
    }
  }
  r.seconds = seconds_since(t0);
  r.passed = failures == 0 && min_rgru > 0.0 && min_ode > 0.0;
  r.detail = fmt("min diag rgru %.2e, ode %.2e over 2x10^4 fuzzed cases, %zu exceptions", min_rgru, min_ode, failures);
  if (failures) r.detail += " (first: " + first_error + ")";
  return r;
}

// --- 6. gradients ------------------------------------------------------------------------

namespace {

ModelConfig grad_check_config(int variant) {
  ModelConfig c;
  c.task = Task::classification;
  c.classes = 3;
  c.encoder.input_channels = 4;
  c.encoder.out_dim = 4;
  c.rgru.dim = 4;
  c.field.hidden = {8};
  c.ode.n_steps = 8;
  if (variant % 2 == 0) {
    c.encoder.mode = EncoderMode::pointwise;
    c.encoder.append_mask = true;
    c.encoder.layers = {{8, 1, true, false}, {8, 1, false, false}};
  } else {
    c.encoder.mode = EncoderMode::windowed;
    c.encoder.window_len = 2;
    c.encoder.stride = 1;
    c.encoder.layers = {{4, 1, true, false}};
  }
  return c;
}

TimedSequence random_sequence(std::size_t channels, std::size_t length, std::mt19937_64& rng, bool holes) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> gap(0.2, 1.5);
  TimedSequence s;
  s.channels = channels;
  double t = 0.0;
  for (std::size_t k = 0; k < length; ++k) {
    Sample smp;
    smp.t = t;
    t += gap(rng);
    smp.values.resize(channels);
    smp.observed.assign(channels, 1);
    for (std::size_t c = 0; c < channels; ++c) {
      smp.values[c] = n(rng);
      if (holes && c > 0 && n(rng) > 0.8) {
        smp.observed[c] = 0;
        smp.values[c] = 0.0;
      }
    }
    s.samples.push_back(std::move(smp));
  }
  return s;
}

}  // namespace

CheckResult check_gradients() {
  const auto t0 = Clock::now();
  CheckResult r{6, "gradient correctness", false, "", 0.0};

  double worst_model = 0.0;
  std::string worst_group;
  for (int seed = 0; seed < 10; ++seed) {
    const ModelConfig cfg = grad_check_config(seed);
    std::mt19937_64 rng(std::uint64_t(600 + seed));
    ModelParams params = ModelParams::init(cfg, std::uint64_t(seed));
    Example ex;
    ex.input = random_sequence(4, 3, rng, cfg.encoder.mode == EncoderMode::pointwise);
    ex.target.label = seed % 3;

    ModelParams grads = zeros_like(params);
    example_loss_grad(ex, params, cfg, &grads);

    // central differences, one parameter group at a time
    std::vector<std::string> names{"encoder", "rgru", "field", "head"};
    auto group_of = [](ModelParams& p, int g) -> std::function<void(const ParamVisitor&)> {
      switch (g) {
        case 0: return [&p](const ParamVisitor& f) { p.encoder.visit(f); };
        case 1: return [&p](const ParamVisitor& f) { p.rgru.visit(f); };
        case 2: return [&p](const ParamVisitor& f) { p.field.visit(f); };
        default: return [&p](const ParamVisitor& f) { p.head.visit(f); };
      }
    };
    for (int g = 0; g < 4; ++g) {
      std::vector<double> analytic, numeric;
      group_of(grads, g)(ParamVisitor([&](std::string_view, std::span<double> v) {
        analytic.insert(analytic.end(), v.begin(), v.end());
      }));
      std::vector<std::span<double>> slots;
      group_of(params, g)(ParamVisitor([&](std::string_view, std::span<double> v) { slots.push_back(v); }));
      for (auto& v : slots)
        for (double& x : v) {
          const double keep = x, h = 1e-6 * std::max(1.0, std::abs(keep));
          x = keep + h;
          const double lp = example_loss_grad(ex, params, cfg, nullptr);
          x = keep - h;
          const double lm = example_loss_grad(ex, params, cfg, nullptr);
          x = keep;
          numeric.push_back((lp - lm) / (2.0 * h));
        }
      double diff = 0.0, na = 0.0, nn = 0.0;
      for (std::size_t i = 0; i < analytic.size(); ++i) {
        diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
        na += analytic[i] * analytic[i];
        nn += numeric[i] * numeric[i];
      }
      const double rel = std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-300});
      if (rel > worst_model) {
        worst_model = rel;
        worst_group = names[std::size_t(g)];
      }
    }
  }

  double worst_adj = 0.0;
  for (int c = 0; c < 10; ++c) {
    std::mt19937_64 rng(std::uint64_t(650 + c));
    VectorFieldConfig vc;
    vc.hidden = {32};
    const VectorFieldParams fp = VectorFieldParams::init(10, vc, std::uint64_t(c));
    MlpVectorField f(fp, 1.0);
    const TangentLower u0 = random_tangent(4, rng), g = random_tangent(4, rng);
    OdeConfig oc;
    oc.n_steps = 128;
    OdeTape tape;
    std::uniform_real_distribution<double> u(0.0, 0.5);
    const double ta = u(rng), tb = ta + 0.5 + u(rng);
    const TangentLower ue = ode_solve(f, u0, ta, tb, oc, &tape);
    const OdeGrads a = backward_unrolled(g, tape, f);
    const OdeGrads b = backward_adjoint(g, ue, ta, tb, f, oc);
    double diff = 0.0, na = 0.0;
    for (std::size_t i = 0; i < a.u0.size(); ++i) {
      diff += (a.u0[i] - b.u0[i]) * (a.u0[i] - b.u0[i]);
      na += a.u0[i] * a.u0[i];
    }
    for (std::size_t i = 0; i < a.params.size(); ++i) {
      diff += (a.params[i] - b.params[i]) * (a.params[i] - b.params[i]);
      na += a.params[i] * a.params[i];
    }
    worst_adj = std::max(worst_adj, std::sqrt(diff / na));
  }

  r.seconds = seconds_since(t0);
  r.passed = worst_model <= 1e-4 && worst_adj <= 1e-3;
  r.detail = fmt("model vs central FD max rel-err %.2e (%s; <= 1e-4), adjoint vs unrolled %.2e (<= 1e-3)",
                 worst_model, worst_group.c_str(), worst_adj);
  return r;
}

// --- 7. solver order ---------------------------------------------------------------------

CheckResult check_solver_order() {
  const auto t0 = Clock::now();
  CheckResult r{7, "solver order", false, "", 0.0};
  std::mt19937_64 rng(707);
  const TangentLower u0 = random_tangent(3, rng);
  LinearVectorField f(-Eigen::MatrixXd::Identity(6, 6));
  std::vector<double> ns, errs;
  for (std::size_t n : {4, 8, 16, 32, 64}) {
    OdeConfig oc;
    oc.n_steps = n;
    const TangentLower u = ode_solve(f, u0, 0.0, 1.0, oc);
    double e = 0.0;
    for (std::size_t p = 0; p < u.size(); ++p) e = std::max(e, std::abs(u[p] - std::exp(-1.0) * u0[p]));
    ns.push_back(double(n));
    errs.push_back(e);
  }
  const double order = -loglog_slope(ns, errs);
  r.seconds = seconds_since(t0);
  r.passed = order >= 0.8 && order <= 1.2;
  r.detail = fmt("fitted order %.3f over n_steps 4..64 (in [0.8, 1.2])", order);
  return r;
}

// --- 8. complexity -----------------------------------------------------------------------

CheckResult check_complexity() {
  const auto t0 = Clock::now();
  CheckResult r{8, "complexity scaling", false, "", 0.0};
  const std::vector<std::size_t> dims{8, 16, 32, 64, 128};
  const auto rows = complexity_benchmark(dims, 8, 5);
  std::vector<double> entries, closed;
  bool increasing = true;
  std::string ratios;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    entries.push_back(double(packed_size(rows[i].d)));
    closed.push_back(rows[i].t_closed_ns);
    const double ratio = rows[i].t_karcher_ns / rows[i].t_closed_ns;
    if (i > 0 && !(ratio > rows[i - 1].t_karcher_ns / rows[i - 1].t_closed_ns)) increasing = false;
    ratios += fmt("%s%.0f", i ? "," : "", ratio);
  }
  const double slope = loglog_slope(entries, closed);
  r.seconds = seconds_since(t0);
  r.passed = slope >= 0.8 && slope <= 1.3 && increasing && r.seconds < 120.0;
  r.detail = fmt("slope %.3f (in [0.8, 1.3]), karcher/closed ratios %s (%s), %.1fs (< 120s)", slope, ratios.c_str(),
                 increasing ? "increasing" : "NOT increasing", r.seconds);
  return r;
}

// --- 9-11. learning ------------------------------------------------------------------------

SynthSpec desk_synth_spec() {
  SynthSpec s;
  s.n_per_class = 100;
  s.length = 20;
  s.channels = 4;
  s.classes = 2;
  s.seed = 11;
  s.sigma_obs = 0.1;
  s.test_fraction = 0.25;
  return s;
}

ModelConfig desk_model_config() {
  ModelConfig c;
  c.task = Task::classification;
  c.classes = 2;
  c.encoder.mode = EncoderMode::pointwise;
  c.encoder.input_channels = 4;
  c.encoder.out_dim = 4;
  c.encoder.layers = {{32, 1, true, false}, {32, 1, false, false}};
  c.rgru.dim = 4;
  c.field.hidden = {64};
  c.ode.n_steps = 16;
  return c;
}

TrainConfig desk_train_config(std::uint64_t seed) {
  TrainConfig t;
  t.lr = 3e-3;
  t.l2 = 1e-3;
  t.batch = 32;
  t.max_iter = 400;
  t.seed = seed;
  t.loss = LossKind::cross_entropy;
  return t;
}

namespace {

constexpr std::uint64_t kLearningSeeds[] = {1, 2, 3};

std::pair<double, double> train_and_score(const Dataset& ds, const ModelConfig& cfg, std::uint64_t seed,
                                          std::size_t threads) {
  TrainConfig tc = desk_train_config(seed);
  tc.threads = threads;
  const TrainResult res = train(ds, ModelParams::init(cfg, seed), cfg, tc);
  return {res.log.back().train_score, res.log.back().test_score};
}

}  // namespace

LearningRuns run_learning(std::size_t threads) {
  LearningRuns runs;
  const Dataset clean = synth_manifold_sequences(desk_synth_spec());
  const ModelConfig cfg = desk_model_config();
  const auto t0 = Clock::now();
  for (std::uint64_t s : kLearningSeeds) {
    auto [tr, te] = train_and_score(clean, cfg, s, threads);
    runs.clean_train.push_back(tr);
    runs.clean_test.push_back(te);
  }
  runs.seconds_clean = seconds_since(t0);
  for (double frac : runs.drop_fractions) {
    std::vector<double> accs;
    for (std::uint64_t s : kLearningSeeds) accs.push_back(train_and_score(drop_observations(clean, frac, s), cfg, s, threads).second);
    runs.drop_test.push_back(accs);
  }
  ModelConfig ablated = cfg;
  ablated.ode.enabled = false;
  for (std::uint64_t s : kLearningSeeds)
    runs.ablation_test.push_back(train_and_score(drop_observations(clean, 0.5, s), ablated, s, threads).second);
  return runs;
}

CheckResult check_learning(const LearningRuns& runs) {
  CheckResult r{9, "desk-scale learning", false, "", runs.seconds_clean};
  const double tr = median(runs.clean_train), te = median(runs.clean_test);
  r.passed = tr >= 0.95 && te >= 0.90 && runs.seconds_clean < 300.0;
  r.detail = fmt("median train %.3f (>= 0.95), held-out %.3f (>= 0.90), 3 seeds in %.1fs (< 300s)", tr, te,
                 runs.seconds_clean);
  return r;
}

CheckResult check_drop_robustness(const LearningRuns& runs) {
  CheckResult r{10, "irregularity robustness", true, "", 0.0};
  const double base = median(runs.clean_test);
  for (std::size_t i = 0; i < runs.drop_fractions.size(); ++i) {
    const double m = median(runs.drop_test[i]);
    const double loss_pp = 100.0 * (base - m);
    r.passed = r.passed && loss_pp <= 10.0;
    r.detail += fmt("%s%.0f%%: %.3f (-%.1fpp)", i ? ", " : "", 100.0 * runs.drop_fractions[i], m, loss_pp);
  }
  r.detail += fmt(" vs clean %.3f (each <= 10pp)", base);
  return r;
}

CheckResult check_ablation(const LearningRuns& runs) {
  CheckResult r{11, "zero-field ablation", false, "", 0.0};
  std::size_t idx = 0;
  for (std::size_t i = 0; i < runs.drop_fractions.size(); ++i)
    if (runs.drop_fractions[i] == 0.5) idx = i;
  const double full = median(runs.drop_test[idx]), ablated = median(runs.ablation_test);
  r.passed = ablated <= full;
  r.detail = fmt("50%% drop held-out: trained field %.3f, zero field %.3f (zero field must not be higher)", full,
                 ablated);
  return r;
}

// --- 12. determinism ------------------------------------------------------------------------

CheckResult check_determinism() {
  const auto t0 = Clock::now();
  CheckResult r{12, "determinism and serialization", false, "", 0.0};
  SynthSpec spec = desk_synth_spec();
  spec.n_per_class = 24;
  const Dataset ds = drop_observations(synth_manifold_sequences(spec), 0.3, 5);
  const ModelConfig cfg = desk_model_config();

  auto run_csv = [&](std::size_t threads) {
    TrainConfig tc = desk_train_config(9);
    tc.max_iter = 25;
    tc.batch = 16;
    tc.eval_every = 5;
    tc.threads = threads;
    TrainResult res = train(ds, ModelParams::init(cfg, 9), cfg, tc);
    std::string csv = metrics_csv_header() + "\n";
    for (const auto& row : res.log) csv += metrics_csv_row(row) + "\n";
    return std::make_pair(csv, res.params);
  };
  const auto [csv_a, params] = run_csv(1);
  const auto [csv_b, params_b] = run_csv(1);
  const auto [csv_c, params_c] = run_csv(3);
  const bool same_runs = csv_a == csv_b;
  const bool same_threads = csv_a == csv_c;

  const auto dir = std::filesystem::temp_directory_path() /
                   ("odergru_verify_" + std::to_string(std::chrono::steady_clock::now().time_since_epoch().count()));
  std::filesystem::create_directories(dir);
  bool same_forward = true;
  try {
    save_checkpoint(dir / "ck", params, cfg, 9);
    const Checkpoint ck = load_checkpoint(dir / "ck");
    same_forward = flatten(ck.params) == flatten(params);
    for (std::size_t i = 0; i < ds.size() && same_forward; ++i) {
      const ModelOutput a = forward(ds.sequences[i], params, cfg);
      const ModelOutput b = forward(ds.sequences[i], ck.params, ck.config);
      same_forward = a.out.rows() == b.out.rows() && a.out.cols() == b.out.cols() &&
                     std::memcmp(a.out.data(), b.out.data(), sizeof(double) * std::size_t(a.out.size())) == 0;
    }
  } catch (const std::exception& e) {
    same_forward = false;
    r.detail = std::string("checkpoint error: ") + e.what() + "; ";
  }
  std::filesystem::remove_all(dir);
  r.seconds = seconds_since(t0);
  r.passed = same_runs && same_threads && same_forward;
  r.detail += fmt("metrics CSV identical across reruns: %s, across 1 vs 3 threads: %s; reloaded forward bit-identical: %s",
                  same_runs ? "yes" : "NO", same_threads ? "yes" : "NO", same_forward ? "yes" : "NO");
  return r;
}

// --- battery ----------------------------------------------------------------------------------

std::vector<CheckResult> run_battery(const VerifyOptions& opts, const std::function<void(const CheckResult&)>& report) {
  std::vector<CheckResult> out;
  auto add = [&](CheckResult r) {
    if (report) report(r);
    out.push_back(std::move(r));
  };
  add(check_round_trips(opts.mutation));
  add(check_metric_axioms());
  add(check_mean_oracle());
  add(check_group_structure());
  add(check_state_closure());
  add(check_gradients());
  add(check_solver_order());
  add(check_complexity());
  if (!opts.quick) {
    const auto t0 = Clock::now();
    const LearningRuns runs = run_learning(opts.threads);
    CheckResult c9 = check_learning(runs), c10 = check_drop_robustness(runs), c11 = check_ablation(runs);
    const double rest = seconds_since(t0) - c9.seconds;
    c10.seconds = rest;
    add(c9);
    add(c10);
    add(c11);
  }
  add(check_determinism());
  return out;
}

}  // namespace odergru
