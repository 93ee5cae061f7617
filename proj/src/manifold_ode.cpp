#include "odergru/manifold_ode.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include "odergru/errors.hpp"

namespace odergru {

// --- MLP field --------------------------------------------------------------

VectorFieldParams VectorFieldParams::init(std::size_t state_size, const VectorFieldConfig& cfg,
                                          std::uint64_t seed) {
  VectorFieldParams p;
  p.sizes.push_back(state_size + 1);
  for (std::size_t h : cfg.hidden) {
    if (h == 0) throw ConfigError("vector field hidden layer of width 0");
    p.sizes.push_back(h);
  }
  p.sizes.push_back(state_size);

  std::mt19937_64 rng(seed);
  const std::size_t layers = p.sizes.size() - 1;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t in = p.sizes[l], out = p.sizes[l + 1];
    std::vector<double> w(in * out, 0.0), b(out, 0.0);
    if (!(cfg.zero_output && l + 1 == layers)) {
      std::uniform_real_distribution<double> u(-1.0 / std::sqrt(double(in)), 1.0 / std::sqrt(double(in)));
      for (double& x : w) x = u(rng);
    }
    p.weights.push_back(std::move(w));
    p.biases.push_back(std::move(b));
  }
  return p;
}

void VectorFieldParams::visit(const ParamVisitor& f) {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    f("field.layer" + std::to_string(l) + ".weight", weights[l]);
    f("field.layer" + std::to_string(l) + ".bias", biases[l]);
  }
}

void VectorFieldParams::visit(const ConstParamVisitor& f) const {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    f("field.layer" + std::to_string(l) + ".weight", weights[l]);
    f("field.layer" + std::to_string(l) + ".bias", biases[l]);
  }
}

MlpVectorField::MlpVectorField(const VectorFieldParams& params, double time_scale)
    : params_(&params), time_scale_(time_scale) {
  if (params.sizes.size() < 2 || params.weights.size() + 1 != params.sizes.size())
    throw DimensionMismatch("vector field: malformed layer list");
  if (params.sizes.front() != params.sizes.back() + 1)
    throw DimensionMismatch("vector field: input must be state + time");
  if (!(time_scale > 0.0) || !std::isfinite(time_scale)) throw ConfigError("time_scale must be positive");
}

std::size_t MlpVectorField::param_count() const { return odergru::param_count(*params_); }

namespace {

// Activations a_0 .. a_L; a_0 is the input, hidden layers are tanh'd.
std::vector<std::vector<double>> mlp_forward(const VectorFieldParams& p, std::span<const double> u, double tin) {
  const std::size_t layers = p.weights.size();
  std::vector<std::vector<double>> a(layers + 1);
  a[0].assign(u.begin(), u.end());
  a[0].push_back(tin);
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t in = p.sizes[l], out = p.sizes[l + 1];
    a[l + 1].assign(out, 0.0);
    const double* w = p.weights[l].data();
    for (std::size_t o = 0; o < out; ++o) {
      double s = p.biases[l][o];
      for (std::size_t i = 0; i < in; ++i) s += w[o * in + i] * a[l][i];
      a[l + 1][o] = (l + 1 < layers) ? std::tanh(s) : s;
    }
  }
  return a;
}

}  // namespace

void MlpVectorField::eval(std::span<const double> u, double t, std::span<double> out) const {
  if (u.size() != state_size() || out.size() != state_size())
    throw DimensionMismatch("vector field: state size " + std::to_string(u.size()) + ", expected " +
                            std::to_string(state_size()));
  auto a = mlp_forward(*params_, u, t / time_scale_);
  std::copy(a.back().begin(), a.back().end(), out.begin());
}

void MlpVectorField::vjp(std::span<const double> u, double t, std::span<const double> cot,
                         std::span<double> grad_u, std::span<double> grad_params) const {
  const VectorFieldParams& p = *params_;
  if (u.size() != state_size() || cot.size() != state_size() || grad_u.size() != state_size())
    throw DimensionMismatch("vector field vjp: state size mismatch");
  const bool want_params = !grad_params.empty();
  if (want_params && grad_params.size() != param_count())
    throw DimensionMismatch("vector field vjp: parameter gradient size mismatch");

  auto a = mlp_forward(p, u, t / time_scale_);
  const std::size_t layers = p.weights.size();

  // offsets of each layer's (weight, bias) block in visit order
  std::vector<std::size_t> off(layers);
  for (std::size_t l = 0, k = 0; l < layers; ++l) {
    off[l] = k;
    k += p.weights[l].size() + p.biases[l].size();
  }

  std::vector<double> delta(cot.begin(), cot.end());
  for (std::size_t l = layers; l-- > 0;) {
    const std::size_t in = p.sizes[l], out = p.sizes[l + 1];
    if (l + 1 < layers)
      for (std::size_t o = 0; o < out; ++o) delta[o] *= 1.0 - a[l + 1][o] * a[l + 1][o];
    const double* w = p.weights[l].data();
    if (want_params) {
      double* gw = grad_params.data() + off[l];
      double* gb = gw + p.weights[l].size();
      for (std::size_t o = 0; o < out; ++o) {
        if (delta[o] == 0.0) continue;
        for (std::size_t i = 0; i < in; ++i) gw[o * in + i] += delta[o] * a[l][i];
        gb[o] += delta[o];
      }
    }
    std::vector<double> prev(in, 0.0);
    for (std::size_t o = 0; o < out; ++o) {
      if (delta[o] == 0.0) continue;
      for (std::size_t i = 0; i < in; ++i) prev[i] += w[o * in + i] * delta[o];
    }
    delta = std::move(prev);
  }
  for (std::size_t i = 0; i < grad_u.size(); ++i) grad_u[i] += delta[i];
}

// --- linear field -----------------------------------------------------------

void LinearVectorField::eval(std::span<const double> u, double, std::span<double> out) const {
  const auto n = a_.rows();
  if (Eigen::Index(u.size()) != n || Eigen::Index(out.size()) != n)
    throw DimensionMismatch("linear field: state size mismatch");
  Eigen::Map<const Eigen::VectorXd> uu(u.data(), n);
  Eigen::Map<Eigen::VectorXd>(out.data(), n) = a_ * uu;
}

void LinearVectorField::vjp(std::span<const double> u, double, std::span<const double> cot,
                            std::span<double> grad_u, std::span<double> grad_params) const {
  const auto n = a_.rows();
  if (Eigen::Index(u.size()) != n || Eigen::Index(cot.size()) != n || Eigen::Index(grad_u.size()) != n)
    throw DimensionMismatch("linear field vjp: state size mismatch");
  Eigen::Map<const Eigen::VectorXd> uu(u.data(), n), c(cot.data(), n);
  Eigen::Map<Eigen::VectorXd>(grad_u.data(), n) += a_.transpose() * c;
  if (!grad_params.empty()) {
    if (Eigen::Index(grad_params.size()) != a_.size()) throw DimensionMismatch("linear field vjp: params");
    for (Eigen::Index r = 0; r < n; ++r)
      for (Eigen::Index k = 0; k < n; ++k) grad_params[std::size_t(r * n + k)] += c[r] * uu[k];
  }
}

TangentLower vector_field(const TangentLower& u, double t, const VectorFieldParams& params, double time_scale) {
  MlpVectorField f(params, time_scale);
  if (u.size() != f.state_size()) throw DimensionMismatch("vector_field: tangent size mismatch");
  TangentLower out(u.dim());
  f.eval(u.entries(), t, out.entries());
  return out;
}

// --- solver -----------------------------------------------------------------

namespace {

void check_interval(double t_start, double t_end) {
  if (!std::isfinite(t_start) || !std::isfinite(t_end)) throw NonFiniteError("ode: non-finite time bound");
  if (t_end < t_start)
    throw std::invalid_argument("ode: t_end " + std::to_string(t_end) + " < t_start " + std::to_string(t_start));
}

bool finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

std::size_t euler_steps(double t_start, double t_end, const OdeConfig& cfg) {
  if (cfg.n_steps == 0) throw ConfigError("n_steps must be >= 1");
  const double span = (t_end - t_start) * double(cfg.n_steps);
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(span)));
}

TangentLower ode_solve(const VectorField& f, const TangentLower& u0, double t_start, double t_end,
                       const OdeConfig& cfg, OdeTape* tape) {
  check_interval(t_start, t_end);
  if (u0.size() != f.state_size()) throw DimensionMismatch("ode_solve: state size mismatch");
  if (!u0.all_finite()) throw NonFiniteError("ode_solve: non-finite initial state");

  if (tape) {
    *tape = OdeTape{};
    tape->valid = true;
    tape->t_start = t_start;
    tape->t_end = t_end;
  }
  if (t_end == t_start) {
    if (tape) tape->u_end.assign(u0.entries().begin(), u0.entries().end());
    return u0;
  }

  const std::size_t n = euler_steps(t_start, t_end, cfg);
  const double eps = (t_end - t_start) / double(n);
  const bool keep = tape && cfg.backward == OdeBackward::unrolled;
  if (tape) {
    tape->steps = n;
    tape->eps = eps;
    if (keep) tape->states.reserve(n);
  }

  TangentLower u = u0;
  std::vector<double> du(u.size());
  for (std::size_t k = 0; k < n; ++k) {
    if (keep) tape->states.emplace_back(u.entries().begin(), u.entries().end());
    const double t = t_start + double(k) * eps;
    f.eval(u.entries(), t, du);
    for (std::size_t p = 0; p < u.size(); ++p) u[p] += eps * du[p];
    if (!finite(u.entries())) throw NonFiniteError("ode_solve: non-finite state at step " + std::to_string(k));
  }
  if (tape) tape->u_end.assign(u.entries().begin(), u.entries().end());
  return u;
}

OdeGrads backward_unrolled(const TangentLower& grad_end, const OdeTape& tape, const VectorField& f) {
  if (!tape.valid) throw std::logic_error("backward_unrolled: no forward tape");
  if (tape.states.size() != tape.steps)
    throw std::logic_error("backward_unrolled: tape was recorded without states (adjoint mode)");
  OdeGrads g{grad_end, std::vector<double>(f.param_count(), 0.0)};
  std::vector<double> gu(grad_end.size());
  for (std::size_t k = tape.steps; k-- > 0;) {
    // u_{k+1} = u_k + eps f(u_k, t_k)
    const double t = tape.t_start + double(k) * tape.eps;
    std::vector<double> cot(g.u0.entries().begin(), g.u0.entries().end());
    for (double& c : cot) c *= tape.eps;
    std::fill(gu.begin(), gu.end(), 0.0);
    f.vjp(tape.states[k], t, cot, gu, g.params);
    for (std::size_t p = 0; p < gu.size(); ++p) g.u0[p] += gu[p];
  }
  return g;
}

OdeGrads backward_adjoint(const TangentLower& grad_end, const TangentLower& u_end, double t_start, double t_end,
                          const VectorField& f, const OdeConfig& cfg) {
  check_interval(t_start, t_end);
  if (grad_end.size() != f.state_size() || u_end.size() != f.state_size())
    throw DimensionMismatch("backward_adjoint: state size mismatch");
  OdeGrads g{grad_end, std::vector<double>(f.param_count(), 0.0)};
  if (t_end == t_start) return g;

  const std::size_t n = euler_steps(t_start, t_end, cfg);
  const double eps = (t_end - t_start) / double(n);
  std::vector<double> u(u_end.entries().begin(), u_end.entries().end());
  std::vector<double> du(u.size()), ga(u.size()), cot(u.size());
  for (std::size_t k = n; k > 0; --k) {
    // partitioned Euler in reverse time: step the state back first, then
    // evaluate the adjoint and the quadrature at the reconstructed left end
    f.eval(u, t_start + double(k) * eps, du);
    for (std::size_t p = 0; p < u.size(); ++p) u[p] -= eps * du[p];
    const double t = t_start + double(k - 1) * eps;
    for (std::size_t p = 0; p < u.size(); ++p) cot[p] = eps * g.u0[p];
    std::fill(ga.begin(), ga.end(), 0.0);
    f.vjp(u, t, cot, ga, g.params);
    for (std::size_t p = 0; p < u.size(); ++p) g.u0[p] += ga[p];
    if (!g.u0.all_finite() || !finite(u))
      throw NonFiniteError("backward_adjoint: non-finite adjoint at step " + std::to_string(k - 1));
  }
  return g;
}

// --- hidden-state evolution -------------------------------------------------

CholeskyPoint evolve_hidden(const CholeskyPoint& h_prev, double t_prev, double t_now, const VectorField& f,
                            const OdeConfig& cfg, EvolveTape* tape) {
  check_interval(t_prev, t_now);
  if (tape) *tape = EvolveTape{true, h_prev, h_prev, {}};
  if (!cfg.enabled || t_now == t_prev) return h_prev;

  const CholeskyPoint id = CholeskyPoint::identity(h_prev.dim());
  TangentLower u = ode_solve(f, log_map(id, h_prev), t_prev, t_now, cfg, tape ? &tape->ode : nullptr);
  CholeskyPoint out = exp_map(id, u);
  if (tape) {
    tape->identity = false;
    tape->h_out = out;
  }
  return out;
}

TangentLower evolve_backward(const TangentLower& grad_out, const EvolveTape& tape, const VectorField& f,
                             const OdeConfig& cfg, std::span<double> grad_params) {
  if (tape.identity) return grad_out;
  const std::size_t dim = tape.h_out.dim();
  // exp_I: diagonal is exp(u_ii)
  TangentLower gu = grad_out;
  for (std::size_t i = 0; i < dim; ++i) gu[diag_index(i)] *= tape.h_out.diag(i);

  OdeGrads g = cfg.backward == OdeBackward::unrolled
                   ? backward_unrolled(gu, tape.ode, f)
                   : backward_adjoint(gu, TangentLower(dim, tape.ode.u_end), tape.ode.t_start, tape.ode.t_end, f,
                                      cfg);
  if (!grad_params.empty()) {
    if (grad_params.size() != g.params.size()) throw DimensionMismatch("evolve_backward: parameter size");
    for (std::size_t k = 0; k < g.params.size(); ++k) grad_params[k] += g.params[k];
  }
  // log_I: diagonal is log(h_ii)
  for (std::size_t i = 0; i < dim; ++i) g.u0[diag_index(i)] /= tape.h_prev.diag(i);
  return g.u0;
}

}  // namespace odergru
