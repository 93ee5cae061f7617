#include "odergru/rgru.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include "odergru/errors.hpp"

namespace odergru {
namespace {

template <class F>
auto guarded(const char* gate, F&& f) {
  try {
    return f();
  } catch (const NonFiniteError& e) {
    throw NonFiniteError(std::string("rgru ") + gate + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw NonFiniteError(std::string("rgru ") + gate + ": " + e.what());
  }
}

std::vector<double> to_vec(const PackedLower& p) { return {p.entries().begin(), p.entries().end()}; }

TangentLower effective_weight(std::size_t d, const std::vector<double>& raw, bool positive_diag) {
  TangentLower w(d, raw);
  if (positive_diag)
    for (std::size_t i = 0; i < d; ++i) w[diag_index(i)] = std::abs(raw[diag_index(i)]) + kPositiveFloor;
  return w;
}

CholeskyPoint effective_bias(std::size_t d, std::vector<double> raw) {
  for (std::size_t i = 0; i < d; ++i) raw[diag_index(i)] = std::abs(raw[diag_index(i)]) + kPositiveFloor;
  return CholeskyPoint(d, std::move(raw));
}

}  // namespace

RgruParams RgruParams::init(const RgruConfig& cfg, std::uint64_t seed) {
  const std::size_t d = cfg.dim;
  if (d == 0) throw std::invalid_argument("RgruParams::init: dim must be positive");
  RgruParams p;
  p.dim = d;
  std::mt19937_64 rng(seed);
  const double s = 1.0 / std::sqrt(static_cast<double>(d));
  std::uniform_real_distribution<double> u(-s, s);
  const auto mask = diagonal_mask(d);
  auto weight = [&] {
    std::vector<double> w(packed_size(d));
    for (std::size_t k = 0; k < w.size(); ++k) w[k] = mask[k] ? 1.0 - kPositiveFloor : u(rng);
    return w;
  };
  auto bias = [&] {
    std::vector<double> b(packed_size(d), 0.0);
    for (std::size_t i = 0; i < d; ++i) b[diag_index(i)] = 1.0 - kPositiveFloor;
    return b;
  };
  for (auto* w : {&p.w_z, &p.w_r, &p.w_l}) {
    (*w)[0] = weight();
    (*w)[1] = weight();
  }
  p.b_z = bias();
  p.b_r = bias();
  p.b_l = bias();
  return p;
}

void RgruParams::visit(const ParamVisitor& f) {
  f("rgru.w_z.0", w_z[0]);
  f("rgru.w_z.1", w_z[1]);
  f("rgru.w_r.0", w_r[0]);
  f("rgru.w_r.1", w_r[1]);
  f("rgru.w_l.0", w_l[0]);
  f("rgru.w_l.1", w_l[1]);
  f("rgru.b_z", b_z);
  f("rgru.b_r", b_r);
  f("rgru.b_l", b_l);
}

void RgruParams::visit(const ConstParamVisitor& f) const {
  f("rgru.w_z.0", w_z[0]);
  f("rgru.w_z.1", w_z[1]);
  f("rgru.w_r.0", w_r[0]);
  f("rgru.w_r.1", w_r[1]);
  f("rgru.w_l.0", w_l[0]);
  f("rgru.w_l.1", w_l[1]);
  f("rgru.b_z", b_z);
  f("rgru.b_r", b_r);
  f("rgru.b_l", b_l);
}

EffectiveRgruParams reparameterize(const RgruParams& raw, const RgruConfig& cfg) {
  const std::size_t d = raw.dim;
  const bool pos = cfg.positive_weight_diag;
  return EffectiveRgruParams{
      {effective_weight(d, raw.w_z[0], pos), effective_weight(d, raw.w_z[1], pos)},
      {effective_weight(d, raw.w_r[0], pos), effective_weight(d, raw.w_r[1], pos)},
      {effective_weight(d, raw.w_l[0], pos), effective_weight(d, raw.w_l[1], pos)},
      effective_bias(d, raw.b_z),
      effective_bias(d, raw.b_r),
      effective_bias(d, raw.b_l),
  };
}

double abs_subgradient(double raw) { return raw > 0.0 ? 1.0 : (raw < 0.0 ? -1.0 : 0.0); }

RgruState init_state(std::size_t dim) {
  if (dim == 0) throw std::invalid_argument("init_state: dim must be positive");
  return {CholeskyPoint::identity(dim), 0};
}

CholeskyPoint gate_blend(const CholeskyPoint& h_prev, const CholeskyPoint& candidate, const PackedLower& z) {
  if (h_prev.dim() != candidate.dim() || h_prev.dim() != z.dim()) {
    throw DimensionMismatch("gate_blend: dimension mismatch");
  }
  std::vector<double> out(h_prev.size());
  for (std::size_t p = 0; p < out.size(); ++p) out[p] = (1.0 - z[p]) * h_prev[p] + z[p] * candidate[p];
  return CholeskyPoint(h_prev.dim(), std::move(out));
}

RgruState step(const RgruState& state, const CholeskyPoint& x, const RgruParams& params,
               const RgruConfig& cfg, RgruCache* cache) {
  const std::size_t d = params.dim;
  if (x.dim() != d || state.h.dim() != d) {
    throw DimensionMismatch("rgru step: input dim " + std::to_string(x.dim()) + ", state dim " +
                            std::to_string(state.h.dim()) + ", params dim " + std::to_string(d));
  }
  auto eff = reparameterize(params, cfg);
  const CholeskyPoint& h = state.h;
  const std::array<CholeskyPoint, 2> xh{x, h};

  const auto m_z = guarded("update gate", [&] { return weighted_frechet_mean(xh, eff.w_z); });
  const auto z = guarded("update gate", [&] { return sigmoid_gate(translate(m_z, eff.b_z)); });
  const auto m_r = guarded("reset gate", [&] { return weighted_frechet_mean(xh, eff.w_r); });
  const auto r = guarded("reset gate", [&] { return sigmoid_gate(translate(m_r, eff.b_r)); });
  const auto rh = guarded("reset gate", [&] { return hadamard(r, h); });
  const std::array<CholeskyPoint, 2> xrh{x, rh};
  const auto m_l = guarded("candidate", [&] { return weighted_frechet_mean(xrh, eff.w_l); });
  const auto l = guarded("candidate", [&] { return translate(m_l, eff.b_l); });
  const auto cand = guarded("candidate", [&] {
    if (cfg.candidate == CandidateActivation::softplus) return split_activation(l);
    std::vector<double> e(l.size());
    const auto mask = diagonal_mask(d);
    for (std::size_t p = 0; p < e.size(); ++p)
      e[p] = mask[p] ? std::max(sigmoid(l[p]), kPositiveFloor) : std::tanh(l[p]);
    return CholeskyPoint(d, std::move(e));
  });
  auto h_new = guarded("state update", [&] { return gate_blend(h, cand, z); });

  if (cache) {
    cache->valid = true;
    cache->x = x;
    cache->h_prev = h;
    cache->eff = std::move(eff);
    cache->m_z = to_vec(m_z);
    cache->m_r = to_vec(m_r);
    cache->m_l = to_vec(m_l);
    cache->z = to_vec(z);
    cache->r = to_vec(r);
    cache->rh = to_vec(rh);
    cache->l = to_vec(l);
    cache->cand = to_vec(cand);
  }
  return {std::move(h_new), state.step_index + 1};
}

RgruStepGrads step_backward(const TangentLower& grad_h, const RgruCache& cache, const RgruParams& params,
                            const RgruConfig& cfg, RgruParams& param_grads) {
  if (!cache.valid) throw std::logic_error("rgru step_backward: missing forward cache");
  const std::size_t d = params.dim;
  if (grad_h.dim() != d) throw DimensionMismatch("rgru step_backward: gradient dimension mismatch");
  const auto mask = diagonal_mask(d);
  const auto& e = cache.eff;
  RgruStepGrads out{TangentLower(d), TangentLower(d)};

  // Effective-parameter gradients, mapped to raw storage at the end.
  std::array<std::vector<double>, 2> gwz{std::vector<double>(packed_size(d)), std::vector<double>(packed_size(d))};
  auto gwr = gwz, gwl = gwz;
  std::vector<double> gbz(packed_size(d)), gbr(packed_size(d)), gbl(packed_size(d));

  for (std::size_t p = 0; p < packed_size(d); ++p) {
    const double g = grad_h[p];
    if (g == 0.0) continue;
    const double x = cache.x[p], h = cache.h_prev[p];
    const double z = cache.z[p], r = cache.r[p], rh = cache.rh[p];
    const double l = cache.l[p], c = cache.cand[p];
    const double w_z0 = e.w_z[0][p], w_z1 = e.w_z[1][p];
    const double w_r0 = e.w_r[0][p], w_r1 = e.w_r[1][p];
    const double w_l0 = e.w_l[0][p], w_l1 = e.w_l[1][p];

    const double gz = g * (c - h);
    double gh = g * (1.0 - z);
    const double gc = g * z;
    double gx = 0.0;

    if (!mask[p]) {
      // strict-lower: means are affine, (+) adds, tanh candidate
      const double gl = gc * (1.0 - c * c);
      gbl[p] += gl;
      gwl[0][p] += 0.5 * gl * x;
      gwl[1][p] += 0.5 * gl * rh;
      gx += 0.5 * gl * w_l0;
      const double grh = 0.5 * gl * w_l1;
      const double gr = grh * h;
      gh += grh * r;

      const double gar = gr * r * (1.0 - r);
      gbr[p] += gar;
      gwr[0][p] += 0.5 * gar * x;
      gwr[1][p] += 0.5 * gar * h;
      gx += 0.5 * gar * w_r0;
      gh += 0.5 * gar * w_r1;

      const double gaz = gz * z * (1.0 - z);
      gbz[p] += gaz;
      gwz[0][p] += 0.5 * gaz * x;
      gwz[1][p] += 0.5 * gaz * h;
      gx += 0.5 * gaz * w_z0;
      gh += 0.5 * gaz * w_z1;
    } else {
      // diagonal: means are exp of weighted log averages, (+) multiplies
      const double lx = std::log(x), lh = std::log(h), lrh = std::log(rh);
      double glx = 0.0, glh = 0.0;
      const double s = sigmoid(l);
      const double dcand = cfg.candidate == CandidateActivation::softplus ? s : s * (1.0 - s);
      const double gl = gc * dcand;
      const double ml = cache.m_l[p];
      gbl[p] += gl * ml;
      const double el = gl * e.b_l[p] * ml;  // gradient of the exponent
      gwl[0][p] += 0.5 * el * lx;
      gwl[1][p] += 0.5 * el * lrh;
      glx += 0.5 * el * w_l0;
      const double grh = 0.5 * el * w_l1 / rh;
      const double gr = grh * h;
      gh += grh * r;

      const double mr = cache.m_r[p];
      const double gar = gr * r * (1.0 - r);
      gbr[p] += gar * mr;
      const double er = gar * e.b_r[p] * mr;
      gwr[0][p] += 0.5 * er * lx;
      gwr[1][p] += 0.5 * er * lh;
      glx += 0.5 * er * w_r0;
      glh += 0.5 * er * w_r1;

      const double mz = cache.m_z[p];
      const double gaz = gz * z * (1.0 - z);
      gbz[p] += gaz * mz;
      const double ez = gaz * e.b_z[p] * mz;
      gwz[0][p] += 0.5 * ez * lx;
      gwz[1][p] += 0.5 * ez * lh;
      glx += 0.5 * ez * w_z0;
      glh += 0.5 * ez * w_z1;

      gx += glx / x;
      gh += glh / h;
    }
    out.x[p] = gx;
    out.h_prev[p] = gh;
  }

  const bool pos_w = cfg.positive_weight_diag;
  auto to_raw_w = [&](const std::vector<double>& geff, const std::vector<double>& raw, std::vector<double>& acc) {
    for (std::size_t p = 0; p < geff.size(); ++p)
      acc[p] += (pos_w && mask[p]) ? geff[p] * abs_subgradient(raw[p]) : geff[p];
  };
  auto to_raw_b = [&](const std::vector<double>& geff, const std::vector<double>& raw, std::vector<double>& acc) {
    for (std::size_t p = 0; p < geff.size(); ++p) acc[p] += mask[p] ? geff[p] * abs_subgradient(raw[p]) : geff[p];
  };
  for (int k = 0; k < 2; ++k) {
    to_raw_w(gwz[k], params.w_z[k], param_grads.w_z[k]);
    to_raw_w(gwr[k], params.w_r[k], param_grads.w_r[k]);
    to_raw_w(gwl[k], params.w_l[k], param_grads.w_l[k]);
  }
  to_raw_b(gbz, params.b_z, param_grads.b_z);
  to_raw_b(gbr, params.b_r, param_grads.b_r);
  to_raw_b(gbl, params.b_l, param_grads.b_l);
  return out;
}

}  // namespace odergru
