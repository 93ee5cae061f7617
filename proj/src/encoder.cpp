#include "odergru/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include <Eigen/Dense>

#include "odergru/cholesky.hpp"
#include "odergru/errors.hpp"

namespace odergru {
namespace {

constexpr double kLeakySlope = 0.01;

}  // namespace

void TimedSequence::validate() const {
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (s.values.size() != channels || s.observed.size() != channels) {
      throw DataError("sample " + std::to_string(i) + " has the wrong channel count");
    }
    if (!std::isfinite(s.t)) throw DataError("sample " + std::to_string(i) + " has a non-finite timestamp");
    if (i > 0 && !(s.t > samples[i - 1].t)) {
      throw DataError("timestamps not strictly increasing at sample " + std::to_string(i));
    }
    if (std::none_of(s.observed.begin(), s.observed.end(), [](std::uint8_t m) { return m != 0; })) {
      throw DataError("sample " + std::to_string(i) + " has no observed channel");
    }
    for (std::size_t c = 0; c < channels; ++c) {
      if (s.observed[c] && !std::isfinite(s.values[c])) {
        throw DataError("sample " + std::to_string(i) + " has a non-finite value");
      }
    }
  }
}

TimedSequence TimedSequence::from_matrix(const Eigen::MatrixXd& values, std::span<const double> times) {
  if (static_cast<std::size_t>(values.cols()) != times.size()) {
    throw DimensionMismatch("from_matrix: " + std::to_string(values.cols()) + " columns vs " +
                            std::to_string(times.size()) + " timestamps");
  }
  TimedSequence seq;
  seq.channels = static_cast<std::size_t>(values.rows());
  for (std::size_t j = 0; j < times.size(); ++j) {
    Sample s;
    s.t = times[j];
    s.values.resize(seq.channels);
    s.observed.assign(seq.channels, 1);
    for (std::size_t c = 0; c < seq.channels; ++c) s.values[c] = values(c, j);
    seq.samples.push_back(std::move(s));
  }
  return seq;
}

std::vector<FeatureWindow> window(const TimedSequence& seq, std::size_t len, std::size_t stride) {
  if (len < 1 || stride < 1) throw std::invalid_argument("window: len and stride must be >= 1");
  const std::size_t n = seq.length();
  if (n < len) {
    throw DataError("window: sequence of length " + std::to_string(n) + " is shorter than window " +
                    std::to_string(len));
  }
  std::vector<FeatureWindow> out;
  const auto c = static_cast<Eigen::Index>(seq.channels);
  for (std::size_t start = 0; start + len <= n; start += stride) {
    FeatureWindow w;
    w.features = Eigen::MatrixXd::Zero(c, static_cast<Eigen::Index>(len));
    w.mask = Eigen::MatrixXd::Zero(c, static_cast<Eigen::Index>(len));
    for (std::size_t j = 0; j < len; ++j) {
      const auto& s = seq.samples[start + j];
      for (Eigen::Index ch = 0; ch < c; ++ch) {
        if (s.observed[ch]) {
          w.features(ch, j) = s.values[ch];
          w.mask(ch, j) = 1.0;
        }
      }
    }
    w.t_start = seq.samples[start].t;
    w.t_end = seq.samples[start + len - 1].t;
    out.push_back(std::move(w));
  }
  return out;
}

std::size_t EncoderConfig::conv_input_channels() const noexcept {
  return mode == EncoderMode::pointwise && append_mask ? 2 * input_channels : input_channels;
}

std::size_t EncoderConfig::final_channels() const noexcept {
  return layers.empty() ? conv_input_channels() : layers.back().out_channels;
}

void EncoderConfig::validate() const {
  if (input_channels == 0) throw ConfigError("encoder.input_channels must be positive");
  if (out_dim == 0) throw ConfigError("encoder.out_dim must be positive");
  if (rho_min < 0.0 || rho_min > 1.0) throw ConfigError("encoder.rho_min must lie in [0, 1]");
  if (jitter_rel < 0.0 || !(jitter_abs > 0.0)) {
    throw ConfigError("encoder jitter must be non-negative with a positive absolute floor");
  }
  for (const auto& l : layers) {
    if (l.out_channels == 0 || l.kernel == 0) throw ConfigError("encoder layer with zero channels or kernel");
  }
  if (mode == EncoderMode::windowed) {
    if (window_len < 1 || stride < 1) throw ConfigError("encoder.window_len and stride must be >= 1");
    if (final_channels() != out_dim) {
      throw ConfigError("encoder: final channel count " + std::to_string(final_channels()) +
                        " must equal out_dim " + std::to_string(out_dim));
    }
    // Each conv shrinks the window by kernel-1 and each pool halves it.
    std::size_t cols = window_len;
    for (const auto& l : layers) {
      if (cols < l.kernel) throw ConfigError("encoder: window too short for the conv stack");
      cols = cols - l.kernel + 1;
      if (l.pool) cols /= 2;
      if (cols == 0) throw ConfigError("encoder: window too short for the conv stack");
    }
  } else {
    for (const auto& l : layers) {
      if (l.kernel != 1 || l.pool) throw ConfigError("encoder: pointwise mode needs kernel-1 layers without pooling");
    }
    if (final_channels() % out_dim != 0) {
      throw ConfigError("encoder: pointwise final channel count must be a multiple of out_dim");
    }
  }
}

EncoderParams EncoderParams::init(const EncoderConfig& cfg, std::uint64_t seed) {
  EncoderParams p;
  std::mt19937_64 rng(seed);
  std::size_t in = cfg.conv_input_channels();
  for (const auto& l : cfg.layers) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in * l.kernel));
    std::uniform_real_distribution<double> u(-bound, bound);
    std::vector<double> w(l.out_channels * in * l.kernel), b(l.out_channels);
    for (double& x : w) x = u(rng);
    for (double& x : b) x = u(rng);
    p.weights.push_back(std::move(w));
    p.biases.push_back(std::move(b));
    in = l.out_channels;
  }
  return p;
}

void EncoderParams::visit(const ParamVisitor& f) {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    f("encoder.conv" + std::to_string(l) + ".weight", weights[l]);
    f("encoder.conv" + std::to_string(l) + ".bias", biases[l]);
  }
}

void EncoderParams::visit(const ConstParamVisitor& f) const {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    f("encoder.conv" + std::to_string(l) + ".weight", weights[l]);
    f("encoder.conv" + std::to_string(l) + ".bias", biases[l]);
  }
}

Eigen::MatrixXd feature_map_h_theta(const Eigen::MatrixXd& input, const EncoderParams& params,
                                    const EncoderConfig& cfg, FeatureMapCache* cache,
                                    std::vector<bool> input_valid) {
  if (params.weights.size() != cfg.layers.size() || params.biases.size() != cfg.layers.size()) {
    throw DimensionMismatch("feature_map_h_theta: parameter layer count does not match config");
  }
  if (input_valid.empty()) input_valid.assign(static_cast<std::size_t>(input.cols()), true);
  if (cache) {
    *cache = {};
    cache->valid.push_back(input_valid);
  }
  Eigen::MatrixXd a = input;
  std::vector<bool> valid = std::move(input_valid);
  for (std::size_t l = 0; l < cfg.layers.size(); ++l) {
    const auto& spec = cfg.layers[l];
    const auto in = static_cast<std::size_t>(a.rows());
    const auto k = spec.kernel;
    const auto out = spec.out_channels;
    if (params.weights[l].size() != out * in * k || params.biases[l].size() != out) {
      throw DimensionMismatch("feature_map_h_theta: layer " + std::to_string(l) +
                              " weights do not match input with " + std::to_string(in) + " channels");
    }
    if (static_cast<std::size_t>(a.cols()) < k) {
      throw DimensionMismatch("feature_map_h_theta: input too short for kernel at layer " + std::to_string(l));
    }
    const Eigen::Index cols = a.cols() - static_cast<Eigen::Index>(k) + 1;
    Eigen::MatrixXd z(static_cast<Eigen::Index>(out), cols);
    const double* w = params.weights[l].data();
    for (std::size_t o = 0; o < out; ++o) {
      for (Eigen::Index j = 0; j < cols; ++j) {
        double s = params.biases[l][o];
        for (std::size_t i = 0; i < in; ++i) {
          const double* wk = w + (o * in + i) * k;
          for (std::size_t q = 0; q < k; ++q) s += wk[q] * a(static_cast<Eigen::Index>(i), j + static_cast<Eigen::Index>(q));
        }
        z(static_cast<Eigen::Index>(o), j) = s;
      }
    }
    std::vector<bool> v(static_cast<std::size_t>(cols));
    for (Eigen::Index j = 0; j < cols; ++j) {
      bool ok = true;
      for (std::size_t q = 0; q < k; ++q) ok = ok && valid[static_cast<std::size_t>(j) + q];
      v[static_cast<std::size_t>(j)] = ok;
    }
    if (cache) {
      cache->inputs.push_back(a);
      cache->preacts.push_back(z);
    }
    Eigen::MatrixXd act = spec.leaky ? Eigen::MatrixXd(z.unaryExpr([](double x) { return x > 0.0 ? x : kLeakySlope * x; })) : z;
    std::vector<Eigen::Index> argmax;
    if (spec.pool) {
      const Eigen::Index pc = act.cols() / 2;
      Eigen::MatrixXd pooled(act.rows(), pc);
      argmax.resize(static_cast<std::size_t>(act.rows() * pc));
      std::vector<bool> pv(static_cast<std::size_t>(pc));
      for (Eigen::Index j = 0; j < pc; ++j) {
        pv[static_cast<std::size_t>(j)] = v[static_cast<std::size_t>(2 * j)] && v[static_cast<std::size_t>(2 * j + 1)];
        for (Eigen::Index r = 0; r < act.rows(); ++r) {
          const bool first = act(r, 2 * j) >= act(r, 2 * j + 1);
          pooled(r, j) = first ? act(r, 2 * j) : act(r, 2 * j + 1);
          argmax[static_cast<std::size_t>(r * pc + j)] = first ? 2 * j : 2 * j + 1;
        }
      }
      act = std::move(pooled);
      v = std::move(pv);
    }
    if (cache) {
      cache->pool_argmax.push_back(std::move(argmax));
      cache->valid.push_back(v);
    }
    a = std::move(act);
    valid = std::move(v);
  }
  return a;
}

Eigen::MatrixXd feature_map_backward(const Eigen::MatrixXd& grad_out, const EncoderParams& params,
                                     const EncoderConfig& cfg, const FeatureMapCache& cache,
                                     EncoderParams& grads) {
  Eigen::MatrixXd g = grad_out;
  for (std::size_t l = cfg.layers.size(); l-- > 0;) {
    const auto& spec = cfg.layers[l];
    const Eigen::MatrixXd& z = cache.preacts[l];
    const Eigen::MatrixXd& a = cache.inputs[l];
    if (spec.pool) {
      Eigen::MatrixXd up = Eigen::MatrixXd::Zero(z.rows(), z.cols());
      const Eigen::Index pc = g.cols();
      const auto& am = cache.pool_argmax[l];
      for (Eigen::Index r = 0; r < g.rows(); ++r)
        for (Eigen::Index j = 0; j < pc; ++j) up(r, am[static_cast<std::size_t>(r * pc + j)]) += g(r, j);
      g = std::move(up);
    }
    if (spec.leaky) {
      for (Eigen::Index r = 0; r < z.rows(); ++r)
        for (Eigen::Index j = 0; j < z.cols(); ++j)
          if (!(z(r, j) > 0.0)) g(r, j) *= kLeakySlope;
    }
    const auto in = static_cast<std::size_t>(a.rows());
    const auto k = spec.kernel;
    const auto out = spec.out_channels;
    Eigen::MatrixXd ga = Eigen::MatrixXd::Zero(a.rows(), a.cols());
    const double* w = params.weights[l].data();
    double* gw = grads.weights[l].data();
    for (std::size_t o = 0; o < out; ++o) {
      for (Eigen::Index j = 0; j < z.cols(); ++j) {
        const double go = g(static_cast<Eigen::Index>(o), j);
        if (go == 0.0) continue;
        grads.biases[l][o] += go;
        for (std::size_t i = 0; i < in; ++i) {
          const std::size_t base = (o * in + i) * k;
          for (std::size_t q = 0; q < k; ++q) {
            const Eigen::Index col = j + static_cast<Eigen::Index>(q);
            gw[base + q] += go * a(static_cast<Eigen::Index>(i), col);
            ga(static_cast<Eigen::Index>(i), col) += go * w[base + q];
          }
        }
      }
    }
    g = std::move(ga);
  }
  return g;
}

ShrinkageResult shrinkage_covariance(const Eigen::MatrixXd& f, double rho_min, double jitter_rel,
                                     double jitter_abs) {
  if (!f.allFinite()) throw NonFiniteError("shrinkage_covariance: non-finite feature");
  const auto p = f.rows();
  const auto n = f.cols();
  ShrinkageResult r;
  r.samples = static_cast<std::size_t>(n);
  r.sample = n > 0 ? Eigen::MatrixXd(f * f.transpose() / static_cast<double>(n)) : Eigen::MatrixXd::Zero(p, p);
  const double pd = static_cast<double>(p);
  const double tr = r.sample.trace();
  const double tr2 = r.sample.squaredNorm();  // tr(S^2) for symmetric S
  r.mu = tr / pd;
  const double num = (1.0 - 2.0 / pd) * tr2 + tr * tr;
  const double den = (static_cast<double>(n) + 1.0 - 2.0 / pd) * (tr2 - tr * tr / pd);
  r.rho_unclamped = den > 0.0 ? num / den : 1.0;
  r.rho = std::clamp(r.rho_unclamped, rho_min, 1.0);
  r.covariance = (1.0 - r.rho) * r.sample;
  r.covariance.diagonal().array() += r.rho * r.mu + jitter_rel * r.mu + jitter_abs;
  return r;
}

Eigen::MatrixXd shrinkage_backward(const Eigen::MatrixXd& f, const ShrinkageResult& fwd,
                                   const Eigen::MatrixXd& grad_cov, double rho_min, double jitter_rel) {
  const auto p = f.rows();
  const auto n = f.cols();
  if (n == 0) return Eigen::MatrixXd::Zero(p, 0);
  const double pd = static_cast<double>(p);
  const Eigen::MatrixXd& s = fwd.sample;
  // C = (1-rho) S + (rho + jitter_rel) mu I + jitter_abs I
  Eigen::MatrixXd gs = (1.0 - fwd.rho) * grad_cov;
  const double grad_mu = (fwd.rho + jitter_rel) * grad_cov.trace();
  const double grad_rho = fwd.mu * grad_cov.trace() - (grad_cov.array() * s.array()).sum();
  gs.diagonal().array() += grad_mu / pd;
  const bool rho_free = fwd.rho_unclamped > rho_min && fwd.rho_unclamped < 1.0;
  if (rho_free && grad_rho != 0.0) {
    const double tr = s.trace();
    const double tr2 = s.squaredNorm();
    const double c = static_cast<double>(n) + 1.0 - 2.0 / pd;
    const double num = (1.0 - 2.0 / pd) * tr2 + tr * tr;
    const double den = c * (tr2 - tr * tr / pd);
    // d tr2 / dS = 2S, d tr / dS = I
    const double dnum_dtr2 = 1.0 - 2.0 / pd, dnum_dtr = 2.0 * tr;
    const double dden_dtr2 = c, dden_dtr = -2.0 * c * tr / pd;
    const double drho_dtr2 = (dnum_dtr2 * den - num * dden_dtr2) / (den * den);
    const double drho_dtr = (dnum_dtr * den - num * dden_dtr) / (den * den);
    gs += grad_rho * drho_dtr2 * 2.0 * s;
    gs.diagonal().array() += grad_rho * drho_dtr;
  }
  // S = F F^T / n
  return (gs + gs.transpose()) * f / static_cast<double>(n);
}

std::vector<FeatureWindow> encoder_windows(const TimedSequence& seq, const EncoderConfig& cfg) {
  if (cfg.mode == EncoderMode::pointwise) return window(seq, 1, 1);
  return window(seq, cfg.window_len, cfg.stride);
}

std::vector<EncodedStep> encode(const TimedSequence& seq, const EncoderParams& params,
                                const EncoderConfig& cfg, EncoderTape* tape) {
  if (seq.channels != cfg.input_channels) {
    throw DimensionMismatch("encode: sequence has " + std::to_string(seq.channels) +
                            " channels, encoder expects " + std::to_string(cfg.input_channels));
  }
  const auto windows = encoder_windows(seq, cfg);
  const auto d = static_cast<Eigen::Index>(cfg.out_dim);
  std::vector<EncodedStep> out;
  out.reserve(windows.size());
  if (tape) tape->windows.clear();
  for (const auto& w : windows) {
    WindowCache wc;
    if (cfg.mode == EncoderMode::pointwise && cfg.append_mask) {
      wc.input.resize(w.features.rows() * 2, w.features.cols());
      wc.input << w.features, w.mask;
    } else {
      wc.input = w.features;
    }
    std::vector<bool> valid(static_cast<std::size_t>(w.features.cols()));
    for (Eigen::Index j = 0; j < w.features.cols(); ++j) valid[static_cast<std::size_t>(j)] = w.mask.col(j).minCoeff() > 0.5;
    if (cfg.mode == EncoderMode::pointwise) std::fill(valid.begin(), valid.end(), true);

    const Eigen::MatrixXd fm = feature_map_h_theta(wc.input, params, cfg, &wc.fmap, valid);
    if (cfg.mode == EncoderMode::pointwise) {
      // Row r of the SPD factor's feature matrix is channel group r.
      const Eigen::Index g = fm.rows() / d;
      wc.features.resize(d, g);
      for (Eigen::Index r = 0; r < d; ++r)
        for (Eigen::Index c = 0; c < g; ++c) wc.features(r, c) = fm(r * g + c, 0);
      for (Eigen::Index c = 0; c < g; ++c) wc.kept.push_back(c);
    } else {
      if (fm.rows() != d) throw DimensionMismatch("encode: feature map rows do not match out_dim");
      const auto& v = wc.fmap.valid.back();
      for (Eigen::Index j = 0; j < fm.cols(); ++j)
        if (v[static_cast<std::size_t>(j)]) wc.kept.push_back(j);
      wc.features.resize(d, static_cast<Eigen::Index>(wc.kept.size()));
      for (std::size_t c = 0; c < wc.kept.size(); ++c) wc.features.col(static_cast<Eigen::Index>(c)) = fm.col(wc.kept[c]);
    }
    wc.shrink = shrinkage_covariance(wc.features, cfg.rho_min, cfg.jitter_rel, cfg.jitter_abs);
    wc.factor = cholesky_factor(wc.shrink.covariance);
    out.push_back({CholeskyPoint::from_dense(wc.factor), w.center()});
    if (tape) tape->windows.push_back(std::move(wc));
  }
  return out;
}

void encode_backward(std::span<const TangentLower> grad_x, const EncoderParams& params,
                     const EncoderConfig& cfg, const EncoderTape& tape, EncoderParams& grads) {
  if (grad_x.size() != tape.windows.size()) {
    throw DimensionMismatch("encode_backward: gradient count does not match the tape");
  }
  const auto d = static_cast<Eigen::Index>(cfg.out_dim);
  for (std::size_t i = 0; i < grad_x.size(); ++i) {
    const auto& wc = tape.windows[i];
    const Eigen::MatrixXd gl = grad_x[i].dense();
    if (gl.isZero(0.0)) continue;
    const Eigen::MatrixXd gc = cholesky_factor_backward(wc.factor, gl);
    const Eigen::MatrixXd gf = shrinkage_backward(wc.features, wc.shrink, gc, cfg.rho_min, cfg.jitter_rel);
    Eigen::MatrixXd gfm;
    if (cfg.mode == EncoderMode::pointwise) {
      const Eigen::Index g = gf.cols();
      gfm = Eigen::MatrixXd::Zero(d * g, 1);
      for (Eigen::Index r = 0; r < d; ++r)
        for (Eigen::Index c = 0; c < g; ++c) gfm(r * g + c, 0) = gf(r, c);
    } else {
      const auto cols = static_cast<Eigen::Index>(wc.fmap.valid.back().size());
      gfm = Eigen::MatrixXd::Zero(d, cols);
      for (std::size_t c = 0; c < wc.kept.size(); ++c) gfm.col(wc.kept[c]) = gf.col(static_cast<Eigen::Index>(c));
    }
    feature_map_backward(gfm, params, cfg, wc.fmap, grads);
  }
}

}  // namespace odergru
