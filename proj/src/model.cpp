#include "odergru/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "odergru/config.hpp"
#include "odergru/errors.hpp"

namespace odergru {

// --- configuration ----------------------------------------------------------

std::size_t ModelConfig::samples_per_step() const noexcept {
  return encoder.mode == EncoderMode::pointwise ? 1 : encoder.window_len;
}

std::size_t ModelConfig::head_outputs() const noexcept {
  switch (task) {
    case Task::classification: return classes;
    case Task::forecasting: return horizon * encoder.input_channels;
    case Task::imputation: return samples_per_step() * encoder.input_channels;
  }
  return 0;
}

void ModelConfig::validate() const {
  encoder.validate();
  if (rgru.dim != encoder.out_dim)
    throw ConfigError("rgru.dim (" + std::to_string(rgru.dim) + ") must equal encoder.out_dim (" +
                      std::to_string(encoder.out_dim) + ")");
  if (task == Task::classification && classes < 2) throw ConfigError("classification needs at least 2 classes");
  if (task == Task::forecasting && horizon == 0) throw ConfigError("forecasting horizon must be >= 1");
  if (ode.n_steps == 0) throw ConfigError("ode.n_steps must be >= 1");
  if (!(ode.time_scale > 0.0) || !std::isfinite(ode.time_scale)) throw ConfigError("ode.time_scale must be > 0");
  for (std::size_t h : field.hidden)
    if (h == 0) throw ConfigError("field.hidden widths must be >= 1");
}

// --- parameters -------------------------------------------------------------

void HeadParams::visit(const ParamVisitor& f) {
  f("head.weight", weight);
  f("head.bias", bias);
}

void HeadParams::visit(const ConstParamVisitor& f) const {
  f("head.weight", weight);
  f("head.bias", bias);
}

ModelParams ModelParams::init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::seed_seq ss{std::uint32_t(seed), std::uint32_t(seed >> 32)};
  std::array<std::uint64_t, 4> sub;
  {
    std::array<std::uint32_t, 8> w;
    ss.generate(w.begin(), w.end());
    for (std::size_t k = 0; k < 4; ++k) sub[k] = (std::uint64_t(w[2 * k]) << 32) | w[2 * k + 1];
  }
  ModelParams p;
  p.encoder = EncoderParams::init(cfg.encoder, sub[0]);
  p.rgru = RgruParams::init(cfg.rgru, sub[1]);
  p.field = VectorFieldParams::init(cfg.head_inputs(), cfg.field, sub[2]);
  p.head.inputs = cfg.head_inputs();
  p.head.outputs = cfg.head_outputs();
  p.head.weight.assign(p.head.inputs * p.head.outputs, 0.0);
  p.head.bias.assign(p.head.outputs, 0.0);
  std::mt19937_64 rng(sub[3]);
  const double b = 1.0 / std::sqrt(double(p.head.inputs));
  std::uniform_real_distribution<double> u(-b, b);
  for (double& w : p.head.weight) w = u(rng);
  return p;
}

void ModelParams::visit(const ParamVisitor& f) {
  encoder.visit(f);
  rgru.visit(f);
  field.visit(f);
  head.visit(f);
}

void ModelParams::visit(const ConstParamVisitor& f) const {
  encoder.visit(f);
  rgru.visit(f);
  field.visit(f);
  head.visit(f);
}

// --- examples ---------------------------------------------------------------

Example make_example(const Dataset& ds, std::size_t index, const ModelConfig& cfg) {
  if (index >= ds.size()) throw std::out_of_range("make_example: index out of range");
  const TimedSequence& seq = ds.sequences[index];
  const auto C = Eigen::Index(seq.channels);
  Example ex;
  switch (cfg.task) {
    case Task::classification:
      if (ds.labels[index] < 0) throw DataError("sequence " + ds.ids[index] + " has no label");
      ex.input = seq;
      ex.target.label = ds.labels[index];
      break;
    case Task::forecasting: {
      if (seq.length() <= cfg.horizon)
        throw DataError("sequence " + ds.ids[index] + " is too short for horizon " + std::to_string(cfg.horizon));
      const std::size_t keep = seq.length() - cfg.horizon;
      ex.input.channels = seq.channels;
      ex.input.samples.assign(seq.samples.begin(), seq.samples.begin() + std::ptrdiff_t(keep));
      ex.target.values.resize(Eigen::Index(cfg.horizon), C);
      ex.target.mask.resize(Eigen::Index(cfg.horizon), C);
      for (std::size_t h = 0; h < cfg.horizon; ++h)
        for (Eigen::Index c = 0; c < C; ++c) {
          const Sample& s = seq.samples[keep + h];
          ex.target.values(Eigen::Index(h), c) = s.values[std::size_t(c)];
          ex.target.mask(Eigen::Index(h), c) = s.observed[std::size_t(c)];
        }
      break;
    }
    case Task::imputation: {
      ex.input = seq;
      const auto n = Eigen::Index(seq.length());
      ex.target.values.resize(n, C);
      ex.target.mask.resize(n, C);
      for (Eigen::Index k = 0; k < n; ++k)
        for (Eigen::Index c = 0; c < C; ++c) {
          ex.target.values(k, c) = seq.samples[std::size_t(k)].values[std::size_t(c)];
          ex.target.mask(k, c) = seq.samples[std::size_t(k)].observed[std::size_t(c)];
        }
      break;
    }
  }
  return ex;
}

std::vector<double> normalized_times(const TimedSequence& seq) {
  std::vector<double> out(seq.length(), 0.0);
  if (seq.length() < 2) return out;
  const double t0 = seq.samples.front().t;
  const double span = seq.samples.back().t - t0;
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = (seq.samples[k].t - t0) / span;
  return out;
}

// --- forward / backward -----------------------------------------------------

Eigen::VectorXd tangent_readout(const CholeskyPoint& h) {
  Eigen::VectorXd v(Eigen::Index(h.size()));
  for (std::size_t p = 0; p < h.size(); ++p) v[Eigen::Index(p)] = h[p];
  for (std::size_t i = 0; i < h.dim(); ++i) v[Eigen::Index(diag_index(i))] = std::log(h.diag(i));
  return v;
}

namespace {

Eigen::VectorXd apply_head(const HeadParams& head, const Eigen::VectorXd& v) {
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> w(
      head.weight.data(), Eigen::Index(head.outputs), Eigen::Index(head.inputs));
  return w * v + Eigen::Map<const Eigen::VectorXd>(head.bias.data(), Eigen::Index(head.outputs));
}

// Index of the hidden state read by head row r.
std::size_t head_source(const ModelConfig& cfg, std::size_t r, std::size_t steps) {
  return cfg.task == Task::imputation ? r : steps - 1;
}

std::size_t step_stride(const ModelConfig& cfg) {
  return cfg.encoder.mode == EncoderMode::pointwise ? 1 : cfg.encoder.stride;
}

}  // namespace

ModelOutput forward(const TimedSequence& seq, const ModelParams& params, const ModelConfig& cfg, ForwardTape* tape) {
  if (seq.samples.empty()) throw DataError("forward: empty sequence");
  if (tape) *tape = ForwardTape{};

  const auto steps = encode(seq, params.encoder, cfg.encoder, tape ? &tape->encoder : nullptr);
  const double t0 = seq.samples.front().t;
  const double span = seq.samples.back().t - t0;
  std::vector<double> tau(steps.size());
  for (std::size_t i = 0; i < steps.size(); ++i) tau[i] = span > 0.0 ? (steps[i].t - t0) / span : 0.0;

  const MlpVectorField f(params.field, cfg.ode.time_scale);
  ModelOutput out;
  out.hidden.reserve(steps.size());
  if (tape) {
    tape->times = tau;
    tape->evolve.resize(steps.size());
    tape->cells.resize(steps.size());
  }

  RgruState state = init_state(cfg.hidden_dim());
  // the first interval starts at the first observation: H_0 = I is not evolved
  double prev = tau.front();
  for (std::size_t i = 0; i < steps.size(); ++i) {
    state.h = evolve_hidden(state.h, prev, tau[i], f, cfg.ode, tape ? &tape->evolve[i] : nullptr);
    state = step(state, steps[i].x, params.rgru, cfg.rgru, tape ? &tape->cells[i] : nullptr);
    out.hidden.push_back(state.h);
    prev = tau[i];
  }

  const std::size_t rows = cfg.task == Task::imputation ? steps.size() : 1;
  out.out.resize(Eigen::Index(rows), Eigen::Index(params.head.outputs));
  for (std::size_t r = 0; r < rows; ++r) {
    Eigen::VectorXd v = tangent_readout(out.hidden[head_source(cfg, r, steps.size())]);
    out.out.row(Eigen::Index(r)) = apply_head(params.head, v).transpose();
    if (tape) tape->head_in.push_back(std::move(v));
  }
  if (tape) {
    tape->hidden = out.hidden;
    tape->valid = true;
  }
  return out;
}

void backward(const Eigen::MatrixXd& grad_out, const ModelParams& params, const ModelConfig& cfg,
              const ForwardTape& tape, ModelParams& grads) {
  if (!tape.valid) throw std::logic_error("backward: no forward tape");
  const std::size_t T = tape.cells.size();
  if (std::size_t(grad_out.rows()) != tape.head_in.size() || std::size_t(grad_out.cols()) != params.head.outputs)
    throw DimensionMismatch("backward: output gradient shape does not match the forward pass");

  const std::size_t P = params.head.inputs;
  const std::size_t d = cfg.hidden_dim();
  std::vector<TangentLower> g_hidden(T, TangentLower(d));
  for (std::size_t r = 0; r < tape.head_in.size(); ++r) {
    const Eigen::VectorXd g = grad_out.row(Eigen::Index(r)).transpose();
    if (g.isZero(0.0)) continue;
    const Eigen::VectorXd& v = tape.head_in[r];
    for (std::size_t o = 0; o < params.head.outputs; ++o) {
      const double go = g[Eigen::Index(o)];
      grads.head.bias[o] += go;
      for (std::size_t i = 0; i < P; ++i) grads.head.weight[o * P + i] += go * v[Eigen::Index(i)];
    }
    const std::size_t src = head_source(cfg, r, T);
    const CholeskyPoint& h = tape.hidden[src];
    for (std::size_t i = 0; i < P; ++i) {
      double acc = 0.0;
      for (std::size_t o = 0; o < params.head.outputs; ++o) acc += params.head.weight[o * P + i] * g[Eigen::Index(o)];
      g_hidden[src][i] += acc;
    }
    // readout takes log of the diagonal
    for (std::size_t k = 0; k < d; ++k) g_hidden[src][diag_index(k)] /= h.diag(k);
  }

  const MlpVectorField f(params.field, cfg.ode.time_scale);
  std::vector<double> g_field(f.param_count(), 0.0);
  std::vector<TangentLower> g_x(T);
  TangentLower carry(d);
  for (std::size_t i = T; i-- > 0;) {
    TangentLower g = g_hidden[i];
    for (std::size_t p = 0; p < g.size(); ++p) g[p] += carry[p];
    RgruStepGrads sg = step_backward(g, tape.cells[i], params.rgru, cfg.rgru, grads.rgru);
    g_x[i] = std::move(sg.x);
    carry = evolve_backward(sg.h_prev, tape.evolve[i], f, cfg.ode, g_field);
  }
  std::size_t k = 0;
  grads.field.visit(ParamVisitor([&](std::string_view, std::span<double> v) {
    for (double& x : v) x += g_field[k++];
  }));
  if (!cfg.freeze_encoder) encode_backward(g_x, params.encoder, cfg.encoder, tape.encoder, grads.encoder);
}

// --- loss -------------------------------------------------------------------

LossValue task_loss(const ModelOutput& out, const Target& target, const ModelConfig& cfg) {
  LossValue lv;
  lv.grad = Eigen::MatrixXd::Zero(out.out.rows(), out.out.cols());
  if (cfg.task == Task::classification) {
    if (out.out.rows() != 1) throw DimensionMismatch("task_loss: classification expects one logit row");
    if (target.label < 0 || target.label >= out.out.cols())
      throw DimensionMismatch("task_loss: label " + std::to_string(target.label) + " outside the logit range");
    const Eigen::VectorXd z = out.out.row(0).transpose();
    const double m = z.maxCoeff();
    const Eigen::ArrayXd e = (z.array() - m).exp();
    const double lse = m + std::log(e.sum());
    lv.value = lse - z[target.label];
    lv.grad.row(0) = (e / e.sum()).matrix().transpose();
    lv.grad(0, target.label) -= 1.0;
    return lv;
  }

  const Eigen::Index C = target.values.cols();
  // each output entry names a (target row, channel) cell
  auto cell = [&](Eigen::Index r, Eigen::Index col) -> std::pair<Eigen::Index, Eigen::Index> {
    if (cfg.task == Task::forecasting) return {col / C, col % C};
    return {r * Eigen::Index(step_stride(cfg)) + col / C, col % C};
  };
  if (target.mask.rows() != target.values.rows() || target.mask.cols() != C)
    throw DimensionMismatch("task_loss: mask shape differs from targets");
  if (out.out.cols() != Eigen::Index(cfg.head_outputs()) || (cfg.task == Task::forecasting && out.out.rows() != 1))
    throw DimensionMismatch("task_loss: output shape does not match the task");
  double sum = 0.0, count = 0.0;
  for (Eigen::Index r = 0; r < out.out.rows(); ++r)
    for (Eigen::Index col = 0; col < out.out.cols(); ++col) {
      auto [tr, tc] = cell(r, col);
      if (tr >= target.values.rows() || target.mask(tr, tc) == 0.0) continue;
      const double e = out.out(r, col) - target.values(tr, tc);
      sum += e * e;
      count += 1.0;
      lv.grad(r, col) = 2.0 * e;
    }
  if (count == 0.0) throw DataError("task_loss: mask selects no target entry");
  lv.value = sum / count;
  lv.grad /= count;
  return lv;
}

namespace {

template <class P, class F>
void for_trainable(P& params, const ModelConfig& cfg, F&& f) {
  if (!cfg.freeze_encoder) params.encoder.visit(f);
  params.rgru.visit(f);
  params.field.visit(f);
  params.head.visit(f);
}

}  // namespace

double l2_penalty(const ModelParams& params, const ModelConfig& cfg, double lambda) {
  double s = 0.0;
  for_trainable(params, cfg, ConstParamVisitor([&](std::string_view, std::span<const double> v) {
                  for (double x : v) s += x * x;
                }));
  return lambda * s;
}

void l2_gradient(const ModelParams& params, const ModelConfig& cfg, double lambda, ModelParams& grads) {
  std::vector<double> flat;
  for_trainable(params, cfg, ConstParamVisitor([&](std::string_view, std::span<const double> v) {
                  flat.insert(flat.end(), v.begin(), v.end());
                }));
  std::size_t k = 0;
  for_trainable(grads, cfg, ParamVisitor([&](std::string_view, std::span<double> v) {
                  for (double& g : v) g += 2.0 * lambda * flat[k++];
                }));
}

double example_loss_grad(const Example& ex, const ModelParams& params, const ModelConfig& cfg, ModelParams* grads) {
  ForwardTape tape;
  const ModelOutput out = forward(ex.input, params, cfg, grads ? &tape : nullptr);
  const LossValue lv = task_loss(out, ex.target, cfg);
  if (grads) backward(lv.grad, params, cfg, tape, *grads);
  return lv.value;
}

int predict_class(const ModelOutput& out) {
  Eigen::Index best;
  out.out.row(0).maxCoeff(&best);
  return int(best);
}

// --- training ---------------------------------------------------------------

void TrainConfig::validate(const ModelConfig& model) const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("train.lr must be >= 0");
  if (!(l2 >= 0.0) || !std::isfinite(l2)) throw ConfigError("train.l2 must be >= 0");
  if (batch == 0) throw ConfigError("train.batch must be >= 1");
  if (threads == 0) throw ConfigError("threads must be >= 1");
  if ((loss == LossKind::cross_entropy) != (model.task == Task::classification))
    throw ConfigError("train.loss: cross_entropy goes with classification, mse with the regression tasks");
}

double EvalResult::score(const ModelConfig& cfg) const {
  return cfg.task == Task::classification ? cls.accuracy : reg.mse;
}

namespace {

// Runs fn(i) for i in [0, n) on up to `threads` workers, contiguous chunks.
template <class F>
void parallel_for(std::size_t n, std::size_t threads, F&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  const std::size_t chunk = (n + threads - 1) / threads;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w * chunk; i < std::min(n, (w + 1) * chunk); ++i) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

EvalResult evaluate(const Dataset& ds, std::span<const std::size_t> which, const ModelParams& params,
                    const ModelConfig& cfg, std::size_t threads) {
  if (which.empty()) throw DataError("evaluate: no sequences selected");
  const std::size_t n = which.size();
  std::vector<double> losses(n);
  std::vector<int> pred(n), truth(n);
  std::vector<Eigen::MatrixXd> outs(n);
  std::vector<Example> exs(n);
  parallel_for(n, threads, [&](std::size_t i) {
    exs[i] = make_example(ds, which[i], cfg);
    ModelOutput o = forward(exs[i].input, params, cfg);
    losses[i] = task_loss(o, exs[i].target, cfg).value;
    if (cfg.task == Task::classification) {
      pred[i] = predict_class(o);
      truth[i] = exs[i].target.label;
    }
    outs[i] = std::move(o.out);
  });

  EvalResult r;
  r.n = n;
  for (double l : losses) r.loss += l;
  r.loss /= double(n);
  if (cfg.task == Task::classification) {
    r.cls = classification_metrics(pred, truth, cfg.classes);
    return r;
  }
  std::vector<double> p, t;
  std::vector<std::uint8_t> m;
  const Eigen::Index C = Eigen::Index(cfg.encoder.input_channels);
  for (std::size_t i = 0; i < n; ++i) {
    const Target& tg = exs[i].target;
    for (Eigen::Index row = 0; row < outs[i].rows(); ++row)
      for (Eigen::Index col = 0; col < outs[i].cols(); ++col) {
        const Eigen::Index tr = cfg.task == Task::forecasting ? col / C : row * Eigen::Index(step_stride(cfg)) + col / C;
        const Eigen::Index tc = col % C;
        if (tr >= tg.values.rows()) continue;
        p.push_back(outs[i](row, col));
        t.push_back(tg.values(tr, tc));
        m.push_back(tg.mask(tr, tc) != 0.0);
      }
  }
  r.reg = regression_metrics(p, t, m);
  return r;
}

TrainResult train(const Dataset& ds, const ModelParams& init, const ModelConfig& model, const TrainConfig& cfg,
                  const std::function<void(const MetricsRow&)>& on_row) {
  model.validate();
  cfg.validate(model);
  if (ds.channels != model.encoder.input_channels)
    throw DataError("dataset has " + std::to_string(ds.channels) + " channels, model expects " +
                    std::to_string(model.encoder.input_channels));
  const auto train_idx = ds.indices(Split::train);
  const auto test_idx = ds.indices(Split::test);
  if (train_idx.empty()) throw DataError("training split is empty");

  std::vector<Example> examples(ds.size());
  for (std::size_t i : train_idx) examples[i] = make_example(ds, i, model);

  TrainResult res{init, {}};
  std::vector<double> theta = flatten(res.params);
  std::vector<double> m1(theta.size(), 0.0), m2(theta.size(), 0.0);
  double b1t = 1.0, b2t = 1.0;

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order = train_idx;
  std::size_t pos = order.size();  // forces a shuffle on the first draw

  const std::size_t B = std::min(cfg.batch, train_idx.size());
  std::vector<std::size_t> batch(B);
  std::vector<std::vector<double>> per_grad(B);
  std::vector<double> per_loss(B);
  const ModelParams zero = zeros_like(res.params);

  for (std::size_t it = 1; it <= cfg.max_iter; ++it) {
    for (std::size_t b = 0; b < B; ++b) {
      if (pos == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        pos = 0;
      }
      batch[b] = order[pos++];
    }
    parallel_for(B, cfg.threads, [&](std::size_t b) {
      ModelParams g = zero;
      per_loss[b] = example_loss_grad(examples[batch[b]], res.params, model, &g);
      per_grad[b] = flatten(g);
    });

    // fixed-order reduction keeps the result independent of the thread count
    MetricsRow row;
    row.iteration = it;
    std::vector<double> grad(theta.size(), 0.0);
    for (std::size_t b = 0; b < B; ++b) {
      row.data_loss += per_loss[b];
      for (std::size_t k = 0; k < grad.size(); ++k) grad[k] += per_grad[b][k];
    }
    row.data_loss /= double(B);
    for (double& g : grad) g /= double(B);
    {
      ModelParams g2 = zero;
      l2_gradient(res.params, model, cfg.l2, g2);
      const auto flat = flatten(g2);
      for (std::size_t k = 0; k < grad.size(); ++k) grad[k] += flat[k];
    }
    row.l2 = l2_penalty(res.params, model, cfg.l2);
    row.loss = row.data_loss + row.l2;
    double gn = 0.0;
    for (double g : grad) gn += g * g;
    row.grad_norm = std::sqrt(gn);
    if (!std::isfinite(row.loss) || !std::isfinite(row.grad_norm))
      throw NonFiniteError("training diverged at iteration " + std::to_string(it) + " (loss " +
                           std::to_string(row.loss) + ")");

    b1t *= cfg.beta1;
    b2t *= cfg.beta2;
    for (std::size_t k = 0; k < theta.size(); ++k) {
      m1[k] = cfg.beta1 * m1[k] + (1.0 - cfg.beta1) * grad[k];
      m2[k] = cfg.beta2 * m2[k] + (1.0 - cfg.beta2) * grad[k] * grad[k];
      const double mh = m1[k] / (1.0 - b1t);
      const double vh = m2[k] / (1.0 - b2t);
      theta[k] -= cfg.lr * mh / (std::sqrt(vh) + cfg.adam_eps);
    }
    unflatten(res.params, std::span<const double>(theta));

    const bool eval_now = it == cfg.max_iter || (cfg.eval_every > 0 && it % cfg.eval_every == 0);
    if (eval_now) {
      row.evaluated = true;
      row.train_score = evaluate(ds, train_idx, res.params, model, cfg.threads).score(model);
      row.test_score = test_idx.empty() ? 0.0 : evaluate(ds, test_idx, res.params, model, cfg.threads).score(model);
    }
    if (on_row) on_row(row);
    res.log.push_back(row);
  }
  return res;
}

std::string metrics_csv_header() { return "iteration,loss,data_loss,l2_penalty,grad_norm,train_score,test_score"; }

std::string metrics_csv_row(const MetricsRow& r) {
  char buf[256];
  int n = std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g", r.iteration, r.loss, r.data_loss, r.l2,
                        r.grad_norm);
  std::string s(buf, std::size_t(n));
  if (r.evaluated) {
    n = std::snprintf(buf, sizeof buf, ",%.17g,%.17g", r.train_score, r.test_score);
    s.append(buf, std::size_t(n));
  } else {
    s += ",,";
  }
  return s;
}

void write_metrics_csv(const std::vector<MetricsRow>& log, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  f << metrics_csv_header() << '\n';
  for (const auto& r : log) f << metrics_csv_row(r) << '\n';
  if (!f) throw DataError("write failed: " + path.string());
}

// --- checkpoints ------------------------------------------------------------

namespace {

std::filesystem::path with_ext(const std::filesystem::path& stem, const char* ext) {
  std::filesystem::path p = stem;
  p += ext;
  return p;
}

std::uint64_t to_le(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xffu) << (8 * (7 - i));
    return r;
  }
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& stem, const ModelParams& params, const ModelConfig& cfg,
                     std::uint64_t seed, const std::string& extra_json) {
  const auto flat = flatten(params);
  Json layout = Json::array();
  for (auto& [name, size] : param_layout(params)) layout.push_back({{"name", name}, {"size", size}});
  const auto bin = with_ext(stem, ".bin");
  Json manifest = {
      {"format_version", kCheckpointVersion},
      {"seed", seed},
      {"model", model_config_to_json(cfg)},
      {"parameters", layout},
      {"blob", bin.filename().string()},
      {"blob_bytes", flat.size() * 8},
      {"dtype", "float64-le"},
      {"extra", Json::parse(extra_json)},
  };
  {
    std::ofstream f(bin, std::ios::binary);
    if (!f) throw DataError("cannot write " + bin.string());
    for (double x : flat) {
      const std::uint64_t u = to_le(std::bit_cast<std::uint64_t>(x));
      f.write(reinterpret_cast<const char*>(&u), 8);
    }
    if (!f) throw DataError("write failed: " + bin.string());
  }
  std::ofstream f(with_ext(stem, ".json"), std::ios::binary);
  if (!f) throw DataError("cannot write manifest for " + stem.string());
  f << manifest.dump(2) << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& stem) {
  const auto mpath = with_ext(stem, ".json");
  std::ifstream mf(mpath);
  if (!mf) throw ConfigError("cannot open checkpoint manifest " + mpath.string());
  Json manifest;
  try {
    manifest = Json::parse(mf);
  } catch (const Json::parse_error& e) {
    throw ConfigError("checkpoint manifest " + mpath.string() + ": " + e.what());
  }
  const int version = manifest.value("format_version", -1);
  if (version != kCheckpointVersion)
    throw ConfigError("checkpoint format version " + std::to_string(version) + " (this build reads " +
                      std::to_string(kCheckpointVersion) + ")");

  Checkpoint ck;
  ck.config = model_config_from_json(manifest.at("model"));
  ck.config.validate();
  ck.seed = manifest.value("seed", std::uint64_t(0));
  ck.params = ModelParams::init(ck.config, 0);

  const auto layout = param_layout(ck.params);
  const Json& declared = manifest.at("parameters");
  if (declared.size() != layout.size()) throw ConfigError("checkpoint parameter list does not match the model");
  for (std::size_t k = 0; k < layout.size(); ++k)
    if (declared[k].at("name") != layout[k].first || declared[k].at("size") != layout[k].second)
      throw ConfigError("checkpoint parameter " + std::to_string(k) + " (" + declared[k].at("name").get<std::string>() +
                        ") does not match the model layout");

  const auto bin = mpath.parent_path() / manifest.at("blob").get<std::string>();
  std::ifstream bf(bin, std::ios::binary);
  if (!bf) throw ConfigError("cannot open checkpoint blob " + bin.string());
  std::vector<double> flat(param_count(ck.params));
  for (double& x : flat) {
    std::uint64_t u;
    if (!bf.read(reinterpret_cast<char*>(&u), 8)) throw ConfigError("checkpoint blob too short: " + bin.string());
    x = std::bit_cast<double>(to_le(u));
  }
  if (bf.peek() != std::char_traits<char>::eof()) throw ConfigError("checkpoint blob too long: " + bin.string());
  unflatten(ck.params, std::span<const double>(flat));
  return ck;
}

}  // namespace odergru
