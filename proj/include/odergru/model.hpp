#pragma once

// The full recurrent model: encoder lift, then per observation an ODE
// evolution of the hidden state followed by one RGRU update, and an affine
// readout on tangent coordinates log_I(H). Training is plain Adam over the
// raw parameter buffers with a hand-written reverse mode.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "odergru/data.hpp"
#include "odergru/encoder.hpp"
#include "odergru/manifold_ode.hpp"
#include "odergru/params.hpp"
#include "odergru/rgru.hpp"

namespace odergru {

enum class Task { classification, forecasting, imputation };

struct ModelConfig {
  Task task = Task::classification;
  std::size_t classes = 2;
  std::size_t horizon = 1;  // forecasting: samples predicted after the input
  EncoderConfig encoder;
  RgruConfig rgru;          // rgru.dim must equal encoder.out_dim
  VectorFieldConfig field;
  OdeConfig ode;
  bool freeze_encoder = false;

  std::size_t hidden_dim() const noexcept { return encoder.out_dim; }
  std::size_t head_inputs() const noexcept { return packed_size(hidden_dim()); }
  /// Samples covered by one encoded step (imputation rows per head call).
  std::size_t samples_per_step() const noexcept;
  std::size_t head_outputs() const noexcept;
  /// Throws ConfigError.
  void validate() const;
};

struct HeadParams {
  std::size_t inputs = 0;
  std::size_t outputs = 0;
  std::vector<double> weight;  // row-major (outputs, inputs)
  std::vector<double> bias;

  void visit(const ParamVisitor& f);
  void visit(const ConstParamVisitor& f) const;
};

struct ModelParams {
  EncoderParams encoder;
  RgruParams rgru;
  VectorFieldParams field;
  HeadParams head;

  /// Sub-seeds for each block are derived from `seed`.
  static ModelParams init(const ModelConfig& cfg, std::uint64_t seed);
  void visit(const ParamVisitor& f);
  void visit(const ConstParamVisitor& f) const;
};

/// Per-sequence training target.
struct Target {
  int label = -1;          // classification
  Eigen::MatrixXd values;  // regression: (rows, channels)
  Eigen::MatrixXd mask;    // 1 where the entry counts
};

struct Example {
  TimedSequence input;
  Target target;
};

/// Builds model inputs and targets for one sequence of a dataset:
/// classification keeps the sequence and its label; forecasting holds out
/// the last `horizon` samples as the target; imputation reconstructs the
/// observed cells of the input.
Example make_example(const Dataset& ds, std::size_t index, const ModelConfig& cfg);

/// Affinely maps the sample timestamps of seq onto [0, 1] (a single sample
/// maps to 0).
std::vector<double> normalized_times(const TimedSequence& seq);

struct ForwardTape {
  bool valid = false;
  EncoderTape encoder;
  std::vector<double> times;  // normalized time of each encoded step
  std::vector<EvolveTape> evolve;
  std::vector<RgruCache> cells;
  std::vector<CholeskyPoint> hidden;
  std::vector<Eigen::VectorXd> head_in;  // tangent coordinates fed to the head
};

struct ModelOutput {
  std::vector<CholeskyPoint> hidden;  // H_1 .. H_T
  Eigen::MatrixXd out;                // one row per head call
};

/// Tangent coordinates log_I(H) in packed order.
Eigen::VectorXd tangent_readout(const CholeskyPoint& h);

ModelOutput forward(const TimedSequence& seq, const ModelParams& params, const ModelConfig& cfg,
                    ForwardTape* tape = nullptr);

struct LossValue {
  double value = 0.0;
  Eigen::MatrixXd grad;  // d value / d out
};

/// Cross-entropy (log-sum-exp stabilized) for classification; mean squared
/// error over target entries with mask 1 otherwise. Throws DataError if the
/// mask selects nothing.
LossValue task_loss(const ModelOutput& out, const Target& target, const ModelConfig& cfg);

/// lambda * sum of squared raw parameters (encoder excluded when frozen).
double l2_penalty(const ModelParams& params, const ModelConfig& cfg, double lambda);
void l2_gradient(const ModelParams& params, const ModelConfig& cfg, double lambda, ModelParams& grads);

/// Reverse mode of forward: accumulates into grads. A frozen encoder gets no
/// gradient at all.
void backward(const Eigen::MatrixXd& grad_out, const ModelParams& params, const ModelConfig& cfg,
              const ForwardTape& tape, ModelParams& grads);

/// Loss and gradient of one example (no l2).
double example_loss_grad(const Example& ex, const ModelParams& params, const ModelConfig& cfg, ModelParams* grads);

int predict_class(const ModelOutput& out);

// --- training ---------------------------------------------------------------

enum class LossKind { cross_entropy, mse };

struct TrainConfig {
  double lr = 1e-4;
  double l2 = 1e-3;
  std::size_t batch = 32;
  std::size_t max_iter = 400;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::cross_entropy;
  std::size_t eval_every = 0;  // 0: evaluate only after the last iteration
  std::size_t threads = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate(const ModelConfig& model) const;
};

struct EvalResult {
  std::size_t n = 0;
  double loss = 0.0;
  ClassificationMetrics cls;
  RegressionMetrics reg;
  /// accuracy for classification, mse otherwise
  double score(const ModelConfig& cfg) const;
};

/// Forward-only evaluation over the given sequence indices.
EvalResult evaluate(const Dataset& ds, std::span<const std::size_t> which, const ModelParams& params,
                    const ModelConfig& cfg, std::size_t threads = 1);

struct MetricsRow {
  std::size_t iteration = 0;
  double loss = 0.0;  // data loss + l2
  double data_loss = 0.0;
  double l2 = 0.0;
  double grad_norm = 0.0;
  bool evaluated = false;
  double train_score = 0.0;
  double test_score = 0.0;
};

struct TrainResult {
  ModelParams params;
  std::vector<MetricsRow> log;
};

/// Adam on the raw parameters; batches are drawn from a per-epoch shuffle of
/// the training split seeded by cfg.seed. Throws NonFiniteError (naming the
/// iteration) if the loss diverges.
TrainResult train(const Dataset& ds, const ModelParams& init, const ModelConfig& model, const TrainConfig& cfg,
                  const std::function<void(const MetricsRow&)>& on_row = {});

std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsRow& row);
void write_metrics_csv(const std::vector<MetricsRow>& log, const std::filesystem::path& path);

// --- checkpoints ------------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

/// Writes <stem>.json (manifest) and <stem>.bin (little-endian float64 blob
/// of the raw parameters in visit order).
void save_checkpoint(const std::filesystem::path& stem, const ModelParams& params, const ModelConfig& cfg,
                     std::uint64_t seed, const std::string& extra_json = "{}");

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
  std::uint64_t seed = 0;
};

/// Throws ConfigError on a version or layout mismatch.
Checkpoint load_checkpoint(const std::filesystem::path& stem);

}  // namespace odergru
