#pragma once

// Lifts raw multivariate time series into sequences of Cholesky points:
// windowing, a 1-D convolutional feature map, shrinkage covariance
// estimation, jitter, and Cholesky factorization. Every stage has a
// reverse-mode counterpart so the whole lift is trainable.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "odergru/geometry.hpp"
#include "odergru/params.hpp"

namespace odergru {

struct Sample {
  double t = 0.0;
  std::vector<double> values;
  std::vector<std::uint8_t> observed;  // 1 = observed, 0 = missing
};

/// Ordered observations with strictly increasing timestamps.
struct TimedSequence {
  std::size_t channels = 0;
  std::vector<Sample> samples;

  std::size_t length() const noexcept { return samples.size(); }
  /// Throws DataError on non-increasing timestamps, shape mismatch, or a
  /// sample with no observed channel.
  void validate() const;
  static TimedSequence from_matrix(const Eigen::MatrixXd& values, std::span<const double> times);
};

/// Channels-by-time slice of a sequence. Missing cells are zero in
/// `features` and zero in `mask`.
struct FeatureWindow {
  Eigen::MatrixXd features;
  Eigen::MatrixXd mask;
  double t_start = 0.0;
  double t_end = 0.0;
  double center() const noexcept { return 0.5 * (t_start + t_end); }
};

/// Contiguous windows of `len` samples every `stride` samples. Throws
/// DataError if the sequence is shorter than len.
std::vector<FeatureWindow> window(const TimedSequence& seq, std::size_t len, std::size_t stride);

struct ConvLayerSpec {
  std::size_t out_channels = 32;
  std::size_t kernel = 2;
  bool leaky = true;
  bool pool = false;  // max-pool, width 2 stride 2, after the activation
};

enum class EncoderMode {
  windowed,   // covariance across time columns of each window
  pointwise,  // one SPD matrix per sample, covariance across feature groups
};

struct EncoderConfig {
  EncoderMode mode = EncoderMode::windowed;
  std::size_t input_channels = 1;
  std::size_t window_len = 5;
  std::size_t stride = 5;
  std::vector<ConvLayerSpec> layers{{32, 2}, {32, 2}, {32, 2}};
  std::size_t out_dim = 32;
  bool append_mask = false;  // pointwise only: feed the observation mask as extra channels
  double rho_min = 0.01;
  double jitter_rel = 1e-6;
  double jitter_abs = 1e-6;

  std::size_t conv_input_channels() const noexcept;
  std::size_t final_channels() const noexcept;
  /// Throws ConfigError on inconsistent shapes.
  void validate() const;
};

/// Weights of the convolutional feature map. Layer l has a weight tensor of
/// shape (out, in, kernel) stored row-major and a bias of length out.
struct EncoderParams {
  std::vector<std::vector<double>> weights;
  std::vector<std::vector<double>> biases;

  static EncoderParams init(const EncoderConfig& cfg, std::uint64_t seed);
  void visit(const ParamVisitor& f);
  void visit(const ConstParamVisitor& f) const;
};

/// Per-layer intermediates of one feature-map evaluation.
struct FeatureMapCache {
  std::vector<Eigen::MatrixXd> inputs;       // input to each layer
  std::vector<Eigen::MatrixXd> preacts;      // conv output before activation
  std::vector<std::vector<Eigen::Index>> pool_argmax;
  std::vector<std::vector<bool>> valid;      // column validity, per stage (size layers + 1)
};

/// Forward pass of the convolution stack. Zero layers return the input.
Eigen::MatrixXd feature_map_h_theta(const Eigen::MatrixXd& input, const EncoderParams& params,
                                    const EncoderConfig& cfg, FeatureMapCache* cache = nullptr,
                                    std::vector<bool> input_valid = {});

/// Reverse-mode of feature_map_h_theta; accumulates into grads and returns
/// the gradient with respect to the input.
Eigen::MatrixXd feature_map_backward(const Eigen::MatrixXd& grad_out, const EncoderParams& params,
                                     const EncoderConfig& cfg, const FeatureMapCache& cache,
                                     EncoderParams& grads);

struct ShrinkageResult {
  Eigen::MatrixXd covariance;  // shrunk estimate plus jitter
  Eigen::MatrixXd sample;      // uncentered second-moment matrix
  double rho = 1.0;
  double rho_unclamped = 1.0;
  double mu = 0.0;             // tr(sample) / p
  std::size_t samples = 0;
};

/// Oracle-approximating shrinkage toward mu*I of the second-moment matrix of
/// the columns of f, with rho clamped to [rho_min, 1], plus diagonal jitter
/// jitter_rel*mu + jitter_abs. Throws NonFiniteError on non-finite input.
ShrinkageResult shrinkage_covariance(const Eigen::MatrixXd& f, double rho_min = 0.01,
                                     double jitter_rel = 1e-6, double jitter_abs = 1e-6);

/// Reverse-mode of shrinkage_covariance: gradient with respect to f given a
/// symmetric gradient with respect to the output covariance.
Eigen::MatrixXd shrinkage_backward(const Eigen::MatrixXd& f, const ShrinkageResult& fwd,
                                   const Eigen::MatrixXd& grad_cov, double rho_min, double jitter_rel);

struct EncodedStep {
  CholeskyPoint x;
  double t = 0.0;
};

struct WindowCache {
  Eigen::MatrixXd input;
  FeatureMapCache fmap;
  Eigen::MatrixXd features;        // retained columns, out_dim rows
  std::vector<Eigen::Index> kept;  // retained column indices of the feature map
  ShrinkageResult shrink;
  Eigen::MatrixXd factor;
};

struct EncoderTape {
  std::vector<WindowCache> windows;
};

/// Slices seq into the windows the configured mode consumes.
std::vector<FeatureWindow> encoder_windows(const TimedSequence& seq, const EncoderConfig& cfg);

/// Full lift: windows -> feature map -> shrinkage -> jitter -> Cholesky.
std::vector<EncodedStep> encode(const TimedSequence& seq, const EncoderParams& params,
                                const EncoderConfig& cfg, EncoderTape* tape = nullptr);

/// Reverse-mode of encode. grad_x[i] is the gradient with respect to the
/// packed entries of step i; accumulates into grads.
void encode_backward(std::span<const TangentLower> grad_x, const EncoderParams& params,
                     const EncoderConfig& cfg, const EncoderTape& tape, EncoderParams& grads);

}  // namespace odergru
