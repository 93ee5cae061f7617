#pragma once

// Continuous evolution of the hidden state between observations. The state
// is carried to the flat chart log_I (the log map at the identity, a global
// bijection from the Cholesky space onto lower-triangular matrices),
// integrated there with fixed-step explicit Euler, and mapped back with exp_I.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "odergru/geometry.hpp"
#include "odergru/params.hpp"

namespace odergru {

enum class OdeBackward { unrolled, adjoint };

struct OdeConfig {
  std::size_t n_steps = 16;  // Euler steps per unit of (normalized) time
  OdeBackward backward = OdeBackward::unrolled;
  double time_scale = 1.0;   // the field sees t / time_scale
  bool enabled = true;       // false: evolve_hidden is the identity (ablation)
};

/// Autonomous-or-not vector field on flat packed coordinates.
class VectorField {
 public:
  virtual ~VectorField() = default;
  virtual std::size_t state_size() const = 0;
  virtual std::size_t param_count() const = 0;
  virtual void eval(std::span<const double> u, double t, std::span<double> out) const = 0;
  /// Accumulates cot^T df/du into grad_u and cot^T df/dparams into grad_params.
  virtual void vjp(std::span<const double> u, double t, std::span<const double> cot, std::span<double> grad_u,
                   std::span<double> grad_params) const = 0;
};

struct VectorFieldConfig {
  std::vector<std::size_t> hidden{32};
  bool zero_output = false;  // initialize the output layer to zero (f == 0)
};

/// Multilayer perceptron weights: layer k maps sizes[k] -> sizes[k+1],
/// weight row-major (out, in), tanh on every hidden layer, linear output.
struct VectorFieldParams {
  std::vector<std::size_t> sizes;
  std::vector<std::vector<double>> weights;
  std::vector<std::vector<double>> biases;

  static VectorFieldParams init(std::size_t state_size, const VectorFieldConfig& cfg, std::uint64_t seed);
  void visit(const ParamVisitor& f);
  void visit(const ConstParamVisitor& f) const;
};

/// f(u, t) = MLP([u, t / time_scale]).
class MlpVectorField final : public VectorField {
 public:
  MlpVectorField(const VectorFieldParams& params, double time_scale);
  std::size_t state_size() const override { return params_->sizes.back(); }
  std::size_t param_count() const override;
  void eval(std::span<const double> u, double t, std::span<double> out) const override;
  void vjp(std::span<const double> u, double t, std::span<const double> cot, std::span<double> grad_u,
           std::span<double> grad_params) const override;

 private:
  const VectorFieldParams* params_;
  double time_scale_;
};

/// f(u, t) = A u, with A (row-major) as the parameters.
class LinearVectorField final : public VectorField {
 public:
  explicit LinearVectorField(Eigen::MatrixXd a) : a_(std::move(a)) {}
  std::size_t state_size() const override { return static_cast<std::size_t>(a_.rows()); }
  std::size_t param_count() const override { return static_cast<std::size_t>(a_.size()); }
  void eval(std::span<const double> u, double t, std::span<double> out) const override;
  void vjp(std::span<const double> u, double t, std::span<const double> cot, std::span<double> grad_u,
           std::span<double> grad_params) const override;
  const Eigen::MatrixXd& matrix() const noexcept { return a_; }

 private:
  Eigen::MatrixXd a_;
};

/// Evaluates the MLP field on a packed tangent.
TangentLower vector_field(const TangentLower& u, double t, const VectorFieldParams& params, double time_scale = 1.0);

/// Steps and states recorded by one forward solve.
struct OdeTape {
  bool valid = false;
  double t_start = 0.0;
  double t_end = 0.0;
  std::size_t steps = 0;
  double eps = 0.0;
  std::vector<std::vector<double>> states;  // u_0 .. u_{n-1}; empty in adjoint mode
  std::vector<double> u_end;
};

/// Number of Euler steps used on [t_start, t_end].
std::size_t euler_steps(double t_start, double t_end, const OdeConfig& cfg);

/// Explicit Euler u <- u + eps f(u, t), n = max(1, ceil((t_end - t_start) n_steps))
/// steps; an empty interval returns u0 unchanged.
TangentLower ode_solve(const VectorField& f, const TangentLower& u0, double t_start, double t_end,
                       const OdeConfig& cfg, OdeTape* tape = nullptr);

struct OdeGrads {
  TangentLower u0;
  std::vector<double> params;
};

/// Exact reverse mode through the recorded Euler steps.
OdeGrads backward_unrolled(const TangentLower& grad_end, const OdeTape& tape, const VectorField& f);

/// Continuous adjoint: integrates the state backward from u_end jointly with
/// da/dt = -a df/du and the parameter quadrature, using the same step grid.
OdeGrads backward_adjoint(const TangentLower& grad_end, const TangentLower& u_end, double t_start, double t_end,
                          const VectorField& f, const OdeConfig& cfg);

struct EvolveTape {
  bool identity = true;
  CholeskyPoint h_prev;
  CholeskyPoint h_out;
  OdeTape ode;
};

/// exp_I(ODESolve(f, log_I(H_prev), [t_prev, t_now])).
CholeskyPoint evolve_hidden(const CholeskyPoint& h_prev, double t_prev, double t_now, const VectorField& f,
                            const OdeConfig& cfg, EvolveTape* tape = nullptr);

/// Reverse-mode of evolve_hidden using the configured backward mode;
/// accumulates field-parameter gradients into grad_params.
TangentLower evolve_backward(const TangentLower& grad_out, const EvolveTape& tape, const VectorField& f,
                             const OdeConfig& cfg, std::span<double> grad_params);

}  // namespace odergru
