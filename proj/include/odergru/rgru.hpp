#pragma once

// Gated recurrent cell on the Cholesky space. Gates are built from the
// entrywise-weighted log-Cholesky mean, the (+) translation, and split
// activations; every operation acts coordinate-by-coordinate on the packed
// lower triangle, which keeps the reverse mode a per-coordinate loop.

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "odergru/geometry.hpp"
#include "odergru/params.hpp"

namespace odergru {

enum class CandidateActivation { softplus, sigmoid };

struct RgruConfig {
  std::size_t dim = 4;
  bool positive_weight_diag = true;
  CandidateActivation candidate = CandidateActivation::softplus;
};

/// Raw (unconstrained) storage. Each gate has one weight matrix per mean
/// input ({X, H} for z and r, {X, r.H} for the candidate) and one bias.
struct RgruParams {
  std::size_t dim = 0;
  std::array<std::vector<double>, 2> w_z, w_r, w_l;
  std::vector<double> b_z, b_r, b_l;

  /// Strict-lower weights ~ U(-1/sqrt(d), 1/sqrt(d)); all diagonals raw
  /// 1 - kPositiveFloor so the effective value is 1; bias strict-lower 0.
  static RgruParams init(const RgruConfig& cfg, std::uint64_t seed);
  void visit(const ParamVisitor& f);
  void visit(const ConstParamVisitor& f) const;
};

struct EffectiveRgruParams {
  std::array<TangentLower, 2> w_z, w_r, w_l;
  CholeskyPoint b_z, b_r, b_l;
};

/// Diagonals of the biases (and of the weights when positive_weight_diag)
/// become |raw| + kPositiveFloor; strict-lower entries pass through.
EffectiveRgruParams reparameterize(const RgruParams& raw, const RgruConfig& cfg);

/// d|raw|/draw with subgradient 0 at 0.
double abs_subgradient(double raw);

struct RgruState {
  CholeskyPoint h;
  std::size_t step_index = 0;
};

/// H_0 = I_d.
RgruState init_state(std::size_t dim);

/// Forward intermediates of one step, per packed coordinate.
struct RgruCache {
  bool valid = false;
  CholeskyPoint x, h_prev;
  EffectiveRgruParams eff;
  std::vector<double> m_z, m_r, m_l;  // weighted means
  std::vector<double> z, r, rh, l, cand;
};

/// (1 - z) (.) h_prev + z (.) candidate, entrywise on all stored coordinates.
CholeskyPoint gate_blend(const CholeskyPoint& h_prev, const CholeskyPoint& candidate, const PackedLower& z);

RgruState step(const RgruState& state, const CholeskyPoint& x, const RgruParams& params,
               const RgruConfig& cfg, RgruCache* cache = nullptr);

struct RgruStepGrads {
  TangentLower x;
  TangentLower h_prev;
};

/// Reverse-mode of step: returns input and previous-state gradients and
/// accumulates raw parameter gradients into param_grads.
RgruStepGrads step_backward(const TangentLower& grad_h, const RgruCache& cache, const RgruParams& params,
                            const RgruConfig& cfg, RgruParams& param_grads);

}  // namespace odergru
