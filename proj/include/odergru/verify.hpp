#pragma once

// The acceptance battery: geometric invariants, oracle cross-checks,
// gradient checks, solver order, complexity scaling, desk-scale learning,
// irregular-sampling robustness, the zero-field ablation, and determinism.
// Shared by `odergru verify` and the acceptance test binary.

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "odergru/data.hpp"
#include "odergru/geometry.hpp"
#include "odergru/model.hpp"

namespace odergru {

enum class Mutation {
  none,
  log_sign,  // log map adds the base's strict-lower part instead of subtracting it
};

struct VerifyOptions {
  bool quick = false;  // skip the training criteria (9-11)
  Mutation mutation = Mutation::none;
  std::size_t threads = 1;
};

struct CheckResult {
  int criterion = 0;
  std::string name;
  bool passed = false;
  std::string detail;  // measured values against their thresholds
  double seconds = 0.0;
};

// --- random inputs shared with the unit tests --------------------------------

/// Diagonal exp(spread * U(-1, 1)), strict-lower spread * N(0, 1).
CholeskyPoint random_cholesky_point(std::size_t dim, std::mt19937_64& rng, double spread = 1.0);
TangentLower random_tangent(std::size_t dim, std::mt19937_64& rng, double scale = 1.0);

// --- the desk-scale learning setup -------------------------------------------

SynthSpec desk_synth_spec();
ModelConfig desk_model_config();
TrainConfig desk_train_config(std::uint64_t seed);

// --- individual checks ---------------------------------------------------------

CheckResult check_round_trips(Mutation m = Mutation::none);
CheckResult check_metric_axioms();
CheckResult check_mean_oracle();
CheckResult check_group_structure();
CheckResult check_state_closure();
CheckResult check_gradients();
CheckResult check_solver_order();
CheckResult check_complexity();

struct LearningRuns {
  std::vector<double> clean_train, clean_test;  // per seed
  std::vector<std::vector<double>> drop_test;   // [fraction][seed]
  std::vector<double> ablation_test;            // 50% drop, field disabled
  std::vector<double> drop_fractions{0.3, 0.5, 0.7};
  double seconds_clean = 0.0;
};

/// Trains every model the learning criteria need (3 seeds each).
LearningRuns run_learning(std::size_t threads = 1);
CheckResult check_learning(const LearningRuns& runs);
CheckResult check_drop_robustness(const LearningRuns& runs);
CheckResult check_ablation(const LearningRuns& runs);
CheckResult check_determinism();

/// Runs the battery in criterion order, reporting each result as it lands.
std::vector<CheckResult> run_battery(const VerifyOptions& opts,
                                     const std::function<void(const CheckResult&)>& report = {});

double median(std::vector<double> v);

}  // namespace odergru
