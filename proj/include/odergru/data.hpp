#pragma once

// Datasets of timed multichannel sequences: long-format CSV I/O, random
// cell dropping, a synthetic generator driven by latent SPD geodesics, and
// the evaluation metrics.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "odergru/encoder.hpp"

namespace odergru {

enum class Split : std::uint8_t { train, test };

struct Dataset {
  std::string name;
  std::size_t channels = 0;
  std::size_t classes = 0;  // 0: unlabeled
  std::vector<std::string> ids;
  std::vector<TimedSequence> sequences;
  std::vector<int> labels;  // -1 when absent
  std::vector<Split> split;

  std::size_t size() const noexcept { return sequences.size(); }
  std::vector<std::size_t> indices(Split s) const;
  /// Throws DataError when the parallel arrays disagree, a label is out of
  /// range, or a sequence is malformed.
  void validate() const;

  friend bool operator==(const Dataset&, const Dataset&);
};

struct CsvSchema {
  std::string seq_id = "seq_id";
  std::string time = "t";
  std::string label = "label";  // optional in the file
  std::string split = "split";  // optional in the file; values train|test
  std::string channel_prefix = "ch_";
};

/// One row per observation; columns seq_id,t,ch_0..ch_{k-1}[,label][,split].
/// Empty channel cells are missing. Rows are grouped by sequence id (in
/// first-appearance order) and sorted by time. Throws DataError with the
/// line number for malformed rows, and naming the sequence and timestamp
/// for duplicates.
Dataset load_csv(const std::filesystem::path& path, const CsvSchema& schema = {});
Dataset parse_csv(const std::string& text, const CsvSchema& schema = {}, const std::string& source = "<memory>");

void save_csv(const Dataset& ds, const std::filesystem::path& path);
std::string format_csv(const Dataset& ds);

struct DropReport {
  std::size_t cells_before = 0;
  std::size_t cells_dropped = 0;
  std::size_t timesteps_removed = 0;
  std::size_t sequences_removed = 0;  // fewer than 2 surviving timesteps
};

/// Removes round(fraction * observed) observed cells of every sequence,
/// uniformly at random, then drops timesteps left with no observed channel.
/// Each sequence draws from its own stream seeded by (seed, index).
Dataset drop_observations(const Dataset& ds, double fraction, std::uint64_t seed, DropReport* report = nullptr);

struct SynthSpec {
  std::size_t n_per_class = 100;
  std::size_t length = 20;
  std::size_t channels = 4;
  std::size_t classes = 2;
  std::uint64_t seed = 0;
  double sigma_obs = 0.1;
  double test_fraction = 0.25;
  bool shared_endpoints = false;  // classes differ only in traversal speed
};

struct SynthClass {
  CholeskyPoint start, end;
  double speed = 1.0;
};

/// Class parameters used by the generator (a pure function of the spec).
std::vector<SynthClass> synth_classes(const SynthSpec& spec);

/// Covariance factor of class c at time t: exp_map(L_a, s log_map(L_a, L_b))
/// with s = speed * t / length.
CholeskyPoint synth_factor(const SynthClass& c, double t, std::size_t length);

/// Sequence k of class c: x(t) = L(t) z + sigma_obs e, t = 0..length-1.
/// Every `round(1/test_fraction)`-th sequence of a class goes to the test
/// split.
Dataset synth_manifold_sequences(const SynthSpec& spec);

// --- metrics ----------------------------------------------------------------

struct ClassificationMetrics {
  std::size_t n = 0;
  double accuracy = 0.0;
  double kappa = 0.0;
  double macro_f1 = 0.0;
};

struct RegressionMetrics {
  std::size_t n = 0;
  double mse = 0.0;
  double mape = 0.0;  // over entries with nonzero target, in percent
  double r2 = 0.0;
};

ClassificationMetrics classification_metrics(std::span<const int> predicted, std::span<const int> truth,
                                             std::size_t classes);

/// mask (optional) selects the entries that count.
RegressionMetrics regression_metrics(std::span<const double> predicted, std::span<const double> truth,
                                     std::span<const std::uint8_t> mask = {});

}  // namespace odergru
