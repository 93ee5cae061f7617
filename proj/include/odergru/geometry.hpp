#pragma once

// Closed-form Riemannian operations on the Cholesky space: lower-triangular
// matrices with strictly positive diagonal under the log-Cholesky metric.
//
// Every matrix here is stored packed: row-major lower triangle, entry (i, j)
// with j <= i at offset i(i+1)/2 + j. All operations touch each stored entry
// a constant number of times and never factorize anything.

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace odergru {

/// Lower bound applied to diagonals produced by activations (softplus,
/// sigmoid) and by the absolute-value reparameterization.
inline constexpr double kPositiveFloor = 1e-12;

constexpr std::size_t packed_size(std::size_t dim) { return dim * (dim + 1) / 2; }
constexpr std::size_t packed_index(std::size_t i, std::size_t j) { return i * (i + 1) / 2 + j; }
constexpr std::size_t diag_index(std::size_t i) { return i * (i + 3) / 2; }

/// Recovers the matrix dimension from a packed length; throws if the length
/// is not triangular.
std::size_t dim_from_packed_size(std::size_t n);

/// Marks which packed slots hold diagonal entries.
std::vector<bool> diagonal_mask(std::size_t dim);

/// Shared storage for packed lower-triangular matrices.
class PackedLower {
 public:
  PackedLower() = default;
  explicit PackedLower(std::size_t dim) : dim_(dim), entries_(packed_size(dim), 0.0) {}
  PackedLower(std::size_t dim, std::vector<double> entries);

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return entries_.size(); }
  std::span<const double> entries() const noexcept { return entries_; }
  double operator[](std::size_t p) const { return entries_[p]; }

  /// Entry (i, j) of the dense matrix; zero above the diagonal.
  double at(std::size_t i, std::size_t j) const {
    return j > i ? 0.0 : entries_[packed_index(i, j)];
  }
  double diag(std::size_t i) const { return entries_[diag_index(i)]; }

  Eigen::MatrixXd dense() const;
  bool all_finite() const noexcept;

  friend bool operator==(const PackedLower& a, const PackedLower& b) = default;

 protected:
  std::size_t dim_ = 0;
  std::vector<double> entries_;
};

/// Element of the tangent space: any lower-triangular matrix.
class TangentLower : public PackedLower {
 public:
  using PackedLower::PackedLower;
  static TangentLower from_dense(const Eigen::MatrixXd& m);

  std::span<double> entries() noexcept { return entries_; }
  using PackedLower::entries;
  double& operator[](std::size_t p) { return entries_[p]; }
  using PackedLower::operator[];
};

/// Point of the Cholesky space: lower-triangular, finite, positive diagonal.
/// Construction validates; the invariant holds for the object's lifetime.
class CholeskyPoint : public PackedLower {
 public:
  CholeskyPoint() = default;
  CholeskyPoint(std::size_t dim, std::vector<double> entries);
  static CholeskyPoint identity(std::size_t dim);
  static CholeskyPoint from_dense(const Eigen::MatrixXd& m);
  static CholeskyPoint diagonal(std::span<const double> values);

  double min_diag() const;
  TangentLower as_tangent() const { return TangentLower(dim_, entries_); }
};

// --- structural parts -------------------------------------------------------

TangentLower strict_lower(const PackedLower& x);
std::vector<double> diag_part(const PackedLower& x);

// --- metric and distance ----------------------------------------------------

double metric(const CholeskyPoint& base, const TangentLower& u, const TangentLower& v);
double distance(const CholeskyPoint& l, const CholeskyPoint& k);

// --- exponential / logarithmic maps ----------------------------------------

CholeskyPoint exp_map(const CholeskyPoint& x, const TangentLower& k);
TangentLower log_map(const CholeskyPoint& k, const CholeskyPoint& x);

// --- means ------------------------------------------------------------------

/// Log-Cholesky mean: arithmetic mean of strict-lower parts, geometric mean
/// of diagonals. Single pass.
CholeskyPoint frechet_mean(std::span<const CholeskyPoint> points);

/// Entrywise-weighted log-Cholesky mean. weights[i] multiplies point i
/// coordinate by coordinate (strict-lower values and log-diagonals), and the
/// sum is normalized by the number of points.
CholeskyPoint weighted_frechet_mean(std::span<const CholeskyPoint> points,
                                    std::span<const TangentLower> weights);

// --- group structure --------------------------------------------------------

/// x (+) y: strict-lower parts add, diagonals multiply.
CholeskyPoint translate(const CholeskyPoint& x, const CholeskyPoint& y);
CholeskyPoint group_inverse(const CholeskyPoint& x);

// --- entrywise nonlinearities -----------------------------------------------

/// tanh on the strict-lower part, softplus (floored at kPositiveFloor) on
/// the diagonal.
CholeskyPoint split_activation(const PackedLower& x);

/// Logistic sigmoid on every stored entry; diagonal floored at kPositiveFloor.
CholeskyPoint sigmoid_gate(const PackedLower& x);

/// 1 - x on every stored entry (no positivity guarantee).
TangentLower one_minus(const PackedLower& x);

/// Entrywise product of two Cholesky points.
CholeskyPoint hadamard(const CholeskyPoint& a, const CholeskyPoint& b);

// --- scalar helpers shared with the backward passes -------------------------

double sigmoid(double x);
double softplus(double x);

}  // namespace odergru
