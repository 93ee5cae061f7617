#pragma once

// Reference geometry on symmetric positive-definite matrices under the
// affine-invariant metric, the Cholesky diffeomorphism between SPD matrices
// and the Cholesky space, and iterative Karcher-flow means. Used by tests and
// benchmarks as an independent oracle; the training path never calls into the
// eigendecomposition-based routines here.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "odergru/geometry.hpp"

namespace odergru {

/// Symmetric positive-definite matrix. Construction checks symmetry (relative
/// 1e-12), symmetrizes exactly, and checks definiteness by factorizing.
class SpdPoint {
 public:
  SpdPoint() = default;
  explicit SpdPoint(Eigen::MatrixXd m);
  static SpdPoint identity(std::size_t dim);

  std::size_t dim() const noexcept { return static_cast<std::size_t>(m_.rows()); }
  const Eigen::MatrixXd& matrix() const noexcept { return m_; }

 private:
  Eigen::MatrixXd m_;
};

/// Symmetric matrix; a tangent vector of the SPD manifold.
class SymmetricTangent {
 public:
  SymmetricTangent() = default;
  explicit SymmetricTangent(Eigen::MatrixXd m);

  std::size_t dim() const noexcept { return static_cast<std::size_t>(m_.rows()); }
  const Eigen::MatrixXd& matrix() const noexcept { return m_; }

 private:
  Eigen::MatrixXd m_;
};

CholeskyPoint cholesky_decompose(const SpdPoint& s);
SpdPoint cholesky_compose(const CholeskyPoint& l);

/// P^{1/2} exp(P^{-1/2} Q P^{-1/2}) P^{1/2}
SpdPoint spd_exp(const SpdPoint& p, const SymmetricTangent& q);
/// Q^{1/2} log(Q^{-1/2} P Q^{-1/2}) Q^{1/2}
SymmetricTangent spd_log(const SpdPoint& q, const SpdPoint& p);
/// (1/2) || log(P1^{-1/2} P2 P1^{-1/2}) ||_F
double affine_invariant_distance(const SpdPoint& p1, const SpdPoint& p2);

/// Applies f to the eigenvalues of a symmetric matrix (symmetrized first).
Eigen::MatrixXd symmetric_function(const Eigen::MatrixXd& a, const std::function<double(double)>& f);

struct KarcherOptions {
  int max_iter = 100;
  double tol = 1e-10;
  double step = 1.0;
};

template <class Point>
struct KarcherResult {
  Point mean;
  int iterations = 0;
  double residual = 0.0;
};

/// Karcher flow on the Cholesky space with the log-Cholesky exp/log pair.
/// Starts from the first point.
KarcherResult<CholeskyPoint> karcher_flow_mean(std::span<const CholeskyPoint> points,
                                               const KarcherOptions& opts = {});

/// Karcher flow with caller-supplied exp/log maps on the Cholesky space;
/// residual is the metric norm of the tangent mean at the current iterate.
KarcherResult<CholeskyPoint> karcher_flow_mean(
    std::span<const CholeskyPoint> points,
    const std::function<CholeskyPoint(const CholeskyPoint&, const TangentLower&)>& exp_fn,
    const std::function<TangentLower(const CholeskyPoint&, const CholeskyPoint&)>& log_fn,
    const KarcherOptions& opts = {});

/// Karcher flow on SPD matrices under the affine-invariant metric. Starts
/// from the arithmetic mean; residual is the Riemannian norm of the tangent
/// mean.
KarcherResult<SpdPoint> karcher_flow_mean(std::span<const SpdPoint> points,
                                          const KarcherOptions& opts = {});

struct BenchRow {
  std::size_t d = 0;
  std::size_t n = 0;
  double t_closed_ns = 0.0;
  double t_karcher_ns = 0.0;
};

/// Median wall times of the closed-form weighted log-Cholesky mean and of
/// the affine-invariant Karcher flow over the same random point clouds.
std::vector<BenchRow> complexity_benchmark(std::span<const std::size_t> d_list, std::size_t n_points,
                                           std::size_t repeats, std::uint64_t seed = 7);

/// Writes `d,n,t_closed_ns,t_karcher_ns` rows with a header.
void write_bench_csv(std::ostream& os, std::span<const BenchRow> rows);

/// Least-squares slope of log(y) against log(x).
double loglog_slope(std::span<const double> x, std::span<const double> y);

}  // namespace odergru
