#include "odergru/geometry.hpp"

#include <cmath>
#include <string>

#include "odergru/errors.hpp"

namespace odergru {
namespace {

void require_same_dim(const PackedLower& a, const PackedLower& b, const char* op) {
  if (a.dim() != b.dim()) {
    throw DimensionMismatch(std::string(op) + ": dimension " + std::to_string(a.dim()) +
                            " vs " + std::to_string(b.dim()));
  }
}

void require_finite(const PackedLower& a, const char* op) {
  if (!a.all_finite()) throw NonFiniteError(std::string(op) + ": non-finite input entry");
}

// Calls strict(p) for strict-lower slots and diag(p) for diagonal slots, in
// storage order.
template <class Strict, class Diag>
void for_each_slot(std::size_t dim, Strict&& strict, Diag&& diag) {
  std::size_t p = 0;
  for (std::size_t i = 0; i < dim; ++i) {
    for (std::size_t j = 0; j < i; ++j) strict(p++);
    diag(p++);
  }
}

}  // namespace

std::size_t dim_from_packed_size(std::size_t n) {
  std::size_t d = 0;
  while (packed_size(d) < n) ++d;
  if (packed_size(d) != n) {
    throw DimensionMismatch("packed length " + std::to_string(n) + " is not triangular");
  }
  return d;
}

std::vector<bool> diagonal_mask(std::size_t dim) {
  std::vector<bool> mask(packed_size(dim), false);
  for (std::size_t i = 0; i < dim; ++i) mask[diag_index(i)] = true;
  return mask;
}

PackedLower::PackedLower(std::size_t dim, std::vector<double> entries)
    : dim_(dim), entries_(std::move(entries)) {
  if (entries_.size() != packed_size(dim)) {
    throw DimensionMismatch("packed storage for dim " + std::to_string(dim) + " needs " +
                            std::to_string(packed_size(dim)) + " entries, got " +
                            std::to_string(entries_.size()));
  }
}

Eigen::MatrixXd PackedLower::dense() const {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(dim_, dim_);
  for (std::size_t i = 0; i < dim_; ++i)
    for (std::size_t j = 0; j <= i; ++j) m(i, j) = entries_[packed_index(i, j)];
  return m;
}

bool PackedLower::all_finite() const noexcept {
  for (double v : entries_)
    if (!std::isfinite(v)) return false;
  return true;
}

TangentLower TangentLower::from_dense(const Eigen::MatrixXd& m) {
  if (m.rows() != m.cols()) throw DimensionMismatch("from_dense: matrix is not square");
  const auto d = static_cast<std::size_t>(m.rows());
  std::vector<double> e(packed_size(d));
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j <= i; ++j) e[packed_index(i, j)] = m(i, j);
  return TangentLower(d, std::move(e));
}

CholeskyPoint::CholeskyPoint(std::size_t dim, std::vector<double> entries)
    : PackedLower(dim, std::move(entries)) {
  if (!all_finite()) throw NonFiniteError("CholeskyPoint: non-finite entry");
  for (std::size_t i = 0; i < dim_; ++i) {
    if (!(entries_[diag_index(i)] > 0.0)) {
      throw std::invalid_argument("CholeskyPoint: diagonal entry " + std::to_string(i) +
                                  " is not positive");
    }
  }
}

CholeskyPoint CholeskyPoint::identity(std::size_t dim) {
  std::vector<double> e(packed_size(dim), 0.0);
  for (std::size_t i = 0; i < dim; ++i) e[diag_index(i)] = 1.0;
  return CholeskyPoint(dim, std::move(e));
}

CholeskyPoint CholeskyPoint::from_dense(const Eigen::MatrixXd& m) {
  auto t = TangentLower::from_dense(m);
  return CholeskyPoint(t.dim(), std::vector<double>(t.entries().begin(), t.entries().end()));
}

CholeskyPoint CholeskyPoint::diagonal(std::span<const double> values) {
  std::vector<double> e(packed_size(values.size()), 0.0);
  for (std::size_t i = 0; i < values.size(); ++i) e[diag_index(i)] = values[i];
  return CholeskyPoint(values.size(), std::move(e));
}

double CholeskyPoint::min_diag() const {
  double m = INFINITY;
  for (std::size_t i = 0; i < dim_; ++i) m = std::min(m, entries_[diag_index(i)]);
  return m;
}

TangentLower strict_lower(const PackedLower& x) {
  TangentLower out(x.dim());
  for_each_slot(
      x.dim(), [&](std::size_t p) { out[p] = x[p]; }, [](std::size_t) {});
  return out;
}

std::vector<double> diag_part(const PackedLower& x) {
  std::vector<double> out(x.dim());
  for (std::size_t i = 0; i < x.dim(); ++i) out[i] = x.diag(i);
  return out;
}

double metric(const CholeskyPoint& base, const TangentLower& u, const TangentLower& v) {
  require_same_dim(base, u, "metric");
  require_same_dim(base, v, "metric");
  require_finite(u, "metric");
  require_finite(v, "metric");
  double s = 0.0;
  for_each_slot(
      base.dim(), [&](std::size_t p) { s += u[p] * v[p]; },
      [&](std::size_t p) { s += u[p] * v[p] / (base[p] * base[p]); });
  return s;
}

double distance(const CholeskyPoint& l, const CholeskyPoint& k) {
  require_same_dim(l, k, "distance");
  double s = 0.0;
  for_each_slot(
      l.dim(),
      [&](std::size_t p) {
        const double d = l[p] - k[p];
        s += d * d;
      },
      [&](std::size_t p) {
        const double d = std::log(l[p]) - std::log(k[p]);
        s += d * d;
      });
  return std::sqrt(s);
}

CholeskyPoint exp_map(const CholeskyPoint& x, const TangentLower& k) {
  require_same_dim(x, k, "exp_map");
  require_finite(k, "exp_map");
  std::vector<double> out(x.size());
  for_each_slot(
      x.dim(), [&](std::size_t p) { out[p] = x[p] + k[p]; },
      [&](std::size_t p) { out[p] = x[p] * std::exp(k[p] / x[p]); });
  for (std::size_t i = 0; i < x.dim(); ++i) {
    const double v = out[diag_index(i)];
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw NonFiniteError("exp_map: diagonal " + std::to_string(i) + " left the representable range");
    }
  }
  return CholeskyPoint(x.dim(), std::move(out));
}

TangentLower log_map(const CholeskyPoint& k, const CholeskyPoint& x) {
  require_same_dim(k, x, "log_map");
  TangentLower out(k.dim());
  for_each_slot(
      k.dim(), [&](std::size_t p) { out[p] = x[p] - k[p]; },
      [&](std::size_t p) { out[p] = k[p] * std::log(x[p] / k[p]); });
  return out;
}

CholeskyPoint frechet_mean(std::span<const CholeskyPoint> points) {
  if (points.empty()) throw std::invalid_argument("frechet_mean: empty point list");
  const std::size_t d = points.front().dim();
  std::vector<double> acc(packed_size(d), 0.0);
  const auto mask = diagonal_mask(d);
  for (const auto& x : points) {
    require_same_dim(points.front(), x, "frechet_mean");
    const auto e = x.entries();
    for (std::size_t p = 0; p < acc.size(); ++p) acc[p] += mask[p] ? std::log(e[p]) : e[p];
  }
  const double inv_n = 1.0 / static_cast<double>(points.size());
  for (std::size_t p = 0; p < acc.size(); ++p) {
    acc[p] *= inv_n;
    if (mask[p]) acc[p] = std::exp(acc[p]);
  }
  return CholeskyPoint(d, std::move(acc));
}

CholeskyPoint weighted_frechet_mean(std::span<const CholeskyPoint> points,
                                    std::span<const TangentLower> weights) {
  if (points.empty()) throw std::invalid_argument("weighted_frechet_mean: empty point list");
  if (points.size() != weights.size()) {
    throw DimensionMismatch("weighted_frechet_mean: " + std::to_string(points.size()) +
                            " points but " + std::to_string(weights.size()) + " weights");
  }
  const std::size_t d = points.front().dim();
  std::vector<double> acc(packed_size(d), 0.0);
  const auto mask = diagonal_mask(d);
  for (std::size_t i = 0; i < points.size(); ++i) {
    require_same_dim(points.front(), points[i], "weighted_frechet_mean");
    require_same_dim(points.front(), weights[i], "weighted_frechet_mean");
    require_finite(weights[i], "weighted_frechet_mean");
    const auto x = points[i].entries();
    const auto w = weights[i].entries();
    for (std::size_t p = 0; p < acc.size(); ++p)
      acc[p] += w[p] * (mask[p] ? std::log(x[p]) : x[p]);
  }
  const double inv_n = 1.0 / static_cast<double>(points.size());
  for (std::size_t p = 0; p < acc.size(); ++p) {
    acc[p] *= inv_n;
    if (mask[p]) acc[p] = std::exp(acc[p]);
  }
  for (std::size_t i = 0; i < d; ++i) {
    const double v = acc[diag_index(i)];
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw NonFiniteError("weighted_frechet_mean: diagonal " + std::to_string(i) +
                           " left the representable range");
    }
  }
  return CholeskyPoint(d, std::move(acc));
}

CholeskyPoint translate(const CholeskyPoint& x, const CholeskyPoint& y) {
  require_same_dim(x, y, "translate");
  std::vector<double> out(x.size());
  for_each_slot(
      x.dim(), [&](std::size_t p) { out[p] = x[p] + y[p]; },
      [&](std::size_t p) { out[p] = x[p] * y[p]; });
  return CholeskyPoint(x.dim(), std::move(out));
}

CholeskyPoint group_inverse(const CholeskyPoint& x) {
  std::vector<double> out(x.size());
  for_each_slot(
      x.dim(), [&](std::size_t p) { out[p] = -x[p]; }, [&](std::size_t p) { out[p] = 1.0 / x[p]; });
  return CholeskyPoint(x.dim(), std::move(out));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

CholeskyPoint split_activation(const PackedLower& x) {
  require_finite(x, "split_activation");
  std::vector<double> out(x.size());
  for_each_slot(
      x.dim(), [&](std::size_t p) { out[p] = std::tanh(x[p]); },
      [&](std::size_t p) { out[p] = std::max(softplus(x[p]), kPositiveFloor); });
  return CholeskyPoint(x.dim(), std::move(out));
}

CholeskyPoint sigmoid_gate(const PackedLower& x) {
  require_finite(x, "sigmoid_gate");
  std::vector<double> out(x.size());
  for_each_slot(
      x.dim(), [&](std::size_t p) { out[p] = sigmoid(x[p]); },
      [&](std::size_t p) { out[p] = std::max(sigmoid(x[p]), kPositiveFloor); });
  return CholeskyPoint(x.dim(), std::move(out));
}

TangentLower one_minus(const PackedLower& x) {
  TangentLower out(x.dim());
  for (std::size_t p = 0; p < x.size(); ++p) out[p] = 1.0 - x[p];
  return out;
}

CholeskyPoint hadamard(const CholeskyPoint& a, const CholeskyPoint& b) {
  require_same_dim(a, b, "hadamard");
  std::vector<double> out(a.size());
  for (std::size_t p = 0; p < a.size(); ++p) out[p] = a[p] * b[p];
  return CholeskyPoint(a.dim(), std::move(out));
}

}  // namespace odergru
