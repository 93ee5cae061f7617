#include "odergru/spd_oracle.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ostream>
#include <random>
#include <string>

#include <Eigen/Dense>

#include "odergru/cholesky.hpp"
#include "odergru/errors.hpp"

namespace odergru {
namespace {

void require_square(const Eigen::MatrixXd& m, const char* what) {
  if (m.rows() != m.cols()) throw DimensionMismatch(std::string(what) + ": matrix is not square");
  if (!m.allFinite()) throw NonFiniteError(std::string(what) + ": non-finite entry");
}

double max_asymmetry(const Eigen::MatrixXd& m) {
  return (m - m.transpose()).cwiseAbs().maxCoeff();
}

struct EigenSym {
  Eigen::VectorXd values;
  Eigen::MatrixXd vectors;
};

EigenSym eig_sym(const Eigen::MatrixXd& a) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (a + a.transpose()));
  if (es.info() != Eigen::Success) throw std::runtime_error("symmetric eigendecomposition failed");
  return {es.eigenvalues(), es.eigenvectors()};
}

Eigen::MatrixXd apply_fn(const EigenSym& e, const std::function<double(double)>& f) {
  Eigen::VectorXd fv = e.values.unaryExpr(f);
  Eigen::MatrixXd r = e.vectors * fv.asDiagonal() * e.vectors.transpose();
  return 0.5 * (r + r.transpose());
}

double safe_sqrt(double x) {
  if (!(x > 0.0)) throw std::runtime_error("matrix square root of a non-positive eigenvalue");
  return std::sqrt(x);
}
double safe_log(double x) {
  if (!(x > 0.0)) throw std::runtime_error("matrix logarithm of a non-positive eigenvalue");
  return std::log(x);
}

// Square root and inverse square root of an SPD matrix from one eigensolve.
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> sqrt_and_inv_sqrt(const Eigen::MatrixXd& p) {
  const auto e = eig_sym(p);
  return {apply_fn(e, safe_sqrt), apply_fn(e, [](double x) { return 1.0 / safe_sqrt(x); })};
}

}  // namespace

SpdPoint::SpdPoint(Eigen::MatrixXd m) : m_(std::move(m)) {
  require_square(m_, "SpdPoint");
  const double scale = std::max(1.0, m_.cwiseAbs().maxCoeff());
  if (max_asymmetry(m_) > 1e-12 * scale) throw std::invalid_argument("SpdPoint: matrix is not symmetric");
  m_ = Eigen::MatrixXd(0.5 * (m_ + m_.transpose()));
  cholesky_factor(m_);
}

SpdPoint SpdPoint::identity(std::size_t dim) {
  return SpdPoint(Eigen::MatrixXd::Identity(dim, dim));
}

SymmetricTangent::SymmetricTangent(Eigen::MatrixXd m) : m_(std::move(m)) {
  require_square(m_, "SymmetricTangent");
  const double scale = std::max(1.0, m_.cwiseAbs().maxCoeff());
  if (max_asymmetry(m_) > 1e-12 * scale) {
    throw std::invalid_argument("SymmetricTangent: matrix is not symmetric");
  }
  m_ = Eigen::MatrixXd(0.5 * (m_ + m_.transpose()));
}

Eigen::MatrixXd symmetric_function(const Eigen::MatrixXd& a, const std::function<double(double)>& f) {
  return apply_fn(eig_sym(a), f);
}

CholeskyPoint cholesky_decompose(const SpdPoint& s) {
  return CholeskyPoint::from_dense(cholesky_factor(s.matrix()));
}

SpdPoint cholesky_compose(const CholeskyPoint& l) {
  const Eigen::MatrixXd m = l.dense();
  return SpdPoint(m * m.transpose());
}

SpdPoint spd_exp(const SpdPoint& p, const SymmetricTangent& q) {
  if (p.dim() != q.dim()) throw DimensionMismatch("spd_exp: dimension mismatch");
  const auto [half, inv_half] = sqrt_and_inv_sqrt(p.matrix());
  const Eigen::MatrixXd inner = inv_half * q.matrix() * inv_half;
  const Eigen::MatrixXd r = half * symmetric_function(inner, [](double x) { return std::exp(x); }) * half;
  return SpdPoint(0.5 * (r + r.transpose()));
}

SymmetricTangent spd_log(const SpdPoint& q, const SpdPoint& p) {
  if (p.dim() != q.dim()) throw DimensionMismatch("spd_log: dimension mismatch");
  const auto [half, inv_half] = sqrt_and_inv_sqrt(q.matrix());
  const Eigen::MatrixXd inner = inv_half * p.matrix() * inv_half;
  const Eigen::MatrixXd r = half * symmetric_function(inner, safe_log) * half;
  return SymmetricTangent(0.5 * (r + r.transpose()));
}

double affine_invariant_distance(const SpdPoint& p1, const SpdPoint& p2) {
  if (p1.dim() != p2.dim()) throw DimensionMismatch("affine_invariant_distance: dimension mismatch");
  const auto [half, inv_half] = sqrt_and_inv_sqrt(p1.matrix());
  (void)half;
  const Eigen::MatrixXd inner = inv_half * p2.matrix() * inv_half;
  const auto e = eig_sym(inner);
  double s = 0.0;
  for (Eigen::Index i = 0; i < e.values.size(); ++i) {
    const double l = safe_log(e.values(i));
    s += l * l;
  }
  return 0.5 * std::sqrt(s);
}

KarcherResult<CholeskyPoint> karcher_flow_mean(
    std::span<const CholeskyPoint> points,
    const std::function<CholeskyPoint(const CholeskyPoint&, const TangentLower&)>& exp_fn,
    const std::function<TangentLower(const CholeskyPoint&, const CholeskyPoint&)>& log_fn,
    const KarcherOptions& opts) {
  if (points.empty()) throw std::invalid_argument("karcher_flow_mean: empty point list");
  CholeskyPoint mu = points.front();
  const double inv_n = 1.0 / static_cast<double>(points.size());
  double residual = INFINITY;
  for (int it = 1; it <= opts.max_iter; ++it) {
    TangentLower v(mu.dim());
    for (const auto& x : points) {
      if (x.dim() != mu.dim()) throw DimensionMismatch("karcher_flow_mean: dimension mismatch");
      const auto lx = log_fn(mu, x);
      for (std::size_t p = 0; p < v.size(); ++p) v[p] += inv_n * lx[p];
    }
    residual = std::sqrt(metric(mu, v, v));
    if (residual < opts.tol) return {mu, it, residual};
    for (std::size_t p = 0; p < v.size(); ++p) v[p] *= opts.step;
    mu = exp_fn(mu, v);
  }
  throw ConvergenceError("karcher_flow_mean: no convergence after " + std::to_string(opts.max_iter) +
                             " iterations, residual " + std::to_string(residual),
                         residual);
}

KarcherResult<CholeskyPoint> karcher_flow_mean(std::span<const CholeskyPoint> points,
                                               const KarcherOptions& opts) {
  return karcher_flow_mean(
      points, [](const CholeskyPoint& x, const TangentLower& k) { return exp_map(x, k); },
      [](const CholeskyPoint& k, const CholeskyPoint& x) { return log_map(k, x); }, opts);
}

KarcherResult<SpdPoint> karcher_flow_mean(std::span<const SpdPoint> points, const KarcherOptions& opts) {
  if (points.empty()) throw std::invalid_argument("karcher_flow_mean: empty point list");
  const auto d = static_cast<Eigen::Index>(points.front().dim());
  Eigen::MatrixXd mu = Eigen::MatrixXd::Zero(d, d);
  for (const auto& p : points) {
    if (p.matrix().rows() != d) throw DimensionMismatch("karcher_flow_mean: dimension mismatch");
    mu += p.matrix();
  }
  const double inv_n = 1.0 / static_cast<double>(points.size());
  mu *= inv_n;
  double residual = INFINITY;
  for (int it = 1; it <= opts.max_iter; ++it) {
    const auto [half, inv_half] = sqrt_and_inv_sqrt(mu);
    // Tangent mean in whitened coordinates: mean_i log(mu^-1/2 P_i mu^-1/2).
    Eigen::MatrixXd t = Eigen::MatrixXd::Zero(d, d);
    for (const auto& p : points) t += symmetric_function(inv_half * p.matrix() * inv_half, safe_log);
    t *= inv_n;
    residual = t.norm();
    if (residual < opts.tol) return {SpdPoint(mu), it, residual};
    const Eigen::MatrixXd step = symmetric_function(opts.step * t, [](double x) { return std::exp(x); });
    mu = half * step * half;
    mu = Eigen::MatrixXd(0.5 * (mu + mu.transpose()));
  }
  throw ConvergenceError("karcher_flow_mean: no convergence after " + std::to_string(opts.max_iter) +
                             " iterations, residual " + std::to_string(residual),
                         residual);
}

namespace {

std::vector<CholeskyPoint> bench_cloud(std::size_t d, std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<CholeskyPoint> pts;
  pts.reserve(n);
  const double off_scale = 0.3 / std::sqrt(static_cast<double>(d));
  for (std::size_t k = 0; k < n; ++k) {
    std::vector<double> e(packed_size(d));
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < i; ++j) e[packed_index(i, j)] = off_scale * g(rng);
      e[diag_index(i)] = std::exp(0.2 * g(rng));
    }
    pts.emplace_back(d, std::move(e));
  }
  return pts;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 == 1 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace

std::vector<BenchRow> complexity_benchmark(std::span<const std::size_t> d_list, std::size_t n_points,
                                           std::size_t repeats, std::uint64_t seed) {
  using clock = std::chrono::steady_clock;
  if (!std::is_sorted(d_list.begin(), d_list.end())) {
    throw std::invalid_argument("complexity_benchmark: d_list must be sorted ascending");
  }
  if (n_points == 0 || repeats == 0) throw std::invalid_argument("complexity_benchmark: empty workload");
  std::mt19937_64 rng(seed);
  std::vector<BenchRow> rows;
  for (std::size_t d : d_list) {
    const auto pts = bench_cloud(d, n_points, rng);
    std::vector<TangentLower> weights;
    std::uniform_real_distribution<double> u(0.5, 1.5);
    for (std::size_t k = 0; k < n_points; ++k) {
      TangentLower w(d);
      for (std::size_t p = 0; p < w.size(); ++p) w[p] = u(rng);
      weights.push_back(std::move(w));
    }
    std::vector<SpdPoint> spd;
    for (const auto& p : pts) spd.push_back(cholesky_compose(p));

    // Calibrate an inner loop so one closed-form batch lasts >= 2 ms.
    std::size_t inner = 1;
    double sink = 0.0;
    for (;;) {
      const auto t0 = clock::now();
      for (std::size_t r = 0; r < inner; ++r) sink += weighted_frechet_mean(pts, weights)[0];
      const auto ns = std::chrono::duration<double, std::nano>(clock::now() - t0).count();
      if (ns >= 2e6 || inner >= (1u << 24)) break;
      inner *= 2;
    }
    std::vector<double> closed, karcher;
    for (std::size_t r = 0; r < repeats; ++r) {
      auto t0 = clock::now();
      for (std::size_t k = 0; k < inner; ++k) sink += weighted_frechet_mean(pts, weights)[0];
      closed.push_back(std::chrono::duration<double, std::nano>(clock::now() - t0).count() /
                       static_cast<double>(inner));
      t0 = clock::now();
      const auto res = karcher_flow_mean(std::span<const SpdPoint>(spd));
      karcher.push_back(std::chrono::duration<double, std::nano>(clock::now() - t0).count());
      sink += res.mean.matrix()(0, 0);
    }
    if (!std::isfinite(sink)) throw NonFiniteError("complexity_benchmark: non-finite result");
    rows.push_back({d, n_points, median(closed), median(karcher)});
  }
  return rows;
}

void write_bench_csv(std::ostream& os, std::span<const BenchRow> rows) {
  os << "d,n,t_closed_ns,t_karcher_ns\n";
  for (const auto& r : rows) {
    os << r.d << ',' << r.n << ',' << static_cast<long long>(std::llround(r.t_closed_ns)) << ','
       << static_cast<long long>(std::llround(r.t_karcher_ns)) << '\n';
  }
}

double loglog_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("loglog_slope: need >= 2 pairs");
  double mx = 0, my = 0;
  const double n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

}  // namespace odergru
