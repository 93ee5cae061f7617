#include "odergru/cholesky.hpp"

#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "odergru/errors.hpp"

namespace odergru {

Eigen::MatrixXd cholesky_factor(const Eigen::MatrixXd& s) {
  if (s.rows() != s.cols()) throw DimensionMismatch("cholesky_factor: matrix is not square");
  const Eigen::Index n = s.rows();
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    double pivot = s(j, j);
    for (Eigen::Index k = 0; k < j; ++k) pivot -= l(j, k) * l(j, k);
    if (!(pivot > 0.0) || !std::isfinite(pivot)) {
      throw FactorizationError("cholesky_factor: non-positive pivot at index " + std::to_string(j),
                               static_cast<std::size_t>(j));
    }
    const double ljj = std::sqrt(pivot);
    l(j, j) = ljj;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      double v = s(i, j);
      for (Eigen::Index k = 0; k < j; ++k) v -= l(i, k) * l(j, k);
      l(i, j) = v / ljj;
    }
  }
  return l;
}

Eigen::MatrixXd cholesky_factor_backward(const Eigen::MatrixXd& l, const Eigen::MatrixXd& grad_l) {
  // dL = L Phi(L^-1 dS L^-T), Phi = lower triangle with halved diagonal.
  // Adjoint: S_bar = sym(L^-T Phi(L^T L_bar) L^-1).
  Eigen::MatrixXd p = l.transpose() * grad_l.triangularView<Eigen::Lower>().toDenseMatrix();
  p.triangularView<Eigen::StrictlyUpper>().setZero();
  p.diagonal() *= 0.5;
  const auto lt = l.triangularView<Eigen::Lower>();
  // g = L^-T p L^-1
  Eigen::MatrixXd g = lt.transpose().solve(p);
  const Eigen::MatrixXd gt = g.transpose();
  g = Eigen::MatrixXd(lt.transpose().solve(gt)).transpose();
  return 0.5 * (g + g.transpose());
}

}  // namespace odergru
