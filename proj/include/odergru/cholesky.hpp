#pragma once

#include <Eigen/Core>

namespace odergru {

/// Lower Cholesky factor of a symmetric positive-definite matrix. Reads the
/// lower triangle only. Throws FactorizationError naming the failing pivot.
Eigen::MatrixXd cholesky_factor(const Eigen::MatrixXd& s);

/// Reverse-mode of cholesky_factor: given the factor L and the gradient of a
/// scalar loss with respect to L (lower triangle used), returns the symmetric
/// gradient with respect to S = L L^T.
Eigen::MatrixXd cholesky_factor_backward(const Eigen::MatrixXd& l, const Eigen::MatrixXd& grad_l);

}  // namespace odergru
