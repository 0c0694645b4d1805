#pragma once

#include <Eigen/Dense>

namespace rarx::kernels {

/// Dimension at which the covariance update switches to the OpenMP kernel.
inline constexpr Eigen::Index kParallelMinDim = 96;

/// Serial reference:  P <- sym((P - g h' / denom) / lambda)
/// with g = P phi, h = P' phi and sym(X) = (X + X') / 2.
void covariance_update_serial(Eigen::MatrixXd& P, const Eigen::VectorXd& g, const Eigen::VectorXd& h,
                              double denom, double lambda);

/// Same update with rows distributed over OpenMP threads. Each thread owns
/// the upper-triangle entries of its rows plus their mirrors, so the update
/// is in place and race free. Results agree with the serial reference to
/// rounding (the symmetrization is folded into the rank-1 step).
void covariance_update_omp(Eigen::MatrixXd& P, const Eigen::VectorXd& g, const Eigen::VectorXd& h,
                           double denom, double lambda);

/// Picks the serial kernel below kParallelMinDim, the OpenMP one above.
void covariance_update(Eigen::MatrixXd& P, const Eigen::VectorXd& g, const Eigen::VectorXd& h, double denom,
                       double lambda);

}  // namespace rarx::kernels
