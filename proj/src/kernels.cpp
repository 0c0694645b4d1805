#include "rarx/kernels.hpp"

namespace rarx::kernels {

void covariance_update_serial(Eigen::MatrixXd& P, const Eigen::VectorXd& g, const Eigen::VectorXd& h,
                              double denom, double lambda) {
  P = (P - g * h.transpose() / denom) / lambda;
  P = 0.5 * (P + P.transpose()).eval();
}

void covariance_update_omp(Eigen::MatrixXd& P, const Eigen::VectorXd& g, const Eigen::VectorXd& h,
                           double denom, double lambda) {
  const Eigen::Index n = P.rows();
  const double inv_lambda = 1.0 / lambda;
  const double inv_denom = 1.0 / denom;
#pragma omp parallel for schedule(dynamic, 8)
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i; j < n; ++j) {
      const double upper = (P(i, j) - g(i) * h(j) * inv_denom) * inv_lambda;
      const double lower = (P(j, i) - g(j) * h(i) * inv_denom) * inv_lambda;
      const double v = 0.5 * (upper + lower);
      P(i, j) = v;
      P(j, i) = v;
    }
  }
}

void covariance_update(Eigen::MatrixXd& P, const Eigen::VectorXd& g, const Eigen::VectorXd& h, double denom,
                       double lambda) {
  if (P.rows() >= kParallelMinDim) {
    covariance_update_omp(P, g, h, denom, lambda);
  } else {
    covariance_update_serial(P, g, h, denom, lambda);
  }
}

}  // namespace rarx::kernels
