#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

namespace rarx {

/// Shape and tuning of a recursive ARX identifier.
struct ArxConfig {
  int order = 3;          // lags (rho)
  int input_dim = 2;      // dq current differences
  int output_dim = 2;     // dq voltage differences
  double lambda = 0.999;  // forgetting factor, (0, 1]
  double p0_scale = 1e4;  // P(0) = p0_scale * I

  int combined_dim() const { return input_dim + output_dim; }
  int regressor_size() const { return combined_dim() * order; }
  /// Samples needed before theta is trusted by downstream consumers.
  long burn_in() const { return 2L * regressor_size(); }

  /// Throws ConfigError when an invariant is violated.
  void validate() const;
};

/// Full state of the exponentially weighted recursive estimator.
///
/// `theta` stacks one predictor row per output (d then q); `P` is shared by
/// all rows because every row regresses on the same phi with the same lambda.
struct IdentifierState {
  ArxConfig config;
  Eigen::MatrixXd theta;  // output_dim x regressor_size
  Eigen::MatrixXd P;      // regressor_size x regressor_size
  long sample_count = 0;

  bool calibrated() const { return sample_count >= config.burn_in(); }
};

IdentifierState init_identifier(const ArxConfig& config);

/// Gain denominators at or below this value freeze the state.
inline constexpr double kMinGainDenominator = 1e-12;

/// One recursive least-squares step with exponential forgetting.
///
///   K     = P phi / (lambda + phi' P phi)
///   P    <- (P - K phi' P) / lambda, then P <- (P + P') / 2
///   theta <- theta + (y - theta phi) K'
///
/// Strong guarantee: on any error (non-finite input, dimension mismatch,
/// degenerate denominator) `state` is left untouched and an exception is
/// thrown.
void rls_update(IdentifierState& state, const Eigen::Ref<const Eigen::VectorXd>& y,
                const Eigen::Ref<const Eigen::VectorXd>& phi);

/// One-step-ahead prediction theta * phi.
Eigen::VectorXd predict(const IdentifierState& state, const Eigen::Ref<const Eigen::VectorXd>& phi);

struct Observation {
  Eigen::VectorXd y;
  Eigen::VectorXd phi;
};

/// Minimizer of sum_i lambda^i ||y(k-i) - theta phi(k-i)||^2 over `history`
/// (ordered oldest first, so the last entry has weight 1). Solved by a
/// column-pivoting QR of the row-weighted regressor matrix.
///
/// Throws SingularityError when the weighted regressor matrix is rank
/// deficient, InsufficientDataError when history is empty.
Eigen::MatrixXd batch_weighted_ls(std::span<const Observation> history, double lambda);

}  // namespace rarx
