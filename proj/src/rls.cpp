#include "rarx/rls.hpp"

#include <cmath>
#include <string>

#include <fmt/format.h>

#include "rarx/errors.hpp"
#include "rarx/kernels.hpp"

namespace rarx {

void ArxConfig::validate() const {
  if (order < 1) throw ConfigError(fmt::format("ARX order must be >= 1 (got {})", order));
  if (input_dim < 1 || output_dim < 1)
    throw ConfigError(fmt::format("ARX dimensions must be positive (input {}, output {})", input_dim, output_dim));
  if (!(lambda > 0.0 && lambda <= 1.0))
    throw ConfigError(fmt::format("forgetting factor must lie in (0, 1] (got {})", lambda));
  if (!(p0_scale > 0.0) || !std::isfinite(p0_scale))
    throw ConfigError(fmt::format("initial covariance scale must be positive and finite (got {})", p0_scale));
}

IdentifierState init_identifier(const ArxConfig& config) {
  config.validate();
  const int n = config.regressor_size();
  IdentifierState s;
  s.config = config;
  s.theta = Eigen::MatrixXd::Zero(config.output_dim, n);
  s.P = config.p0_scale * Eigen::MatrixXd::Identity(n, n);
  s.sample_count = 0;
  return s;
}

void rls_update(IdentifierState& state, const Eigen::Ref<const Eigen::VectorXd>& y,
                const Eigen::Ref<const Eigen::VectorXd>& phi) {
  const auto n = state.P.rows();
  if (phi.size() != n)
    throw DimensionError(fmt::format("regressor length {} does not match {}", phi.size(), n));
  if (y.size() != state.theta.rows())
    throw DimensionError(fmt::format("output length {} does not match {}", y.size(), state.theta.rows()));
  if (!phi.allFinite() || !y.allFinite()) throw NumericalError("non-finite sample rejected");

  const double lambda = state.config.lambda;
  const Eigen::VectorXd g = state.P * phi;
  const Eigen::VectorXd h = state.P.transpose() * phi;
  const double denom = lambda + phi.dot(g);
  if (!(denom > kMinGainDenominator) || !std::isfinite(denom))
    throw NumericalError(fmt::format("gain denominator {} too small, update rejected", denom));

  const Eigen::VectorXd gain = g / denom;
  const Eigen::VectorXd innovation = y - state.theta * phi;

  Eigen::MatrixXd P = state.P;
  kernels::covariance_update(P, g, h, denom, lambda);
  Eigen::MatrixXd theta = state.theta + innovation * gain.transpose();
  if (!P.allFinite() || !theta.allFinite()) throw NumericalError("update produced non-finite state, rejected");

  state.P = std::move(P);
  state.theta = std::move(theta);
  ++state.sample_count;
}

Eigen::VectorXd predict(const IdentifierState& state, const Eigen::Ref<const Eigen::VectorXd>& phi) {
  if (phi.size() != state.theta.cols())
    throw DimensionError(fmt::format("regressor length {} does not match {}", phi.size(), state.theta.cols()));
  return state.theta * phi;
}

Eigen::MatrixXd batch_weighted_ls(std::span<const Observation> history, double lambda) {
  if (history.empty()) throw InsufficientDataError("empty regressor history");
  if (!(lambda > 0.0 && lambda <= 1.0)) throw ConfigError("forgetting factor must lie in (0, 1]");
  const auto rows = static_cast<Eigen::Index>(history.size());
  const auto n = history.front().phi.size();
  const auto m = history.front().y.size();

  Eigen::MatrixXd A(rows, n);
  Eigen::MatrixXd B(rows, m);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& obs = history[static_cast<std::size_t>(r)];
    if (obs.phi.size() != n || obs.y.size() != m) throw DimensionError("inconsistent observation dimensions");
    // newest sample has weight lambda^0
    const double w = std::sqrt(std::pow(lambda, static_cast<double>(rows - 1 - r)));
    A.row(r) = w * obs.phi.transpose();
    B.row(r) = w * obs.y.transpose();
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
  qr.setThreshold(1e-10);
  if (qr.rank() < n)
    throw SingularityError(fmt::format("regressor history has rank {} < {} parameters", qr.rank(), n));
  return qr.solve(B).transpose();
}

}  // namespace rarx
