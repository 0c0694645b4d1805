#include "rarx/signal.hpp"

#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "rarx/errors.hpp"

namespace rarx {
namespace {

constexpr double kTwoThirdsPi = 2.0 * std::numbers::pi / 3.0;

void require_finite(const Eigen::Ref<const Eigen::VectorXd>& x, double angle) {
  if (!x.allFinite() || !std::isfinite(angle)) throw NumericalError("non-finite input to Park transform");
}

}  // namespace

Vec2 abc_to_dq(const Vec3& x, double angle) {
  require_finite(x, angle);
  const double a0 = angle, a1 = angle - kTwoThirdsPi, a2 = angle + kTwoThirdsPi;
  const double d = (2.0 / 3.0) * (x(0) * std::cos(a0) + x(1) * std::cos(a1) + x(2) * std::cos(a2));
  const double q = -(2.0 / 3.0) * (x(0) * std::sin(a0) + x(1) * std::sin(a1) + x(2) * std::sin(a2));
  return {d, q};
}

Vec3 dq_to_abc(const Vec2& x, double angle) {
  require_finite(x, angle);
  Vec3 out;
  for (int p = 0; p < 3; ++p) {
    const double a = angle - p * kTwoThirdsPi;
    out(p) = x(0) * std::cos(a) - x(1) * std::sin(a);
  }
  return out;
}

DqSample to_dq(const AbcSample& s, double angle) {
  return {abc_to_dq(s.v_abc, angle), abc_to_dq(s.i_abc, angle), s.t};
}

DiffSample difference_stream(const DqSample& current, const DqSample& previous) {
  if (!(current.t > previous.t))
    throw SequencingError(fmt::format("timestamps not increasing: {} after {}", current.t, previous.t));
  return {current.v_dq - previous.v_dq, current.i_dq - previous.i_dq, current.t};
}

std::vector<DiffSample> difference_stream(std::span<const DqSample> stream) {
  std::vector<DiffSample> out;
  if (stream.size() < 2) return out;
  out.reserve(stream.size() - 1);
  for (std::size_t k = 1; k < stream.size(); ++k) out.push_back(difference_stream(stream[k], stream[k - 1]));
  return out;
}

std::optional<Eigen::VectorXd> build_regressor(std::span<const DiffSample> window, int order) {
  if (order < 1) throw ConfigError("regressor order must be >= 1");
  if (window.size() < static_cast<std::size_t>(order)) return std::nullopt;
  Eigen::VectorXd phi(4 * order);
  const std::size_t last = window.size() - 1;
  for (int lag = 0; lag < order; ++lag) {
    const DiffSample& s = window[last - static_cast<std::size_t>(lag)];
    phi.segment<2>(2 * lag) = s.dv_dq;
    phi.segment<2>(2 * order + 2 * lag) = s.di_dq;
  }
  return phi;
}

RegressorBuilder::RegressorBuilder(int order) : order_(order) {
  if (order < 1) throw ConfigError("regressor order must be >= 1");
}

void RegressorBuilder::push(const DiffSample& diff) {
  window_.push_front(diff);
  if (static_cast<int>(window_.size()) > order_) window_.pop_back();
}

std::optional<Eigen::VectorXd> RegressorBuilder::regressor() const {
  if (!ready()) return std::nullopt;
  Eigen::VectorXd phi(4 * order_);
  for (int lag = 0; lag < order_; ++lag) {
    const DiffSample& s = window_[static_cast<std::size_t>(lag)];
    phi.segment<2>(2 * lag) = s.dv_dq;
    phi.segment<2>(2 * order_ + 2 * lag) = s.di_dq;
  }
  return phi;
}

void RbsConfig::validate(double sampling_rate) const {
  if (!(amplitude > 0.0)) throw ConfigError(fmt::format("RBS amplitude must be positive (got {})", amplitude));
  if (!(chip_rate > 0.0) || chip_rate > sampling_rate)
    throw ConfigError(fmt::format("RBS chip rate {} Hz must lie in (0, {}] Hz", chip_rate, sampling_rate));
}

RbsGenerator::RbsGenerator(const RbsConfig& config, double sampling_rate)
    : amplitude_(config.amplitude),
      samples_per_chip_(std::max(1L, std::lround(sampling_rate / config.chip_rate))),
      engine_(config.seed) {
  config.validate(sampling_rate);
}

Vec2 RbsGenerator::next() {
  if (phase_ == 0) {
    const std::uint64_t word = engine_();
    current_(0) = (word >> 63) ? amplitude_ : -amplitude_;
    current_(1) = ((word >> 62) & 1U) ? amplitude_ : -amplitude_;
  }
  phase_ = (phase_ + 1) % samples_per_chip_;
  return current_;
}

std::vector<Vec2> rbs_generate(const RbsConfig& config, std::size_t n, double sampling_rate) {
  RbsGenerator gen(config, sampling_rate);
  std::vector<Vec2> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) out.push_back(gen.next());
  return out;
}

}  // namespace rarx
