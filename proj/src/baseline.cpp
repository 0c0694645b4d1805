#include "rarx/baseline.hpp"

#include <cmath>

#include <fmt/format.h>

#include "rarx/errors.hpp"

namespace rarx {

void VoltageLimits::validate() const {
  if (!(vd_min < vd_max) || !(vq_min < vq_max))
    throw ConfigError(fmt::format("voltage limits need min < max (d: [{}, {}], q: [{}, {}])", vd_min, vd_max, vq_min,
                                  vq_max));
}

VoltageLimits VoltageLimits::around(const Vec2& nominal, double fraction) {
  const double band = fraction * nominal.norm();
  VoltageLimits l{nominal.x() - band, nominal.x() + band, nominal.y() - band, nominal.y() + band};
  l.validate();
  return l;
}

std::string to_string(const LimitViolation& v) {
  return fmt::format("{}_{}", v.axis == Axis::D ? "d" : "q", v.side == Side::Lower ? "lower" : "upper");
}

namespace {

std::optional<Side> check_axis(double v, double lo, double hi) {
  if (lo < v && v < hi) return std::nullopt;
  return (v >= hi) ? Side::Upper : Side::Lower;
}

}  // namespace

std::optional<LimitViolation> limit_check(const Vec2& v_dq, const VoltageLimits& limits) {
  if (auto s = check_axis(v_dq.x(), limits.vd_min, limits.vd_max)) return LimitViolation{Axis::D, *s};
  if (auto s = check_axis(v_dq.y(), limits.vq_min, limits.vq_max)) return LimitViolation{Axis::Q, *s};
  return std::nullopt;
}

CycleAverager::CycleAverager(std::size_t length) : length_(length) {
  if (length == 0) throw ConfigError("averaging window must hold at least one sample");
}

Vec2 CycleAverager::push(const Vec2& v) {
  window_.push_back(v);
  sum_ += v;
  if (window_.size() > length_) {
    sum_ -= window_.front();
    window_.pop_front();
  }
  return sum_ / static_cast<double>(window_.size());
}

std::vector<LimitSweepRow> limit_sweep(std::span<const DqSample> v_series, const Vec2& nominal,
                                       std::span<const double> fractions, double t_from, double t_to) {
  std::vector<LimitSweepRow> rows;
  for (double f : fractions) {
    LimitSweepRow row;
    row.fraction = f;
    const VoltageLimits lim = VoltageLimits::around(nominal, f);
    for (const auto& s : v_series) {
      if (s.t < t_from || s.t >= t_to) continue;
      if (limit_check(s.v_dq, lim)) {
        if (!row.first_violation) row.first_violation = s.t - t_from;
        ++row.violating_samples;
      }
    }
    rows.push_back(row);
  }
  return rows;
}

}  // namespace rarx
