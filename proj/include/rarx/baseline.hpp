#pragma once

#include <cstddef>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rarx/signal.hpp"

namespace rarx {

/// Open voltage window per dq axis, p.u.
struct VoltageLimits {
  double vd_min = 0.9, vd_max = 1.1;
  double vq_min = -0.1, vq_max = 0.1;

  /// Throws ConfigError unless min < max on both axes.
  void validate() const;

  /// nominal +- fraction * |nominal| on each axis. The band is scaled by the
  /// vector magnitude so an axis with a zero operating value still gets a
  /// usable window.
  static VoltageLimits around(const Vec2& nominal, double fraction);
};

enum class Axis { D, Q };
enum class Side { Lower, Upper };

struct LimitViolation {
  Axis axis = Axis::D;
  Side side = Side::Lower;

  bool operator==(const LimitViolation&) const = default;
};

std::string to_string(const LimitViolation& v);

/// nullopt means in limits. The window is open: v == min is a violation.
/// The d axis is checked first; a non-finite component reports a lower-side
/// violation on its axis.
std::optional<LimitViolation> limit_check(const Vec2& v_dq, const VoltageLimits& limits);

/// Moving average of v_dq over a fixed number of samples (one fundamental
/// cycle in practice), as a relay would apply to RMS-type quantities.
class CycleAverager {
 public:
  explicit CycleAverager(std::size_t length);

  Vec2 push(const Vec2& v);
  bool full() const { return window_.size() == length_; }

 private:
  std::size_t length_;
  std::deque<Vec2> window_;
  Vec2 sum_ = Vec2::Zero();
};

struct LimitSweepRow {
  double fraction = 0.0;
  std::optional<double> first_violation;  // seconds after t_from
  std::size_t violating_samples = 0;
};

/// Runs limit_check at each band fraction over `v_series` (already filtered)
/// for samples with t >= t_from and t < t_to.
std::vector<LimitSweepRow> limit_sweep(std::span<const DqSample> v_series, const Vec2& nominal,
                                       std::span<const double> fractions, double t_from, double t_to);

}  // namespace rarx
