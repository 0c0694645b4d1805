#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace rarx {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;

struct AbcSample {
  Vec3 v_abc = Vec3::Zero();
  Vec3 i_abc = Vec3::Zero();
  double t = 0.0;
};

/// One timestep of PCC measurements in the synchronous frame (p.u.).
struct DqSample {
  Vec2 v_dq = Vec2::Zero();
  Vec2 i_dq = Vec2::Zero();
  double t = 0.0;
};

/// First differences of consecutive DqSamples: y(k) = dv_dq, u(k) = di_dq.
struct DiffSample {
  Vec2 dv_dq = Vec2::Zero();
  Vec2 di_dq = Vec2::Zero();
  double t = 0.0;
};

// Park convention used throughout: amplitude invariant, q lagging d by 90
// degrees.
//   d =  2/3 [xa cos(th) + xb cos(th - 2pi/3) + xc cos(th + 2pi/3)]
//   q = -2/3 [xa sin(th) + xb sin(th - 2pi/3) + xc sin(th + 2pi/3)]
// A balanced set xa = A cos(th) maps to (A, 0).
Vec2 abc_to_dq(const Vec3& x_abc, double angle);
Vec3 dq_to_abc(const Vec2& x_dq, double angle);
DqSample to_dq(const AbcSample& sample, double angle);

/// Throws SequencingError unless current.t > previous.t.
DiffSample difference_stream(const DqSample& current, const DqSample& previous);

/// Differences of a whole stream; output has one entry fewer than input.
std::vector<DiffSample> difference_stream(std::span<const DqSample> stream);

/// phi = [dv(k-1) .. dv(k-rho), di(k-1) .. di(k-rho)], each block (d, q).
/// `window` is chronological (its last entry is k-1). Returns nullopt while
/// fewer than `order` diffs are available.
std::optional<Eigen::VectorXd> build_regressor(std::span<const DiffSample> window, int order);

/// Ring buffer holding the last rho diffs for streaming regressor assembly.
class RegressorBuilder {
 public:
  explicit RegressorBuilder(int order);

  void push(const DiffSample& diff);
  bool ready() const { return static_cast<int>(window_.size()) == order_; }
  std::optional<Eigen::VectorXd> regressor() const;
  int order() const { return order_; }

 private:
  int order_;
  std::deque<DiffSample> window_;  // newest at front
};

struct RbsConfig {
  double amplitude = 0.1;    // p.u.
  double chip_rate = 5000.;  // Hz
  std::uint64_t seed = 1;

  void validate(double sampling_rate) const;
};

/// Two-channel random binary sequence. Each chip draws one 64-bit word from
/// std::mt19937_64 (fully specified by the standard, so streams are portable)
/// and uses its two top bits as the d and q signs. Values are held for
/// round(sampling_rate / chip_rate) samples.
class RbsGenerator {
 public:
  RbsGenerator(const RbsConfig& config, double sampling_rate);

  Vec2 next();

 private:
  double amplitude_;
  long samples_per_chip_;
  long phase_ = 0;
  std::mt19937_64 engine_;
  Vec2 current_ = Vec2::Zero();
};

std::vector<Vec2> rbs_generate(const RbsConfig& config, std::size_t n, double sampling_rate);

}  // namespace rarx
