#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "rarx/grid.hpp"

namespace rarx {

/// theta(k) tagged with its sample time.
struct ThetaSnapshot {
  double t = 0.0;
  Eigen::MatrixXd theta;
};

struct TimedValue {
  double t = 0.0;
  double value = 0.0;
};

/// theta* recorded from fault-free data.
struct NominalPredictor {
  Eigen::MatrixXd theta_star;
  std::size_t calibration_window = 0;
  double calibrated_at = 0.0;  // time of the last snapshot used, s

  bool calibrated() const { return theta_star.size() > 0; }
};

/// theta* = elementwise mean of the last `window` snapshots.
/// Throws InsufficientDataError if window is 0 or exceeds the stream.
NominalPredictor calibrate_nominal(std::span<const ThetaSnapshot> stream, std::size_t window);

struct Thresholds {
  double d_high = 0.0;
  double d_low = 0.0;

  /// Throws ConfigError unless 0 < d_low < d_high.
  void validate() const;
};

/// Multipliers on the largest d seen during fault-free operation.
struct ThresholdRule {
  double low_factor = 1.5;
  double high_factor = 5.0;
};

/// d_low = low_factor * max d, d_high = high_factor * max d.
/// Throws InsufficientDataError on an empty series and NumericalError if the
/// maximum is not a positive finite number.
Thresholds thresholds_from_nominal(std::span<const double> nominal_d, const ThresholdRule& rule = {});

/// ||theta - theta_star||_F. Throws DimensionError on shape mismatch.
double frobenius_distance(const Eigen::MatrixXd& theta, const Eigen::MatrixXd& theta_star);

enum class SignatureLabel { Fault, LoadIncrease };

std::string to_string(SignatureLabel label);
SignatureLabel signature_label_from_string(const std::string& text);

struct Signature {
  SignatureLabel label = SignatureLabel::Fault;
  Eigen::MatrixXd delta_theta;  // unit Frobenius norm
  std::string source_scenario;
  double peak_d = 0.0;  // largest d seen while the disturbance was active
};

struct SignatureLibrary {
  int version = 1;
  int order = 3;
  PerUnitBase base;
  std::vector<Signature> signatures;

  bool empty() const { return signatures.empty(); }
  double max_peak_d() const;
};

void to_json(nlohmann::json& j, const SignatureLibrary& lib);
void from_json(const nlohmann::json& j, SignatureLibrary& lib);
void save_library(const SignatureLibrary& lib, const std::filesystem::path& path);
SignatureLibrary load_library(const std::filesystem::path& path);

/// Raises d_high to `margin` times the largest peak d recorded for the
/// library runs, so the disturbances the library was built from stay inside
/// the criterion-2 band. Never lowers d_high.
Thresholds widen_for_library(const Thresholds& base, const SignatureLibrary& library, double margin = 1.5);

/// Raised by match_signature when there is nothing to compare against; this
/// is distinct from a comparison that finds no match.
class EmptyLibraryError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr double kDefaultMatchFloor = 0.8;

struct SignatureMatch {
  std::optional<SignatureLabel> label;  // nullopt: best similarity below floor
  double similarity = 0.0;              // best cosine similarity found
  std::size_t index = 0;                // library entry with that similarity
};

/// Cosine similarity between flattened matrices; 0 if either is zero.
double cosine_similarity(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

SignatureMatch match_signature(const Eigen::MatrixXd& delta_theta, const SignatureLibrary& library,
                               double match_floor = kDefaultMatchFloor);

enum class Verdict { Normal, FaultDetected, LoadIncreaseDetected, Unclassified };

std::string to_string(Verdict verdict);

struct DetectionEvent {
  Verdict verdict = Verdict::Normal;
  double d = 0.0;
  std::optional<SignatureMatch> matched;  // set when the library was consulted
  double t = 0.0;
  int criterion = 0;  // 1 or 2 when a detection rule fired, else 0
};

/// Two-threshold decision on theta(k):
///   d > d_high          -> FaultDetected (criterion 1, library not used)
///   d_low < d <= d_high -> signature match (criterion 2); an empty library
///                          gives Unclassified
///   otherwise           -> Normal
/// Throws SequencingError if `nominal` is not calibrated.
DetectionEvent classify(const Eigen::MatrixXd& theta, const NominalPredictor& nominal, const Thresholds& thresholds,
                        const SignatureLibrary& library, double match_floor = kDefaultMatchFloor, double t = 0.0);

/// Holds the previous output until a new raw verdict has repeated for `hold`
/// consecutive samples. hold <= 1 returns the input unchanged.
std::vector<Verdict> debounce(std::span<const Verdict> raw, int hold);

enum class OnsetThreshold { High, Low };

struct DetectionTimes {
  std::optional<double> dt1, dt2;                      // first crossing
  std::optional<double> dt1_debounced, dt2_debounced;  // crossing held for `hold` samples
};

/// dt1: first sample with t >= t_start and d above the onset threshold, minus
/// t_start. dt2: first sample with t >= t_end and d <= d_low, minus t_end.
/// Debounced variants report the time at which the condition has held for
/// `hold` consecutive samples.
DetectionTimes detection_times(std::span<const TimedValue> d_series, double t_start, double t_end,
                               const Thresholds& thresholds, OnsetThreshold onset, int hold = 3);

/// One labelled offline run used to build the library.
struct LibraryRun {
  SignatureLabel label = SignatureLabel::Fault;
  std::span<const ThetaSnapshot> trajectory;
  NominalPredictor nominal;
  double t_start = 0.0;
  double t_end = 0.0;
  std::string source;
};

/// Fraction of the disturbance window, counted from its end, averaged into
/// the signature.
inline constexpr double kSignatureSegment = 0.5;

/// One unit-norm signature per run: mean theta over the last half of
/// [t_start, t_end) minus theta*. Throws InsufficientDataError naming the run
/// when its d never exceeds d_low inside the window or the segment is empty.
SignatureLibrary build_library(std::span<const LibraryRun> runs, const Thresholds& thresholds, int order,
                               const PerUnitBase& base = {});

}  // namespace rarx
