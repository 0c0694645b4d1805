#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rarx/baseline.hpp"
#include "rarx/detector.hpp"
#include "rarx/grid.hpp"
#include "rarx/rls.hpp"
#include "rarx/signal.hpp"

namespace rarx {

struct CalibrationSettings {
  double duration = 10.0;  // s of fault-free operation
  double settle = 1.0;     // s discarded after start-up before averaging
  std::uint64_t rbs_seed = 1001;
  std::uint64_t noise_seed = 1007;
  ThresholdRule rule;
  /// Load theta*, thresholds and the nominal voltage from here instead of
  /// running the calibration phase.
  std::optional<std::filesystem::path> file;
};

struct DetectorSettings {
  std::optional<Thresholds> thresholds;  // nullopt: auto from calibration
  double match_floor = kDefaultMatchFloor;
  int hold = 3;
  std::optional<std::filesystem::path> library;
  double library_margin = 1.5;
};

struct BaselineSettings {
  double fraction = 0.10;
  double averaging_cycles = 1.0;  // moving-average length in fundamental cycles
  std::vector<double> sweep{0.05, 0.075, 0.10, 0.125, 0.15};
};

struct ScenarioConfig {
  std::string name = "scenario";
  CircuitParams circuit;
  std::optional<DisturbanceSpec> disturbance;
  RbsConfig excitation;
  ArxConfig identifier;
  double duration = 30.0;
  double ts = 2e-4;
  int substeps = 1;
  double noise_std = 1e-4;
  std::uint64_t noise_seed = 7;
  Vec2 i_op{0.5, 0.0};
  Vec2 v_bus{1.0, 0.0};
  CalibrationSettings calibration;
  DetectorSettings detector;
  BaselineSettings baseline;
  int theta_stride = 10;  // write every n-th theta snapshot

  /// Throws ConfigError on invalid combinations.
  void validate() const;
  SimulationConfig simulation() const;
};

/// INI text of the built-in profile: reference test circuit, 5 kHz sampling,
/// 0.1 p.u. RBS at 5 kHz, disturbance window 10 s to 20 s.
const std::string& default_profile_ini();

/// Parses INI text on top of the built-in profile. Relative paths resolve
/// against `base_dir`. Throws ConfigError naming the offending key.
ScenarioConfig parse_scenario(const std::string& ini_text, const std::filesystem::path& base_dir = {});
ScenarioConfig load_scenario(const std::filesystem::path& path);
ScenarioConfig default_profile();

/// Output of running the identifier over a sample stream.
struct IdentifiedRun {
  std::vector<ThetaSnapshot> theta;  // one per sample once past burn-in
  double residual_energy = 0.0;      // sum ||y - theta phi||^2 (a-priori), scored samples
  double output_energy = 0.0;        // sum ||y - mean y||^2, scored samples
  long scored = 0;

  /// One-step-ahead residual energy over output variance (1 - R^2).
  double normalized_residual() const;
};

/// diff -> regressor -> RLS over `samples`. Residuals are scored for samples
/// with t >= score_from (and past burn-in).
IdentifiedRun identify(std::span<const DqSample> samples, const ArxConfig& config, double score_from = 0.0);

struct Calibration {
  NominalPredictor nominal;
  Thresholds thresholds;
  double nominal_d_max = 0.0;
  Vec2 v_nominal = Vec2::Zero();  // mean PCC voltage over the averaging window
  int order = 3;
  double lambda = 0.999;
};

nlohmann::json to_json(const Calibration& c);
Calibration calibration_from_json(const nlohmann::json& j);
void save_calibration(const Calibration& c, const std::filesystem::path& path);
Calibration load_calibration(const std::filesystem::path& path);

/// Fault-free run with the scenario's circuit and identifier, using the
/// calibration seeds. Throws InsufficientDataError when the run is too short
/// for burn-in plus the settle time.
Calibration run_calibration(const ScenarioConfig& config);

struct MethodSummary {
  bool detected = false;
  std::optional<double> dt1, dt2;
  std::string verdict;  // final classification
};

struct RunReport {
  std::string name;
  Thresholds thresholds;
  std::string threshold_source;  // "auto", "config", plus "+library"
  std::optional<double> dt1, dt2, dt1_high, dt1_low, dt1_debounced, dt2_debounced;
  std::string onset;  // threshold used for dt1
  Verdict final_verdict = Verdict::Normal;
  int final_criterion = 0;
  long criterion1_samples = 0;
  long criterion2_samples = 0;
  long verdict_counts[4] = {0, 0, 0, 0};  // debounced, inside the disturbance window
  long nominal_alarms = 0;                // non-normal debounced verdicts before t_start
  double max_d = 0.0;
  double normalized_residual = 0.0;
  MethodSummary rarx, baseline;
  std::vector<LimitSweepRow> baseline_sweep;
  std::vector<std::string> warnings;
  std::optional<std::string> library_source;
  std::vector<std::pair<double, Verdict>> timeline;  // debounced verdict changes

  nlohmann::json to_json(const ScenarioConfig& config) const;
};

struct ScenarioResult {
  RunReport report;
  Calibration calibration;
  std::vector<DqSample> samples;
  IdentifiedRun identified;
  std::vector<DetectionEvent> events;  // raw, one per theta snapshot
  std::vector<Verdict> debounced;
};

/// Full pipeline in memory. Stage failures are rethrown as StageError.
ScenarioResult execute_scenario(const ScenarioConfig& config);

/// execute_scenario plus artifacts in `out_dir`: samples.csv, d.csv,
/// theta.csv, events.jsonl, calibration.json, report.json.
RunReport run_scenario(const ScenarioConfig& config, const std::filesystem::path& out_dir);

struct SuiteRow {
  std::string scenario;
  std::string method;
  bool detected = false;
  std::optional<double> dt1, dt2;
  std::string verdict;
};

struct SuiteResult {
  std::vector<SuiteRow> rows;
  std::vector<std::pair<std::string, std::string>> failures;  // scenario, error
};

/// Reads a manifest: one scenario file per line, '#' comments, paths
/// relative to the manifest.
std::vector<std::filesystem::path> read_manifest(const std::filesystem::path& path);

/// Runs every scenario (in parallel when `parallel`), each into
/// out_dir/<name>, and writes out_dir/comparison.csv. A failing scenario is
/// recorded and the rest continue.
SuiteResult run_suite(std::span<const ScenarioConfig> scenarios, const std::filesystem::path& out_dir,
                      bool parallel = true);

/// Runs each labelled scenario and builds a signature library from the
/// results; the label comes from the disturbance kind.
SignatureLibrary run_library_build(std::span<const ScenarioConfig> scenarios);

}  // namespace rarx
