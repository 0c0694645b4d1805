#include "rarx/scenario.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

#include "rarx/csv.hpp"
#include "rarx/ensemble.hpp"
#include "rarx/errors.hpp"

namespace rarx {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// configuration

void ScenarioConfig::validate() const {
  if (name.empty() || name.find_first_of("/\\") != std::string::npos)
    throw ConfigError(fmt::format("scenario name '{}' must be a plain, non-empty file name", name));
  circuit.validate();
  identifier.validate();
  if (identifier.input_dim != 2 || identifier.output_dim != 2)
    throw ConfigError("scenarios identify the 2x2 dq system; input_dim and output_dim must be 2");
  if (!(ts > 0.0)) throw ConfigError("ts must be positive");
  if (!(duration > 0.0)) throw ConfigError("duration must be positive");
  if (substeps < 1) throw ConfigError("substeps must be at least 1");
  if (!(noise_std >= 0.0)) throw ConfigError("noise_std must be non-negative");
  excitation.validate(1.0 / ts);
  if (disturbance) disturbance->validate();
  if (detector.thresholds) detector.thresholds->validate();
  if (!(detector.match_floor >= -1.0 && detector.match_floor <= 1.0))
    throw ConfigError("match_floor must lie in [-1, 1]");
  if (detector.hold < 1) throw ConfigError("hold must be at least 1");
  if (!(detector.library_margin >= 1.0)) throw ConfigError("library_margin must be at least 1");
  if (!(calibration.duration > 0.0) || !(calibration.settle >= 0.0))
    throw ConfigError("calibration duration must be positive and settle non-negative");
  if (!(baseline.fraction > 0.0) || !(baseline.averaging_cycles > 0.0))
    throw ConfigError("baseline fraction and averaging_cycles must be positive");
  if (theta_stride < 1) throw ConfigError("theta_stride must be at least 1");
}

SimulationConfig ScenarioConfig::simulation() const {
  SimulationConfig s;
  s.circuit = circuit;
  s.disturbance = disturbance;
  s.excitation = excitation;
  s.duration = duration;
  s.ts = ts;
  s.substeps = substeps;
  s.noise_std = noise_std;
  s.noise_seed = noise_seed;
  s.i_op = i_op;
  s.v_bus = v_bus;
  return s;
}

const std::string& default_profile_ini() {
  static const std::string text = R"([scenario]
name = defaults
duration = 30
ts = 0.0002
substeps = 1
noise_std = 0.0001
noise_seed = 7
i_op_d = 0.5
i_op_q = 0
v_bus_d = 1
v_bus_q = 0
theta_stride = 10

[circuit]
v_base = 380
s_base = 1500
f_base = 50
z_base_convention = line_to_line
r1 = 2
c1 = 0.05
r2 = 0.015
l2 = 0.15
r3 = 0.015
l3 = 0.15
lf1 = 0.08
lf2 = 0.05
cf = 0.08
omega_g = 1

[disturbance]
kind = none
t_start = 10
t_end = 20

[excitation]
amplitude = 0.1
chip_rate = 5000
seed = 1

[identifier]
order = 3
lambda = 0.999
p0_scale = 10000

[calibration]
duration = 10
settle = 1
rbs_seed = 1001
noise_seed = 1007
low_factor = 1.5
high_factor = 5

[detector]
thresholds = auto
match_floor = 0.8
hold = 3
library_margin = 1.5

[baseline]
fraction = 0.1
averaging_cycles = 1
sweep = 0.05, 0.075, 0.1, 0.125, 0.15
)";
  return text;
}

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return {};
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

double to_real(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size() || !std::isfinite(v))
    throw ConfigError(fmt::format("{}: '{}' is not a finite number", key, text));
  return v;
}

long long to_int(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size())
    throw ConfigError(fmt::format("{}: '{}' is not an integer", key, text));
  return v;
}

std::uint64_t to_seed(const std::string& key, const std::string& text) {
  const auto v = to_int(key, text);
  if (v < 0) throw ConfigError(fmt::format("{}: seeds must be non-negative", key));
  return static_cast<std::uint64_t>(v);
}

struct PendingDisturbance {
  std::string kind = "none";
  double t_start = 10.0, t_end = 20.0;
  std::optional<double> r_fault_ohm, r_fault_pu, l_load_pu, l_load_henry;
};

using Setter = std::function<void(const std::string& key, const std::string& value)>;

void apply_ini(const boost::property_tree::ptree& tree, ScenarioConfig& c, PendingDisturbance& dist,
               const fs::path& base_dir) {
  auto real = [](double& dst) { return Setter([&dst](auto& k, auto& v) { dst = to_real(k, v); }); };
  auto integer = [](int& dst) { return Setter([&dst](auto& k, auto& v) { dst = static_cast<int>(to_int(k, v)); }); };
  auto seed = [](std::uint64_t& dst) { return Setter([&dst](auto& k, auto& v) { dst = to_seed(k, v); }); };
  auto path = [&base_dir](std::optional<fs::path>& dst) {
    return Setter([&dst, &base_dir](auto&, auto& v) {
      const fs::path p = trim(v);
      dst = (p.is_relative() && !base_dir.empty()) ? base_dir / p : p;
    });
  };
  auto opt_real = [](std::optional<double>& dst) { return Setter([&dst](auto& k, auto& v) { dst = to_real(k, v); }); };

  std::optional<std::string> thresholds_mode;
  std::optional<double> d_high, d_low;

  const std::map<std::string, std::map<std::string, Setter>> table{
      {"scenario",
       {{"name", [&](auto&, auto& v) { c.name = trim(v); }},
        {"profile",
         [](auto& k, auto& v) {
           if (trim(v) != "defaults") throw ConfigError(fmt::format("{}: unknown profile '{}'", k, v));
         }},
        {"duration", real(c.duration)},
        {"ts", real(c.ts)},
        {"substeps", integer(c.substeps)},
        {"noise_std", real(c.noise_std)},
        {"noise_seed", seed(c.noise_seed)},
        {"i_op_d", real(c.i_op.x())},
        {"i_op_q", real(c.i_op.y())},
        {"v_bus_d", real(c.v_bus.x())},
        {"v_bus_q", real(c.v_bus.y())},
        {"theta_stride", integer(c.theta_stride)}}},
      {"circuit",
       {{"v_base", real(c.circuit.base.v_base)},
        {"s_base", real(c.circuit.base.s_base)},
        {"f_base", real(c.circuit.base.f_base)},
        {"z_base_convention",
         [&](auto& k, auto& v) {
           const auto t = trim(v);
           if (t == "line_to_line") c.circuit.base.convention = VoltageBaseConvention::LineToLine;
           else if (t == "phase") c.circuit.base.convention = VoltageBaseConvention::Phase;
           else throw ConfigError(fmt::format("{}: expected line_to_line or phase, got '{}'", k, v));
         }},
        {"r1", real(c.circuit.r1)},
        {"c1", real(c.circuit.c1)},
        {"r2", real(c.circuit.r2)},
        {"l2", real(c.circuit.l2)},
        {"r3", real(c.circuit.r3)},
        {"l3", real(c.circuit.l3)},
        {"lf1", real(c.circuit.lf1)},
        {"lf2", real(c.circuit.lf2)},
        {"cf", real(c.circuit.cf)},
        {"omega_g", real(c.circuit.omega_g)}}},
      {"disturbance",
       {{"kind", [&](auto&, auto& v) { dist.kind = trim(v); }},
        {"t_start", real(dist.t_start)},
        {"t_end", real(dist.t_end)},
        {"r_fault_ohm", opt_real(dist.r_fault_ohm)},
        {"r_fault_pu", opt_real(dist.r_fault_pu)},
        {"l_load_pu", opt_real(dist.l_load_pu)},
        {"l_load_henry", opt_real(dist.l_load_henry)}}},
      {"excitation",
       {{"amplitude", real(c.excitation.amplitude)},
        {"chip_rate", real(c.excitation.chip_rate)},
        {"seed", seed(c.excitation.seed)}}},
      {"identifier",
       {{"order", integer(c.identifier.order)},
        {"lambda", real(c.identifier.lambda)},
        {"p0_scale", real(c.identifier.p0_scale)}}},
      {"calibration",
       {{"duration", real(c.calibration.duration)},
        {"settle", real(c.calibration.settle)},
        {"rbs_seed", seed(c.calibration.rbs_seed)},
        {"noise_seed", seed(c.calibration.noise_seed)},
        {"low_factor", real(c.calibration.rule.low_factor)},
        {"high_factor", real(c.calibration.rule.high_factor)},
        {"file", path(c.calibration.file)}}},
      {"detector",
       {{"thresholds", [&](auto&, auto& v) { thresholds_mode = trim(v); }},
        {"d_high", opt_real(d_high)},
        {"d_low", opt_real(d_low)},
        {"match_floor", real(c.detector.match_floor)},
        {"hold", integer(c.detector.hold)},
        {"library", path(c.detector.library)},
        {"library_margin", real(c.detector.library_margin)}}},
      {"baseline",
       {{"fraction", real(c.baseline.fraction)},
        {"averaging_cycles", real(c.baseline.averaging_cycles)},
        {"sweep",
         [&](auto& k, auto& v) {
           c.baseline.sweep.clear();
           std::stringstream ss(v);
           std::string item;
           while (std::getline(ss, item, ',')) c.baseline.sweep.push_back(to_real(k, item));
         }}}},
  };

  for (const auto& [section, keys] : tree) {
    const auto sec = table.find(section);
    if (sec == table.end()) throw ConfigError(fmt::format("unknown section [{}]", section));
    if (!keys.data().empty()) throw ConfigError(fmt::format("key '{}' must live in a section", section));
    for (const auto& [key, node] : keys) {
      const auto setter = sec->second.find(key);
      if (setter == sec->second.end()) throw ConfigError(fmt::format("unknown key {}.{}", section, key));
      setter->second(section + "." + key, node.data());
    }
  }

  if (thresholds_mode && *thresholds_mode == "auto") {
    c.detector.thresholds.reset();
  } else if (thresholds_mode && *thresholds_mode != "fixed") {
    throw ConfigError(fmt::format("detector.thresholds: expected auto or fixed, got '{}'", *thresholds_mode));
  }
  if (d_high || d_low || (thresholds_mode && *thresholds_mode == "fixed")) {
    if (!d_high || !d_low) throw ConfigError("fixed thresholds need both detector.d_high and detector.d_low");
    if (thresholds_mode && *thresholds_mode == "auto")
      throw ConfigError("detector.thresholds = auto conflicts with explicit d_high/d_low");
    c.detector.thresholds = Thresholds{*d_high, *d_low};
  }
}

void resolve_disturbance(const PendingDisturbance& d, ScenarioConfig& c) {
  const int given = static_cast<int>(d.r_fault_ohm.has_value()) + static_cast<int>(d.r_fault_pu.has_value()) +
                    static_cast<int>(d.l_load_pu.has_value()) + static_cast<int>(d.l_load_henry.has_value());
  if (d.kind == "none") {
    if (given) throw ConfigError("disturbance.kind = none but a disturbance value is set");
    c.disturbance.reset();
    return;
  }
  if (given != 1) throw ConfigError("a disturbance needs exactly one of r_fault_ohm, r_fault_pu, l_load_pu, l_load_henry");
  DisturbanceSpec spec;
  spec.t_start = d.t_start;
  spec.t_end = d.t_end;
  if (d.kind == "fault") {
    if (!d.r_fault_ohm && !d.r_fault_pu) throw ConfigError("a fault needs r_fault_ohm or r_fault_pu");
    spec.kind = DisturbanceKind::Fault;
    spec.value = d.r_fault_pu ? *d.r_fault_pu : c.circuit.base.ohms_to_pu(*d.r_fault_ohm);
  } else if (d.kind == "load_increase") {
    if (!d.l_load_pu && !d.l_load_henry) throw ConfigError("a load increase needs l_load_pu or l_load_henry");
    spec.kind = DisturbanceKind::LoadIncrease;
    spec.value = d.l_load_pu ? *d.l_load_pu : c.circuit.base.henries_to_pu(*d.l_load_henry);
  } else {
    throw ConfigError(fmt::format("disturbance.kind: expected none, fault or load_increase, got '{}'", d.kind));
  }
  c.disturbance = spec;
}

boost::property_tree::ptree read_tree(const std::string& text) {
  boost::property_tree::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(fmt::format("config line {}: {}", e.line(), e.message()));
  }
  return tree;
}

}  // namespace

ScenarioConfig parse_scenario(const std::string& ini_text, const fs::path& base_dir) {
  ScenarioConfig c;
  PendingDisturbance dist;
  apply_ini(read_tree(default_profile_ini()), c, dist, {});
  apply_ini(read_tree(ini_text), c, dist, base_dir);
  resolve_disturbance(dist, c);
  c.validate();
  return c;
}

ScenarioConfig load_scenario(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot read scenario file {}", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scenario(ss.str(), path.parent_path());
}

ScenarioConfig default_profile() { return parse_scenario(""); }

// ---------------------------------------------------------------------------
// identification and calibration

double IdentifiedRun::normalized_residual() const {
  if (!(output_energy > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  return residual_energy / output_energy;
}

IdentifiedRun identify(std::span<const DqSample> samples, const ArxConfig& config, double score_from) {
  IdentifierState state = init_identifier(config);
  RegressorBuilder builder(config.order);
  IdentifiedRun out;
  if (samples.size() > 1) out.theta.reserve(samples.size() - 1);
  Eigen::Vector2d y_sum = Eigen::Vector2d::Zero();
  double y_sq = 0.0;
  for (std::size_t k = 1; k < samples.size(); ++k) {
    const DiffSample diff = difference_stream(samples[k], samples[k - 1]);
    if (builder.ready()) {
      const Eigen::VectorXd phi = *builder.regressor();
      const Eigen::Vector2d y = diff.dv_dq;
      if (state.calibrated() && diff.t >= score_from) {
        out.residual_energy += (y - state.theta * phi).squaredNorm();
        y_sum += y;
        y_sq += y.squaredNorm();
        ++out.scored;
      }
      rls_update(state, y, phi);
      if (state.calibrated()) out.theta.push_back({diff.t, state.theta});
    }
    builder.push(diff);
  }
  if (out.scored > 0) out.output_energy = y_sq - y_sum.squaredNorm() / static_cast<double>(out.scored);
  return out;
}

namespace {

json theta_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

Eigen::MatrixXd theta_from_json(const json& j) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  if (rows == 0) throw ConfigError("empty theta matrix");
  const auto cols = static_cast<Eigen::Index>(j.at(0).size());
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = j.at(static_cast<std::size_t>(r));
    if (static_cast<Eigen::Index>(row.size()) != cols) throw DimensionError("ragged theta matrix");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row.at(static_cast<std::size_t>(c)).get<double>();
  }
  return m;
}

json optional_seconds(const std::optional<double>& v) { return v ? json(*v) : json("never"); }

template <class F>
auto stage(const char* name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

}  // namespace

json to_json(const Calibration& c) {
  return {{"theta_star", theta_to_json(c.nominal.theta_star)},
          {"calibration_window", c.nominal.calibration_window},
          {"calibrated_at", c.nominal.calibrated_at},
          {"d_high", c.thresholds.d_high},
          {"d_low", c.thresholds.d_low},
          {"nominal_d_max", c.nominal_d_max},
          {"v_nominal", {c.v_nominal.x(), c.v_nominal.y()}},
          {"order", c.order},
          {"lambda", c.lambda}};
}

Calibration calibration_from_json(const json& j) {
  try {
    Calibration c;
    c.nominal.theta_star = theta_from_json(j.at("theta_star"));
    c.nominal.calibration_window = j.at("calibration_window").get<std::size_t>();
    c.nominal.calibrated_at = j.at("calibrated_at").get<double>();
    c.thresholds = {j.at("d_high").get<double>(), j.at("d_low").get<double>()};
    c.thresholds.validate();
    c.nominal_d_max = j.at("nominal_d_max").get<double>();
    c.v_nominal = {j.at("v_nominal").at(0).get<double>(), j.at("v_nominal").at(1).get<double>()};
    c.order = j.at("order").get<int>();
    c.lambda = j.at("lambda").get<double>();
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("malformed calibration: {}", e.what()));
  }
}

void save_calibration(const Calibration& c, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError(fmt::format("cannot write {}", path.string()));
  out << to_json(c).dump(2) << '\n';
}

Calibration load_calibration(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot read {}", path.string()));
  try {
    return calibration_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

Calibration run_calibration(const ScenarioConfig& config) {
  config.validate();
  SimulationConfig sim = config.simulation();
  sim.disturbance.reset();
  sim.duration = config.calibration.duration;
  sim.excitation->seed = config.calibration.rbs_seed;
  sim.noise_seed = config.calibration.noise_seed;
  const auto samples = simulate(sim);
  const double settle = config.calibration.settle;
  const IdentifiedRun run = identify(samples, config.identifier, settle);

  const auto first = std::find_if(run.theta.begin(), run.theta.end(), [&](const auto& s) { return s.t >= settle; });
  const auto window = static_cast<std::size_t>(run.theta.end() - first);
  if (window < 2)
    throw InsufficientDataError(fmt::format(
        "calibration run of {} s leaves no snapshots after burn-in ({} samples) and settle ({} s)",
        config.calibration.duration, config.identifier.burn_in(), settle));

  Calibration c;
  c.nominal = calibrate_nominal(run.theta, window);
  std::vector<double> d;
  d.reserve(window);
  for (auto it = first; it != run.theta.end(); ++it) d.push_back(frobenius_distance(it->theta, c.nominal.theta_star));
  c.thresholds = thresholds_from_nominal(d, config.calibration.rule);
  c.nominal_d_max = *std::max_element(d.begin(), d.end());
  Vec2 v_sum = Vec2::Zero();
  long n = 0;
  for (const auto& s : samples) {
    if (s.t < settle) continue;
    v_sum += s.v_dq;
    ++n;
  }
  c.v_nominal = v_sum / static_cast<double>(n);
  c.order = config.identifier.order;
  c.lambda = config.identifier.lambda;
  return c;
}

// ---------------------------------------------------------------------------
// scenario pipeline

json RunReport::to_json(const ScenarioConfig& config) const {
  json j;
  j["name"] = name;
  j["dt1"] = optional_seconds(dt1);
  j["dt2"] = optional_seconds(dt2);
  j["dt1_high"] = optional_seconds(dt1_high);
  j["dt1_low"] = optional_seconds(dt1_low);
  j["dt1_debounced"] = optional_seconds(dt1_debounced);
  j["dt2_debounced"] = optional_seconds(dt2_debounced);
  j["onset_threshold"] = onset;
  j["final_classification"] = {{"verdict", to_string(final_verdict)}, {"criterion", final_criterion}};
  j["thresholds"] = {{"d_high", thresholds.d_high}, {"d_low", thresholds.d_low}, {"source", threshold_source}};
  j["criterion1_samples"] = criterion1_samples;
  j["criterion2_samples"] = criterion2_samples;
  j["window_verdict_counts"] = {{"normal", verdict_counts[0]},
                                {"fault", verdict_counts[1]},
                                {"load_increase", verdict_counts[2]},
                                {"unclassified", verdict_counts[3]}};
  j["nominal_alarms"] = nominal_alarms;
  j["max_d"] = max_d;
  j["normalized_residual"] = normalized_residual;
  auto method = [](const MethodSummary& m) {
    return json{{"detected", m.detected}, {"dt1", optional_seconds(m.dt1)}, {"dt2", optional_seconds(m.dt2)},
                {"verdict", m.verdict}};
  };
  j["methods"] = {{"rarx", method(rarx)}, {"baseline", method(baseline)}};
  json sweep = json::array();
  for (const auto& r : baseline_sweep)
    sweep.push_back({{"fraction", r.fraction},
                     {"first_violation", optional_seconds(r.first_violation)},
                     {"violating_samples", r.violating_samples}});
  j["baseline_sweep"] = sweep;
  json tl = json::array();
  for (const auto& [t, v] : timeline) tl.push_back({{"t", t}, {"verdict", to_string(v)}});
  j["verdict_timeline"] = tl;
  j["warnings"] = warnings;
  j["library"] = library_source ? json(*library_source) : json(nullptr);

  json cfg;
  cfg["duration"] = config.duration;
  cfg["ts"] = config.ts;
  cfg["substeps"] = config.substeps;
  cfg["noise_std"] = config.noise_std;
  cfg["noise_seed"] = config.noise_seed;
  cfg["i_op"] = {config.i_op.x(), config.i_op.y()};
  cfg["v_bus"] = {config.v_bus.x(), config.v_bus.y()};
  const auto& ci = config.circuit;
  cfg["circuit"] = {{"v_base", ci.base.v_base}, {"s_base", ci.base.s_base}, {"f_base", ci.base.f_base},
                    {"z_base_ohm", ci.base.z_base()}, {"r1", ci.r1}, {"c1", ci.c1}, {"r2", ci.r2}, {"l2", ci.l2},
                    {"r3", ci.r3}, {"l3", ci.l3}, {"omega_g", ci.omega_g}};
  if (config.disturbance) {
    cfg["disturbance"] = {{"kind", to_string(config.disturbance->kind)},
                          {"value_pu", config.disturbance->value},
                          {"t_start", config.disturbance->t_start},
                          {"t_end", config.disturbance->t_end}};
  } else {
    cfg["disturbance"] = nullptr;
  }
  cfg["excitation"] = {{"amplitude", config.excitation.amplitude},
                       {"chip_rate", config.excitation.chip_rate},
                       {"seed", config.excitation.seed}};
  cfg["identifier"] = {{"order", config.identifier.order},
                       {"lambda", config.identifier.lambda},
                       {"p0_scale", config.identifier.p0_scale}};
  cfg["calibration"] = {{"duration", config.calibration.duration},
                        {"settle", config.calibration.settle},
                        {"rbs_seed", config.calibration.rbs_seed},
                        {"noise_seed", config.calibration.noise_seed},
                        {"low_factor", config.calibration.rule.low_factor},
                        {"high_factor", config.calibration.rule.high_factor}};
  cfg["detector"] = {{"match_floor", config.detector.match_floor},
                     {"hold", config.detector.hold},
                     {"library_margin", config.detector.library_margin}};
  cfg["baseline"] = {{"fraction", config.baseline.fraction}, {"averaging_cycles", config.baseline.averaging_cycles}};
  j["config"] = cfg;
  return j;
}

namespace {

std::size_t verdict_index(Verdict v) { return static_cast<std::size_t>(v); }

long max_run(std::span<const DetectionEvent> events, double from, double to, int criterion) {
  long best = 0, run = 0;
  for (const auto& e : events) {
    if (e.t < from || e.t >= to) continue;
    run = e.criterion == criterion ? run + 1 : 0;
    best = std::max(best, run);
  }
  return best;
}

struct BaselineTrace {
  std::vector<DqSample> averaged;
  std::vector<std::optional<LimitViolation>> state;  // nullopt also while the averager fills
  std::vector<bool> valid;
};

BaselineTrace run_baseline(std::span<const DqSample> samples, const ScenarioConfig& config, const Vec2& v_nominal) {
  const double f_grid = config.circuit.base.f_base * config.circuit.omega_g;
  const auto length =
      static_cast<std::size_t>(std::max(1L, std::lround(config.baseline.averaging_cycles / (f_grid * config.ts))));
  CycleAverager avg(length);
  const VoltageLimits limits = VoltageLimits::around(v_nominal, config.baseline.fraction);
  BaselineTrace out;
  out.averaged.reserve(samples.size());
  for (const auto& s : samples) {
    DqSample a = s;
    a.v_dq = avg.push(s.v_dq);
    out.averaged.push_back(a);
    out.valid.push_back(avg.full());
    out.state.push_back(avg.full() ? limit_check(a.v_dq, limits) : std::nullopt);
  }
  return out;
}

}  // namespace

ScenarioResult execute_scenario(const ScenarioConfig& config) {
  stage("config", [&] {
    config.validate();
    return 0;
  });
  ScenarioResult res;
  RunReport& rep = res.report;
  rep.name = config.name;

  res.calibration = stage("calibration", [&] {
    if (config.calibration.file) {
      Calibration c = load_calibration(*config.calibration.file);
      if (c.order != config.identifier.order)
        throw ConfigError(fmt::format("calibration file has order {}, scenario uses {}", c.order,
                                      config.identifier.order));
      return c;
    }
    return run_calibration(config);
  });

  SignatureLibrary library;
  stage("library", [&] {
    rep.thresholds = config.detector.thresholds ? *config.detector.thresholds : res.calibration.thresholds;
    rep.threshold_source = config.detector.thresholds ? "config" : "auto";
    if (config.detector.library) {
      library = load_library(*config.detector.library);
      if (library.order != config.identifier.order)
        throw ConfigError(fmt::format("library has order {}, scenario uses {}", library.order,
                                      config.identifier.order));
      rep.library_source = config.detector.library->string();
      if (!config.detector.thresholds && !library.empty()) {
        rep.thresholds = widen_for_library(rep.thresholds, library, config.detector.library_margin);
        rep.threshold_source += "+library";
      }
    }
    rep.thresholds.validate();
    return 0;
  });

  res.samples = stage("simulation", [&] { return simulate(config.simulation()); });
  const double t_start = config.disturbance ? config.disturbance->t_start : config.duration;
  const double t_end = config.disturbance ? config.disturbance->t_end : config.duration;
  if (config.disturbance && config.duration <= t_start)
    rep.warnings.push_back(fmt::format("run ends at {} s, before the disturbance starts at {} s", config.duration,
                                       t_start));
  else if (config.disturbance && config.duration <= t_end)
    rep.warnings.push_back(fmt::format("run ends at {} s, before the disturbance clears at {} s", config.duration,
                                       t_end));

  res.identified = stage("identification", [&] {
    return identify(res.samples, config.identifier, config.calibration.settle);
  });
  rep.normalized_residual = res.identified.normalized_residual();
  if (res.identified.theta.empty())
    rep.warnings.push_back("run too short for the identifier burn-in; no detection possible");

  stage("detection", [&] {
    res.events.reserve(res.identified.theta.size());
    std::vector<Verdict> raw;
    raw.reserve(res.identified.theta.size());
    for (const auto& snap : res.identified.theta) {
      if (snap.t < config.calibration.settle) continue;  // detector not armed yet
      res.events.push_back(classify(snap.theta, res.calibration.nominal, rep.thresholds, library,
                                    config.detector.match_floor, snap.t));
      raw.push_back(res.events.back().verdict);
    }
    res.debounced = debounce(raw, config.detector.hold);

    std::vector<TimedValue> d;
    d.reserve(res.events.size());
    for (const auto& e : res.events) d.push_back({e.t, e.d});
    for (std::size_t i = 0; i < res.events.size(); ++i) {
      const auto& e = res.events[i];
      rep.max_d = std::max(rep.max_d, e.d);
      if (e.criterion == 1) ++rep.criterion1_samples;
      if (e.criterion == 2) ++rep.criterion2_samples;
      if (i == 0 || res.debounced[i] != res.debounced[i - 1]) rep.timeline.emplace_back(e.t, res.debounced[i]);
      const bool in_window = e.t >= t_start && e.t < t_end;
      if (in_window || !config.disturbance) ++rep.verdict_counts[verdict_index(res.debounced[i])];
      if (config.disturbance && e.t < t_start && res.debounced[i] != Verdict::Normal) ++rep.nominal_alarms;
    }

    const double win_from = config.disturbance ? t_start : 0.0;
    if (max_run(res.events, win_from, t_end, 1) >= config.detector.hold) {
      rep.final_verdict = Verdict::FaultDetected;
      rep.final_criterion = 1;
    } else {
      const Verdict order[] = {Verdict::FaultDetected, Verdict::LoadIncreaseDetected, Verdict::Unclassified};
      long best = 0;
      for (Verdict v : order) {
        if (rep.verdict_counts[verdict_index(v)] > best) {
          best = rep.verdict_counts[verdict_index(v)];
          rep.final_verdict = v;
          rep.final_criterion = 2;
        }
      }
    }

    if (config.disturbance) {
      const auto hi = detection_times(d, t_start, t_end, rep.thresholds, OnsetThreshold::High, config.detector.hold);
      const auto lo = detection_times(d, t_start, t_end, rep.thresholds, OnsetThreshold::Low, config.detector.hold);
      rep.dt1_high = hi.dt1;
      rep.dt1_low = lo.dt1;
      const auto& pick = rep.final_criterion == 1 ? hi : lo;
      rep.onset = rep.final_criterion == 1 ? "d_high" : "d_low";
      rep.dt1 = pick.dt1;
      rep.dt1_debounced = pick.dt1_debounced;
      if (pick.dt1) {
        rep.dt2 = pick.dt2;
        rep.dt2_debounced = pick.dt2_debounced;
      }
    }
    rep.rarx.detected = rep.final_verdict != Verdict::Normal;
    rep.rarx.dt1 = rep.dt1;
    rep.rarx.dt2 = rep.dt2;
    rep.rarx.verdict = to_string(rep.final_verdict);
    return 0;
  });

  stage("baseline", [&] {
    const BaselineTrace b = run_baseline(res.samples, config, res.calibration.v_nominal);
    const double from = config.disturbance ? t_start : 0.0;
    std::optional<LimitViolation> first;
    for (std::size_t i = 0; i < res.samples.size(); ++i) {
      const double t = res.samples[i].t;
      if (t < from || t >= t_end || !b.state[i]) continue;
      rep.baseline.detected = true;
      if (!rep.baseline.dt1) {
        rep.baseline.dt1 = t - from;
        first = b.state[i];
      }
    }
    if (rep.baseline.detected && config.disturbance) {
      for (std::size_t i = 0; i < res.samples.size(); ++i) {
        if (res.samples[i].t >= t_end && b.valid[i] && !b.state[i]) {
          rep.baseline.dt2 = res.samples[i].t - t_end;
          break;
        }
      }
    }
    rep.baseline.verdict = first ? "violation_" + to_string(*first) : "in_limits";
    std::vector<DqSample> valid;
    for (std::size_t i = 0; i < b.averaged.size(); ++i)
      if (b.valid[i]) valid.push_back(b.averaged[i]);
    rep.baseline_sweep = limit_sweep(valid, res.calibration.v_nominal, config.baseline.sweep, from, t_end);
    return 0;
  });
  return res;
}

namespace {

void write_outputs(const ScenarioConfig& config, const ScenarioResult& res, const fs::path& dir) {
  fs::create_directories(dir);
  write_samples_csv(dir / "samples.csv", res.samples);
  save_calibration(res.calibration, dir / "calibration.json");

  const BaselineTrace b = run_baseline(res.samples, config, res.calibration.v_nominal);
  {
    std::ofstream d_out(dir / "d.csv");
    d_out << "t,d,verdict,criterion,similarity,verdict_debounced,v_d_avg,v_q_avg,baseline\n";
    std::size_t j = 0;
    for (std::size_t i = 0; i < res.events.size(); ++i) {
      const auto& e = res.events[i];
      while (j < res.samples.size() && res.samples[j].t < e.t) ++j;
      const std::string sim = e.matched ? format_real(e.matched->similarity) : "";
      std::string base = "filling";
      Vec2 va = Vec2::Constant(std::numeric_limits<double>::quiet_NaN());
      if (j < res.samples.size()) {
        va = b.averaged[j].v_dq;
        if (b.valid[j]) base = b.state[j] ? to_string(*b.state[j]) : "in_limits";
      }
      d_out << format_real(e.t) << ',' << format_real(e.d) << ',' << to_string(e.verdict) << ',' << e.criterion
            << ',' << sim << ',' << to_string(res.debounced[i]) << ',' << format_real(va.x()) << ','
            << format_real(va.y()) << ',' << base << '\n';
    }
  }
  {
    std::ofstream th(dir / "theta.csv");
    th << 't';
    if (!res.identified.theta.empty()) {
      const auto& m = res.identified.theta.front().theta;
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) th << ",theta_" << r << '_' << c;
    }
    th << '\n';
    for (std::size_t i = 0; i < res.identified.theta.size(); i += static_cast<std::size_t>(config.theta_stride)) {
      const auto& s = res.identified.theta[i];
      th << format_real(s.t);
      for (Eigen::Index r = 0; r < s.theta.rows(); ++r)
        for (Eigen::Index c = 0; c < s.theta.cols(); ++c) th << ',' << format_real(s.theta(r, c));
      th << '\n';
    }
  }
  {
    std::ofstream ev(dir / "events.jsonl");
    for (std::size_t i = 0; i < res.events.size(); ++i) {
      if (i != 0 && res.debounced[i] == res.debounced[i - 1]) continue;
      const auto& e = res.events[i];
      json j{{"method", "rarx"}, {"t", e.t}, {"verdict", to_string(res.debounced[i])}, {"d", e.d},
             {"criterion", e.criterion}};
      if (e.matched) {
        j["similarity"] = e.matched->similarity;
        j["label"] = e.matched->label ? to_string(*e.matched->label) : "none";
      }
      ev << j.dump() << '\n';
    }
    std::optional<std::string> last;
    for (std::size_t i = 0; i < res.samples.size(); ++i) {
      if (!b.valid[i]) continue;
      const std::string state = b.state[i] ? "violation_" + to_string(*b.state[i]) : "in_limits";
      if (last && *last == state) continue;
      last = state;
      ev << json{{"method", "baseline"}, {"t", res.samples[i].t}, {"verdict", state},
                 {"v_d", b.averaged[i].v_dq.x()}, {"v_q", b.averaged[i].v_dq.y()}}
                .dump()
         << '\n';
    }
  }
  std::ofstream rep(dir / "report.json");
  rep << res.report.to_json(config).dump(2) << '\n';
}

}  // namespace

RunReport run_scenario(const ScenarioConfig& config, const fs::path& out_dir) {
  ScenarioResult res = execute_scenario(config);
  stage("output", [&] {
    write_outputs(config, res, out_dir);
    return 0;
  });
  return std::move(res.report);
}

// ---------------------------------------------------------------------------
// suite and library

std::vector<fs::path> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot read manifest {}", path.string()));
  std::vector<fs::path> out;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const fs::path p = line;
    out.push_back(p.is_relative() ? path.parent_path() / p : p);
  }
  return out;
}

SuiteResult run_suite(std::span<const ScenarioConfig> scenarios, const fs::path& out_dir, bool parallel) {
  fs::create_directories(out_dir);
  std::vector<std::string> dirs;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < scenarios.size(); ++i) {
    std::string d = scenarios[i].name;
    if (!seen.insert(d).second) d = fmt::format("{}-{}", d, i);
    seen.insert(d);
    dirs.push_back(d);
  }
  auto job = [&](std::size_t i) { return run_scenario(scenarios[i], out_dir / dirs[i]); };
  const auto outcomes = parallel ? map_parallel(scenarios.size(), job) : map_serial(scenarios.size(), job);

  SuiteResult result;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    const auto& o = outcomes[i];
    if (!o.ok()) {
      result.failures.emplace_back(dirs[i], o.error);
      result.rows.push_back({dirs[i], "rarx", false, std::nullopt, std::nullopt, "error"});
      result.rows.push_back({dirs[i], "baseline", false, std::nullopt, std::nullopt, "error"});
      continue;
    }
    const RunReport& r = *o.value;
    result.rows.push_back({dirs[i], "rarx", r.rarx.detected, r.rarx.dt1, r.rarx.dt2, r.rarx.verdict});
    result.rows.push_back({dirs[i], "baseline", r.baseline.detected, r.baseline.dt1, r.baseline.dt2,
                           r.baseline.detected ? r.baseline.verdict : "not_detected"});
  }

  std::ofstream table(out_dir / "comparison.csv");
  table << "scenario,method,detected,dt1,dt2,verdict\n";
  auto sec = [](const std::optional<double>& v) { return v ? format_real(*v) : std::string("never"); };
  for (const auto& row : result.rows)
    table << row.scenario << ',' << row.method << ',' << (row.detected ? "yes" : "no") << ',' << sec(row.dt1) << ','
          << sec(row.dt2) << ',' << row.verdict << '\n';
  return result;
}

SignatureLibrary run_library_build(std::span<const ScenarioConfig> scenarios) {
  if (scenarios.empty()) throw ConfigError("no scenarios given for the library");
  SignatureLibrary lib;
  lib.order = scenarios.front().identifier.order;
  lib.base = scenarios.front().circuit.base;
  for (const auto& cfg : scenarios) {
    if (!cfg.disturbance) throw ConfigError(fmt::format("scenario '{}' has no disturbance to learn from", cfg.name));
    if (cfg.identifier.order != lib.order) throw ConfigError("library scenarios must share the ARX order");
    ScenarioConfig plain = cfg;
    plain.detector.library.reset();
    const ScenarioResult res = execute_scenario(plain);
    const LibraryRun run{cfg.disturbance->kind == DisturbanceKind::Fault ? SignatureLabel::Fault
                                                                          : SignatureLabel::LoadIncrease,
                         res.identified.theta,
                         res.calibration.nominal,
                         cfg.disturbance->t_start,
                         cfg.disturbance->t_end,
                         cfg.name};
    const SignatureLibrary one = stage("library", [&] {
      return build_library(std::span<const LibraryRun>(&run, 1), res.report.thresholds, lib.order, lib.base);
    });
    lib.signatures.push_back(one.signatures.front());
  }
  return lib;
}

}  // namespace rarx
