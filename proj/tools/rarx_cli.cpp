// Command-line front end: calibrate, build-library, run, suite, poles.

#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "rarx/errors.hpp"
#include "rarx/grid.hpp"
#include "rarx/scenario.hpp"

namespace fs = std::filesystem;
using namespace rarx;

namespace {

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<double> lambda;
  std::optional<int> rho;
};

// --seed drives the excitation; the noise stream takes seed + 1.
void apply(const Overrides& o, ScenarioConfig& c) {
  if (o.seed) {
    c.excitation.seed = *o.seed;
    c.noise_seed = *o.seed + 1;
  }
  if (o.lambda) c.identifier.lambda = *o.lambda;
  if (o.rho) c.identifier.order = *o.rho;
  c.validate();
}

ScenarioConfig load(const std::optional<std::string>& path, const Overrides& o) {
  ScenarioConfig c = path ? load_scenario(*path) : default_profile();
  apply(o, c);
  return c;
}

std::string seconds(const std::optional<double>& v) { return v ? fmt::format("{:.6g} s", *v) : "never"; }

int cmd_calibrate(const std::optional<std::string>& scenario, const fs::path& out, const Overrides& o) {
  const ScenarioConfig c = load(scenario, o);
  const Calibration cal = run_calibration(c);
  fs::create_directories(out);
  save_calibration(cal, out / "calibration.json");
  fmt::print("theta* {}x{}  d_low {:.6g}  d_high {:.6g}  -> {}\n", cal.nominal.theta_star.rows(),
             cal.nominal.theta_star.cols(), cal.thresholds.d_low, cal.thresholds.d_high,
             (out / "calibration.json").string());
  return 0;
}

int cmd_build_library(const std::vector<std::string>& scenarios, const fs::path& out, const Overrides& o) {
  std::vector<ScenarioConfig> cfgs;
  for (const auto& s : scenarios) cfgs.push_back(load(s, o));
  const SignatureLibrary lib = run_library_build(cfgs);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_library(lib, out);
  for (const auto& s : lib.signatures)
    fmt::print("{:14s} {:24s} peak d {:.4g}\n", to_string(s.label), s.source_scenario, s.peak_d);
  fmt::print("{} signatures -> {}\n", lib.signatures.size(), out.string());
  return 0;
}

int cmd_run(const std::optional<std::string>& scenario, const fs::path& out, const Overrides& o,
            const std::optional<std::string>& library, const std::optional<std::string>& calibration) {
  ScenarioConfig c = load(scenario, o);
  if (library) c.detector.library = *library;
  if (calibration) c.calibration.file = *calibration;
  const RunReport r = run_scenario(c, out);
  for (const auto& w : r.warnings) fmt::print(stderr, "warning: {}\n", w);
  fmt::print("{}: {} (criterion {})  dt1 {}  dt2 {}  baseline {}\n", r.name, to_string(r.final_verdict),
             r.final_criterion, seconds(r.dt1), seconds(r.dt2), r.baseline.verdict);
  return 0;
}

int cmd_suite(const std::vector<std::string>& inputs, const fs::path& out, const Overrides& o, bool serial,
              const std::optional<std::string>& library) {
  std::vector<fs::path> files;
  for (const auto& in : inputs) {
    if (fs::path(in).extension() == ".ini") {
      files.emplace_back(in);
    } else {
      const auto listed = read_manifest(in);
      files.insert(files.end(), listed.begin(), listed.end());
    }
  }
  std::vector<ScenarioConfig> cfgs;
  for (const auto& f : files) {
    ScenarioConfig c = load(f.string(), o);
    if (library) c.detector.library = *library;
    cfgs.push_back(std::move(c));
  }
  const SuiteResult res = run_suite(cfgs, out, !serial);
  for (const auto& row : res.rows)
    fmt::print("{:20s} {:9s} {:4s} dt1 {:>12s}  dt2 {:>12s}  {}\n", row.scenario, row.method,
               row.detected ? "yes" : "no", seconds(row.dt1), seconds(row.dt2), row.verdict);
  for (const auto& [name, err] : res.failures) fmt::print(stderr, "failed: {}: {}\n", name, err);
  return res.failures.empty() ? 0 : 1;
}

int cmd_poles(const std::vector<double>& r_ohm, const std::vector<double>& l_pu, const std::optional<std::string>& out) {
  const CircuitParams p;
  std::string text = "kind,value_pu,formula_re,formula_im,numeric_re,numeric_im,rel_error\n";
  auto add = [&](const DisturbanceSpec& d) {
    const PoleComparison c = compare_poles(p, d);
    text += fmt::format("{},{:.10g},{:.10g},{:.10g},{:.10g},{:.10g},{:.3e}\n", to_string(c.kind), c.value,
                        c.formula.upper.real(), c.formula.upper.imag(), c.numeric.upper.real(),
                        c.numeric.upper.imag(), c.rel_error);
  };
  for (double r : r_ohm) add({DisturbanceKind::Fault, p.base.ohms_to_pu(r), 0.0, 1.0});
  for (double l : l_pu) add({DisturbanceKind::LoadIncrease, l, 0.0, 1.0});
  fmt::print("# poles in p.u. frequency (s / omega_base), upper of each conjugate pair\n{}", text);
  if (out) {
    std::FILE* f = std::fopen(out->c_str(), "w");
    if (!f) throw ConfigError(fmt::format("cannot write {}", *out));
    std::fputs(text.c_str(), f);
    std::fclose(f);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Recursive ARX fault detection on a dq grid surrogate"};
  app.require_subcommand(1);
  app.fallthrough();
  Overrides o;
  app.add_option("--seed", o.seed, "Excitation seed (noise uses seed + 1)");
  app.add_option("--lambda", o.lambda, "Forgetting factor override")->check(CLI::Range(1e-6, 1.0));
  app.add_option("--rho", o.rho, "ARX order override")->check(CLI::Range(1, 64));

  std::string out = "out";
  std::optional<std::string> scenario, library, calibration, poles_out;
  std::vector<std::string> scenarios, inputs;
  bool serial = false;
  std::vector<double> r_ohm{20, 600, 1000}, l_pu{0.5, 1, 2, 3};

  auto* cal = app.add_subcommand("calibrate", "Fault-free calibration: theta* and auto thresholds");
  cal->add_option("scenario", scenario, "Scenario file (default: built-in profile)");
  cal->add_option("--out", out, "Output directory");

  auto* lib = app.add_subcommand("build-library", "Build a signature library from labelled scenarios");
  lib->add_option("scenarios", scenarios, "Scenario files with a disturbance")->required();
  std::string lib_out = "library.json";
  lib->add_option("--out", lib_out, "Library JSON path");

  auto* run = app.add_subcommand("run", "Run one scenario end to end");
  run->add_option("scenario", scenario, "Scenario file (default: built-in profile)");
  run->add_option("--out", out, "Output directory");
  run->add_option("--library", library, "Signature library JSON");
  run->add_option("--calibration", calibration, "Calibration JSON (skips the calibration run)");

  auto* suite = app.add_subcommand("suite", "Run several scenarios and tabulate rARX against limit checking");
  suite->add_option("inputs", inputs, "Manifest files or scenario .ini files");
  suite->add_option("--out", out, "Output directory");
  suite->add_option("--library", library, "Signature library JSON for every scenario");
  suite->add_flag("--serial", serial, "Run scenarios one at a time");

  auto* poles = app.add_subcommand("poles", "Closed-form post-disturbance poles against the eigenvalue oracle");
  poles->add_option("--r-fault-ohm", r_ohm, "Fault resistances, ohm");
  poles->add_option("--l-load-pu", l_pu, "Load inductances, p.u.");
  poles->add_option("--out", poles_out, "Also write the table to this CSV file");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*cal) return cmd_calibrate(scenario, out, o);
    if (*lib) return cmd_build_library(scenarios, lib_out, o);
    if (*run) return cmd_run(scenario, out, o, library, calibration);
    if (*suite) return cmd_suite(inputs, out, o, serial, library);
    if (*poles) return cmd_poles(r_ohm, l_pu, poles_out);
  } catch (const StageError& e) {
    fmt::print(stderr, "error in stage '{}': {}\n", e.stage(), e.what());
    return 2;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 2;
  }
  return 0;
}
