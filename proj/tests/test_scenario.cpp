#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "rarx/csv.hpp"
#include "rarx/errors.hpp"
#include "rarx/scenario.hpp"

using namespace rarx;
namespace fs = std::filesystem;

namespace {

fs::path profiles() { return fs::path(RARX_SOURCE_DIR) / "profiles"; }

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("rarx_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Short fault scenario so the pipeline tests stay quick.
ScenarioConfig short_fault() {
  return parse_scenario(R"(
[scenario]
name = short_fault
duration = 13
[disturbance]
kind = fault
r_fault_ohm = 600
t_start = 10
t_end = 11
[calibration]
duration = 5
)");
}

}  // namespace

TEST_CASE("built-in defaults") {
  const auto c = default_profile();
  CHECK(c.ts == doctest::Approx(2e-4));
  CHECK(c.duration == 30.0);
  CHECK(c.identifier.order == 3);
  CHECK(c.identifier.lambda == doctest::Approx(0.999));
  CHECK(c.excitation.amplitude == doctest::Approx(0.1));
  CHECK(c.excitation.chip_rate == doctest::Approx(5000));
  CHECK(c.circuit.r1 == doctest::Approx(2.0));
  CHECK(c.circuit.l2 == doctest::Approx(0.15));
  CHECK_FALSE(c.disturbance);
  CHECK_FALSE(c.detector.thresholds);
  CHECK(c.baseline.sweep.size() == 5);
}

TEST_CASE("scenario files parse on top of the defaults") {
  const auto c = load_scenario(profiles() / "hif_600ohm.ini");
  CHECK(c.name == "hif_600ohm");
  REQUIRE(c.disturbance);
  CHECK(c.disturbance->kind == DisturbanceKind::Fault);
  CHECK(c.disturbance->value == doctest::Approx(600.0 / c.circuit.base.z_base()));
  CHECK(c.disturbance->t_start == 10.0);
  CHECK(c.disturbance->t_end == 20.0);

  const auto f = parse_scenario("[detector]\nthresholds = fixed\nd_high = 2\nd_low = 0.1\nlibrary = lib.json\n",
                                "/some/dir");
  REQUIRE(f.detector.thresholds);
  CHECK(f.detector.thresholds->d_high == 2.0);
  CHECK(*f.detector.library == fs::path("/some/dir/lib.json"));

  const auto l = parse_scenario("[disturbance]\nkind = load_increase\nl_load_henry = 0.1\n");
  CHECK(l.disturbance->value == doctest::Approx(l.circuit.base.henries_to_pu(0.1)));
}

TEST_CASE("config errors name the problem") {
  auto fails_with = [](const std::string& text, const std::string& needle) {
    try {
      parse_scenario(text);
    } catch (const ConfigError& e) {
      const std::string msg = e.what();
      CAPTURE(msg);
      CHECK(std::string(e.what()).find(needle) != std::string::npos);
      return;
    }
    FAIL("no ConfigError for: " << text);
  };
  fails_with("[nonsense]\na = 1\n", "nonsense");
  fails_with("[scenario]\ndurashun = 3\n", "scenario.durashun");
  fails_with("[scenario]\nts = fast\n", "scenario.ts");
  fails_with("[scenario]\nts = 0\n", "ts");
  fails_with("[disturbance]\nkind = fault\n", "exactly one");
  fails_with("[disturbance]\nkind = fault\nr_fault_ohm = 5\nr_fault_pu = 1\n", "exactly one");
  fails_with("[disturbance]\nkind = fault\nl_load_pu = 1\n", "r_fault");
  fails_with("[disturbance]\nr_fault_ohm = 5\n", "kind = none");
  fails_with("[disturbance]\nkind = earthquake\nr_fault_ohm = 5\n", "earthquake");
  fails_with("[detector]\nthresholds = fixed\nd_high = 1\n", "both");
  fails_with("[detector]\nthresholds = sometimes\n", "auto or fixed");
  fails_with("[detector]\nthresholds = fixed\nd_high = 0.1\nd_low = 1\n", "d_low");
  fails_with("[scenario]\nname = a/b\n", "name");
  fails_with("[identifier]\nlambda = 1.5\n", "forgetting factor");
  CHECK_THROWS_AS(load_scenario("/nonexistent.ini"), ConfigError);
}

TEST_CASE("calibration: shape, determinism, persistence") {
  ScenarioConfig c = default_profile();
  c.calibration.duration = 5.0;
  const auto a = run_calibration(c);
  CHECK(a.nominal.theta_star.rows() == 2);
  CHECK(a.nominal.theta_star.cols() == 12);
  CHECK(a.thresholds.d_low < a.thresholds.d_high);
  CHECK(a.thresholds.d_high == doctest::Approx(5.0 * a.nominal_d_max));

  const auto dir = scratch("calibration");
  save_calibration(a, dir / "a.json");
  save_calibration(run_calibration(c), dir / "b.json");
  CHECK(slurp(dir / "a.json") == slurp(dir / "b.json"));
  const auto back = load_calibration(dir / "a.json");
  CHECK(back.nominal.theta_star == a.nominal.theta_star);
  CHECK(back.thresholds.d_high == a.thresholds.d_high);
  CHECK(back.v_nominal == a.v_nominal);

  c.calibration.duration = 0.004;  // 20 samples, burn-in needs 24
  CHECK_THROWS_AS(run_calibration(c), InsufficientDataError);
}

TEST_CASE("stage errors carry the stage name") {
  ScenarioConfig c = short_fault();
  c.calibration.duration = 0.004;
  try {
    execute_scenario(c);
    FAIL("expected a stage error");
  } catch (const StageError& e) {
    CHECK(e.stage() == "calibration");
  }
  c = short_fault();
  c.detector.library = "/nonexistent/library.json";
  try {
    execute_scenario(c);
    FAIL("expected a stage error");
  } catch (const StageError& e) {
    CHECK(e.stage() == "library");
  }
}

TEST_CASE("reruns are byte-identical") {
  const auto c = short_fault();
  const auto a = scratch("rerun_a"), b = scratch("rerun_b");
  run_scenario(c, a);
  run_scenario(c, b);
  for (const char* f : {"samples.csv", "d.csv", "theta.csv", "events.jsonl", "calibration.json", "report.json"}) {
    CAPTURE(f);
    const auto x = slurp(a / f);
    CHECK_FALSE(x.empty());
    CHECK(x == slurp(b / f));
  }
}

TEST_CASE("d(k) is recomputable from theta.csv and calibration.json") {
  auto c = short_fault();
  c.theta_stride = 7;
  const auto dir = scratch("audit");
  run_scenario(c, dir);
  const auto cal = load_calibration(dir / "calibration.json");

  std::map<std::string, double> d_by_t;
  {
    std::ifstream in(dir / "d.csv");
    std::string line;
    std::getline(in, line);
    CHECK(line.rfind("t,d,", 0) == 0);
    while (std::getline(in, line)) {
      const auto f = split_csv_line(line);
      d_by_t[f[0]] = std::stod(f[1]);
    }
  }
  REQUIRE(d_by_t.size() > 1000);

  std::ifstream in(dir / "theta.csv");
  std::string line;
  std::getline(in, line);
  CHECK(split_csv_line(line).size() == 25);
  std::size_t matched = 0;
  double worst = 0.0;
  while (std::getline(in, line)) {
    const auto f = split_csv_line(line);
    const auto it = d_by_t.find(f[0]);
    if (it == d_by_t.end()) continue;  // before the detector is armed
    Eigen::MatrixXd theta(2, 12);
    for (int r = 0; r < 2; ++r)
      for (int k = 0; k < 12; ++k) theta(r, k) = std::stod(f[1 + r * 12 + k]);
    worst = std::max(worst, std::abs(frobenius_distance(theta, cal.nominal.theta_star) - it->second));
    ++matched;
  }
  CHECK(matched > d_by_t.size() / 8);
  CHECK(worst <= 1e-12);

  const auto report = nlohmann::json::parse(slurp(dir / "report.json"));
  CHECK(report["thresholds"]["d_high"].get<double>() > 0.0);
  CHECK(report["config"]["disturbance"]["kind"] == "fault");
}

TEST_CASE("run ending before the disturbance reports never and warns") {
  auto c = short_fault();
  c.duration = 8.0;
  const auto res = execute_scenario(c);
  CHECK_FALSE(res.report.dt1);
  CHECK_FALSE(res.report.dt2);
  REQUIRE_FALSE(res.report.warnings.empty());
  CHECK(res.report.warnings.front().find("before the disturbance starts") != std::string::npos);
  const auto j = res.report.to_json(c);
  CHECK(j["dt1"] == "never");
}

TEST_CASE("LIF run: dt1 well under a second, dt2 reported") {
  const auto res = execute_scenario(load_scenario(profiles() / "lif_20ohm.ini"));
  REQUIRE(res.report.dt1);
  CHECK(*res.report.dt1 < 0.1);
  CHECK(res.report.final_criterion == 1);
  CHECK(res.report.dt2);
  CHECK(res.report.nominal_alarms == 0);
}

TEST_CASE("suite: table, HIF contrast, empty manifest, failure isolation") {
  const auto dir = scratch("suite");
  const std::vector<ScenarioConfig> lib_cfgs{load_scenario(profiles() / "hif_600ohm.ini"),
                                             load_scenario(profiles() / "load_1pu.ini")};
  save_library(run_library_build(lib_cfgs), dir / "library.json");

  std::vector<ScenarioConfig> cfgs;
  for (const char* n : {"lif_20ohm.ini", "hif_1000ohm.ini", "load_1p5pu.ini"}) {
    auto c = load_scenario(profiles() / n);
    c.detector.library = dir / "library.json";
    cfgs.push_back(c);
  }
  const auto res = run_suite(cfgs, dir / "out", false);
  CHECK(res.failures.empty());
  REQUIRE(res.rows.size() == 6);
  std::map<std::string, SuiteRow> rows;
  for (const auto& r : res.rows) rows[r.scenario + "/" + r.method] = r;
  CHECK(rows["hif_1000ohm/baseline"].verdict == "not_detected");
  CHECK(rows["hif_1000ohm/rarx"].verdict == "fault");
  CHECK(rows["lif_20ohm/baseline"].detected);
  CHECK(rows["lif_20ohm/rarx"].verdict == "fault");
  CHECK(rows["load_1p5pu/rarx"].verdict == "load_increase");
  const auto table = slurp(dir / "out" / "comparison.csv");
  CHECK(std::count(table.begin(), table.end(), '\n') == 7);
  for (const char* n : {"lif_20ohm", "hif_1000ohm", "load_1p5pu"}) CHECK(fs::exists(dir / "out" / n / "report.json"));

  // the HIF run crosses into the band and is classified there, not by criterion 1
  const auto hif = nlohmann::json::parse(slurp(dir / "out" / "hif_1000ohm" / "report.json"));
  CHECK(hif["final_classification"]["criterion"] == 2);
  CHECK(hif["criterion2_samples"].get<long>() > 0);

  const auto empty = run_suite({}, dir / "empty", true);
  CHECK(empty.rows.empty());
  CHECK(slurp(dir / "empty" / "comparison.csv") == "scenario,method,detected,dt1,dt2,verdict\n");

  auto bad = short_fault();
  bad.name = "broken";
  bad.calibration.file = dir / "missing.json";
  const std::vector<ScenarioConfig> mixed{bad, short_fault()};
  const auto m = run_suite(mixed, dir / "mixed", true);
  REQUIRE(m.failures.size() == 1);
  CHECK(m.failures[0].first == "broken");
  CHECK(m.failures[0].second.find("calibration") != std::string::npos);
  REQUIRE(m.rows.size() == 4);
  CHECK(m.rows[0].verdict == "error");
  CHECK(m.rows[2].verdict != "error");
}

TEST_CASE("manifest paths resolve against the manifest") {
  const auto files = read_manifest(profiles() / "suite.txt");
  REQUIRE_FALSE(files.empty());
  for (const auto& f : files) CHECK(fs::exists(f));
  CHECK_THROWS_AS(read_manifest("/nonexistent/manifest.txt"), ConfigError);
}
