#include "rarx/detector.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "rarx/errors.hpp"

namespace rarx {

NominalPredictor calibrate_nominal(std::span<const ThetaSnapshot> stream, std::size_t window) {
  if (window == 0 || stream.empty() || window > stream.size())
    throw InsufficientDataError(
        fmt::format("calibration window of {} snapshots needs at least that many (have {})", window, stream.size()));
  const auto first = stream.size() - window;
  NominalPredictor out;
  out.theta_star = Eigen::MatrixXd::Zero(stream[first].theta.rows(), stream[first].theta.cols());
  for (std::size_t i = first; i < stream.size(); ++i) {
    if (stream[i].theta.rows() != out.theta_star.rows() || stream[i].theta.cols() != out.theta_star.cols())
      throw DimensionError("theta snapshots change shape");
    out.theta_star += stream[i].theta;
  }
  out.theta_star /= static_cast<double>(window);
  out.calibration_window = window;
  out.calibrated_at = stream.back().t;
  return out;
}

void Thresholds::validate() const {
  if (!(d_low > 0.0 && d_low < d_high && std::isfinite(d_high)))
    throw ConfigError(fmt::format("thresholds need 0 < d_low < d_high (got d_low={}, d_high={})", d_low, d_high));
}

Thresholds thresholds_from_nominal(std::span<const double> nominal_d, const ThresholdRule& rule) {
  if (nominal_d.empty()) throw InsufficientDataError("no nominal d samples for threshold calibration");
  if (!(rule.low_factor > 0.0 && rule.high_factor > rule.low_factor))
    throw ConfigError("threshold rule needs 0 < low_factor < high_factor");
  const double peak = *std::max_element(nominal_d.begin(), nominal_d.end());
  if (!(peak > 0.0) || !std::isfinite(peak))
    throw NumericalError(fmt::format("nominal d peak {} cannot anchor thresholds", peak));
  return {rule.high_factor * peak, rule.low_factor * peak};
}

double frobenius_distance(const Eigen::MatrixXd& theta, const Eigen::MatrixXd& theta_star) {
  if (theta.rows() != theta_star.rows() || theta.cols() != theta_star.cols())
    throw DimensionError(fmt::format("theta is {}x{} but theta* is {}x{}", theta.rows(), theta.cols(),
                                     theta_star.rows(), theta_star.cols()));
  return (theta - theta_star).norm();
}

std::string to_string(SignatureLabel label) { return label == SignatureLabel::Fault ? "fault" : "load_increase"; }

SignatureLabel signature_label_from_string(const std::string& text) {
  if (text == "fault") return SignatureLabel::Fault;
  if (text == "load_increase") return SignatureLabel::LoadIncrease;
  throw ConfigError(fmt::format("unknown signature label '{}'", text));
}

double SignatureLibrary::max_peak_d() const {
  double m = 0.0;
  for (const auto& s : signatures) m = std::max(m, s.peak_d);
  return m;
}

void to_json(nlohmann::json& j, const SignatureLibrary& lib) {
  j = nlohmann::json::object();
  j["version"] = lib.version;
  j["order"] = lib.order;
  j["base"] = {{"v_base", lib.base.v_base},
               {"s_base", lib.base.s_base},
               {"f_base", lib.base.f_base},
               {"convention", lib.base.convention == VoltageBaseConvention::LineToLine ? "line_to_line" : "phase"}};
  auto& arr = j["signatures"] = nlohmann::json::array();
  for (const auto& s : lib.signatures) {
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(s.delta_theta.size()));
    for (Eigen::Index r = 0; r < s.delta_theta.rows(); ++r)
      for (Eigen::Index c = 0; c < s.delta_theta.cols(); ++c) flat.push_back(s.delta_theta(r, c));
    arr.push_back({{"label", to_string(s.label)},
                   {"rows", s.delta_theta.rows()},
                   {"cols", s.delta_theta.cols()},
                   {"delta_theta", flat},
                   {"source_scenario", s.source_scenario},
                   {"peak_d", s.peak_d}});
  }
}

void from_json(const nlohmann::json& j, SignatureLibrary& lib) {
  try {
    lib.version = j.at("version").get<int>();
    if (lib.version != 1) throw ConfigError(fmt::format("unsupported library version {}", lib.version));
    lib.order = j.at("order").get<int>();
    const auto& b = j.at("base");
    lib.base.v_base = b.at("v_base").get<double>();
    lib.base.s_base = b.at("s_base").get<double>();
    lib.base.f_base = b.at("f_base").get<double>();
    lib.base.convention = b.at("convention").get<std::string>() == "phase" ? VoltageBaseConvention::Phase
                                                                          : VoltageBaseConvention::LineToLine;
    lib.signatures.clear();
    for (const auto& e : j.at("signatures")) {
      Signature s;
      s.label = signature_label_from_string(e.at("label").get<std::string>());
      const auto rows = e.at("rows").get<Eigen::Index>();
      const auto cols = e.at("cols").get<Eigen::Index>();
      const auto flat = e.at("delta_theta").get<std::vector<double>>();
      if (rows <= 0 || cols <= 0 || static_cast<std::size_t>(rows * cols) != flat.size())
        throw DimensionError("signature delta_theta size does not match rows x cols");
      s.delta_theta.resize(rows, cols);
      for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) s.delta_theta(r, c) = flat[static_cast<std::size_t>(r * cols + c)];
      s.source_scenario = e.value("source_scenario", "");
      s.peak_d = e.value("peak_d", 0.0);
      lib.signatures.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("malformed signature library: {}", e.what()));
  }
}

void save_library(const SignatureLibrary& lib, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError(fmt::format("cannot write {}", path.string()));
  out << nlohmann::json(lib).dump(2) << '\n';
}

SignatureLibrary load_library(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot read {}", path.string()));
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
  return j.get<SignatureLibrary>();
}

Thresholds widen_for_library(const Thresholds& base, const SignatureLibrary& library, double margin) {
  Thresholds out = base;
  out.d_high = std::max(base.d_high, margin * library.max_peak_d());
  return out;
}

double cosine_similarity(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw DimensionError("cosine similarity needs equal shapes");
  const double na = a.norm();
  const double nb = b.norm();
  if (!(na > 0.0) || !(nb > 0.0)) return 0.0;
  return (a.array() * b.array()).sum() / (na * nb);
}

SignatureMatch match_signature(const Eigen::MatrixXd& delta_theta, const SignatureLibrary& library,
                               double match_floor) {
  if (library.empty()) throw EmptyLibraryError("signature library is empty");
  SignatureMatch best;
  best.similarity = -2.0;
  for (std::size_t i = 0; i < library.signatures.size(); ++i) {
    const double s = cosine_similarity(delta_theta, library.signatures[i].delta_theta);
    if (s > best.similarity) {
      best.similarity = s;
      best.index = i;
    }
  }
  if (best.similarity >= match_floor) best.label = library.signatures[best.index].label;
  return best;
}

std::string to_string(Verdict verdict) {
  switch (verdict) {
    case Verdict::Normal: return "normal";
    case Verdict::FaultDetected: return "fault";
    case Verdict::LoadIncreaseDetected: return "load_increase";
    case Verdict::Unclassified: return "unclassified";
  }
  return "unknown";
}

DetectionEvent classify(const Eigen::MatrixXd& theta, const NominalPredictor& nominal, const Thresholds& thresholds,
                        const SignatureLibrary& library, double match_floor, double t) {
  if (!nominal.calibrated()) throw SequencingError("nominal predictor is not calibrated");
  DetectionEvent ev;
  ev.t = t;
  ev.d = frobenius_distance(theta, nominal.theta_star);
  if (ev.d > thresholds.d_high) {
    ev.verdict = Verdict::FaultDetected;
    ev.criterion = 1;
  } else if (ev.d > thresholds.d_low) {
    ev.criterion = 2;
    ev.verdict = Verdict::Unclassified;
    if (!library.empty()) {
      ev.matched = match_signature(theta - nominal.theta_star, library, match_floor);
      if (ev.matched->label)
        ev.verdict = *ev.matched->label == SignatureLabel::Fault ? Verdict::FaultDetected
                                                                 : Verdict::LoadIncreaseDetected;
    }
  } else {
    ev.verdict = Verdict::Normal;
  }
  return ev;
}

std::vector<Verdict> debounce(std::span<const Verdict> raw, int hold) {
  std::vector<Verdict> out(raw.begin(), raw.end());
  if (hold <= 1 || raw.empty()) return out;
  Verdict current = raw.front();
  Verdict candidate = current;
  int run = 0;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (raw[i] == current) {
      run = 0;
    } else {
      if (run > 0 && raw[i] == candidate) {
        ++run;
      } else {
        candidate = raw[i];
        run = 1;
      }
      if (run >= hold) {
        current = candidate;
        run = 0;
      }
    }
    out[i] = current;
  }
  return out;
}

namespace {

template <class Pred>
void first_crossing(std::span<const TimedValue> series, double t_from, Pred pred, int hold, std::optional<double>& raw,
                    std::optional<double>& held) {
  int run = 0;
  for (const auto& s : series) {
    if (s.t < t_from) continue;
    if (pred(s.value)) {
      if (!raw) raw = s.t - t_from;
      if (++run >= std::max(hold, 1)) {
        held = s.t - t_from;
        return;
      }
    } else {
      run = 0;
    }
  }
}

}  // namespace

DetectionTimes detection_times(std::span<const TimedValue> d_series, double t_start, double t_end,
                               const Thresholds& thresholds, OnsetThreshold onset, int hold) {
  DetectionTimes out;
  const double level = onset == OnsetThreshold::High ? thresholds.d_high : thresholds.d_low;
  first_crossing(d_series, t_start, [&](double d) { return d > level; }, hold, out.dt1, out.dt1_debounced);
  first_crossing(d_series, t_end, [&](double d) { return d <= thresholds.d_low; }, hold, out.dt2,
                 out.dt2_debounced);
  return out;
}

SignatureLibrary build_library(std::span<const LibraryRun> runs, const Thresholds& thresholds, int order,
                               const PerUnitBase& base) {
  SignatureLibrary lib;
  lib.order = order;
  lib.base = base;
  for (const auto& run : runs) {
    if (!run.nominal.calibrated()) throw SequencingError(fmt::format("run '{}' has no nominal predictor", run.source));
    const double seg_from = run.t_end - kSignatureSegment * (run.t_end - run.t_start);
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(run.nominal.theta_star.rows(), run.nominal.theta_star.cols());
    std::size_t count = 0;
    double peak = 0.0;
    for (const auto& snap : run.trajectory) {
      if (snap.t < run.t_start || snap.t >= run.t_end) continue;
      peak = std::max(peak, frobenius_distance(snap.theta, run.nominal.theta_star));
      if (snap.t >= seg_from) {
        sum += snap.theta;
        ++count;
      }
    }
    if (!(peak > thresholds.d_low))
      throw InsufficientDataError(fmt::format(
          "run '{}' rejected: d never exceeds d_low = {:.3g} during the disturbance (peak {:.3g})", run.source,
          thresholds.d_low, peak));
    if (count == 0) throw InsufficientDataError(fmt::format("run '{}' has no samples in its steady segment", run.source));
    Eigen::MatrixXd delta = sum / static_cast<double>(count) - run.nominal.theta_star;
    const double n = delta.norm();
    if (!(n > 0.0)) throw NumericalError(fmt::format("run '{}' produced a zero signature", run.source));
    lib.signatures.push_back({run.label, delta / n, run.source, peak});
  }
  return lib;
}

}  // namespace rarx
