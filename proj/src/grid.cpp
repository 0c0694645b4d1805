#include "rarx/grid.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include <fmt/format.h>

#include "rarx/errors.hpp"

namespace rarx {
namespace {

using Eigen::Matrix2d;
using Eigen::MatrixXd;
using Eigen::VectorXd;

const Matrix2d kI2 = Matrix2d::Identity();
// Rotation generator of the synchronous frame: q leads d.
const Matrix2d kJ = (Matrix2d() << 0.0, -1.0, 1.0, 0.0).finished();
const Mat2c kI2c = Mat2c::Identity();

Mat2c to_complex(const Matrix2d& m) { return m.cast<Complex>(); }

Mat2c checked_inverse(const Mat2c& m, const char* what) {
  const Complex det = m.determinant();
  const double scale = m.cwiseAbs().maxCoeff();
  if (!(std::abs(det) > 1e-14 * scale * scale) || !std::isfinite(std::abs(det)))
    throw SingularityError(fmt::format("{} is singular at the requested frequency", what));
  return m.inverse();
}

struct DiscreteStep {
  MatrixXd Phi, Gamma, GammaBus;
};

DiscreteStep discretize(const StateSpaceModel& m, double ts, int substeps) {
  if (!(ts > 0.0) || substeps < 1) throw ConfigError("step size must be positive");
  const double h = ts / substeps;
  const auto n = m.states();
  const MatrixXd I = MatrixXd::Identity(n, n);
  const Eigen::PartialPivLU<MatrixXd> lhs(I - 0.5 * h * m.A);
  const MatrixXd phi_h = lhs.solve(I + 0.5 * h * m.A);
  const MatrixXd gamma_h = lhs.solve(h * m.B);
  const MatrixXd gamma_bus_h = lhs.solve(h * m.E);

  DiscreteStep d{I, MatrixXd::Zero(n, m.B.cols()), MatrixXd::Zero(n, m.E.cols())};
  for (int j = 0; j < substeps; ++j) {
    d.Gamma = phi_h * d.Gamma + gamma_h;
    d.GammaBus = phi_h * d.GammaBus + gamma_bus_h;
    d.Phi = phi_h * d.Phi;
  }
  return d;
}

}  // namespace

double PerUnitBase::z_base() const {
  const double v2 = v_base * v_base;
  return convention == VoltageBaseConvention::LineToLine ? v2 / s_base : 3.0 * v2 / s_base;
}

double PerUnitBase::omega_base() const { return 2.0 * std::numbers::pi * f_base; }

void CircuitParams::validate() const {
  if (!(base.v_base > 0 && base.s_base > 0 && base.f_base > 0)) throw ConfigError("per-unit base must be positive");
  if (!(r1 > 0)) throw ConfigError("load resistance r1 must be positive");
  if (!(c1 > 0)) throw ConfigError("load capacitance c1 must be positive");
  if (r2 < 0 || r3 < 0) throw ConfigError("line resistances must be non-negative");
  if (!(l2 > 0 && l3 > 0)) throw ConfigError("line inductances must be positive");
  if (!(omega_g > 0)) throw ConfigError("grid frequency must be positive");
}

Mat2c DqImpedance::evaluate(Complex s) const {
  return (r + s * l) * kI2c + to_complex(omega_g * l * kJ);
}

void DisturbanceSpec::validate() const {
  if (!(t_start < t_end)) throw ConfigError(fmt::format("disturbance window [{}, {}) is empty", t_start, t_end));
  if (!(value > 0.0) || !std::isfinite(value))
    throw ConfigError(fmt::format("disturbance impedance parameter must be positive (got {})", value));
}

DqImpedance DisturbanceSpec::branch(double omega_g) const {
  return kind == DisturbanceKind::Fault ? DqImpedance{value, 0.0, omega_g} : DqImpedance{0.0, value, omega_g};
}

std::string to_string(DisturbanceKind kind) { return kind == DisturbanceKind::Fault ? "fault" : "load_increase"; }

GridImpedance::GridImpedance(CircuitParams params, std::optional<DqImpedance> shunt)
    : params_(std::move(params)), shunt_(std::move(shunt)) {}

Mat2c GridImpedance::evaluate(Complex s) const {
  const DqImpedance z2{params_.r2, params_.l2, params_.omega_g};
  const DqImpedance z3{params_.r3, params_.l3, params_.omega_g};
  const Mat2c Z2 = z2.evaluate(s);
  const Mat2c Z3 = z3.evaluate(s);
  if (!shunt_) return Z2 + Z3;
  const Mat2c Zi = shunt_->evaluate(s);
  return Z3 * checked_inverse(Z3 + Zi, "Z3 + Z_i") * Zi + Z2;
}

GridImpedance nominal_impedance(const CircuitParams& params) { return GridImpedance(params, std::nullopt); }

GridImpedance post_impedance(const CircuitParams& params, const DqImpedance& z_i) {
  return GridImpedance(params, z_i);
}

Mat2c pcc_impedance(const CircuitParams& params, const std::optional<DqImpedance>& shunt, Complex s) {
  const Mat2c z2 = DqImpedance{params.r2, params.l2, params.omega_g}.evaluate(s);
  const Mat2c z3 = DqImpedance{params.r3, params.l3, params.omega_g}.evaluate(s);
  Mat2c y_mid = (1.0 / params.r1 + params.c1 * s) * kI2c + to_complex(params.c1 * params.omega_g * kJ);
  y_mid += checked_inverse(z3, "Z3");
  if (shunt) y_mid += checked_inverse(shunt->evaluate(s), "Z_i");
  return z2 + checked_inverse(y_mid, "midpoint admittance");
}

PolePair fault_poles(double r_fault_pu) {
  const double re = -(20.0 / 3.0) * r_fault_pu - 0.1;
  return {{re, 1.0}, {re, -1.0}};
}

PolePair load_poles(double l_load_pu) {
  const double re = -3.0 / (200.0 * l_load_pu + 30.0);
  return {{re, 1.0}, {re, -1.0}};
}

StateSpaceModel network_model(const CircuitParams& p, const std::optional<DqImpedance>& shunt) {
  p.validate();
  const double wb = p.base.omega_base();
  const double w = p.omega_g;
  if (shunt && (shunt->r < 0 || shunt->l < 0 || (shunt->r == 0 && shunt->l == 0)))
    throw ConfigError("shunt branch must have positive impedance");
  const bool inductive = shunt && shunt->l > 0;
  const Eigen::Index n = inductive ? 6 : 4;

  StateSpaceModel m;
  m.A = MatrixXd::Zero(n, n);
  m.B = MatrixXd::Zero(n, 2);
  m.E = MatrixXd::Zero(n, 2);

  // Midpoint: C1/wb dv_m/dt = u - i3 - G v_m - w C1 J v_m [- i_sh]
  double g = 1.0 / p.r1;
  if (shunt && !inductive) g += 1.0 / shunt->r;
  m.A.block<2, 2>(0, 0) = -wb * g / p.c1 * kI2 - wb * w * kJ;
  m.A.block<2, 2>(0, 2) = -wb / p.c1 * kI2;
  m.B.block<2, 2>(0, 0) = wb / p.c1 * kI2;
  // Line 2: L3/wb di3/dt = v_m - v_bus - R3 i3 - w L3 J i3
  m.A.block<2, 2>(2, 0) = wb / p.l3 * kI2;
  m.A.block<2, 2>(2, 2) = -wb * p.r3 / p.l3 * kI2 - wb * w * kJ;
  m.E.block<2, 2>(2, 0) = -wb / p.l3 * kI2;
  m.state_names = {"v_m_d", "v_m_q", "i3_d", "i3_q"};
  if (inductive) {
    // Shunt: Li/wb di_sh/dt = v_m - Ri i_sh - w Li J i_sh
    m.A.block<2, 2>(0, 4) = -wb / p.c1 * kI2;
    m.A.block<2, 2>(4, 0) = wb / shunt->l * kI2;
    m.A.block<2, 2>(4, 4) = -wb * shunt->r / shunt->l * kI2 - wb * w * kJ;
    m.state_names.insert(m.state_names.end(), {"i_sh_d", "i_sh_q"});
  }
  m.C = MatrixXd::Zero(2, n);
  m.C.block<2, 2>(0, 0) = kI2;
  m.D = MatrixXd::Zero(2, 2);
  m.series_z = p.r2 * kI2 + w * p.l2 * kJ;
  m.x0 = VectorXd::Zero(n);
  return m;
}

StateSpaceModel simplified_post_model(const CircuitParams& p, const DqImpedance& z_i) {
  p.validate();
  if (z_i.r < 0 || z_i.l < 0) throw ConfigError("shunt branch must be passive");
  const double wb = p.base.omega_base();
  const double w = p.omega_g;
  const double lsum = p.l3 + z_i.l;
  const double alpha = z_i.l / lsum;
  StateSpaceModel m;
  m.A = wb / lsum * (-(z_i.r + p.r3) * kI2 - w * lsum * kJ);
  m.B = wb / lsum * (z_i.r * (1.0 - alpha) - p.r3 * alpha) * kI2;
  m.E = MatrixXd::Zero(2, 2);
  m.C = -kI2;
  m.D = (1.0 - alpha) * kI2;
  m.x0 = VectorXd::Zero(2);
  m.state_names = {"x_d", "x_q"};
  return m;
}

Eigen::VectorXd operating_point(const StateSpaceModel& m, const Vec2& i_inj, const Vec2& v_bus) {
  const Eigen::FullPivLU<MatrixXd> lu(m.A);
  if (!lu.isInvertible()) throw SingularityError("state matrix is singular, no unique operating point");
  return lu.solve(-(m.B * i_inj + m.E * v_bus));
}

std::vector<Complex> numeric_poles(const StateSpaceModel& model) {
  const Eigen::EigenSolver<MatrixXd> es(model.A, false);
  if (es.info() != Eigen::Success) throw NumericalError("eigenvalue solver failed");
  std::vector<Complex> poles(es.eigenvalues().begin(), es.eigenvalues().end());
  return poles;
}

PoleComparison compare_poles(const CircuitParams& params, const DisturbanceSpec& disturbance) {
  disturbance.validate();
  PoleComparison out;
  out.kind = disturbance.kind;
  out.value = disturbance.value;
  const bool fault = disturbance.kind == DisturbanceKind::Fault;
  out.formula = fault ? fault_poles(disturbance.value) : load_poles(disturbance.value);
  auto poles = numeric_poles(simplified_post_model(params, disturbance.branch(params.omega_g)));
  if (poles.size() != 2) throw NumericalError("simplified model must have exactly two poles");
  const double wb = params.base.omega_base();
  for (auto& p : poles) p /= wb;
  if (poles[0].imag() < poles[1].imag()) std::swap(poles[0], poles[1]);
  out.numeric = {poles[0], poles[1]};
  out.rel_error = std::max(std::abs(out.numeric.upper - out.formula.upper) / std::abs(out.formula.upper),
                           std::abs(out.numeric.lower - out.formula.lower) / std::abs(out.formula.lower));
  return out;
}

namespace {

// Carries shared states over by name; states absent from the source start at 0.
VectorXd map_state(const StateSpaceModel& from, const StateSpaceModel& to, const VectorXd& x) {
  VectorXd y = VectorXd::Zero(to.states());
  for (std::size_t j = 0; j < to.state_names.size(); ++j) {
    for (std::size_t i = 0; i < from.state_names.size(); ++i) {
      if (from.state_names[i] == to.state_names[j]) y(static_cast<Eigen::Index>(j)) = x(static_cast<Eigen::Index>(i));
    }
  }
  return y;
}

}  // namespace

std::vector<DqSample> simulate(const SimulationConfig& cfg) {
  cfg.circuit.validate();
  if (!(cfg.ts > 0.0)) throw ConfigError("sampling period must be positive");
  if (!(cfg.duration > 0.0)) throw ConfigError("duration must be positive");
  if (cfg.noise_std < 0.0) throw ConfigError("noise std must be non-negative");
  if (cfg.disturbance) cfg.disturbance->validate();

  const StateSpaceModel nominal = network_model(cfg.circuit, std::nullopt);
  const DiscreteStep step_nominal = discretize(nominal, cfg.ts, cfg.substeps);
  std::optional<StateSpaceModel> disturbed_model;
  std::optional<DiscreteStep> step_disturbed;
  long k_on = -1, k_off = -1;
  if (cfg.disturbance) {
    disturbed_model = network_model(cfg.circuit, cfg.disturbance->branch(cfg.circuit.omega_g));
    step_disturbed = discretize(*disturbed_model, cfg.ts, cfg.substeps);
    k_on = static_cast<long>(std::ceil(cfg.disturbance->t_start / cfg.ts - 1e-9));
    k_off = static_cast<long>(std::ceil(cfg.disturbance->t_end / cfg.ts - 1e-9));
  }

  const long n = std::max(1L, std::lround(cfg.duration / cfg.ts));
  std::optional<RbsGenerator> rbs;
  if (cfg.excitation) rbs.emplace(*cfg.excitation, 1.0 / cfg.ts);
  std::mt19937_64 noise_engine(cfg.noise_seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  auto measure = [&](const Vec2& x) -> Vec2 {
    if (cfg.noise_std == 0.0) return x;
    const double a = noise(noise_engine);
    const double b = noise(noise_engine);
    return x + cfg.noise_std * Vec2(a, b);
  };

  VectorXd x = operating_point(nominal, cfg.i_op, cfg.v_bus);
  Vec2 u_prev = cfg.i_op;
  bool disturbed = false;
  std::vector<DqSample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (long k = 0; k < n; ++k) {
    const double t = static_cast<double>(k) * cfg.ts;
    const bool want = step_disturbed && k >= k_on && k < k_off;
    if (want != disturbed) {
      x = want ? map_state(nominal, *disturbed_model, x) : map_state(*disturbed_model, nominal, x);
      disturbed = want;
    }
    const StateSpaceModel& model = disturbed ? *disturbed_model : nominal;
    const DiscreteStep& step = disturbed ? *step_disturbed : step_nominal;

    Vec2 u = cfg.i_op;
    if (cfg.command_offset) u += cfg.command_offset(t);
    if (rbs) u += rbs->next();

    const Vec2 v = model.C * x + model.series_z * u_prev;
    DqSample s;
    s.t = t;
    s.v_dq = measure(v);
    s.i_dq = measure(u);
    out.push_back(s);

    x = step.Phi * x + step.Gamma * u + step.GammaBus * cfg.v_bus;
    u_prev = u;
    if (!x.allFinite()) throw NumericalError(fmt::format("integration diverged at t = {} s", t));
  }
  return out;
}

Mat2c discrete_transfer(const CircuitParams& params, const std::optional<DqImpedance>& shunt, double ts,
                        int substeps, Complex z) {
  const StateSpaceModel m = network_model(params, shunt);
  const DiscreteStep d = discretize(m, ts, substeps);
  const auto n = m.states();
  const Eigen::MatrixXcd zI_minus_phi = z * Eigen::MatrixXcd::Identity(n, n) - d.Phi.cast<Complex>();
  const Eigen::MatrixXcd sol = zI_minus_phi.partialPivLu().solve(d.Gamma.cast<Complex>());
  return m.C.cast<Complex>() * sol + to_complex(m.series_z) / z;
}

}  // namespace rarx
