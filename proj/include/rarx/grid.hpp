#pragma once

#include <complex>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rarx/signal.hpp"

namespace rarx {

using Complex = std::complex<double>;
using Mat2c = Eigen::Matrix2cd;

/// How the voltage base is read when forming Z_base.
enum class VoltageBaseConvention {
  LineToLine,  // Z_base = V^2 / S          (380 V, 1.5 kVA -> 96.27 ohm)
  Phase,       // Z_base = 3 V^2 / S
};

struct PerUnitBase {
  double v_base = 380.0;   // V
  double s_base = 1500.0;  // VA
  double f_base = 50.0;    // Hz
  VoltageBaseConvention convention = VoltageBaseConvention::LineToLine;

  double z_base() const;
  double omega_base() const;
  double ohms_to_pu(double ohms) const { return ohms / z_base(); }
  /// Inductance as reactance at base frequency, in p.u.
  double henries_to_pu(double henries) const { return omega_base() * henries / z_base(); }
};

/// Test-circuit parameters in p.u. Inductances and capacitances are given as
/// reactance / susceptance at base frequency.
///
/// Topology: the converter injects at the PCC; line 1 (R2, L2) runs from the
/// PCC to the midpoint M; line 2 (R3, L3) runs from M to the infinite bus.
/// The load R1 || C1 and the switched disturbance branch both hang off M.
struct CircuitParams {
  PerUnitBase base;
  double r1 = 2.0, c1 = 0.05;
  double r2 = 0.015, l2 = 0.15;
  double r3 = 0.015, l3 = 0.15;
  // LCL filter values are carried for reference; the converter is an ideal
  // current source.
  double lf1 = 0.08, lf2 = 0.05, cf = 0.08;
  double omega_g = 1.0;  // grid frequency in p.u. of the base frequency

  void validate() const;
};

/// Series R-L branch in the synchronous frame,
///   Z(s) = [[R + sL, -w L], [w L, R + sL]],
/// with s the Laplace variable normalized by the base angular frequency and
/// w = omega_g in p.u.
struct DqImpedance {
  double r = 0.0;
  double l = 0.0;
  double omega_g = 1.0;

  Mat2c evaluate(Complex s) const;
};

enum class DisturbanceKind { Fault, LoadIncrease };

/// Switched branch from the line midpoint to ground, active on
/// [t_start, t_end). `value` is R_fault (Fault) or L_load (LoadIncrease), p.u.
struct DisturbanceSpec {
  DisturbanceKind kind = DisturbanceKind::Fault;
  double value = 0.0;
  double t_start = 10.0;
  double t_end = 20.0;

  void validate() const;
  DqImpedance branch(double omega_g) const;
};

std::string to_string(DisturbanceKind kind);

/// 2x2 dq impedance built from the line branches, optionally with a shunt
/// at the midpoint. Evaluation at a p.u. Laplace value.
class GridImpedance {
 public:
  GridImpedance(CircuitParams params, std::optional<DqImpedance> shunt);

  /// Throws SingularityError if Z3 + Z_i is singular at `s`.
  Mat2c evaluate(Complex s) const;

 private:
  CircuitParams params_;
  std::optional<DqImpedance> shunt_;
};

/// Z2 + Z3.
GridImpedance nominal_impedance(const CircuitParams& params);
/// (Z3^-1 + Z_i^-1)^-1 + Z2, evaluated as Z3 (Z3 + Z_i)^-1 Z_i + Z2.
GridImpedance post_impedance(const CircuitParams& params, const DqImpedance& z_i);

/// Impedance seen by the converter at the PCC including the R1 || C1 load at
/// the midpoint: Z2(s) + (Z3(s)^-1 + Y_load(s) + Z_i(s)^-1)^-1.
Mat2c pcc_impedance(const CircuitParams& params, const std::optional<DqImpedance>& shunt, Complex s);

struct PolePair {
  Complex upper;
  Complex lower;
};

/// Closed-form post-fault poles for the simplified circuit (R1, C1 removed)
/// with the default line values (R = 0.015, L = 0.15 p.u.), in p.u. frequency
/// (s / omega_base):
///   s = -(20/3) R_fault - 1/10 +- j
PolePair fault_poles(double r_fault_pu);
/// Closed-form post-load-increase poles, same normalization:
///   s = -3 / (200 L_load + 30) +- j
PolePair load_poles(double l_load_pu);

/// Continuous-time dq model
///   dx/dt = A x + B u + E v_bus,   y = C x + D u
/// with time in seconds and u the injected current.
struct StateSpaceModel {
  Eigen::MatrixXd A, B, C, D, E;
  /// Static part R2 + w L2 J of line 1, in series between the PCC and the
  /// modelled network. The PCC voltage is y + series_z u.
  Eigen::Matrix2d series_z = Eigen::Matrix2d::Zero();
  Eigen::VectorXd x0;
  std::vector<std::string> state_names;

  Eigen::Index states() const { return A.rows(); }
};

/// Full test circuit seen through line 1. States are the midpoint voltage
/// and the line-2 current {v_m, i3}, plus the shunt current {i_sh} when the
/// disturbance branch is inductive (a purely resistive branch only adds a
/// conductance at M). Output y is the midpoint voltage. Line 1 carries the
/// injected current, so it contributes only `series_z` between sampling
/// edges.
StateSpaceModel network_model(const CircuitParams& params, const std::optional<DqImpedance>& shunt);

/// Simplified post-disturbance circuit used for the pole analysis: R1, C1
/// removed, line 1 carries the injected current, so the only dynamics are
/// those of line 2 against the shunt branch. Output is the shunt-branch
/// current. The state is i3 - alpha i with alpha = L_i / (L3 + L_i), which
/// keeps the realization proper when the shunt is inductive.
StateSpaceModel simplified_post_model(const CircuitParams& params, const DqImpedance& z_i);

/// Closed-form versus eigenvalue poles of simplified_post_model for one
/// disturbance, both in p.u. frequency. `numeric` is sorted upper then lower.
struct PoleComparison {
  DisturbanceKind kind = DisturbanceKind::Fault;
  double value = 0.0;  // p.u.
  PolePair formula;
  PolePair numeric;
  double rel_error = 0.0;  // max over the pair of |numeric - formula| / |formula|
};

PoleComparison compare_poles(const CircuitParams& params, const DisturbanceSpec& disturbance);

/// Equilibrium state of `model` for constant input and bus voltage.
Eigen::VectorXd operating_point(const StateSpaceModel& model, const Vec2& i_inj, const Vec2& v_bus);

/// Eigenvalues of A (rad/s).
std::vector<Complex> numeric_poles(const StateSpaceModel& model);

struct SimulationConfig {
  CircuitParams circuit;
  std::optional<DisturbanceSpec> disturbance;
  std::optional<RbsConfig> excitation;
  double duration = 30.0;
  double ts = 2e-4;
  int substeps = 1;
  double noise_std = 1e-4;
  std::uint64_t noise_seed = 7;
  Vec2 i_op{0.5, 0.0};
  Vec2 v_bus{1.0, 0.0};
  /// Extra additive current command, e.g. a test step.
  std::function<Vec2(double)> command_offset;
};

/// Trapezoidal integration of the circuit with zero-order-hold input.
///
/// Sample k is taken at the end of a hold interval, before the converter
/// applies its next command: it reports the PCC voltage
/// v_m(t_k) + series_z u(k-1) and the current command u(k) held over
/// [t_k, t_k + ts). The topology switches at the first sample with
/// t >= t_start (and back at t_end). Midpoint voltage and line-2 current carry
/// over; an inductive shunt starts from zero current and is interrupted at
/// clearing. Starts at the equilibrium for i_op.
std::vector<DqSample> simulate(const SimulationConfig& config);

/// Discrete-time transfer matrix from current command to sampled PCC voltage
/// used by simulate(): C (zI - Phi)^-1 Gamma + series_z z^-1.
Mat2c discrete_transfer(const CircuitParams& params, const std::optional<DqImpedance>& shunt, double ts,
                        int substeps, Complex z);

}  // namespace rarx
