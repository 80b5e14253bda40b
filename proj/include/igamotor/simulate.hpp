#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "igamotor/machine.hpp"
#include "igamotor/solver.hpp"

namespace igamotor::machine {

// Interface harmonics compatible with the quarter model: with two pole pairs
// and an antiperiodic cut, only circumferential orders n = 2 (mod 4) carry a
// nonzero trace, so the Lagrange multiplier space is restricted to them.
inline std::vector<int> machine_harmonics(int count = 26) {
  std::vector<int> h(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) h[static_cast<std::size_t>(i)] = 2 + 4 * i;
  return h;
}

// Load vector of a uniform out-of-plane current density `jden` supported on a
// single patch, integrated with the system's cached quadrature.
inline VecX patch_current_rhs(const assembly::System& sys, int patch, double jden) {
  VecX b = VecX::Zero(sys.num_dofs());
  for (const auto& qp : sys.quad_points()) {
    if (qp.patch != patch) continue;
    for (std::size_t a = 0; a < qp.dofs.size(); ++a)
      if (qp.dofs[a] >= 0)
        b[qp.dofs[a]] +=
            qp.signs[a] * qp.N[static_cast<Eigen::Index>(a)] * jden * qp.w;
  }
  return b;
}

struct SimulationOptions {
  RotorSpans spans{};
  Excitation excitation{};
  std::vector<int> harmonics = machine_harmonics();
  int coupling_quad = 12;  // quadrature points per knot span on the interface
  double axial_length_mm = Fixed::kLength;  // stack length for torque scaling
  solver::NewtonOptions newton{};
};

// Orientation conventions. The rotor position beta is the interface rotation
// angle fed to the harmonic coupling, and the phase currents use the same
// beta, so current wave and rotor spin synchronously; the equivalent rigid
// rotation of the rotor mesh is -beta (pinned by the rotation-consistency
// test). The winding alignment offset places the phase-A belt axis (belt
// center 15 degrees mechanical = 30 electrical) so that the current wave
// rides the rotor quadrature axis at zero operating angle, which maximizes
// mean torque and makes it positive at the initial design.
inline constexpr double kAlignElec = pi / 6.0;
// The quarter model carries a quarter of the machine's axial torque.
inline constexpr double kQuarterToFull = 4.0;

struct SweepResult {
  std::vector<double> angles;   // mechanical angles [rad]
  std::vector<double> torque;   // full-machine torque [N m]
  std::vector<int> iterations;  // Newton iterations per angle
  std::vector<VecX> states;     // converged coupled states per angle

  double mean_torque() const {
    double s = 0.0;
    for (double t : torque) s += t;
    return torque.empty() ? 0.0 : s / static_cast<double>(torque.size());
  }
  // Population standard deviation: the torque-ripple measure.
  double torque_stddev() const {
    if (torque.empty()) return 0.0;
    const double m = mean_torque();
    double s = 0.0;
    for (double t : torque) s += (t - m) * (t - m);
    return std::sqrt(s / static_cast<double>(torque.size()));
  }
};

// One machine design instantiated and ready to solve: rotor and stator
// discretizations, their magnetostatic systems, the harmonic trace coupling
// and the phase current sources. Rotor surface offsets can be re-applied
// without rebuilding; parameter changes require a fresh instance.
class MachineSimulation {
 public:
  MachineSimulation(const Parameters& p, const materials::BHCurve* bh,
                    SimulationOptions opt = {})
      : params_(p),
        opt_(std::move(opt)),
        rotor_(build_rotor(p, opt_.spans)),
        stator_(build_stator()),
        rotor_dofs_(rotor_.geom, rotor_.dirichlet, rotor_.links),
        stator_dofs_(stator_.geom, stator_.dirichlet, stator_.links),
        rotor_sys_(&rotor_.geom, &rotor_dofs_, rotor_physics(rotor_, opt_.excitation, bh)),
        stator_sys_(&stator_.geom, &stator_dofs_,
                    stator_physics(stator_, opt_.excitation, bh)) {
    const double jden =
        opt_.excitation.current * opt_.excitation.turns / stator_.a_coil;
    for (int k = 0; k < 3; ++k)
      phase_rhs_[static_cast<std::size_t>(k)] = patch_current_rhs(
          stator_sys_, stator_.coil_patch[static_cast<std::size_t>(k)],
          stator_.coil_sign[static_cast<std::size_t>(k)] * jden);
    rotor_rhs_ = rotor_sys_.assemble_rhs();
    g_rt_ = assembly::harmonic_coupling(rotor_.geom, rotor_dofs_, rotor_.gap_sides,
                                        opt_.harmonics, opt_.coupling_quad);
    g_st_ = assembly::harmonic_coupling(stator_.geom, stator_dofs_, stator_.gap_sides,
                                        opt_.harmonics, opt_.coupling_quad);
    coupled_.emplace(&rotor_sys_, &stator_sys_, g_rt_, g_st_, opt_.harmonics);
  }

  MachineSimulation(const MachineSimulation&) = delete;
  MachineSimulation& operator=(const MachineSimulation&) = delete;

  const Parameters& params() const { return params_; }
  const SimulationOptions& options() const { return opt_; }
  const RotorDomain& rotor() const { return rotor_; }
  const StatorDomain& stator() const { return stator_; }
  const assembly::DofMap& rotor_dofs() const { return rotor_dofs_; }
  const assembly::DofMap& stator_dofs() const { return stator_dofs_; }
  const assembly::System& rotor_system() const { return rotor_sys_; }
  const assembly::System& stator_system() const { return stator_sys_; }
  solver::CoupledProblem& problem() { return *coupled_; }
  const solver::CoupledProblem& problem() const { return *coupled_; }
  const VecX& rotor_source() const { return rotor_rhs_; }
  const VecX& phase_source(int k) const {
    return phase_rhs_[static_cast<std::size_t>(k)];
  }
  double axial_length() const { return opt_.axial_length_mm * 1e-3; }

  // Re-applies radial surface offsets on the rotor. Validation is the
  // authoritative feasibility check: boundary-layer folds can hide between
  // quadrature points, so it runs before the cache rebuild. The interface
  // trace (ring outer row) is fixed, so the coupling matrices are reused.
  void set_offsets(const VecX& d) {
    apply_offsets(&rotor_, d);
    rotor_.geom.validate();
    rotor_sys_.rebuild_cache();
    rotor_rhs_ = rotor_sys_.assemble_rhs();
  }

  // Moves a single rotor control point (finite-difference probing hook).
  // Skips validation: probes are expected to be vanishingly small.
  void set_rotor_node(int node, const Vec2& pos) {
    rotor_.geom.set_node_position(node, pos);
    rotor_sys_.rebuild_cache();
    rotor_rhs_ = rotor_sys_.assemble_rhs();
  }

  double electrical_offset() const {
    return deg(params_.operating_angle()) + kAlignElec;
  }

  // Three-phase stator load at rotor angle beta.
  VecX stator_source(double beta) const {
    const auto s = phase_multipliers(opt_.excitation, electrical_offset(), beta);
    VecX b = VecX::Zero(stator_sys_.num_dofs());
    for (int k = 0; k < 3; ++k)
      b += s[static_cast<std::size_t>(k)] * phase_rhs_[static_cast<std::size_t>(k)];
    return b;
  }

  // Derivative of the stator load with respect to the operating angle
  // (radians of electrical offset).
  VecX stator_source_dphi(double beta) const {
    const auto s = phase_multipliers_dphi(opt_.excitation, electrical_offset(), beta);
    VecX b = VecX::Zero(stator_sys_.num_dofs());
    for (int k = 0; k < 3; ++k)
      b += s[static_cast<std::size_t>(k)] * phase_rhs_[static_cast<std::size_t>(k)];
    return b;
  }

  // Configures the coupled problem for rotor angle beta and solves it,
  // starting from *x (warm start across a sweep).
  solver::NewtonReport solve(double beta, VecX* x) {
    prepare(beta);
    return solver::newton_solve(*coupled_, x, opt_.newton);
  }

  // Sets angle and sources without solving (used by sensitivity replays).
  void prepare(double beta) {
    coupled_->set_angle(beta);
    coupled_->set_sources(rotor_rhs_, stator_source(beta));
  }

  // Full-machine torque of a converged state.
  double torque(const VecX& x) const {
    return kQuarterToFull * coupled_->torque(x, axial_length());
  }

  // Gradient of the reported torque with respect to the coupled state.
  VecX torque_gradient(const VecX& x) const {
    return kQuarterToFull * coupled_->torque_state_gradient(x, axial_length());
  }

  SweepResult sweep(const std::vector<double>& angles) {
    SweepResult r;
    VecX x = VecX::Zero(coupled_->size());
    for (double b : angles) {
      const auto rep = solve(b, &x);
      if (!rep.converged)
        throw SolverError("sweep solve did not converge at angle " + std::to_string(b));
      r.angles.push_back(b);
      r.torque.push_back(torque(x));
      r.iterations.push_back(rep.iterations);
      r.states.push_back(x);
    }
    return r;
  }

  // Default operating sweep: one mechanical degree per step over 30 degrees
  // (one electrical period of the slotting pattern under two pole pairs).
  static std::vector<double> default_sweep_angles(int count = 30) {
    std::vector<double> a(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) a[static_cast<std::size_t>(i)] = deg(double(i));
    return a;
  }

 private:
  Parameters params_;
  SimulationOptions opt_;
  RotorDomain rotor_;
  StatorDomain stator_;
  assembly::DofMap rotor_dofs_;
  assembly::DofMap stator_dofs_;
  assembly::System rotor_sys_;
  assembly::System stator_sys_;
  std::array<VecX, 3> phase_rhs_;
  VecX rotor_rhs_;
  SpMat g_rt_, g_st_;
  std::optional<solver::CoupledProblem> coupled_;
};

}  // namespace igamotor::machine
