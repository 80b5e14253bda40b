#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <utility>
#include <vector>

#include "igamotor/simulate.hpp"

namespace igamotor::machine {

// Derivative of the torque with respect to every rotor control-point
// position, one row per geometry node. Computed by contracting the adjoint
// field with the shape derivative of the rotor residual: moving node k in
// direction e induces the mapping velocity V = R_k e, under which
//   d(grad N) = -(grad N . e) grad R_k      and   d(detJ)/detJ = grad R_k . e,
// so with gu = grad u, gg = grad gamma, gk = grad R_k at a quadrature point,
//   -gamma^T d(K u) = w [ -nu (gu.gg) gk + nu (gk.gu) gg + nu (gk.gg) gu
//                         + nu'(B)/B (gu.gg)(gk.gu) gu ]
// and the remanence load of magnet patches adds
//   +gamma^T db    = w [ nu (gg.m) gk - nu (gk.m) gg ],    m = remanence-perp.
using ShapeGradient = Eigen::Matrix<double, Eigen::Dynamic, 2>;

inline ShapeGradient torque_shape_gradient(const assembly::System& sys, const VecX& u,
                                           const VecX& gamma) {
  ShapeGradient dT = ShapeGradient::Zero(sys.geometry().num_nodes, 2);
  for (const auto& qp : sys.quad_points()) {
    const auto& ph = sys.physics()[static_cast<std::size_t>(qp.patch)];
    const Vec2 gu = sys.gradient_at(qp, u);
    const Vec2 gg = sys.gradient_at(qp, gamma);
    const double B = gu.norm();
    const double nu = ph.material.nu(B);
    const double dnu = ph.material.dnu_db(B);
    const double gugg = gu.dot(gg);
    const double s = (B > 1e-14) ? dnu / B * gugg : 0.0;
    const bool mag = ph.remanence_perp.squaredNorm() > 0.0;
    const double ggm = mag ? gg.dot(ph.remanence_perp) : 0.0;
    for (std::size_t a = 0; a < qp.nodes.size(); ++a) {
      const Vec2 gk = qp.G.row(static_cast<Eigen::Index>(a)).transpose();
      const double gkgu = gk.dot(gu);
      const double gkgg = gk.dot(gg);
      Vec2 t = -(nu * gugg) * gk + (nu * gkgu) * gg + (nu * gkgg + s * gkgu) * gu;
      if (mag) t += (nu * ggm) * gk - (nu * gk.dot(ph.remanence_perp)) * gg;
      dT.row(qp.nodes[a]) += qp.w * t.transpose();
    }
  }
  return dT;
}

// Chain rule onto the radial surface offsets: each design coordinate moves
// its tagged (mirrored pair of) control points along their radial direction.
inline VecX offset_gradient(const RotorDomain& rotor, const ShapeGradient& dT) {
  VecX g = VecX::Zero(29);
  for (const auto& sp : rotor.surface)
    g[sp.design] += dT.row(sp.node).dot(sp.rhat);
  return g;
}

// Chain rule onto the geometric parameters through the control-point design
// Jacobian (excitation-side parameter terms are added separately).
inline VecX parameter_gradient(const ShapeGradient& dT,
                               const std::vector<std::vector<NodeSensitivity>>& dcdp) {
  VecX g = VecX::Zero(static_cast<Eigen::Index>(dcdp.size()));
  for (std::size_t l = 0; l < dcdp.size(); ++l)
    for (const auto& ns : dcdp[l])
      g[static_cast<Eigen::Index>(l)] += dT.row(ns.node).dot(ns.dpos);
  return g;
}

// Gradients of the sample mean and population standard deviation of the
// torque over a sweep, given per-angle torque gradients.
inline VecX stats_mean_gradient(const std::vector<VecX>& dT) {
  if (dT.empty()) return VecX();
  VecX g = VecX::Zero(dT.front().size());
  for (const VecX& d : dT) g += d;
  return g / static_cast<double>(dT.size());
}

// Gradient of the population standard deviation. With smoothing > 0 this is
// the gradient of the regularized value sqrt(var + smoothing^2) - smoothing,
// which is differentiable at var = 0; the plain standard deviation has a
// |.|-type kink there whose exact gradient does not exist.
inline VecX stats_std_gradient(const std::vector<double>& T, const std::vector<VecX>& dT,
                               double smoothing = 0.0) {
  if (dT.empty()) return VecX();
  const double n = static_cast<double>(T.size());
  double mean = 0.0;
  for (double t : T) mean += t;
  mean /= n;
  double var = 0.0;
  for (double t : T) var += (t - mean) * (t - mean);
  var /= n;
  const double sd = std::sqrt(var);
  VecX gmean = stats_mean_gradient(dT);
  VecX gm2 = VecX::Zero(dT.front().size());
  for (std::size_t i = 0; i < T.size(); ++i) gm2 += T[i] * dT[i];
  gm2 /= n;
  // d sd = (E[T dT] - mean * d mean) / sd. Below the numerical noise floor of
  // the torque profile the unsmoothed quotient is a pure noise direction of
  // O(|dT|) magnitude while the term's value is negligible, so the gradient
  // is reported as zero there rather than swamping every other contribution.
  if (smoothing <= 0.0 && sd < 1e-9) return VecX::Zero(dT.front().size());
  return (gm2 - mean * gmean) / std::sqrt(var + smoothing * smoothing);
}

// Adjoint-based design gradients for one machine instance. Binds to a live
// simulation; parameter changes require a fresh simulation and engine, while
// surface-offset changes only need the simulation's set_offsets.
class SensitivityEngine {
 public:
  explicit SensitivityEngine(MachineSimulation* sim)
      : sim_(sim),
        ma_index_(Parameters::index_of("MA")),
        op_index_(Parameters::index_of("OPERATING_ANGLE")) {
    // The control-point jacobian differences freshly built rotors, which carry
    // no surface offsets; the base must be equally pristine or every column
    // picks up a spurious (offset / step) term. Offsets translate surface
    // nodes rigidly along fixed rays, so the jacobian is valid at any offset.
    const RotorDomain pristine = build_rotor(sim->params(), sim->options().spans);
    dcdp_ = control_point_jacobian(sim->params(), pristine, sim->options().spans);
    // Remanence-direction load derivative (per degree of the V-opening angle).
    assembly::System dsys(&sim->rotor().geom, &sim->rotor_dofs(),
                          rotor_physics_dalpha_dma(sim->rotor(), sim->options().excitation));
    b_ma_ = dsys.assemble_rhs();
  }

  struct AngleGradient {
    double torque = 0.0;
    ShapeGradient d_nodes;  // dT/d(control point), rotor geometry nodes
    VecX d_offsets;         // dT/d(radial surface offsets), 29
    VecX d_params;          // dT/d(parameters in their native mm/deg units), 17
  };

  // Gradient of the torque at one converged state. The state must solve the
  // coupled problem at this angle; the tangent there is the adjoint operator
  // (it is symmetric, so one factorization serves).
  AngleGradient at(double beta, const VecX& x) {
    sim_->prepare(beta);
    const SpMat J = sim_->problem().tangent(x);
    Eigen::SparseLU<SpMat> lu;
    lu.compute(J);
    if (lu.info() != Eigen::Success)
      throw SolverError("adjoint factorization failed");
    const VecX gamma = lu.solve(sim_->torque_gradient(x));

    AngleGradient out;
    out.torque = sim_->torque(x);
    const int nr = sim_->problem().rotor_dofs();
    const int ns = sim_->problem().stator_dofs();
    out.d_nodes = torque_shape_gradient(sim_->rotor_system(), x.segment(0, nr),
                                        gamma.segment(0, nr));
    out.d_offsets = offset_gradient(sim_->rotor(), out.d_nodes);
    out.d_params = parameter_gradient(out.d_nodes, dcdp_);
    // Excitation terms: the magnetisation angle follows the V-opening angle,
    // and the operating angle shifts the phase currents (degrees to radians).
    out.d_params[ma_index_] += gamma.segment(0, nr).dot(b_ma_);
    out.d_params[op_index_] +=
        (pi / 180.0) * gamma.segment(nr, ns).dot(sim_->stator_source_dphi(beta));
    return out;
  }

  struct SweepSensitivity {
    std::vector<double> torque;
    double mean = 0.0;
    double stddev = 0.0;
    VecX dmean_offsets, dmean_params;
    VecX dstd_offsets, dstd_params;
  };

  // Solves nothing: consumes an already-solved sweep and runs one adjoint per
  // angle, then chains the statistics. ripple_smoothing is forwarded to
  // stats_std_gradient (regularized standard deviation).
  SweepSensitivity gradients(const SweepResult& res, double ripple_smoothing = 0.0) {
    SweepSensitivity out;
    out.torque = res.torque;
    std::vector<VecX> go, gp;
    go.reserve(res.angles.size());
    gp.reserve(res.angles.size());
    for (std::size_t i = 0; i < res.angles.size(); ++i) {
      AngleGradient ag = at(res.angles[i], res.states[i]);
      go.push_back(std::move(ag.d_offsets));
      gp.push_back(std::move(ag.d_params));
    }
    out.mean = res.mean_torque();
    out.stddev = res.torque_stddev();
    out.dmean_offsets = stats_mean_gradient(go);
    out.dmean_params = stats_mean_gradient(gp);
    out.dstd_offsets = stats_std_gradient(res.torque, go, ripple_smoothing);
    out.dstd_params = stats_std_gradient(res.torque, gp, ripple_smoothing);
    return out;
  }

 private:
  MachineSimulation* sim_;
  std::vector<std::vector<NodeSensitivity>> dcdp_;
  Eigen::Index ma_index_, op_index_;
  VecX b_ma_;
};

}  // namespace igamotor::machine
