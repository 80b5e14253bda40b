#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "igamotor/assembly.hpp"
#include "igamotor/core.hpp"

namespace igamotor::solver {

struct NewtonOptions {
  double rel_tol = 1e-10;   // on the residual, relative to the source norm
  double abs_tol = 1e-12;
  int max_iter = 50;
  double armijo = 1e-4;     // sufficient-decrease constant
  double damping = 0.5;     // step-halving factor
  double min_step = 9.5367431640625e-7;  // 2^-20
};

struct NewtonReport {
  int iterations = 0;
  bool converged = false;
  double residual_norm = 0.0;
};

// Damped Newton iteration with a monotone line search. Problem must provide
// residual(x), tangent(x) and scale() (reference magnitude of the right-hand
// side). For an affine residual the first full step lands on the solution, so
// exactly one iteration is reported.
template <class Problem>
NewtonReport newton_solve(Problem& prob, VecX* x, const NewtonOptions& opt = {}) {
  NewtonReport rep;
  const double tol = std::max(opt.abs_tol, opt.rel_tol * prob.scale());
  VecX r = prob.residual(*x);
  double rnorm = r.norm();
  Eigen::SparseLU<SpMat> lu;
  for (rep.iterations = 0; rep.iterations <= opt.max_iter; ++rep.iterations) {
    if (rnorm <= tol) {
      rep.converged = true;
      break;
    }
    if (rep.iterations == opt.max_iter) break;
    const SpMat J = prob.tangent(*x);
    lu.compute(J);
    if (lu.info() != Eigen::Success)
      throw SolverError("Newton tangent factorization failed");
    const VecX dx = lu.solve(-r);
    double eta = 1.0;
    for (;;) {
      const VecX xt = *x + eta * dx;
      const VecX rt = prob.residual(xt);
      if (rt.norm() <= (1.0 - opt.armijo * eta) * rnorm) {
        *x = xt;
        r = rt;
        rnorm = rt.norm();
        break;
      }
      eta *= opt.damping;
      if (eta < opt.min_step)
        throw SolverError("Newton line search stalled (residual " + std::to_string(rnorm) +
                          ")");
    }
  }
  rep.residual_norm = rnorm;
  return rep;
}

// Single-domain nonlinear field problem K(u) u = b.
class FieldProblem {
 public:
  FieldProblem(const assembly::System* sys, VecX b) : sys_(sys), b_(std::move(b)) {}

  VecX residual(const VecX& u) const {
    SpMat K;
    sys_->assemble_operator(u, &K);
    return K * u - b_;
  }
  SpMat tangent(const VecX& u) const {
    SpMat K, J;
    sys_->assemble_operator(u, &K, &J);
    return J;
  }
  double scale() const { return b_.norm(); }
  const VecX& rhs() const { return b_; }

 private:
  const assembly::System* sys_;
  VecX b_;
};

namespace detail {
inline void add_block(std::vector<Triplet>* t, const SpMat& M, int row0, int col0,
                      double s = 1.0) {
  for (int k = 0; k < M.outerSize(); ++k)
    for (SpMat::InnerIterator it(M, k); it; ++it)
      t->emplace_back(row0 + static_cast<int>(it.row()), col0 + static_cast<int>(it.col()),
                      s * it.value());
}
}  // namespace detail

// Two nonlinear domains coupled through harmonic trace moments on a common
// circular interface. The stator-side moments are rotated per harmonic by the
// rotor angle, so the rotor mesh never moves. State layout:
// [u_rotor; u_stator; lambda].
//
// Residual:
//   K_rt(u_rt) u_rt - G_rt lambda                 = b_rt
//   K_st(u_st) u_st + G_st R(beta) lambda         = b_st
//   -G_rt^T u_rt + (G_st R(beta))^T u_st          = 0
// which makes the tangent symmetric (indefinite), and the interface torque
//   T(beta) = -L u_st^T G_st R'(beta) lambda.
class CoupledProblem {
 public:
  CoupledProblem(const assembly::System* rotor, const assembly::System* stator, SpMat g_rt,
                 SpMat g_st, std::vector<int> harmonics)
      : rotor_(rotor),
        stator_(stator),
        g_rt_(std::move(g_rt)),
        g_st_(std::move(g_st)),
        harmonics_(std::move(harmonics)),
        n_rt_(rotor->num_dofs()),
        n_st_(stator->num_dofs()),
        n_lm_(assembly::harmonic_columns(harmonics_)) {
    if (g_rt_.rows() != n_rt_ || g_st_.rows() != n_st_ || g_rt_.cols() != n_lm_ ||
        g_st_.cols() != n_lm_)
      throw SolverError("coupling matrix dimensions do not match");
    set_angle(0.0);
    b_rt_ = VecX::Zero(n_rt_);
    b_st_ = VecX::Zero(n_st_);
  }

  int size() const { return n_rt_ + n_st_ + n_lm_; }
  int rotor_dofs() const { return n_rt_; }
  int stator_dofs() const { return n_st_; }
  int lambda_dofs() const { return n_lm_; }
  double angle() const { return beta_; }
  const SpMat& coupling_rotor() const { return g_rt_; }
  const SpMat& coupling_stator() const { return g_st_; }
  const std::vector<int>& harmonics() const { return harmonics_; }

  void set_angle(double beta) {
    beta_ = beta;
    gst_r_ = g_st_ * assembly::harmonic_rotation(harmonics_, beta);
  }

  void set_sources(VecX b_rt, VecX b_st) {
    b_rt_ = std::move(b_rt);
    b_st_ = std::move(b_st);
  }

  auto u_rt(const VecX& x) const { return x.segment(0, n_rt_); }
  auto u_st(const VecX& x) const { return x.segment(n_rt_, n_st_); }
  auto lambda(const VecX& x) const { return x.segment(n_rt_ + n_st_, n_lm_); }

  VecX residual(const VecX& x) const {
    SpMat K_rt, K_st;
    rotor_->assemble_operator(u_rt(x), &K_rt);
    stator_->assemble_operator(u_st(x), &K_st);
    VecX r(size());
    r.segment(0, n_rt_) = K_rt * u_rt(x) - g_rt_ * lambda(x) - b_rt_;
    r.segment(n_rt_, n_st_) = K_st * u_st(x) + gst_r_ * lambda(x) - b_st_;
    r.segment(n_rt_ + n_st_, n_lm_) =
        gst_r_.transpose() * u_st(x) - g_rt_.transpose() * u_rt(x);
    return r;
  }

  SpMat tangent(const VecX& x) const {
    SpMat K, J_rt, J_st;
    rotor_->assemble_operator(u_rt(x), &K, &J_rt);
    stator_->assemble_operator(u_st(x), &K, &J_st);
    std::vector<Triplet> t;
    t.reserve(static_cast<std::size_t>(J_rt.nonZeros() + J_st.nonZeros()) +
              4 * static_cast<std::size_t>(g_rt_.nonZeros() + gst_r_.nonZeros()));
    detail::add_block(&t, J_rt, 0, 0);
    detail::add_block(&t, J_st, n_rt_, n_rt_);
    const int lm0 = n_rt_ + n_st_;
    detail::add_block(&t, g_rt_, 0, lm0, -1.0);
    detail::add_block(&t, gst_r_, n_rt_, lm0, 1.0);
    detail::add_block(&t, SpMat(g_rt_.transpose()), lm0, 0, -1.0);
    detail::add_block(&t, SpMat(gst_r_.transpose()), lm0, n_rt_, 1.0);
    SpMat J(size(), size());
    J.setFromTriplets(t.begin(), t.end());
    return J;
  }

  double scale() const { return std::hypot(b_rt_.norm(), b_st_.norm()); }

  // Interface torque for an axial length of `length` meters.
  double torque(const VecX& x, double length) const {
    const SpMat dR = assembly::harmonic_rotation_derivative(harmonics_, beta_);
    const VecX gl = g_st_ * (dR * lambda(x));
    return -length * u_st(x).dot(gl);
  }

  // Gradient of the torque with respect to the full state vector (the
  // negative of this is the adjoint right-hand side).
  VecX torque_state_gradient(const VecX& x, double length) const {
    const SpMat dR = assembly::harmonic_rotation_derivative(harmonics_, beta_);
    VecX g = VecX::Zero(size());
    g.segment(n_rt_, n_st_) = -length * (g_st_ * (dR * lambda(x)));
    g.segment(n_rt_ + n_st_, n_lm_) =
        -length * (dR.transpose() * (g_st_.transpose() * u_st(x)));
    return g;
  }

 private:
  const assembly::System* rotor_;
  const assembly::System* stator_;
  SpMat g_rt_, g_st_, gst_r_;
  std::vector<int> harmonics_;
  int n_rt_, n_st_, n_lm_;
  double beta_ = 0.0;
  VecX b_rt_, b_st_;
};

// Relative L2 distance between the discrete field and a reference function,
// integrated with the system's quadrature cache.
inline double l2_error(const assembly::System& sys, const VecX& u,
                       const std::function<double(const Vec2&)>& exact) {
  double num = 0.0, den = 0.0;
  for (const auto& qp : sys.quad_points()) {
    double uh = 0.0;
    for (std::size_t a = 0; a < qp.dofs.size(); ++a)
      if (qp.dofs[a] >= 0) uh += qp.signs[a] * u[qp.dofs[a]] * qp.N[static_cast<Eigen::Index>(a)];
    const double ue = exact(qp.x);
    num += qp.w * (uh - ue) * (uh - ue);
    den += qp.w * ue * ue;
  }
  return std::sqrt(num / std::max(den, 1e-300));
}

}  // namespace igamotor::solver
