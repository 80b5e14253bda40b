// Field solves: manufactured-solution convergence rates, Newton behavior on
// linear and saturating problems, and agreement of the harmonically coupled
// two-domain solve with a conforming single-domain reference.
#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "igamotor/solver.hpp"

namespace {

using igamotor::pi;
using igamotor::Vec2;
using igamotor::VecX;
using igamotor::SpMat;
using igamotor::unit_dir;
using igamotor::materials::BHCurve;
using igamotor::materials::Material;
using namespace igamotor::geometry;
using namespace igamotor::assembly;
using namespace igamotor::solver;
using igamotor::splines::NurbsCurve;

Material unit_material() { return Material{1.0, nullptr}; }

// Manufactured problem on an annulus sector r in [r0,r1], theta in [ta,tb]:
//   u* = sin(k (r - r0)) cos(m (theta - ta)),  k = pi/(r1-r0),  m = q pi/(tb-ta)
// vanishes on both arcs (essential) and has zero angular flux on the spokes
// (natural), with source f = -lap(u*).
struct Manufactured {
  double r0 = 1.0, r1 = 2.0, ta = 0.3, tb = 1.5;
  int q = 2;
  double k() const { return pi / (r1 - r0); }
  double m() const { return q * pi / (tb - ta); }
  double exact(const Vec2& x) const {
    const double r = x.norm(), t = std::atan2(x.y(), x.x());
    return std::sin(k() * (r - r0)) * std::cos(m() * (t - ta));
  }
  double source(const Vec2& x) const {
    const double r = x.norm(), t = std::atan2(x.y(), x.x());
    const double s = std::sin(k() * (r - r0)), c = std::cos(k() * (r - r0));
    return (k() * k() * s - (k() / r) * c + (m() * m() / (r * r)) * s) *
           std::cos(m() * (t - ta));
  }
};

struct SectorDomain {
  MultiPatchGeometry geom;
  std::vector<int> dirichlet;
};

SectorDomain sector_domain(const Manufactured& mf, int degree, int n) {
  MultiPatchBuilder b;
  int in, out, sa, sb;
  if (degree == 2) {
    in = b.add_edge(NurbsCurve::arc(Vec2(0, 0), mf.r0, mf.ta, mf.tb));
    out = b.add_edge(NurbsCurve::arc(Vec2(0, 0), mf.r1, mf.ta, mf.tb));
    sa = b.add_edge(NurbsCurve::line(mf.r0 * unit_dir(mf.ta), mf.r1 * unit_dir(mf.ta)));
    sb = b.add_edge(NurbsCurve::line(mf.r0 * unit_dir(mf.tb), mf.r1 * unit_dir(mf.tb)));
  } else {
    // Polygonal approximation: inscribed vertices at the future element
    // boundaries; the geometry error O(h^2) matches the field error order.
    std::vector<Vec2> pin, pout;
    std::vector<double> par;
    for (int i = 0; i <= n; ++i) {
      const double t = mf.ta + (mf.tb - mf.ta) * i / n;
      pin.push_back(mf.r0 * unit_dir(t));
      pout.push_back(mf.r1 * unit_dir(t));
      par.push_back(static_cast<double>(i) / n);
    }
    in = b.add_edge(NurbsCurve::polyline(pin, par, 1));
    out = b.add_edge(NurbsCurve::polyline(pout, par, 1));
    sa = b.add_edge(NurbsCurve::line(pin.front(), pout.front(), 1));
    sb = b.add_edge(NurbsCurve::line(pin.back(), pout.back(), 1));
  }
  b.add_patch({SideRef{sa}, SideRef{sb}, SideRef{in}, SideRef{out}}, "m", n, n);
  return {b.build(), {in, out}};
}

double solve_manufactured(const Manufactured& mf, int degree, int n, int* iterations) {
  SectorDomain dom = sector_domain(mf, degree, n);
  DofMap dofs(dom.geom, dom.dirichlet);
  PatchPhysics ph{unit_material(), Vec2::Zero(), 0.0,
                  [&mf](const Vec2& x) { return mf.source(x); }};
  System sys(&dom.geom, &dofs, {ph});
  FieldProblem prob(&sys, sys.assemble_rhs());
  VecX u = VecX::Zero(dofs.num_dofs());
  const NewtonReport rep = newton_solve(prob, &u);
  EXPECT_TRUE(rep.converged);
  if (iterations) *iterations = rep.iterations;
  return l2_error(sys, u, [&mf](const Vec2& x) { return mf.exact(x); });
}

double fit_slope(const std::vector<double>& h, const std::vector<double>& e) {
  // Least squares slope of log(e) against log(h).
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double x = std::log(h[i]), y = std::log(e[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

TEST(SolverTest, LinearSolveTakesExactlyOneNewtonIteration) {
  Manufactured mf;
  int iters = -1;
  solve_manufactured(mf, 2, 8, &iters);
  EXPECT_EQ(iters, 1);
}

TEST(SolverTest, ManufacturedConvergenceRateQuadratic) {
  Manufactured mf;
  std::vector<double> h, e;
  for (int n : {8, 16, 32}) {
    h.push_back(1.0 / n);
    e.push_back(solve_manufactured(mf, 2, n, nullptr));
  }
  const double slope = fit_slope(h, e);
  EXPECT_NEAR(slope, 3.0, 0.3) << "errors: " << e[0] << " " << e[1] << " " << e[2];
  EXPECT_LT(e.back(), 5e-5);
}

TEST(SolverTest, ManufacturedConvergenceRateLinearElements) {
  Manufactured mf;
  std::vector<double> h, e;
  for (int n : {8, 16, 32}) {
    h.push_back(1.0 / n);
    e.push_back(solve_manufactured(mf, 1, n, nullptr));
  }
  const double slope = fit_slope(h, e);
  EXPECT_NEAR(slope, 2.0, 0.3) << "errors: " << e[0] << " " << e[1] << " " << e[2];
}

TEST(SolverTest, SaturatingProblemConvergesWithDamping) {
  // 10 cm iron square, clamped boundary, strong uniform current: the core
  // saturates and Newton needs the line search but still converges fast.
  MultiPatchBuilder b;
  const double L = 0.1;
  const int s = b.add_edge(NurbsCurve::line(Vec2(0, 0), Vec2(L, 0)));
  const int n = b.add_edge(NurbsCurve::line(Vec2(0, L), Vec2(L, L)));
  const int w = b.add_edge(NurbsCurve::line(Vec2(0, 0), Vec2(0, L)));
  const int e = b.add_edge(NurbsCurve::line(Vec2(L, 0), Vec2(L, L)));
  b.add_patch({SideRef{s}, SideRef{n}, SideRef{w}, SideRef{e}}, "iron", 8, 8);
  MultiPatchGeometry g = b.build();
  DofMap dofs(g, {s, n, w, e});
  const Material iron = Material::saturating(&BHCurve::default_steel());
  System sys(&g, &dofs, {PatchPhysics{iron, Vec2::Zero(), 5.0e6, nullptr}});
  FieldProblem prob(&sys, sys.assemble_rhs());
  VecX u = VecX::Zero(dofs.num_dofs());
  const NewtonReport rep = newton_solve(prob, &u);
  EXPECT_TRUE(rep.converged);
  EXPECT_LE(rep.iterations, 25);
  // The field really reaches the saturated branch somewhere.
  double bmax = 0.0;
  for (const auto& qp : sys.quad_points()) bmax = std::max(bmax, sys.gradient_at(qp, u).norm());
  EXPECT_GT(bmax, 1.4);
  EXPECT_LT(bmax, 20.0);
}

// Closed ring of four 90-degree sectors; returns the geometry plus the edge
// ids of the inner and outer arcs.
struct RingDomain {
  MultiPatchGeometry geom;
  std::array<int, 4> inner, outer;
};

RingDomain ring_domain(double r0, double r1, int nrad, int nang,
                       const std::string& material) {
  MultiPatchBuilder b;
  std::array<int, 4> in, out, spokes;
  for (int k = 0; k < 4; ++k) {
    const double a0 = 0.5 * pi * k, a1 = 0.5 * pi * (k + 1);
    in[k] = b.add_edge(NurbsCurve::arc(Vec2(0, 0), r0, a0, a1));
    out[k] = b.add_edge(NurbsCurve::arc(Vec2(0, 0), r1, a0, a1));
    spokes[k] = b.add_edge(NurbsCurve::line(r0 * unit_dir(a0), r1 * unit_dir(a0)));
  }
  for (int k = 0; k < 4; ++k)
    b.add_patch({SideRef{spokes[k]}, SideRef{spokes[(k + 1) % 4]}, SideRef{in[k]},
                 SideRef{out[k]}},
                material, nrad, nang);
  return {b.build(), in, out};
}

TEST(SolverTest, MortarAgreesWithConformingReference) {
  // Exact solution u = sin(k(r-r0)) (1 + cos(3 theta)) on the full annulus,
  // split at r_ag into independently meshed rings tied only through harmonic
  // trace moments; compared against the conforming one-domain solve on the
  // same patches.
  const double r0 = 1.0, rag = 1.5, r1 = 2.2;
  const double k = pi / (r1 - r0);
  const int mharm = 3;
  auto exact = [&](const Vec2& x) {
    const double r = x.norm(), t = std::atan2(x.y(), x.x());
    return std::sin(k * (r - r0)) * (1.0 + std::cos(mharm * t));
  };
  auto source = [&](const Vec2& x) {
    const double r = x.norm(), t = std::atan2(x.y(), x.x());
    const double s = std::sin(k * (r - r0)), c = std::cos(k * (r - r0));
    return (k * k * s - (k / r) * c) * (1.0 + std::cos(mharm * t)) +
           (mharm * mharm / (r * r)) * s * std::cos(mharm * t);
  };
  const int nrad_rt = 4, nrad_st = 5, nang = 22;

  // Mortar: two separate domains.
  RingDomain rt = ring_domain(r0, rag, nrad_rt, nang, "rt");
  RingDomain st = ring_domain(rag, r1, nrad_st, nang, "st");
  DofMap dofs_rt(rt.geom, {rt.inner[0], rt.inner[1], rt.inner[2], rt.inner[3]});
  DofMap dofs_st(st.geom, {st.outer[0], st.outer[1], st.outer[2], st.outer[3]});
  PatchPhysics ph{unit_material(), Vec2::Zero(), 0.0, source};
  System sys_rt(&rt.geom, &dofs_rt, {ph, ph, ph, ph});
  System sys_st(&st.geom, &dofs_st, {ph, ph, ph, ph});
  std::vector<int> harmonics(41);
  for (int i = 0; i <= 40; ++i) harmonics[i] = i;
  const SpMat G_rt = harmonic_coupling(
      rt.geom, dofs_rt, {{0, kEast}, {1, kEast}, {2, kEast}, {3, kEast}}, harmonics);
  const SpMat G_st = harmonic_coupling(
      st.geom, dofs_st, {{0, kWest}, {1, kWest}, {2, kWest}, {3, kWest}}, harmonics);
  CoupledProblem coupled(&sys_rt, &sys_st, G_rt, G_st, harmonics);
  coupled.set_angle(0.0);
  coupled.set_sources(sys_rt.assemble_rhs(), sys_st.assemble_rhs());
  VecX x = VecX::Zero(coupled.size());
  const NewtonReport rep = newton_solve(coupled, &x);
  EXPECT_TRUE(rep.converged);
  EXPECT_EQ(rep.iterations, 1);  // linear materials

  // Conforming reference: same patches, interface arcs shared.
  MultiPatchBuilder cb;
  std::array<int, 4> cin, cmid, cout, spk_rt, spk_st;
  for (int kk = 0; kk < 4; ++kk) {
    const double a0 = 0.5 * pi * kk, a1 = 0.5 * pi * (kk + 1);
    cin[kk] = cb.add_edge(NurbsCurve::arc(Vec2(0, 0), r0, a0, a1));
    cmid[kk] = cb.add_edge(NurbsCurve::arc(Vec2(0, 0), rag, a0, a1));
    cout[kk] = cb.add_edge(NurbsCurve::arc(Vec2(0, 0), r1, a0, a1));
    spk_rt[kk] = cb.add_edge(NurbsCurve::line(r0 * unit_dir(a0), rag * unit_dir(a0)));
    spk_st[kk] = cb.add_edge(NurbsCurve::line(rag * unit_dir(a0), r1 * unit_dir(a0)));
  }
  for (int kk = 0; kk < 4; ++kk) {
    cb.add_patch({SideRef{spk_rt[kk]}, SideRef{spk_rt[(kk + 1) % 4]}, SideRef{cin[kk]},
                  SideRef{cmid[kk]}},
                 "rt", nrad_rt, nang);
  }
  for (int kk = 0; kk < 4; ++kk) {
    cb.add_patch({SideRef{spk_st[kk]}, SideRef{spk_st[(kk + 1) % 4]}, SideRef{cmid[kk]},
                  SideRef{cout[kk]}},
                 "st", nrad_st, nang);
  }
  MultiPatchGeometry cg = cb.build();
  DofMap cdofs(cg, {cin[0], cin[1], cin[2], cin[3], cout[0], cout[1], cout[2], cout[3]});
  System csys(&cg, &cdofs, {ph, ph, ph, ph, ph, ph, ph, ph});
  FieldProblem cprob(&csys, csys.assemble_rhs());
  VecX cu = VecX::Zero(cdofs.num_dofs());
  EXPECT_TRUE(newton_solve(cprob, &cu).converged);

  // Both solutions approximate the same exact field...
  const double err_mortar_rt = l2_error(sys_rt, VecX(coupled.u_rt(x)), exact);
  const double err_conf = l2_error(csys, cu, exact);
  EXPECT_LT(err_conf, 2e-3);
  EXPECT_LT(err_mortar_rt, 2e-3);

  // ...and agree with each other far below the discretization error: compare
  // values at identical quadrature points (rotor cache == first half of the
  // conforming cache by construction).
  const auto& qp_rt = sys_rt.quad_points();
  const auto& qp_c = csys.quad_points();
  ASSERT_EQ(qp_c.size(), qp_rt.size() + sys_st.quad_points().size());
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < qp_rt.size(); ++i) {
    ASSERT_LT((qp_rt[i].x - qp_c[i].x).norm(), 1e-12);
    double um = 0.0, uc = 0.0;
    for (std::size_t a = 0; a < qp_rt[i].dofs.size(); ++a)
      if (qp_rt[i].dofs[a] >= 0)
        um += qp_rt[i].signs[a] * coupled.u_rt(x)[qp_rt[i].dofs[a]] *
              qp_rt[i].N[static_cast<Eigen::Index>(a)];
    for (std::size_t a = 0; a < qp_c[i].dofs.size(); ++a)
      if (qp_c[i].dofs[a] >= 0)
        uc += qp_c[i].signs[a] * cu[qp_c[i].dofs[a]] * qp_c[i].N[static_cast<Eigen::Index>(a)];
    num += qp_rt[i].w * (um - uc) * (um - uc);
    den += qp_rt[i].w * uc * uc;
  }
  const double rel = std::sqrt(num / den);
  EXPECT_LT(rel, 1e-6) << "mortar vs conforming relative L2 difference";
}

}  // namespace
