// Coefficient mapping and assembly: reference element matrices, signed
// periodic identifications, harmonic trace moments, and a finite-difference
// check of the Newton tangent.
#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "igamotor/assembly.hpp"

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
using igamotor::splines::NurbsCurve;

MultiPatchGeometry unit_square(int degree, int nu, int nv) {
  MultiPatchBuilder b;
  const int s = b.add_edge(NurbsCurve::line(Vec2(0, 0), Vec2(1, 0), degree));
  const int n = b.add_edge(NurbsCurve::line(Vec2(0, 1), Vec2(1, 1), degree));
  const int w = b.add_edge(NurbsCurve::line(Vec2(0, 0), Vec2(0, 1), degree));
  const int e = b.add_edge(NurbsCurve::line(Vec2(1, 0), Vec2(1, 1), degree));
  b.add_patch({SideRef{s}, SideRef{n}, SideRef{w}, SideRef{e}}, "m", nu, nv);
  return b.build();
}

Material unit_material() { return Material{1.0, nullptr}; }

TEST(AssemblyTest, BilinearLaplaceElementMatrix) {
  MultiPatchGeometry g = unit_square(1, 1, 1);
  DofMap dofs(g, {});
  ASSERT_EQ(dofs.num_dofs(), 4);
  System sys(&g, &dofs, {PatchPhysics{unit_material(), Vec2::Zero(), 0.0, nullptr}});
  SpMat K;
  sys.assemble_operator(VecX::Zero(4), &K);
  const Eigen::MatrixXd Kd = Eigen::MatrixXd(K);
  // Reference bilinear stiffness on the unit square: 2/3 diagonal, -1/6 for
  // edge neighbors, -1/3 across the diagonal. Node order follows the control
  // net: (0,0), (1,0), (0,1), (1,1).
  Eigen::MatrixXd ref(4, 4);
  ref << 2 / 3.0, -1 / 6.0, -1 / 6.0, -1 / 3.0,  //
      -1 / 6.0, 2 / 3.0, -1 / 3.0, -1 / 6.0,     //
      -1 / 6.0, -1 / 3.0, 2 / 3.0, -1 / 6.0,     //
      -1 / 3.0, -1 / 6.0, -1 / 6.0, 2 / 3.0;
  EXPECT_NEAR((Kd - ref).norm(), 0.0, 1e-14);
}

TEST(AssemblyTest, UnitSourceLoadVector) {
  MultiPatchGeometry g = unit_square(1, 1, 1);
  DofMap dofs(g, {});
  System sys(&g, &dofs, {PatchPhysics{unit_material(), Vec2::Zero(), 1.0, nullptr}});
  const VecX b = sys.assemble_rhs();
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(b[i], 0.25, 1e-14);
  EXPECT_NEAR(b.sum(), 1.0, 1e-14);
}

TEST(AssemblyTest, LinearFieldIsInStencilKernel) {
  // Coefficients of u(x,y) = x on a refined grid: interior rows of K u are
  // zero (patch test for the assembled Laplacian).
  MultiPatchGeometry g = unit_square(1, 4, 3);
  DofMap dofs(g, {});
  System sys(&g, &dofs, {PatchPhysics{unit_material(), Vec2::Zero(), 0.0, nullptr}});
  VecX u(dofs.num_dofs());
  for (int n = 0; n < g.num_nodes; ++n) u[dofs.dof(n)] = g.node_position[n].x();
  SpMat K;
  sys.assemble_operator(u, &K);
  const VecX r = K * u;
  // Interior nodes: everything except x in {0,1} or y in {0,1}.
  for (int n = 0; n < g.num_nodes; ++n) {
    const Vec2 p = g.node_position[n];
    const bool boundary = p.x() < 1e-12 || p.x() > 1 - 1e-12 || p.y() < 1e-12 || p.y() > 1 - 1e-12;
    if (!boundary) {
      EXPECT_NEAR(r[dofs.dof(n)], 0.0, 1e-13) << "node " << n;
    }
  }
}

TEST(DofMapTest, DirichletEliminationAndInterfaceSharing) {
  // Two stacked squares sharing a horizontal edge; bottom edge clamped.
  MultiPatchBuilder b;
  const int s0 = b.add_edge(NurbsCurve::line(Vec2(0, 0), Vec2(1, 0)));
  const int mid = b.add_edge(NurbsCurve::line(Vec2(0, 1), Vec2(1, 1)));
  const int n1 = b.add_edge(NurbsCurve::line(Vec2(0, 2), Vec2(1, 2)));
  const int w0 = b.add_edge(NurbsCurve::line(Vec2(0, 0), Vec2(0, 1)));
  const int e0 = b.add_edge(NurbsCurve::line(Vec2(1, 0), Vec2(1, 1)));
  const int w1 = b.add_edge(NurbsCurve::line(Vec2(0, 1), Vec2(0, 2)));
  const int e1 = b.add_edge(NurbsCurve::line(Vec2(1, 1), Vec2(1, 2)));
  b.add_patch({SideRef{s0}, SideRef{mid}, SideRef{w0}, SideRef{e0}}, "a", 2, 2);
  b.add_patch({SideRef{mid}, SideRef{n1}, SideRef{w1}, SideRef{e1}}, "b", 2, 2);
  MultiPatchGeometry g = b.build();
  DofMap dofs(g, {s0});
  // 2x2 elements of degree 2 -> 4x4 net per patch, minus shared row: 28 nodes.
  EXPECT_EQ(g.num_nodes, 28);
  // Bottom row of 4 nodes eliminated.
  EXPECT_EQ(dofs.num_dofs(), 24);
  for (int node : DofMap::edge_nodes(g, s0)) EXPECT_EQ(dofs.dof(node), -1);
  for (int node : DofMap::edge_nodes(g, mid)) EXPECT_GE(dofs.dof(node), 0);
}

TEST(DofMapTest, AntiperiodicLinkFlipsSign) {
  // Two disjoint squares; east edge of the first is linked antiperiodically
  // to the west edge of the second.
  MultiPatchBuilder b;
  auto square = [&](double x0) {
    const int s = b.add_edge(NurbsCurve::line(Vec2(x0, 0), Vec2(x0 + 1, 0)));
    const int n = b.add_edge(NurbsCurve::line(Vec2(x0, 1), Vec2(x0 + 1, 1)));
    const int w = b.add_edge(NurbsCurve::line(Vec2(x0, 0), Vec2(x0, 1)));
    const int e = b.add_edge(NurbsCurve::line(Vec2(x0 + 1, 0), Vec2(x0 + 1, 1)));
    b.add_patch({SideRef{s}, SideRef{n}, SideRef{w}, SideRef{e}}, "m", 2, 2);
    return std::array<int, 4>{s, n, w, e};
  };
  const auto q0 = square(0.0);
  const auto q1 = square(5.0);
  MultiPatchGeometry g = b.build();
  DofMap dofs(g, {}, {EdgeLink{q0[3], q1[2], -1.0, false}});
  const auto na = DofMap::edge_nodes(g, q0[3]);
  const auto nb = DofMap::edge_nodes(g, q1[2]);
  ASSERT_EQ(na.size(), nb.size());
  EXPECT_EQ(dofs.num_dofs(), 2 * 16 - static_cast<int>(na.size()));
  VecX u = VecX::Zero(dofs.num_dofs());
  for (std::size_t k = 0; k < na.size(); ++k) {
    ASSERT_EQ(dofs.dof(na[k]), dofs.dof(nb[k]));
    u[dofs.dof(na[k])] = 1.0 + static_cast<double>(k);
    const VecX nodal = dofs.node_values(u);
    EXPECT_DOUBLE_EQ(nodal[na[k]], -nodal[nb[k]]);
    u[dofs.dof(na[k])] = 0.0;
  }
}

TEST(DofMapTest, ConflictForcesZero) {
  // Linking an edge to itself with sign -1 forces every coefficient on it to
  // vanish (u = -u).
  MultiPatchGeometry g = unit_square(2, 2, 2);
  const int east = g.patch_sides[0][kEast].edge;
  DofMap dofs(g, {}, {EdgeLink{east, east, -1.0, false}});
  for (int node : DofMap::edge_nodes(g, east)) EXPECT_EQ(dofs.dof(node), -1);
  EXPECT_EQ(dofs.num_dofs(), 16 - 4);
}

MultiPatchGeometry quarter_ring(double r0, double r1, int nrad, int nang) {
  MultiPatchBuilder b;
  const int in = b.add_edge(NurbsCurve::arc(Vec2(0, 0), r0, 0.0, 0.5 * pi));
  const int out = b.add_edge(NurbsCurve::arc(Vec2(0, 0), r1, 0.0, 0.5 * pi));
  const int sa = b.add_edge(NurbsCurve::line(r0 * unit_dir(0.0), r1 * unit_dir(0.0)));
  const int sb = b.add_edge(NurbsCurve::line(r0 * unit_dir(0.5 * pi), r1 * unit_dir(0.5 * pi)));
  b.add_patch({SideRef{sa}, SideRef{sb}, SideRef{in}, SideRef{out}}, "ring", nrad, nang);
  return b.build();
}

TEST(CouplingTest, HarmonicMomentsOfUnity) {
  // Summing the coupling rows collapses the basis to 1 on the arc, so each
  // column must integrate its harmonic over the quarter circle of radius r:
  //   int_0^{pi/2} sin(2t) r dt = r,  int_0^{pi/2} cos(2t) r dt = 0,
  // and the constant column gives the arc length.
  const double r = 2.31;
  MultiPatchGeometry g = quarter_ring(1.0, r, 2, 5);
  DofMap dofs(g, {});
  const SpMat G = harmonic_coupling(g, dofs, {{0, kEast}}, {0, 2, 4});
  ASSERT_EQ(G.cols(), 5);
  const VecX sums = VecX(G.transpose() * VecX::Ones(dofs.num_dofs()));
  EXPECT_NEAR(sums[0], r * 0.5 * pi, 1e-12);  // constant column
  EXPECT_NEAR(sums[1], r, 1e-12);             // sin(2t)
  EXPECT_NEAR(sums[2], 0.0, 1e-12);           // cos(2t)
  EXPECT_NEAR(sums[3], 0.0, 1e-12);           // sin(4t)
  EXPECT_NEAR(sums[4], 0.0, 1e-12);           // cos(4t)
  // Rows of interior coefficients (no trace on the arc) are empty.
  const auto east_nodes = DofMap::edge_nodes(g, g.patch_sides[0][kEast].edge);
  Eigen::MatrixXd Gd(G);
  for (int row = 0; row < Gd.rows(); ++row) {
    bool on_arc = false;
    for (int node : east_nodes) on_arc |= (dofs.dof(node) == row);
    if (!on_arc) {
      EXPECT_NEAR(Gd.row(row).norm(), 0.0, 1e-15) << "row " << row;
    }
  }
}

TEST(CouplingTest, RotationBlocksAreOrthogonalAndConsistent) {
  const std::vector<int> harmonics = {0, 2, 6, 10};
  const double b1 = 0.31, b2 = -0.12;
  const Eigen::MatrixXd R1(harmonic_rotation(harmonics, b1));
  const Eigen::MatrixXd R2(harmonic_rotation(harmonics, b2));
  const Eigen::MatrixXd R12(harmonic_rotation(harmonics, b1 + b2));
  EXPECT_NEAR((R1 * R1.transpose() - Eigen::MatrixXd::Identity(7, 7)).norm(), 0.0, 1e-14);
  EXPECT_NEAR((R1 * R2 - R12).norm(), 0.0, 1e-14);
  // Derivative by central differences.
  const double h = 1e-6;
  const Eigen::MatrixXd dR(harmonic_rotation_derivative(harmonics, b1));
  const Eigen::MatrixXd fd =
      (Eigen::MatrixXd(harmonic_rotation(harmonics, b1 + h)) -
       Eigen::MatrixXd(harmonic_rotation(harmonics, b1 - h))) /
      (2 * h);
  EXPECT_NEAR((dR - fd).norm(), 0.0, 1e-7);
}

TEST(AssemblyTest, NewtonTangentMatchesFiniteDifferences) {
  // Saturating material, coefficients scaled so |grad u| sits on the steep
  // part of the curve; the tangent must match d/du [K(u) u] to square-root
  // machine precision.
  MultiPatchGeometry g = unit_square(2, 2, 2);
  DofMap dofs(g, {g.patch_sides[0][kSouth].edge});
  const Material iron = Material::saturating(&BHCurve::default_steel());
  System sys(&g, &dofs, {PatchPhysics{iron, Vec2::Zero(), 0.0, nullptr}});
  std::mt19937 rng(91);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  VecX u(dofs.num_dofs());
  for (int i = 0; i < u.size(); ++i) u[i] = 1.5 * unif(rng);
  SpMat K, J;
  sys.assemble_operator(u, &K, &J);
  EXPECT_NEAR((Eigen::MatrixXd(J) - Eigen::MatrixXd(J).transpose()).norm(), 0.0, 1e-10);
  auto residual = [&](const VecX& w) {
    SpMat Kw;
    sys.assemble_operator(w, &Kw);
    return VecX(Kw * w);
  };
  const double h = 1e-6;
  for (int t = 0; t < 5; ++t) {
    VecX d(dofs.num_dofs());
    for (int i = 0; i < d.size(); ++i) d[i] = unif(rng);
    d.normalize();
    const VecX fd = (residual(u + h * d) - residual(u - h * d)) / (2 * h);
    const VecX jd = J * d;
    EXPECT_NEAR((jd - fd).norm(), 0.0, 1e-5 * std::max(1.0, fd.norm())) << "dir " << t;
  }
}

TEST(AssemblyTest, RemanenceLoadMatchesDivergenceTheorem) {
  // For constant remanence and constant nu, summing nu grad(N_i).m_perp over
  // all i with coefficients of a linear function x.c recovers
  // nu m_perp . c * area (partition of unity of gradients).
  MultiPatchGeometry g = unit_square(2, 3, 2);
  DofMap dofs(g, {});
  const Vec2 mperp(0.3, -0.8);
  const Material lin = Material::linear(1.05);
  System sys(&g, &dofs, {PatchPhysics{lin, mperp, 0.0, nullptr}});
  const VecX b = sys.assemble_rhs();
  const Vec2 c(0.7, 1.3);
  VecX u(dofs.num_dofs());
  for (int n = 0; n < g.num_nodes; ++n) u[dofs.dof(n)] = g.node_position[n].dot(c);
  const double expected = lin.nu(0.0) * mperp.dot(c) * 1.0;
  EXPECT_NEAR(b.dot(u), expected, 1e-12 * std::abs(expected));
}

}  // namespace
