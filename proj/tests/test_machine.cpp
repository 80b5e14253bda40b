#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "igamotor/machine.hpp"

using igamotor::pi;
using igamotor::Vec2;
using igamotor::VecX;
using namespace igamotor::machine;

TEST(Parameters, InitialValuesInsideBounds) {
  Parameters p;
  EXPECT_NO_THROW(p.validate());
  EXPECT_DOUBLE_EQ(p.dmag(), 30.0);
  EXPECT_DOUBLE_EQ(p.wmag(), 4.0);
  EXPECT_EQ(Parameters::index_of("OPERATING_ANGLE"), 8);
}

TEST(Parameters, OutOfRangeRejected) {
  Parameters p;
  p[Parameters::index_of("MW1")] = 40.0;  // above the 27 mm bound
  EXPECT_THROW(p.validate(), std::invalid_argument);
}

TEST(Clearances, AllSatisfiedAtInitialDesign) {
  const auto g = clearance_shortfalls(Parameters{});
  for (std::size_t i = 0; i < g.size(); ++i)
    EXPECT_LT(g[i], 0.0) << "constraint " << i << " violated at the initial design";
  // The outer-tip bridge is the tight one by design: ~0.23 mm margin.
  EXPECT_NEAR(g[0], -0.227e-3, 0.03e-3);
  EXPECT_NEAR(g[0], g[1], 1e-9);  // tip face parallel to the cut plane
}

TEST(Clearances, JacobianMatchesAnalyticColumns) {
  Parameters p;
  const auto jac = clearance_jacobian(p);
  // g7 = 1.5mm - LSLIT1 and g8 = 1.5mm - LSLIT2 are linear.
  EXPECT_NEAR(jac(7, 3), -1e-3, 1e-9);
  EXPECT_NEAR(jac(8, 4), -1e-3, 1e-9);
  // Web width depends on MT1 with slope 1 mm/mm (2 * |x| with |x| = MT1/2 + ...).
  EXPECT_NEAR(jac(5, Parameters::index_of("MT1")), -1e-3, 1e-6);
  // Cut clearance of both tip corners responds identically to DMAG.
  EXPECT_NEAR(jac(0, 0), jac(1, 0), 1e-9);
}

TEST(RotorBuild, GeometryIsValidAndConforming) {
  const RotorDomain rotor = build_rotor(Parameters{});
  EXPECT_EQ(rotor.geom.num_patches(), 38);  // 15 blocks per half + 8 ring segments
  EXPECT_NO_THROW(rotor.geom.validate());
  EXPECT_EQ(rotor.dirichlet.size(), 10u);
  EXPECT_EQ(rotor.links.size(), 4u);
  EXPECT_EQ(rotor.gap_sides.size(), 8u);
}

TEST(RotorBuild, MagnetAreaExact) {
  Parameters p;
  const RotorDomain rotor = build_rotor(p);
  const double quad_area = rotor.geom.patch_area(rotor.magnet_left, 6) +
                           rotor.geom.patch_area(rotor.magnet_right, 6);
  EXPECT_NEAR(quad_area, magnet_area(p), 1e-12 * magnet_area(p));
  EXPECT_NEAR(magnet_area(p), 1.760e-4, 1e-19);
  const auto g = magnet_area_gradient(p);
  EXPECT_DOUBLE_EQ(g[7], 2.0 * 4.0 * 1e-6);
  EXPECT_DOUBLE_EQ(g[16], 2.0 * 22.0 * 1e-6);
}

TEST(RotorBuild, SurfaceRegistryHasMirroredPairs) {
  const RotorDomain rotor = build_rotor(Parameters{});
  ASSERT_EQ(rotor.surface.size(), 58u);
  std::set<int> designs, nodes;
  for (const auto& sp : rotor.surface) {
    designs.insert(sp.design);
    EXPECT_TRUE(nodes.insert(sp.node).second) << "node tagged twice";
    EXPECT_NEAR(sp.base_r, 50e-3, 0.5e-3);  // control points hug the surface circle
  }
  EXPECT_EQ(designs.size(), 29u);
  EXPECT_EQ(*designs.begin(), 0);
  EXPECT_EQ(*designs.rbegin(), 28);
  // Each design index appears exactly twice (one node per half).
  for (int d = 0; d < 29; ++d) {
    int cnt = 0;
    for (const auto& sp : rotor.surface) cnt += sp.design == d;
    EXPECT_EQ(cnt, 2) << "design " << d;
  }
}

TEST(RotorBuild, OffsetsMoveOnlyTaggedNodesRadially) {
  RotorDomain rotor = build_rotor(Parameters{});
  const auto before = rotor.geom.node_position;
  VecX d = VecX::Zero(29);
  d[4] = 0.8e-3;
  d[17] = -1.2e-3;
  apply_offsets(&rotor, d);
  int moved = 0;
  for (int n = 0; n < rotor.geom.num_nodes; ++n) {
    const Vec2 delta = rotor.geom.node_position[static_cast<std::size_t>(n)] -
                       before[static_cast<std::size_t>(n)];
    if (delta.norm() > 0.0) ++moved;
  }
  EXPECT_EQ(moved, 4);  // two mirrored pairs
  for (const auto& sp : rotor.surface) {
    const Vec2 now = rotor.geom.node_position[static_cast<std::size_t>(sp.node)];
    EXPECT_NEAR(now.norm(), sp.base_r + d[sp.design], 1e-15);
  }
  // Restoring zero offsets restores the base geometry bit-for-bit.
  apply_offsets(&rotor, VecX::Zero(29));
  for (int n = 0; n < rotor.geom.num_nodes; ++n)
    EXPECT_EQ((rotor.geom.node_position[static_cast<std::size_t>(n)] -
               before[static_cast<std::size_t>(n)])
                  .norm(),
              0.0);
  EXPECT_THROW(apply_offsets(&rotor, VecX::Constant(29, 2e-3)), std::invalid_argument);
}

TEST(RotorBuild, ModerateOffsetsKeepGeometryValid) {
  RotorDomain rotor = build_rotor(Parameters{});
  apply_offsets(&rotor, VecX::Constant(29, -0.3e-3));
  EXPECT_NO_THROW(rotor.geom.validate());
  apply_offsets(&rotor, VecX::Constant(29, 0.4e-3));
  EXPECT_NO_THROW(rotor.geom.validate());
  // Extremes of the offset box invert the mapping: a uniform inward shift
  // beyond ~0.4 mm folds the thin layer between the magnet pocket corner and
  // the rotor surface, and an outward shift beyond ~0.5 mm inverts the
  // air-gap ring. Validation must reject both (the optimizer treats such
  // designs as infeasible rather than restricting the typed bound).
  apply_offsets(&rotor, VecX::Constant(29, -1.5e-3));
  EXPECT_THROW(rotor.geom.validate(), igamotor::GeometryError);
  apply_offsets(&rotor, VecX::Constant(29, 1.5e-3));
  EXPECT_THROW(rotor.geom.validate(), igamotor::GeometryError);
}

TEST(RotorBuild, SmoothnessQuadraticAndGradientExact) {
  const RotorDomain rotor = build_rotor(Parameters{});
  VecX d = VecX::Zero(29);
  EXPECT_DOUBLE_EQ(offset_smoothness(rotor, d).value, 0.0);
  for (int i = 0; i < 29; ++i) d[i] = 1e-4 * std::sin(0.7 * i + 0.3);
  const Smoothness s = offset_smoothness(rotor, d);
  EXPECT_GT(s.value, 0.0);
  const double h = 1e-9;
  for (int i : {0, 6, 7, 16, 28}) {
    VecX dp = d, dm = d;
    dp[i] += h;
    dm[i] -= h;
    const double fd =
        (offset_smoothness(rotor, dp).value - offset_smoothness(rotor, dm).value) / (2 * h);
    EXPECT_NEAR(s.gradient[i], fd, 1e-5 * std::max(1.0, std::abs(fd)));
  }
}

TEST(RotorBuild, ControlPointJacobianMatchesKnownColumns) {
  Parameters p;
  const RotorDomain base = build_rotor(p);
  const auto jac = control_point_jacobian(p, base);
  EXPECT_TRUE(jac[8].empty());  // operating angle moves no geometry
  for (int l : {0, 4, 7, 16}) EXPECT_FALSE(jac[static_cast<std::size_t>(l)].empty());
  // Surface nodes never move with the parameters.
  std::set<int> surface_nodes;
  for (const auto& sp : base.surface) surface_nodes.insert(sp.node);
  for (const auto& col : jac)
    for (const auto& ns : col) EXPECT_EQ(surface_nodes.count(ns.node), 0u);
  // DMAG shifts the pocket anchor along the pole axis: the inner tip corner
  // nodes move by 1 mm (in machine-frame direction u(45 deg)) per mm.
  const Vec2 upole = igamotor::unit_dir(pi / 4.0);
  bool checked = false;
  for (const auto& ns : jac[0]) {
    const Vec2 pos = base.geom.node_position[static_cast<std::size_t>(ns.node)];
    // The inner tip centre region: radius around 29.6-30.4 mm, near pole axis.
    const double r = pos.norm();
    const Vec2 pole = Vec2(pos.x() * std::cos(pi / 4) - pos.y() * std::sin(pi / 4),
                           pos.x() * std::sin(pi / 4) + pos.y() * std::cos(pi / 4));
    if (r > 29.0e-3 && r < 31.0e-3 && std::abs(pole.x()) < 3e-3 && pole.y() > 29e-3) {
      EXPECT_NEAR((ns.dpos - 1e-3 * upole).norm(), 0.0, 1e-6 * 1e-3);
      checked = true;
    }
  }
  EXPECT_TRUE(checked);
}

TEST(StatorBuild, GeometryAndSlotArea) {
  const StatorDomain st = build_stator();
  EXPECT_EQ(st.geom.num_patches(), 36);
  EXPECT_NO_THROW(st.geom.validate());
  EXPECT_EQ(st.dirichlet.size(), 9u);
  EXPECT_EQ(st.links.size(), 4u);
  EXPECT_EQ(st.gap_sides.size(), 9u);
  // One slot column: 10 degrees of the annulus between 56.2 and 81.7 mm.
  const double expect = pi / 18.0 * (81.7e-3 * 81.7e-3 - 56.2e-3 * 56.2e-3) / 2.0;
  EXPECT_NEAR(st.a_coil, expect, 1e-9 * expect);
}

TEST(StatorBuild, PhaseMultipliersSumToZero) {
  Excitation exc;
  for (double beta : {0.0, 0.1, 0.37}) {
    const auto s = phase_multipliers(exc, 0.2, beta);
    EXPECT_NEAR(s[0] + s[1] + s[2], 0.0, 1e-14);
    const auto c = phase_multipliers_dphi(exc, 0.2, beta);
    const double h = 1e-7;
    const auto sp = phase_multipliers(exc, 0.2 + h, beta);
    const auto sm = phase_multipliers(exc, 0.2 - h, beta);
    for (int k = 0; k < 3; ++k)
      EXPECT_NEAR(c[static_cast<std::size_t>(k)],
                  (sp[static_cast<std::size_t>(k)] - sm[static_cast<std::size_t>(k)]) / (2 * h),
                  1e-7);
  }
}

TEST(RotorBuild, RebuildIsDeterministic) {
  const RotorDomain a = build_rotor(Parameters{});
  const RotorDomain b = build_rotor(Parameters{});
  ASSERT_EQ(a.geom.num_nodes, b.geom.num_nodes);
  for (int n = 0; n < a.geom.num_nodes; ++n)
    EXPECT_EQ((a.geom.node_position[static_cast<std::size_t>(n)] -
               b.geom.node_position[static_cast<std::size_t>(n)])
                  .norm(),
              0.0);
}
