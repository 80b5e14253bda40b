#pragma once

// Quarter model of a four-pole interior-magnet synchronous machine, built as
// two conforming NURBS multipatch domains (rotor and stator) that meet on the
// mid-airgap circle where a harmonic trace coupling acts.
//
// Rotor template (per half pole, mirrored about the pole axis): a V-shaped
// magnet pocket consisting of an inner flux-barrier slit, the magnet bar and
// an outer slit whose tip face runs parallel to the antiperiodic cut plane,
// embedded in iron web/fan/surface blocks, plus a thin airgap ring whose
// outer boundary carries the coupling trace. The ring outer row, the surface
// segmentation angles and the bore fan split angles are fixed constants, so
// the coupling matrices and every NURBS weight are independent of all design
// variables; geometry sensitivities are therefore complete in terms of
// control-point positions alone.
//
// Design variables: 17 named shape/excitation parameters (millimetres and
// degrees) and 29 mirrored pairs of radial surface offsets (metres).

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "igamotor/assembly.hpp"
#include "igamotor/dofmap.hpp"
#include "igamotor/geometry.hpp"
#include "igamotor/materials.hpp"

namespace igamotor::machine {

// ---------------------------------------------------------------------------
// Parameters

struct ParamInfo {
  const char* name;
  double initial;
  double lo;
  double hi;
};

// Order is fixed; it defines the layout of parameter vectors and Jacobians.
inline const std::array<ParamInfo, 17>& param_table() {
  static const std::array<ParamInfo, 17> t = {{
      {"DMAG", 30.0, 20.0, 40.0},          // pocket anchor height [mm]
      {"DSLIT5", 1.0, 0.5, 6.0},           // inner slit tip spread [mm]
      {"DSLIT6", 2.0, 1.5, 8.0},           // outer slit tip spread [mm]
      {"LSLIT1", 6.4, 1.0, 8.0},           // outer slit length [mm]
      {"LSLIT2", 4.3, 1.0, 8.0},           // inner slit length [mm]
      {"MA", 150.0, 100.0, 160.0},         // magnet V opening angle [deg]
      {"MT1", 4.0, 1.5, 10.0},             // web width at pocket anchor [mm]
      {"MW1", 22.0, 10.0, 27.0},           // magnet width [mm]
      {"OPERATING_ANGLE", 0.0, -20.0, 20.0},  // current phase shift [deg]
      {"RA1", 144.0, 130.0, 170.0},        // inner slit direction [deg]
      {"RA2", 166.0, 150.0, 179.0},        // outer slit direction [deg]
      {"RS", 1.0, 1.0, 4.0},               // outer tip setback [mm]
      {"RW2", 1.0, 0.5, 4.0},              // inner tip lower rib [mm]
      {"RW3", 1.0, 0.5, 4.0},              // inner tip upper rib [mm]
      {"RW4", 1.0, 0.5, 2.0},              // outer tip lower rib [mm]
      {"RW5", 1.0, 0.5, 2.0},              // outer tip upper rib [mm]
      {"WMAG", 4.0, 3.0, 8.0},             // magnet thickness [mm]
  }};
  return t;
}

struct Parameters {
  std::array<double, 17> v{};

  Parameters() {
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = param_table()[i].initial;
  }

  double operator[](int i) const { return v[static_cast<std::size_t>(i)]; }
  double& operator[](int i) { return v[static_cast<std::size_t>(i)]; }

  // Named accessors (values in mm / degrees as configured).
  double dmag() const { return v[0]; }
  double dslit5() const { return v[1]; }
  double dslit6() const { return v[2]; }
  double lslit1() const { return v[3]; }
  double lslit2() const { return v[4]; }
  double ma() const { return v[5]; }
  double mt1() const { return v[6]; }
  double mw1() const { return v[7]; }
  double operating_angle() const { return v[8]; }
  double ra1() const { return v[9]; }
  double ra2() const { return v[10]; }
  double rs() const { return v[11]; }
  double rw2() const { return v[12]; }
  double rw3() const { return v[13]; }
  double rw4() const { return v[14]; }
  double rw5() const { return v[15]; }
  double wmag() const { return v[16]; }

  static int index_of(const std::string& name) {
    for (std::size_t i = 0; i < param_table().size(); ++i)
      if (name == param_table()[i].name) return static_cast<int>(i);
    throw std::invalid_argument("unknown parameter: " + name);
  }

  void validate() const {
    for (std::size_t i = 0; i < v.size(); ++i) {
      const auto& info = param_table()[i];
      if (!(v[i] >= info.lo && v[i] <= info.hi))
        throw std::invalid_argument(std::string(info.name) + " = " + std::to_string(v[i]) +
                                    " outside [" + std::to_string(info.lo) + ", " +
                                    std::to_string(info.hi) + "]");
    }
  }
};

// Fixed machine dimensions (millimetres / degrees).
struct Fixed {
  static constexpr double kLength = 35.0;    // axial stack length
  static constexpr double kRotorOuter = 50.0;   // RD1 / 2
  static constexpr double kRotorBore = 14.55;   // RD2 / 2
  static constexpr double kGapMid = 50.5;       // coupling circle
  static constexpr double kStatorBore = 51.0;   // SD2 / 2
  static constexpr double kStatorOuter = 102.0;  // SD1 / 2
  static constexpr double kToothTipDepth = 5.2;  // ST + SW2
  static constexpr double kSlotDepth = 25.5;     // SW4
};

inline double deg(double d) { return d * pi / 180.0; }

// ---------------------------------------------------------------------------
// Pole-frame template nodes (mm, pole axis along +y, left half x < 0)

// Fixed template angles in pole-frame degrees. Surface segmentation and bore
// fan splits never move with the parameters, keeping arc sweeps (and with
// them the NURBS weights and the coupling trace) design-independent.
struct TemplateAngles {
  static constexpr double kSurf0 = 90.0;
  static constexpr double kSurfA = 96.0;
  static constexpr double kSurfB = 122.5;
  static constexpr double kSurfT = 132.5;
  static constexpr double kSurfCut = 135.0;
  static constexpr double kBore1 = 94.4;
  static constexpr double kBore2 = 101.1;
  static constexpr double kBore3 = 126.9;
  static constexpr double kBore4 = 132.75;
};

struct PocketNodes {
  Vec2 t_in_c, t_in_m, t_in_p;  // inner slit tip centre and corners
  Vec2 a, a_m, a_p;             // magnet inner end centre and corners
  Vec2 b, b_m, b_p;             // magnet outer end centre and corners
  Vec2 t_c, t_m, t_p;           // outer slit tip centre and corners
  Vec2 c2a, c2b;                // cut-plane feet of the outer tip corners
  Vec2 x2, m, y1;               // axis scaffold nodes
};

// Left-half pocket geometry in the pole frame (mm). The outer slit direction
// is RA2 + 59 deg so that at the initial design the tip face is parallel to
// the 135-degree cut plane (uniform bridge thickness).
inline PocketNodes pocket_nodes(const Parameters& p) {
  PocketNodes n;
  const double half = deg(p.ma()) / 2.0;
  const Vec2 vdir(-std::sin(half), std::cos(half));  // along the magnet bar
  const Vec2 vnor(std::cos(half), std::sin(half));   // across, away from cut

  const Vec2 u1 = unit_dir(deg(p.ra1() - 180.0));
  Vec2 m1(-u1.y(), u1.x());
  if (m1.dot(vnor) < 0.0) m1 = -m1;

  n.t_in_c = Vec2(-p.mt1() / 2.0, p.dmag());
  n.t_in_m = n.t_in_c - (p.dslit5() + p.rw2()) / 4.0 * m1;
  n.t_in_p = n.t_in_c + (p.dslit5() + p.rw3()) / 4.0 * m1;

  n.a = n.t_in_c - p.lslit2() * u1;
  n.a_m = n.a - p.wmag() / 2.0 * vnor;
  n.a_p = n.a + p.wmag() / 2.0 * vnor;
  n.b = n.a + p.mw1() * vdir;
  n.b_m = n.b - p.wmag() / 2.0 * vnor;
  n.b_p = n.b + p.wmag() / 2.0 * vnor;

  const Vec2 u2 = unit_dir(deg(p.ra2() + 59.0));
  Vec2 m2(-u2.y(), u2.x());
  if (m2.dot(vnor) < 0.0) m2 = -m2;
  const Vec2 t_out = n.b + p.lslit1() * u2;
  n.t_c = t_out - p.rs() * m2;
  n.t_m = n.t_c - (p.dslit6() + p.rw4()) / 4.0 * m2;
  n.t_p = n.t_c + (p.dslit6() + p.rw5()) / 4.0 * m2;

  // Perpendicular feet on the 135-degree cut line (the ray along u(135)).
  const Vec2 cutn = unit_dir(pi / 4.0);  // unit normal of the cut plane
  n.c2a = n.t_m - n.t_m.dot(cutn) * cutn;
  n.c2b = n.t_p - n.t_p.dot(cutn) * cutn;

  n.x2 = Vec2(0.0, p.dmag() - 1.0);
  n.m = Vec2(0.0, (n.t_in_p.y() + n.a_p.y()) / 2.0);
  n.y1 = Vec2(0.0, n.a_p.y() + 1.0);
  return n;
}

// ---------------------------------------------------------------------------
// Clearance constraints: signed shortfalls (metres), feasible when g <= 0.
// All nine are smooth closed-form expressions of the parameters.

inline constexpr double kClearance = 1.5;  // mm

inline std::array<double, 9> clearance_shortfalls(const Parameters& p) {
  const PocketNodes n = pocket_nodes(p);
  const Vec2 cutn = unit_dir(pi / 4.0);
  const auto cut = [&](const Vec2& q) { return q.dot(cutn); };
  const auto surf = [&](const Vec2& q) { return Fixed::kRotorOuter - q.norm(); };
  std::array<double, 9> g{};
  g[0] = kClearance - cut(n.t_m);                          // outer tip corner vs cut plane
  g[1] = kClearance - cut(n.t_p);
  g[2] = kClearance - surf(n.t_p);                         // outer tip vs rotor surface
  g[3] = kClearance - surf(n.b_p);                         // magnet corner vs surface
  g[4] = kClearance - cut(n.b_m);                          // magnet corner vs cut plane
  g[5] = kClearance - 2.0 * std::abs(n.t_in_p.x());        // web between mirrored tips
  g[6] = kClearance - (n.t_in_m.norm() - Fixed::kRotorBore);  // pocket vs bore
  g[7] = kClearance - p.lslit1();                          // outer slit keeps length
  g[8] = kClearance - p.lslit2();                          // inner slit keeps length
  for (double& gi : g) gi *= 1e-3;                         // to metres
  return g;
}

// Central-difference Jacobian of the shortfalls, rows = constraints,
// columns = the 17 parameters (natural units). The step is 1e-6 of each
// parameter's bound range, i.e. 1e-6 in box-scaled coordinates.
inline Eigen::Matrix<double, 9, 17> clearance_jacobian(const Parameters& p) {
  Eigen::Matrix<double, 9, 17> jac;
  for (int l = 0; l < 17; ++l) {
    const auto& info = param_table()[static_cast<std::size_t>(l)];
    const double h = 1e-6 * (info.hi - info.lo);
    Parameters pp = p, pm = p;
    pp[l] += h;
    pm[l] -= h;
    const auto gp = clearance_shortfalls(pp);
    const auto gm = clearance_shortfalls(pm);
    for (int i = 0; i < 9; ++i)
      jac(i, l) = (gp[static_cast<std::size_t>(i)] - gm[static_cast<std::size_t>(i)]) / (2.0 * h);
  }
  return jac;
}

// Total magnet cross-section of the quarter model [m^2] and its gradient.
inline double magnet_area(const Parameters& p) { return 2.0 * p.mw1() * p.wmag() * 1e-6; }

inline Eigen::Matrix<double, 17, 1> magnet_area_gradient(const Parameters& p) {
  Eigen::Matrix<double, 17, 1> g = Eigen::Matrix<double, 17, 1>::Zero();
  g[7] = 2.0 * p.wmag() * 1e-6;   // d/dMW1
  g[16] = 2.0 * p.mw1() * 1e-6;   // d/dWMAG
  return g;
}

// ---------------------------------------------------------------------------
// Geometry construction helpers

namespace detail {

struct EdgeCache {
  geometry::MultiPatchBuilder* builder;
  const std::map<int, Vec2>* pos;  // node id -> machine-frame position [m]
  std::map<std::pair<int, int>, std::pair<int, int>> edges;  // (lo,hi) -> (edge, from)

  int put(int a, int b, splines::NurbsCurve curve) {
    const auto key = std::minmax(a, b);
    if (edges.count(key)) throw std::logic_error("edge registered twice");
    const int id = builder->add_edge(std::move(curve));
    edges[key] = {id, a};
    return id;
  }

  // Edge from a to b; creates a straight degree-2 edge on first use.
  geometry::SideRef get(int a, int b) {
    const auto key = std::minmax(a, b);
    auto it = edges.find(key);
    if (it == edges.end()) {
      const int id = builder->add_edge(splines::NurbsCurve::line(pos->at(a), pos->at(b)));
      edges[key] = {id, a};
      return {id, false};
    }
    return {it->second.first, it->second.second != a};
  }

  int lookup(int a, int b) const {
    auto it = edges.find(std::minmax(a, b));
    if (it == edges.end()) throw std::logic_error("edge not found");
    return it->second.first;
  }
};

// Adds a quad patch from a corner cycle (any orientation; flipped to
// counter-clockwise automatically so the mapping Jacobian is positive).
// n01/n03 request element counts along c0->c1 and c0->c3.
inline int add_quad(EdgeCache& ec, std::array<int, 4> c, int n01, int n03,
                    const std::string& material) {
  const auto& pos = *ec.pos;
  double s2 = 0.0;
  for (int i = 0; i < 4; ++i) {
    const Vec2& a = pos.at(c[static_cast<std::size_t>(i)]);
    const Vec2& b = pos.at(c[static_cast<std::size_t>((i + 1) % 4)]);
    s2 += a.x() * b.y() - b.x() * a.y();
  }
  if (s2 == 0.0)
    throw std::invalid_argument("degenerate quad " + std::to_string(c[0]) + "," +
                                std::to_string(c[1]) + "," + std::to_string(c[2]) + "," +
                                std::to_string(c[3]));
  if (s2 < 0.0) {
    c = {c[0], c[3], c[2], c[1]};
    std::swap(n01, n03);
  }
  const geometry::SideRef s = ec.get(c[0], c[1]);
  const geometry::SideRef e = ec.get(c[1], c[2]);
  const geometry::SideRef n = ec.get(c[3], c[2]);
  const geometry::SideRef w = ec.get(c[0], c[3]);
  return ec.builder->add_patch({s, n, w, e}, material, n01, n03);
}

// Finds the (patch, side) pair that references `edge`.
inline std::pair<int, int> side_of_edge(const geometry::MultiPatchGeometry& g, int edge) {
  for (int p = 0; p < g.num_patches(); ++p)
    for (int s = 0; s < 4; ++s)
      if (g.patch_sides[static_cast<std::size_t>(p)][static_cast<std::size_t>(s)].edge == edge)
        return {p, s};
  throw std::logic_error("edge has no patch side");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Rotor domain

// One offsetable control point on the rotor surface.
struct SurfacePoint {
  int node = -1;       // geometry node id
  int design = -1;     // 0..28, shared by the mirrored pair
  Vec2 base = Vec2::Zero();  // position at zero offset [m]
  double base_r = 0.0;
  Vec2 rhat = Vec2::Zero();
  double pole_angle = 0.0;  // radians, in [pi/2, 3pi/4] for the left half
};

struct RotorDomain {
  geometry::MultiPatchGeometry geom;
  std::vector<int> dirichlet;                 // bore arcs
  std::vector<assembly::EdgeLink> links;      // antiperiodic cut pairs
  std::vector<std::pair<int, int>> gap_sides;  // ring outer arcs (coupling)
  int magnet_left = -1;
  int magnet_right = -1;
  double alpha_left = 0.0;   // magnetisation angles, machine frame [rad]
  double alpha_right = 0.0;
  std::vector<SurfacePoint> surface;  // 58 entries, designs 0..28 twice
};

// Span requests per template block. Values are coupled through the knot
// conformity fixpoint; the combinations below are closed under it (unions
// never insert knots into the fixed surface discretisation).
struct RotorSpans {
  int surf1 = 7, surf2 = 10, surf3 = 7, surf4 = 5;  // offsetable CP counts
  int radial_fan = 5;    // bore fans, radial direction
  int radial_outer = 3;  // surface blocks, radial direction
  int across = 2;        // pocket cross-direction chain
};

namespace detail {

// Surface/bore segmentation in pole-frame degrees for the left half; the
// right half mirrors these about the pole axis.
struct LeftAngles {
  std::array<double, 5> surf = {TemplateAngles::kSurf0, TemplateAngles::kSurfA,
                                TemplateAngles::kSurfB, TemplateAngles::kSurfT,
                                TemplateAngles::kSurfCut};
  std::array<double, 6> bore = {90.0, TemplateAngles::kBore1, TemplateAngles::kBore2,
                                TemplateAngles::kBore3, TemplateAngles::kBore4, 135.0};
};

}  // namespace detail

inline RotorDomain build_rotor(const Parameters& p, const RotorSpans& spans = {}) {
  using splines::NurbsCurve;
  namespace det = detail;

  const PocketNodes pn = pocket_nodes(p);
  const det::LeftAngles ang;

  // Node ids: left-half names; right half adds kMirror to non-axis ids.
  enum Node : int {
    X1, X2, M, Y1, S0, G0,                      // pole-axis nodes (self-mirrored)
    TINM, TINP, AM, AP, BM, BP, TM, TP, C2A, C2B,
    Q1, Q2, Q3, Q4, C1, SA, SB, STn, SCUT, GA, GB, GT, GCUT,
    kCount
  };
  constexpr int kMirror = 100;
  const auto mir = [](int id) { return id < 6 ? id : id + kMirror; };

  // Pole frame (mm) -> machine frame (m): rotate by -45 degrees and scale.
  const double c45 = std::cos(pi / 4.0), s45 = std::sin(pi / 4.0);
  const auto xf = [&](const Vec2& q) -> Vec2 {
    return 1e-3 * Vec2(c45 * q.x() + s45 * q.y(), -s45 * q.x() + c45 * q.y());
  };
  const auto xfm = [&](const Vec2& q) -> Vec2 { return xf(Vec2(-q.x(), q.y())); };

  std::map<int, Vec2> pos;
  const auto place = [&](int id, const Vec2& pole_mm) {
    pos[id] = xf(pole_mm);
    if (id >= 6) pos[id + kMirror] = xfm(pole_mm);
  };
  place(X1, Vec2(0.0, Fixed::kRotorBore));
  place(X2, pn.x2);
  place(M, pn.m);
  place(Y1, pn.y1);
  place(S0, Vec2(0.0, Fixed::kRotorOuter));
  place(G0, Vec2(0.0, Fixed::kGapMid));
  place(TINM, pn.t_in_m);
  place(TINP, pn.t_in_p);
  place(AM, pn.a_m);
  place(AP, pn.a_p);
  place(BM, pn.b_m);
  place(BP, pn.b_p);
  place(TM, pn.t_m);
  place(TP, pn.t_p);
  place(C2A, pn.c2a);
  place(C2B, pn.c2b);
  const std::array<int, 6> bore_ids = {X1, Q1, Q2, Q3, Q4, C1};
  for (int i = 1; i < 6; ++i)
    place(bore_ids[static_cast<std::size_t>(i)],
          Fixed::kRotorBore * unit_dir(deg(ang.bore[static_cast<std::size_t>(i)])));
  const std::array<int, 5> surf_ids = {S0, SA, SB, STn, SCUT};
  const std::array<int, 5> gap_ids = {G0, GA, GB, GT, GCUT};
  for (int i = 1; i < 5; ++i) {
    place(surf_ids[static_cast<std::size_t>(i)],
          Fixed::kRotorOuter * unit_dir(deg(ang.surf[static_cast<std::size_t>(i)])));
    place(gap_ids[static_cast<std::size_t>(i)],
          Fixed::kGapMid * unit_dir(deg(ang.surf[static_cast<std::size_t>(i)])));
  }

  geometry::MultiPatchBuilder builder;
  det::EdgeCache ec{&builder, &pos, {}};

  // Arcs (machine frame). Left-half pole angles [a0, a1] map to machine
  // angles [a0 - 45, a1 - 45]; mirrored arcs run [135 - a1, 135 - a0].
  std::vector<int> bore_arcs, surf_arcs_l, surf_arcs_r, gap_arcs_l, gap_arcs_r;
  const auto arc_between = [&](int ida, int idb, double r_mm, double a0, double a1,
                               bool mirrored) {
    const double m0 = mirrored ? deg(135.0 - a1) : deg(a0 - 45.0);
    const double m1 = mirrored ? deg(135.0 - a0) : deg(a1 - 45.0);
    const int from = mirrored ? idb : ida;
    const int to = mirrored ? ida : idb;
    return ec.put(from, to, NurbsCurve::arc(Vec2::Zero(), r_mm * 1e-3, m0, m1));
  };
  for (int i = 0; i < 5; ++i) {
    const auto a0 = ang.bore[static_cast<std::size_t>(i)];
    const auto a1 = ang.bore[static_cast<std::size_t>(i + 1)];
    const int ida = bore_ids[static_cast<std::size_t>(i)];
    const int idb = bore_ids[static_cast<std::size_t>(i + 1)];
    bore_arcs.push_back(arc_between(ida, idb, Fixed::kRotorBore, a0, a1, false));
    bore_arcs.push_back(arc_between(mir(ida), mir(idb), Fixed::kRotorBore, a0, a1, true));
  }
  for (int i = 0; i < 4; ++i) {
    const auto a0 = ang.surf[static_cast<std::size_t>(i)];
    const auto a1 = ang.surf[static_cast<std::size_t>(i + 1)];
    const int sa = surf_ids[static_cast<std::size_t>(i)];
    const int sb = surf_ids[static_cast<std::size_t>(i + 1)];
    const int ga = gap_ids[static_cast<std::size_t>(i)];
    const int gb = gap_ids[static_cast<std::size_t>(i + 1)];
    surf_arcs_l.push_back(arc_between(sa, sb, Fixed::kRotorOuter, a0, a1, false));
    surf_arcs_r.push_back(arc_between(mir(sa), mir(sb), Fixed::kRotorOuter, a0, a1, true));
    gap_arcs_l.push_back(arc_between(ga, gb, Fixed::kGapMid, a0, a1, false));
    gap_arcs_r.push_back(arc_between(mir(ga), mir(gb), Fixed::kGapMid, a0, a1, true));
  }
  // Ring radial spokes: straight degree-1 edges, so the ring has exactly two
  // control-point rows radially (surface row + fixed coupling row).
  for (int i = 0; i < 5; ++i) {
    const int s = surf_ids[static_cast<std::size_t>(i)];
    const int g = gap_ids[static_cast<std::size_t>(i)];
    ec.put(s, g, NurbsCurve::line(pos.at(s), pos.at(g), 1));
    if (s >= 6) ec.put(mir(s), mir(g), NurbsCurve::line(pos.at(mir(s)), pos.at(mir(g)), 1));
  }

  // Block decomposition, one half at a time (mirror shares the axis edges).
  RotorDomain out;
  const auto half_blocks = [&](bool right) {
    const auto id = [&](int i) { return right ? mir(i) : i; };
    const std::string mag = right ? "magnet_r" : "magnet_l";
    det::add_quad(ec, {id(X1), id(Q1), id(TINM), X2}, spans.surf1, spans.radial_fan, "iron");
    det::add_quad(ec, {X2, id(TINM), id(TINP), M}, spans.surf1, spans.across, "iron");
    det::add_quad(ec, {M, id(TINP), id(AP), Y1}, spans.surf1, spans.across, "iron");
    det::add_quad(ec, {id(Q1), id(Q2), id(AM), id(TINM)}, spans.across, spans.radial_fan,
                  "iron");
    det::add_quad(ec, {id(Q2), id(Q3), id(BM), id(AM)}, spans.surf2, spans.radial_fan, "iron");
    det::add_quad(ec, {id(Q3), id(Q4), id(TM), id(BM)}, spans.surf3, spans.radial_fan, "iron");
    det::add_quad(ec, {id(Q4), id(C1), id(C2A), id(TM)}, spans.surf4, spans.radial_fan,
                  "iron");
    det::add_quad(ec, {id(AM), id(TINM), id(TINP), id(AP)}, spans.across, spans.across, "air");
    const int pmag = det::add_quad(ec, {id(AM), id(BM), id(BP), id(AP)}, spans.surf2,
                                   spans.across, mag);
    det::add_quad(ec, {id(BM), id(TM), id(TP), id(BP)}, spans.surf3, spans.across, "air");
    det::add_quad(ec, {id(TM), id(TP), id(C2B), id(C2A)}, spans.across, spans.surf4, "iron");
    det::add_quad(ec, {id(AP), Y1, S0, id(SA)}, spans.surf1, spans.radial_outer, "iron");
    det::add_quad(ec, {id(AP), id(SA), id(SB), id(BP)}, spans.radial_outer, spans.surf2,
                  "iron");
    det::add_quad(ec, {id(BP), id(SB), id(STn), id(TP)}, spans.radial_outer, spans.surf3,
                  "iron");
    det::add_quad(ec, {id(TP), id(STn), id(SCUT), id(C2B)}, spans.radial_outer, spans.surf4,
                  "iron");
    return pmag;
  };
  out.magnet_left = half_blocks(false);
  out.magnet_right = half_blocks(true);

  // Airgap ring: one patch per surface segment, both halves.
  std::vector<int> ring_patches;
  const std::array<int, 4> seg_spans = {spans.surf1, spans.surf2, spans.surf3, spans.surf4};
  for (int i = 0; i < 4; ++i) {
    const int sa = surf_ids[static_cast<std::size_t>(i)];
    const int sb = surf_ids[static_cast<std::size_t>(i + 1)];
    const int ga = gap_ids[static_cast<std::size_t>(i)];
    const int gb = gap_ids[static_cast<std::size_t>(i + 1)];
    ring_patches.push_back(
        det::add_quad(ec, {sa, sb, gb, ga}, seg_spans[static_cast<std::size_t>(i)], 1, "air"));
    ring_patches.push_back(det::add_quad(ec, {mir(sa), mir(sb), mir(gb), mir(ga)},
                                         seg_spans[static_cast<std::size_t>(i)], 1, "air"));
  }

  out.geom = builder.build();

  out.dirichlet = bore_arcs;
  const auto link = [&](int a0, int a1) {
    const int ea = ec.lookup(a0, a1);
    const int eb = ec.lookup(mir(a0), mir(a1));
    const bool fa = ec.edges.at(std::minmax(a0, a1)).second == a0;
    const bool fb = ec.edges.at(std::minmax(mir(a0), mir(a1))).second == mir(a0);
    out.links.push_back({ea, eb, -1.0, fa != fb});
  };
  link(C1, C2A);
  link(C2A, C2B);
  link(C2B, SCUT);
  link(SCUT, GCUT);

  for (int pr : ring_patches) {
    // Coupling trace: the ring side that carries the mid-gap arc.
    for (int gid : gap_arcs_l) {
      for (int s = 0; s < 4; ++s)
        if (out.geom.patch_sides[static_cast<std::size_t>(pr)][static_cast<std::size_t>(s)]
                .edge == gid)
          out.gap_sides.emplace_back(pr, s);
    }
    for (int gid : gap_arcs_r) {
      for (int s = 0; s < 4; ++s)
        if (out.geom.patch_sides[static_cast<std::size_t>(pr)][static_cast<std::size_t>(s)]
                .edge == gid)
          out.gap_sides.emplace_back(pr, s);
    }
  }
  if (out.gap_sides.size() != 8) throw std::logic_error("rotor coupling sides incomplete");

  // Magnetisation: both bars point toward the pole axis; mirrored halves
  // differ by reflection. Machine frame = pole frame - 45 degrees.
  out.alpha_left = deg(p.ma() / 2.0 - 45.0);
  out.alpha_right = deg(135.0 - p.ma() / 2.0);

  // Offsetable surface control points: interior control points of the eight
  // surface arcs. Left-half designs are numbered by increasing pole angle;
  // each mirrored partner shares the design index.
  int design0 = 0;
  for (int i = 0; i < 4; ++i) {
    const int el = surf_arcs_l[static_cast<std::size_t>(i)];
    const int er = surf_arcs_r[static_cast<std::size_t>(i)];
    const auto [pl, sl] = det::side_of_edge(out.geom, el);
    const auto [pr, sr] = det::side_of_edge(out.geom, er);
    auto locs_l = out.geom.side_locals(pl, sl);
    auto locs_r = out.geom.side_locals(pr, sr);
    if (out.geom.patch_sides[static_cast<std::size_t>(pl)][static_cast<std::size_t>(sl)]
            .reversed)
      std::reverse(locs_l.begin(), locs_l.end());
    if (out.geom.patch_sides[static_cast<std::size_t>(pr)][static_cast<std::size_t>(sr)]
            .reversed)
      std::reverse(locs_r.begin(), locs_r.end());
    // locs now run along the stored arc direction: left arcs run with
    // increasing machine angle (increasing pole angle); mirrored arcs too,
    // which in pole-frame terms is decreasing angle -> reverse for pairing.
    std::reverse(locs_r.begin(), locs_r.end());
    if (locs_l.size() != locs_r.size() ||
        static_cast<int>(locs_l.size()) != seg_spans[static_cast<std::size_t>(i)] + 2)
      throw std::logic_error("surface arc discretisation unexpected");
    for (std::size_t k = 1; k + 1 < locs_l.size(); ++k) {
      SurfacePoint qa, qb;
      qa.node = out.geom.node_of(pl, locs_l[k]);
      qb.node = out.geom.node_of(pr, locs_r[k]);
      qa.design = qb.design = design0 + static_cast<int>(k) - 1;
      for (SurfacePoint* q : {&qa, &qb}) {
        q->base = out.geom.node_position[static_cast<std::size_t>(q->node)];
        q->base_r = q->base.norm();
        q->rhat = q->base / q->base_r;
        double a = std::atan2(q->base.y(), q->base.x()) + pi / 4.0;  // pole frame
        q->pole_angle = a;
      }
      // The mirrored partner must sit at the reflected position.
      const Vec2 want(qa.base.y(), qa.base.x());
      if ((want - qb.base).norm() > 1e-9)
        throw std::logic_error("surface mirror pairing failed");
      out.surface.push_back(qa);
      out.surface.push_back(qb);
    }
    design0 += seg_spans[static_cast<std::size_t>(i)] - 1 + 1;
  }
  if (design0 != 29 || out.surface.size() != 58)
    throw std::logic_error("surface offset registry incomplete");
  return out;
}

inline constexpr double kOffsetBound = 1.5e-3;  // |offset| limit [m]

// Moves the tagged surface control points radially by the 29 design offsets.
// Every other control point, all weights and the coupling row stay put.
inline void apply_offsets(RotorDomain* rotor, const VecX& offsets) {
  if (offsets.size() != 29) throw std::invalid_argument("expected 29 surface offsets");
  for (int i = 0; i < 29; ++i)
    if (!(std::abs(offsets[i]) <= kOffsetBound + 1e-15))
      throw std::invalid_argument("surface offset exceeds 1.5 mm bound");
  for (const SurfacePoint& sp : rotor->surface)
    rotor->geom.set_node_position(sp.node, sp.base + offsets[sp.design] * sp.rhat);
}

// Ripple-smoothness of the offset profile: sum of squared slopes of the
// offset chain along the left surface half, with the fixed segment-junction
// control points participating as zeros.
struct Smoothness {
  double value = 0.0;
  VecX gradient;  // d/d(offsets), 29 entries
};

inline Smoothness offset_smoothness(const RotorDomain& rotor, const VecX& offsets) {
  // Consecutive design offsets along the surface, ordered by angular
  // position; each mirrored pair contributes once (left half chosen).
  std::vector<std::pair<double, int>> chain;
  for (const SurfacePoint& sp : rotor.surface)
    if (sp.pole_angle > pi / 2.0 + 1e-12)
      chain.emplace_back(sp.pole_angle, sp.design);
  std::sort(chain.begin(), chain.end());
  Smoothness s;
  s.gradient = VecX::Zero(29);
  for (std::size_t i = 0; i + 1 < chain.size(); ++i) {
    const double dth = chain[i + 1].first - chain[i].first;
    if (dth <= 0.0) throw std::logic_error("surface chain not strictly ordered");
    const double d = offsets[chain[i + 1].second] - offsets[chain[i].second];
    s.value += d * d / dth;
    s.gradient[chain[i + 1].second] += 2.0 * d / dth;
    s.gradient[chain[i].second] -= 2.0 * d / dth;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Stator domain (design-independent)

struct StatorDomain {
  geometry::MultiPatchGeometry geom;
  std::vector<int> dirichlet;                  // outer boundary arcs
  std::vector<assembly::EdgeLink> links;       // antiperiodic cut pairs
  std::vector<std::pair<int, int>> gap_sides;  // inner arcs on the coupling circle
  std::array<int, 3> coil_patch = {-1, -1, -1};   // patch per phase 0,1,2
  std::array<double, 3> coil_sign = {1.0, 1.0, -1.0};  // winding sense per phase
  double a_coil = 0.0;  // slot cross-section [m^2]
};

inline StatorDomain build_stator() {
  using splines::NurbsCurve;
  namespace det = detail;

  const std::array<double, 5> radii = {Fixed::kGapMid, Fixed::kStatorBore,
                                       Fixed::kStatorBore + Fixed::kToothTipDepth,
                                       Fixed::kStatorBore + Fixed::kToothTipDepth +
                                           Fixed::kSlotDepth,
                                       Fixed::kStatorOuter};
  const int ncol = 9;
  const std::array<int, 4> radial_spans = {1, 2, 4, 3};
  const int angular_spans = 7;

  std::map<int, Vec2> pos;
  const auto nid = [&](int i, int j) { return 16 * i + j; };
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j <= ncol; ++j)
      pos[nid(i, j)] = 1e-3 * radii[static_cast<std::size_t>(i)] * unit_dir(deg(10.0 * j));

  geometry::MultiPatchBuilder builder;
  det::EdgeCache ec{&builder, &pos, {}};
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < ncol; ++j)
      ec.put(nid(i, j), nid(i, j + 1),
             NurbsCurve::arc(Vec2::Zero(), 1e-3 * radii[static_cast<std::size_t>(i)],
                             deg(10.0 * j), deg(10.0 * (j + 1))));

  StatorDomain out;
  // Winding layout: three 30-degree phase belts (A+, C-, B+), each with one
  // slot column in its middle.
  const std::map<int, int> coil_phase = {{1, 0}, {4, 2}, {7, 1}};
  for (int l = 0; l < 4; ++l)
    for (int j = 0; j < ncol; ++j) {
      std::string mat = l == 0 ? "air" : "iron";
      auto it = coil_phase.find(j);
      const bool coil = l == 2 && it != coil_phase.end();
      if (coil) mat = "coil";
      const int pid = det::add_quad(
          ec, {nid(l, j), nid(l, j + 1), nid(l + 1, j + 1), nid(l + 1, j)}, angular_spans,
          radial_spans[static_cast<std::size_t>(l)], mat);
      if (coil) out.coil_patch[static_cast<std::size_t>(it->second)] = pid;
    }

  out.geom = builder.build();

  for (int j = 0; j < ncol; ++j) {
    out.dirichlet.push_back(ec.lookup(nid(4, j), nid(4, j + 1)));
    const int gap_edge = ec.lookup(nid(0, j), nid(0, j + 1));
    out.gap_sides.push_back(det::side_of_edge(out.geom, gap_edge));
  }
  for (int l = 0; l < 4; ++l) {
    const int e0 = ec.lookup(nid(l, 0), nid(l + 1, 0));
    const int e9 = ec.lookup(nid(l, ncol), nid(l + 1, ncol));
    const bool f0 = ec.edges.at(std::minmax(nid(l, 0), nid(l + 1, 0))).second == nid(l, 0);
    const bool f9 =
        ec.edges.at(std::minmax(nid(l, ncol), nid(l + 1, ncol))).second == nid(l, ncol);
    out.links.push_back({e0, e9, -1.0, f0 != f9});
  }

  out.a_coil = out.geom.patch_area(out.coil_patch[0], 6);
  for (int k = 1; k < 3; ++k) {
    const double a = out.geom.patch_area(out.coil_patch[static_cast<std::size_t>(k)], 6);
    if (std::abs(a - out.a_coil) > 1e-12 * out.a_coil)
      throw std::logic_error("slot areas differ");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Excitation

struct Excitation {
  double current = 3.0;       // phase current amplitude [A]
  double turns = 35.0;        // winding turns per slot
  int pole_pairs = 2;
  double remanence = 1.0;     // magnet remanence [T]
  double mu_r_magnet = 1.05;
  bool linear_iron = false;   // replace the saturating curve (tests)
  double mu_r_iron = 1000.0;
};

inline materials::Material iron_material(const Excitation& exc, const materials::BHCurve* bh) {
  return exc.linear_iron ? materials::Material::linear(exc.mu_r_iron)
                         : materials::Material::saturating(bh);
}

// Per-patch physics for the rotor domain. Remanence enters through its
// quarter-turn rotation: perp(m) for magnetisation direction m at angle a.
inline std::vector<assembly::PatchPhysics> rotor_physics(const RotorDomain& rotor,
                                                         const Excitation& exc,
                                                         const materials::BHCurve* bh) {
  std::vector<assembly::PatchPhysics> ph(static_cast<std::size_t>(rotor.geom.num_patches()));
  const materials::Material iron = iron_material(exc, bh);
  const materials::Material magnet = materials::Material::linear(exc.mu_r_magnet);
  for (int i = 0; i < rotor.geom.num_patches(); ++i) {
    auto& pp = ph[static_cast<std::size_t>(i)];
    const std::string& m = rotor.geom.patch_material[static_cast<std::size_t>(i)];
    if (m == "iron") {
      pp.material = iron;
    } else if (m == "magnet_l" || m == "magnet_r") {
      const double a = m == "magnet_l" ? rotor.alpha_left : rotor.alpha_right;
      pp.material = magnet;
      pp.remanence_perp = exc.remanence * Vec2(-std::sin(a), std::cos(a));
    } else {
      pp.material = materials::Material::air();
    }
  }
  return ph;
}

// Derivative of the rotor remanence load direction with respect to the
// magnet V opening angle MA (degrees): both magnetisation angles move by half
// a degree per degree, with opposite sign on the mirrored half.
inline std::vector<assembly::PatchPhysics> rotor_physics_dalpha_dma(
    const RotorDomain& rotor, const Excitation& exc) {
  std::vector<assembly::PatchPhysics> ph(static_cast<std::size_t>(rotor.geom.num_patches()));
  const materials::Material magnet = materials::Material::linear(exc.mu_r_magnet);
  for (int i = 0; i < rotor.geom.num_patches(); ++i) {
    auto& pp = ph[static_cast<std::size_t>(i)];
    pp.material = materials::Material::air();
    const std::string& m = rotor.geom.patch_material[static_cast<std::size_t>(i)];
    if (m == "magnet_l" || m == "magnet_r") {
      const double a = m == "magnet_l" ? rotor.alpha_left : rotor.alpha_right;
      const double dalpha = (m == "magnet_l" ? 0.5 : -0.5) * pi / 180.0;  // per degree MA
      pp.material = magnet;
      pp.remanence_perp = exc.remanence * dalpha * Vec2(-std::cos(a), -std::sin(a));
    }
  }
  return ph;
}

// Stator physics carrying unit phase current shape for phase k (or none).
inline std::vector<assembly::PatchPhysics> stator_physics(const StatorDomain& stator,
                                                          const Excitation& exc,
                                                          const materials::BHCurve* bh,
                                                          int phase = -1) {
  std::vector<assembly::PatchPhysics> ph(static_cast<std::size_t>(stator.geom.num_patches()));
  const materials::Material iron = iron_material(exc, bh);
  for (int i = 0; i < stator.geom.num_patches(); ++i) {
    auto& pp = ph[static_cast<std::size_t>(i)];
    const std::string& m = stator.geom.patch_material[static_cast<std::size_t>(i)];
    pp.material = m == "iron" ? iron : materials::Material::air();
  }
  if (phase >= 0) {
    const int pid = stator.coil_patch[static_cast<std::size_t>(phase)];
    ph[static_cast<std::size_t>(pid)].current_density =
        stator.coil_sign[static_cast<std::size_t>(phase)] * exc.current * exc.turns /
        stator.a_coil;
  }
  return ph;
}

// Phase current multipliers at rotor angle beta (mechanical, radians):
// s_k = sin(p beta + phi0 + 2 pi k / 3), phi0 from the operating angle.
inline std::array<double, 3> phase_multipliers(const Excitation& exc, double phi0,
                                               double beta) {
  std::array<double, 3> s{};
  for (int k = 0; k < 3; ++k)
    s[static_cast<std::size_t>(k)] =
        std::sin(exc.pole_pairs * beta + phi0 + 2.0 * pi * k / 3.0);
  return s;
}

inline std::array<double, 3> phase_multipliers_dphi(const Excitation& exc, double phi0,
                                                    double beta) {
  std::array<double, 3> s{};
  for (int k = 0; k < 3; ++k)
    s[static_cast<std::size_t>(k)] =
        std::cos(exc.pole_pairs * beta + phi0 + 2.0 * pi * k / 3.0);
  return s;
}

// ---------------------------------------------------------------------------
// Control-point design Jacobian

// Sparse per-parameter derivative of the rotor node positions, forward
// finite differences with h = 1e-6 * parameter range (backward at the upper
// bound). Entries below 1e-12 in norm are dropped. The operating angle has
// no geometric effect and gets an empty column.
struct NodeSensitivity {
  int node = -1;
  Vec2 dpos = Vec2::Zero();
};

inline std::vector<std::vector<NodeSensitivity>> control_point_jacobian(
    const Parameters& p, const RotorDomain& base, const RotorSpans& spans = {}) {
  std::vector<std::vector<NodeSensitivity>> jac(17);
  for (int l = 0; l < 17; ++l) {
    if (l == 8) continue;  // operating angle: excitation only
    const auto& info = param_table()[static_cast<std::size_t>(l)];
    double h = 1e-6 * (info.hi - info.lo);
    if (p[l] + h > info.hi) h = -h;
    Parameters pp = p;
    pp[l] += h;
    const RotorDomain pert = build_rotor(pp, spans);
    if (pert.geom.num_nodes != base.geom.num_nodes)
      throw std::logic_error("perturbed rotor changed discretisation");
    for (int n = 0; n < base.geom.num_nodes; ++n) {
      const Vec2 d = (pert.geom.node_position[static_cast<std::size_t>(n)] -
                      base.geom.node_position[static_cast<std::size_t>(n)]) /
                     h;
      if (d.norm() >= 1e-12) jac[static_cast<std::size_t>(l)].push_back({n, d});
    }
  }
  return jac;
}

}  // namespace igamotor::machine
