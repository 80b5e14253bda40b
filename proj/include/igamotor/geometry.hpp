#pragma once

#include <array>
#include <cstddef>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "igamotor/core.hpp"
#include "igamotor/quadrature.hpp"
#include "igamotor/splines.hpp"

namespace igamotor::geometry {

// Patch sides in the order used throughout: south (v=0, along +u), north
// (v=1, along +u), west (u=0, along +v), east (u=1, along +v).
enum Side : int { kSouth = 0, kNorth = 1, kWest = 2, kEast = 3 };

// Reference from a patch side to a shared edge curve. `reversed` means the
// side parameter runs against the edge curve parameter.
struct SideRef {
  int edge = -1;
  bool reversed = false;
};

namespace detail {

class UnionFind {
 public:
  explicit UnionFind(int n) : parent_(static_cast<std::size_t>(n)) {
    std::iota(parent_.begin(), parent_.end(), 0);
  }
  int find(int a) {
    while (parent_[static_cast<std::size_t>(a)] != a) {
      parent_[static_cast<std::size_t>(a)] =
          parent_[static_cast<std::size_t>(parent_[static_cast<std::size_t>(a)])];
      a = parent_[static_cast<std::size_t>(a)];
    }
    return a;
  }
  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a != b) parent_[static_cast<std::size_t>(std::max(a, b))] = std::min(a, b);
  }

 private:
  std::vector<int> parent_;
};

// Multiset union of sorted knot lists, clustering values within tol.
inline std::vector<double> merge_knots(const std::vector<double>& a,
                                       const std::vector<double>& b, double tol = 1e-12) {
  std::vector<double> out;
  std::size_t i = 0, j = 0;
  while (i < a.size() || j < b.size()) {
    double v;
    if (j == b.size() || (i < a.size() && a[i] <= b[j]))
      v = a[i];
    else
      v = b[j];
    // Count multiplicities of the cluster around v in both lists.
    std::size_t ca = 0, cb = 0;
    while (i < a.size() && std::abs(a[i] - v) <= tol) {
      ++ca;
      ++i;
    }
    while (j < b.size() && std::abs(b[j] - v) <= tol) {
      ++cb;
      ++j;
    }
    out.insert(out.end(), std::max(ca, cb), v);
  }
  return out;
}

inline std::vector<double> mirror_knots(const std::vector<double>& k) {
  std::vector<double> out(k.rbegin(), k.rend());
  for (double& v : out) v = 1.0 - v;
  return out;
}

inline bool same_knots(const std::vector<double>& a, const std::vector<double>& b,
                       double tol = 1e-12) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::abs(a[i] - b[i]) > tol) return false;
  return true;
}

}  // namespace detail

struct EdgeUse {
  int patch = -1;
  int side = -1;
};

// Conforming multipatch NURBS geometry. Patches are glued along shared edge
// curves; control points on shared edges are identified into global geometry
// nodes by edge topology (never by coordinate comparison).
class MultiPatchGeometry {
 public:
  std::vector<splines::NurbsPatch> patches;
  std::vector<std::string> patch_material;
  std::vector<std::array<SideRef, 4>> patch_sides;
  std::vector<std::vector<EdgeUse>> edge_uses;  // indexed by edge id

  int num_nodes = 0;
  std::vector<std::vector<int>> patch_node;                  // patch -> local cp -> node
  std::vector<Vec2> node_position;                           // representative position
  std::vector<double> node_weight;                           // NURBS weight per node
  std::vector<std::vector<std::pair<int, int>>> node_copies;  // node -> (patch, local)

  int num_patches() const { return static_cast<int>(patches.size()); }

  int node_of(int patch, int local) const {
    return patch_node[static_cast<std::size_t>(patch)][static_cast<std::size_t>(local)];
  }

  // Moves a geometry node: updates the stored position and every patch copy.
  void set_node_position(int node, const Vec2& p) {
    node_position[static_cast<std::size_t>(node)] = p;
    for (const auto& [pa, loc] : node_copies[static_cast<std::size_t>(node)])
      patches[static_cast<std::size_t>(pa)].set_point(loc, p);
  }

  // Local control-point indices along a patch side, in side-parameter order.
  std::vector<int> side_locals(int patch, int side) const {
    const auto& p = patches[static_cast<std::size_t>(patch)];
    const int nu = p.num_u(), nv = p.num_v();
    std::vector<int> out;
    switch (side) {
      case kSouth:
        for (int i = 0; i < nu; ++i) out.push_back(p.index(i, 0));
        break;
      case kNorth:
        for (int i = 0; i < nu; ++i) out.push_back(p.index(i, nv - 1));
        break;
      case kWest:
        for (int j = 0; j < nv; ++j) out.push_back(p.index(0, j));
        break;
      case kEast:
        for (int j = 0; j < nv; ++j) out.push_back(p.index(nu - 1, j));
        break;
      default:
        throw GeometryError("side_locals: bad side");
    }
    return out;
  }

  const splines::KnotVector& side_knots(int patch, int side) const {
    const auto& p = patches[static_cast<std::size_t>(patch)];
    return (side == kSouth || side == kNorth) ? p.knots_u() : p.knots_v();
  }

  // Maps a side parameter to the patch parametric point on that side.
  static std::pair<double, double> side_param(int side, double t) {
    switch (side) {
      case kSouth:
        return {t, 0.0};
      case kNorth:
        return {t, 1.0};
      case kWest:
        return {0.0, t};
      default:
        return {1.0, t};
    }
  }

  double patch_area(int p, int n_quad = 4) const {
    const auto& patch = patches[static_cast<std::size_t>(p)];
    const auto rule = quadrature::gauss_legendre(n_quad);
    double area = 0.0;
    splines::BasisPoint bp;
    Vec2 x;
    Mat2 J;
    for (const auto& [ua, ub] : patch.knots_u().spans()) {
      for (const auto& [va, vb] : patch.knots_v().spans()) {
        for (const auto& qu : quadrature::span_points(ua, ub, rule)) {
          for (const auto& qv : quadrature::span_points(va, vb, rule)) {
            patch.eval_basis(qu.u, qv.u, &bp);
            patch.eval_mapping(bp, &x, &J);
            area += qu.w * qv.w * J.determinant();
          }
        }
      }
    }
    return area;
  }

  double material_area(const std::string& material, int n_quad = 4) const {
    double a = 0.0;
    for (int p = 0; p < num_patches(); ++p)
      if (patch_material[static_cast<std::size_t>(p)] == material) a += patch_area(p, n_quad);
    return a;
  }

  // Checks that every patch mapping is orientation-preserving on a sample
  // grid per knot span. Throws GeometryError otherwise.
  void validate(int samples_per_span = 4) const {
    splines::BasisPoint bp;
    Vec2 x;
    Mat2 J;
    for (int p = 0; p < num_patches(); ++p) {
      const auto& patch = patches[static_cast<std::size_t>(p)];
      for (const auto& [ua, ub] : patch.knots_u().spans()) {
        for (const auto& [va, vb] : patch.knots_v().spans()) {
          for (int a = 0; a <= samples_per_span; ++a) {
            for (int b = 0; b <= samples_per_span; ++b) {
              const double u = ua + (ub - ua) * a / samples_per_span;
              const double v = va + (vb - va) * b / samples_per_span;
              patch.eval_basis(u, v, &bp);
              patch.eval_mapping(bp, &x, &J);
              if (!(J.determinant() > 0.0))
                throw GeometryError("patch " + std::to_string(p) +
                                    ": mapping is degenerate or inverted (det J = " +
                                    std::to_string(J.determinant()) + " at u=" +
                                    std::to_string(u) + ", v=" + std::to_string(v) + ")");
            }
          }
        }
      }
    }
  }

  // Rigidly rotates the listed patches about the origin. Node positions are
  // refreshed afterwards; the listed patches must not share nodes with others.
  void rotate_patches(const std::vector<int>& ids, double angle) {
    Mat2 R;
    R << std::cos(angle), -std::sin(angle), std::sin(angle), std::cos(angle);
    std::vector<char> in(static_cast<std::size_t>(num_patches()), 0);
    for (int id : ids) in[static_cast<std::size_t>(id)] = 1;
    for (int p = 0; p < num_patches(); ++p) {
      if (!in[static_cast<std::size_t>(p)]) continue;
      auto& patch = patches[static_cast<std::size_t>(p)];
      for (int l = 0; l < patch.num_control_points(); ++l)
        patch.set_point(l, R * patch.point(l));
    }
    for (int n = 0; n < num_nodes; ++n) {
      const auto& [pa, loc] = node_copies[static_cast<std::size_t>(n)].front();
      node_position[static_cast<std::size_t>(n)] =
          patches[static_cast<std::size_t>(pa)].point(loc);
    }
  }
};

// Assembles a conforming multipatch geometry from shared edge curves. Opposite
// sides of each patch must carry curves of equal degree; knot vectors are made
// conforming automatically (a fixpoint over the patch graph propagates knots
// through shared edges), then each patch is filled by a transfinite (Coons)
// interpolant of its four boundary curves in homogeneous coordinates, which is
// boundary-exact.
class MultiPatchBuilder {
 public:
  int add_edge(splines::NurbsCurve curve) {
    edges_.push_back(std::move(curve));
    return static_cast<int>(edges_.size()) - 1;
  }

  // Sides in order {south, north, west, east}; nu/nv request at least that
  // many elements in each direction (more can result from conformity).
  int add_patch(const std::array<SideRef, 4>& sides, std::string material, int nu = 1,
                int nv = 1) {
    specs_.push_back({sides, std::move(material), nu, nv});
    return static_cast<int>(specs_.size()) - 1;
  }

  MultiPatchGeometry build() const {
    const int ne = static_cast<int>(edges_.size());
    const int np = static_cast<int>(specs_.size());

    // Per-edge knot multisets in edge parameterization, seeded with the edge
    // curve's own interior knots plus each adjacent patch's uniform target.
    std::vector<std::vector<double>> ek(static_cast<std::size_t>(ne));
    for (int e = 0; e < ne; ++e)
      ek[static_cast<std::size_t>(e)] = edges_[static_cast<std::size_t>(e)].knots().interior_knots();
    for (const auto& s : specs_) {
      for (int side = 0; side < 4; ++side) {
        const int n = (side == kSouth || side == kNorth) ? s.nu : s.nv;
        std::vector<double> uni;
        for (int i = 1; i < n; ++i) uni.push_back(static_cast<double>(i) / n);
        auto& k = ek[static_cast<std::size_t>(s.sides[static_cast<std::size_t>(side)].edge)];
        k = detail::merge_knots(
            k, s.sides[static_cast<std::size_t>(side)].reversed ? detail::mirror_knots(uni) : uni);
      }
    }

    // Fixpoint: each patch direction carries the union of its two edges'
    // multisets; push the union back onto the edges until nothing grows.
    for (int round = 0; round < 64; ++round) {
      bool changed = false;
      for (const auto& s : specs_) {
        for (int dir = 0; dir < 2; ++dir) {
          const SideRef a = s.sides[static_cast<std::size_t>(2 * dir)];
          const SideRef b = s.sides[static_cast<std::size_t>(2 * dir + 1)];
          auto oriented = [&](const SideRef& r) {
            const auto& k = ek[static_cast<std::size_t>(r.edge)];
            return r.reversed ? detail::mirror_knots(k) : k;
          };
          const std::vector<double> u = detail::merge_knots(oriented(a), oriented(b));
          for (const SideRef& r : {a, b}) {
            const std::vector<double> back = r.reversed ? detail::mirror_knots(u) : u;
            auto& k = ek[static_cast<std::size_t>(r.edge)];
            if (!detail::same_knots(k, back)) {
              k = detail::merge_knots(k, back);
              changed = true;
            }
          }
        }
      }
      if (!changed) break;
      if (round == 63) throw GeometryError("knot conformity fixpoint did not converge");
    }

    // Refine every edge curve once, canonically.
    std::vector<splines::NurbsCurve> refined;
    refined.reserve(static_cast<std::size_t>(ne));
    for (int e = 0; e < ne; ++e) {
      splines::NurbsCurve c = edges_[static_cast<std::size_t>(e)];
      const auto have = c.knots().interior_knots();
      // Insert only knots not already present (multiset difference).
      std::vector<double> need;
      std::size_t hi = 0;
      for (double v : ek[static_cast<std::size_t>(e)]) {
        if (hi < have.size() && std::abs(have[hi] - v) <= 1e-12)
          ++hi;
        else
          need.push_back(v);
      }
      refined.push_back(c.with_knots(need));
    }

    MultiPatchGeometry g;
    g.edge_uses.resize(static_cast<std::size_t>(ne));
    for (int p = 0; p < np; ++p) {
      const auto& s = specs_[static_cast<std::size_t>(p)];
      std::array<splines::NurbsCurve, 4> side_curve = {
          oriented_curve(refined, s.sides[0]), oriented_curve(refined, s.sides[1]),
          oriented_curve(refined, s.sides[2]), oriented_curve(refined, s.sides[3])};
      g.patches.push_back(coons_patch(side_curve, p));
      g.patch_material.push_back(s.material);
      g.patch_sides.push_back(s.sides);
      for (int side = 0; side < 4; ++side) {
        const int e = s.sides[static_cast<std::size_t>(side)].edge;
        g.edge_uses[static_cast<std::size_t>(e)].push_back({p, side});
      }
    }
    for (int e = 0; e < ne; ++e)
      if (g.edge_uses[static_cast<std::size_t>(e)].size() > 2)
        throw GeometryError("edge " + std::to_string(e) + " used by more than two patches");

    identify_nodes(&g);
    return g;
  }

 private:
  struct PatchSpec {
    std::array<SideRef, 4> sides;
    std::string material;
    int nu, nv;
  };

  static splines::NurbsCurve oriented_curve(const std::vector<splines::NurbsCurve>& refined,
                                            const SideRef& r) {
    const auto& c = refined[static_cast<std::size_t>(r.edge)];
    return r.reversed ? c.reversed() : c;
  }

  // Transfinite interpolation of four boundary curves on the merged knot
  // vectors, carried out on homogeneous control points with Greville blending
  // coefficients. Reproduces all four boundaries exactly.
  static splines::NurbsPatch coons_patch(std::array<splines::NurbsCurve, 4>& c, int patch_id) {
    using splines::HPoint;
    using splines::KnotVector;
    // Merge knots of opposite pairs (tolerant: conformity fixpoint guarantees
    // the multisets already match within 1e-12; reconcile ulp differences by
    // inserting the partner's missing values).
    auto reconcile = [](splines::NurbsCurve& a, splines::NurbsCurve& b) {
      if (a.knots().degree() != b.knots().degree())
        throw GeometryError("opposite patch sides have different degrees");
      const auto ka = a.knots().interior_knots(), kb = b.knots().interior_knots();
      if (!detail::same_knots(ka, kb))
        throw GeometryError("opposite patch sides have non-matching knots");
    };
    reconcile(c[kSouth], c[kNorth]);
    reconcile(c[kWest], c[kEast]);

    const KnotVector& U = c[kSouth].knots();
    const KnotVector& V = c[kWest].knots();
    const int nu = U.num_basis(), nv = V.num_basis();
    auto corner_ok = [](const HPoint& a, const HPoint& b) { return (a - b).norm() < 1e-9; };
    const auto& S = c[kSouth].control_points();
    const auto& N = c[kNorth].control_points();
    const auto& W = c[kWest].control_points();
    const auto& E = c[kEast].control_points();
    if (!corner_ok(S.front(), W.front()) || !corner_ok(S.back(), E.front()) ||
        !corner_ok(N.front(), W.back()) || !corner_ok(N.back(), E.back()))
      throw GeometryError("patch " + std::to_string(patch_id) +
                          ": boundary curves do not meet at corners");

    const auto gu = U.greville();
    const auto gv = V.greville();
    std::vector<HPoint> cp(static_cast<std::size_t>(nu * nv));
    for (int j = 0; j < nv; ++j) {
      for (int i = 0; i < nu; ++i) {
        const double a = gu[static_cast<std::size_t>(i)], b = gv[static_cast<std::size_t>(j)];
        HPoint v = (1.0 - b) * S[static_cast<std::size_t>(i)] +
                   b * N[static_cast<std::size_t>(i)] +
                   (1.0 - a) * W[static_cast<std::size_t>(j)] +
                   a * E[static_cast<std::size_t>(j)] -
                   ((1.0 - a) * (1.0 - b) * S.front() + a * (1.0 - b) * S.back() +
                    (1.0 - a) * b * N.front() + a * b * N.back());
        cp[static_cast<std::size_t>(j * nu + i)] = v;
      }
    }
    return splines::NurbsPatch(U, V, std::move(cp));
  }

  // Global geometry nodes: union-find over all patch-local control points,
  // gluing index-correspondences along shared edges; positions and weights of
  // every class are snapped to one representative so interfaces match exactly.
  static void identify_nodes(MultiPatchGeometry* g) {
    const int np = g->num_patches();
    std::vector<int> offset(static_cast<std::size_t>(np) + 1, 0);
    for (int p = 0; p < np; ++p)
      offset[static_cast<std::size_t>(p) + 1] =
          offset[static_cast<std::size_t>(p)] +
          g->patches[static_cast<std::size_t>(p)].num_control_points();
    detail::UnionFind uf(offset.back());

    for (std::size_t e = 0; e < g->edge_uses.size(); ++e) {
      const auto& uses = g->edge_uses[e];
      if (uses.size() != 2) continue;
      auto ordered = [&](const EdgeUse& u) {
        std::vector<int> loc = g->side_locals(u.patch, u.side);
        if (g->patch_sides[static_cast<std::size_t>(u.patch)][static_cast<std::size_t>(u.side)]
                .reversed)
          std::reverse(loc.begin(), loc.end());
        return loc;  // in edge-curve parameter order
      };
      const auto la = ordered(uses[0]);
      const auto lb = ordered(uses[1]);
      if (la.size() != lb.size())
        throw GeometryError("interface discretizations do not match on edge " +
                            std::to_string(e));
      for (std::size_t k = 0; k < la.size(); ++k)
        uf.unite(offset[static_cast<std::size_t>(uses[0].patch)] + la[k],
                 offset[static_cast<std::size_t>(uses[1].patch)] + lb[k]);
    }

    g->patch_node.assign(static_cast<std::size_t>(np), {});
    std::vector<int> node_of_root(static_cast<std::size_t>(offset.back()), -1);
    g->num_nodes = 0;
    g->node_position.clear();
    g->node_weight.clear();
    g->node_copies.clear();
    for (int p = 0; p < np; ++p) {
      auto& patch = g->patches[static_cast<std::size_t>(p)];
      auto& map = g->patch_node[static_cast<std::size_t>(p)];
      map.resize(static_cast<std::size_t>(patch.num_control_points()));
      for (int l = 0; l < patch.num_control_points(); ++l) {
        const int root = uf.find(offset[static_cast<std::size_t>(p)] + l);
        int& node = node_of_root[static_cast<std::size_t>(root)];
        if (node < 0) {
          node = g->num_nodes++;
          g->node_position.push_back(patch.point(l));
          g->node_weight.push_back(patch.weight(l));
          g->node_copies.emplace_back();
        } else {
          const double dw =
              std::abs(patch.weight(l) - g->node_weight[static_cast<std::size_t>(node)]);
          if (dw > 1e-9)
            throw GeometryError("identified control points disagree in weight");
        }
        map[static_cast<std::size_t>(l)] = node;
        g->node_copies[static_cast<std::size_t>(node)].emplace_back(p, l);
      }
    }
    // Snap all copies to the representative position (removes sub-ulp
    // disagreement from independent knot-insertion arithmetic).
    for (int n = 0; n < g->num_nodes; ++n) {
      const Vec2 rep = g->node_position[static_cast<std::size_t>(n)];
      for (const auto& [p, l] : g->node_copies[static_cast<std::size_t>(n)]) {
        const double dist = (g->patches[static_cast<std::size_t>(p)].point(l) - rep).norm();
        if (dist > 1e-7)
          throw GeometryError("identified control points are " + std::to_string(dist) +
                              " apart; interfaces are not conforming");
        g->patches[static_cast<std::size_t>(p)].set_point(l, rep);
      }
    }
  }

  std::vector<splines::NurbsCurve> edges_;
  std::vector<PatchSpec> specs_;
};

}  // namespace igamotor::geometry
