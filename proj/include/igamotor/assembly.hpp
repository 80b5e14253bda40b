#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "igamotor/core.hpp"
#include "igamotor/dofmap.hpp"
#include "igamotor/geometry.hpp"
#include "igamotor/materials.hpp"
#include "igamotor/quadrature.hpp"

namespace igamotor::assembly {

// Physical data attached to one patch of the field domain.
struct PatchPhysics {
  materials::Material material;
  // Remanent flux density rotated a quarter turn (enters the weak form as
  // nu * grad(N) . remanence_perp); zero outside permanent magnets.
  Vec2 remanence_perp = Vec2::Zero();
  // Uniform out-of-plane current density [A/m^2]; used for winding regions.
  double current_density = 0.0;
  // Optional spatially varying source term (manufactured solutions).
  std::function<double(const Vec2&)> volume_source;
};

// Everything needed at one quadrature point to evaluate residuals, tangents
// and control-point sensitivities without touching the splines again.
struct QuadPoint {
  int patch = 0;
  double w = 0.0;  // quadrature weight x |det J|
  Vec2 x = Vec2::Zero();
  VecX N;                                   // basis values (local functions)
  Eigen::Matrix<double, Eigen::Dynamic, 2> G;  // physical gradients
  std::vector<int> nodes;                   // geometry node per local function
  std::vector<int> dofs;                    // coefficient index (-1 eliminated)
  std::vector<double> signs;
};

// Magnetostatic scalar-potential system on one conforming multipatch domain:
// curl(nu(B) curl A) with remanence and current sources. The quadrature cache
// is rebuilt whenever control points move; assembly only replays it, so the
// triplet order (and hence the floating-point result) is deterministic.
class System {
 public:
  System(const geometry::MultiPatchGeometry* g, const DofMap* dofs,
         std::vector<PatchPhysics> physics, int quad_per_span = 0)
      : g_(g), dofs_(dofs), physics_(std::move(physics)), quad_per_span_(quad_per_span) {
    if (static_cast<int>(physics_.size()) != g_->num_patches())
      throw ConfigError("per-patch physics list does not match patch count");
    rebuild_cache();
  }

  const geometry::MultiPatchGeometry& geometry() const { return *g_; }
  const DofMap& dofs() const { return *dofs_; }
  const std::vector<PatchPhysics>& physics() const { return physics_; }
  const std::vector<QuadPoint>& quad_points() const { return cache_; }
  int num_dofs() const { return dofs_->num_dofs(); }

  // Re-evaluates basis data at all quadrature points (after geometry edits).
  void rebuild_cache() {
    cache_.clear();
    splines::BasisPoint bp;
    std::vector<int> locals;
    Vec2 x;
    Mat2 J;
    for (int p = 0; p < g_->num_patches(); ++p) {
      const auto& patch = g_->patches[static_cast<std::size_t>(p)];
      const int nq_u = quad_per_span_ > 0 ? quad_per_span_ : patch.knots_u().degree() + 1;
      const int nq_v = quad_per_span_ > 0 ? quad_per_span_ : patch.knots_v().degree() + 1;
      const auto rule_u = quadrature::gauss_legendre(nq_u);
      const auto rule_v = quadrature::gauss_legendre(nq_v);
      for (const auto& [ua, ub] : patch.knots_u().spans()) {
        for (const auto& [va, vb] : patch.knots_v().spans()) {
          for (const auto& qu : quadrature::span_points(ua, ub, rule_u)) {
            for (const auto& qv : quadrature::span_points(va, vb, rule_v)) {
              patch.eval_basis(qu.u, qv.u, &bp);
              patch.eval_mapping(bp, &x, &J);
              const double detj = J.determinant();
              if (!(detj > 0.0))
                throw GeometryError("parameter set produces an inverted patch mapping");
              const Mat2 Jinv = J.inverse();
              QuadPoint qp;
              qp.patch = p;
              qp.w = qu.w * qv.w * detj;
              qp.x = x;
              qp.N = bp.R;
              qp.G = bp.dR * Jinv;  // chain rule: grad_x N = Jinv^T grad_par N, rowwise
              patch.local_indices(bp, &locals);
              qp.nodes.resize(locals.size());
              qp.dofs.resize(locals.size());
              qp.signs.resize(locals.size());
              for (std::size_t a = 0; a < locals.size(); ++a) {
                const int node = g_->node_of(p, locals[a]);
                qp.nodes[a] = node;
                qp.dofs[a] = dofs_->dof(node);
                qp.signs[a] = dofs_->sign(node);
              }
              cache_.push_back(std::move(qp));
            }
          }
        }
      }
    }
  }

  // In-plane flux density magnitude |grad u| at a cached point.
  Vec2 gradient_at(const QuadPoint& qp, const VecX& u) const {
    Vec2 g = Vec2::Zero();
    for (std::size_t a = 0; a < qp.dofs.size(); ++a)
      if (qp.dofs[a] >= 0) g += qp.signs[a] * u[qp.dofs[a]] * qp.G.row(a).transpose();
    return g;
  }

  // Source vector: currents, manufactured sources and remanence terms.
  VecX assemble_rhs() const {
    VecX b = VecX::Zero(num_dofs());
    for (const QuadPoint& qp : cache_) {
      const PatchPhysics& ph = physics_[static_cast<std::size_t>(qp.patch)];
      double j = ph.current_density;
      if (ph.volume_source) j += ph.volume_source(qp.x);
      const bool has_mag = ph.remanence_perp.squaredNorm() > 0.0;
      if (j == 0.0 && !has_mag) continue;
      const double numag = has_mag ? ph.material.nu(0.0) : 0.0;
      for (std::size_t a = 0; a < qp.dofs.size(); ++a) {
        if (qp.dofs[a] < 0) continue;
        double v = qp.N[static_cast<Eigen::Index>(a)] * j;
        if (has_mag) v += numag * qp.G.row(a).dot(ph.remanence_perp);
        b[qp.dofs[a]] += qp.signs[a] * v * qp.w;
      }
    }
    return b;
  }

  // Stiffness K(u) (secant operator) and, when requested, the Newton tangent
  // J = K + K', where K' collects the nu'(B) terms.
  void assemble_operator(const VecX& u, SpMat* K, SpMat* Jtan = nullptr) const {
    std::vector<Triplet> tk, tj;
    tk.reserve(cache_.size() * 81);
    if (Jtan) tj.reserve(cache_.size() * 81);
    for (const QuadPoint& qp : cache_) {
      const PatchPhysics& ph = physics_[static_cast<std::size_t>(qp.patch)];
      const Vec2 gu = gradient_at(qp, u);
      const double B = gu.norm();
      const double nu = ph.material.nu(B);
      const double dnu = Jtan ? ph.material.dnu_db(B) : 0.0;
      const std::size_t nloc = qp.dofs.size();
      for (std::size_t a = 0; a < nloc; ++a) {
        if (qp.dofs[a] < 0) continue;
        const Vec2 ga = qp.G.row(a).transpose();
        const double sa = qp.signs[a];
        for (std::size_t c = 0; c < nloc; ++c) {
          if (qp.dofs[c] < 0) continue;
          const Vec2 gc = qp.G.row(c).transpose();
          const double scale = sa * qp.signs[c] * qp.w;
          const double kval = nu * ga.dot(gc) * scale;
          tk.emplace_back(qp.dofs[a], qp.dofs[c], kval);
          if (Jtan && B > 1e-14) {
            const double jval = dnu / B * ga.dot(gu) * gc.dot(gu) * scale;
            tj.emplace_back(qp.dofs[a], qp.dofs[c], kval + jval);
          } else if (Jtan) {
            tj.emplace_back(qp.dofs[a], qp.dofs[c], kval);
          }
        }
      }
    }
    K->resize(num_dofs(), num_dofs());
    K->setFromTriplets(tk.begin(), tk.end());
    if (Jtan) {
      Jtan->resize(num_dofs(), num_dofs());
      Jtan->setFromTriplets(tj.begin(), tj.end());
    }
  }

 private:
  const geometry::MultiPatchGeometry* g_;
  const DofMap* dofs_;
  std::vector<PatchPhysics> physics_;
  int quad_per_span_;
  std::vector<QuadPoint> cache_;
};

// Number of columns used by a harmonic list: one for the constant term
// (n = 0), two (sine and cosine) for every n > 0.
inline int harmonic_columns(const std::vector<int>& harmonics) {
  int c = 0;
  for (int n : harmonics) c += (n == 0) ? 1 : 2;
  return c;
}

// Trace coupling matrix on a circular interface: rows are coefficients, and
// for each harmonic n the two columns hold the weighted trace moments
// int N_i sin(n theta) dGamma and int N_i cos(n theta) dGamma (a single
// column of plain averages for n = 0).
inline SpMat harmonic_coupling(const geometry::MultiPatchGeometry& g, const DofMap& dofs,
                               const std::vector<std::pair<int, int>>& sides,
                               const std::vector<int>& harmonics, int quad_per_span = 12) {
  std::vector<Triplet> trip;
  const auto rule = quadrature::gauss_legendre(quad_per_span);
  splines::BasisPoint bp;
  std::vector<int> locals;
  Vec2 x;
  Mat2 J;
  for (const auto& [p, side] : sides) {
    const auto& patch = g.patches[static_cast<std::size_t>(p)];
    const auto& kv = g.side_knots(p, side);
    const bool along_u = (side == geometry::kSouth || side == geometry::kNorth);
    for (const auto& [ta, tb] : kv.spans()) {
      for (const auto& qt : quadrature::span_points(ta, tb, rule)) {
        const auto [u, v] = geometry::MultiPatchGeometry::side_param(side, qt.u);
        patch.eval_basis(u, v, &bp);
        patch.eval_mapping(bp, &x, &J);
        const Vec2 tangent = along_u ? J.col(0) : J.col(1);
        const double ds = tangent.norm() * qt.w;
        const double theta = std::atan2(x.y(), x.x());
        patch.local_indices(bp, &locals);
        for (std::size_t a = 0; a < locals.size(); ++a) {
          const int node = g.node_of(p, locals[a]);
          const int dof = dofs.dof(node);
          if (dof < 0) continue;
          const double base = dofs.sign(node) * bp.R(static_cast<Eigen::Index>(a)) * ds;
          if (base == 0.0) continue;
          int col = 0;
          for (int n : harmonics) {
            if (n == 0) {
              trip.emplace_back(dof, col, base);
              col += 1;
            } else {
              trip.emplace_back(dof, col, base * std::sin(n * theta));
              trip.emplace_back(dof, col + 1, base * std::cos(n * theta));
              col += 2;
            }
          }
        }
      }
    }
  }
  SpMat G(dofs.num_dofs(), harmonic_columns(harmonics));
  G.setFromTriplets(trip.begin(), trip.end());
  return G;
}

// Block-diagonal rotation acting on the harmonic coefficient pairs: for each
// n > 0 the (sin, cos) pair is rotated by
//   [cos(n b), -sin(n b); sin(n b), cos(n b)];
// the constant harmonic is invariant.
inline SpMat harmonic_rotation(const std::vector<int>& harmonics, double beta) {
  std::vector<Triplet> trip;
  int col = 0;
  for (int n : harmonics) {
    if (n == 0) {
      trip.emplace_back(col, col, 1.0);
      col += 1;
    } else {
      const double c = std::cos(n * beta), s = std::sin(n * beta);
      trip.emplace_back(col, col, c);
      trip.emplace_back(col, col + 1, -s);
      trip.emplace_back(col + 1, col, s);
      trip.emplace_back(col + 1, col + 1, c);
      col += 2;
    }
  }
  SpMat R(col, col);
  R.setFromTriplets(trip.begin(), trip.end());
  return R;
}

// Derivative of harmonic_rotation with respect to the rotation angle.
inline SpMat harmonic_rotation_derivative(const std::vector<int>& harmonics, double beta) {
  std::vector<Triplet> trip;
  int col = 0;
  for (int n : harmonics) {
    if (n == 0) {
      col += 1;
    } else {
      const double c = std::cos(n * beta), s = std::sin(n * beta);
      trip.emplace_back(col, col, -n * s);
      trip.emplace_back(col, col + 1, -n * c);
      trip.emplace_back(col + 1, col, n * c);
      trip.emplace_back(col + 1, col + 1, -n * s);
      col += 2;
    }
  }
  SpMat R(col, col);
  R.setFromTriplets(trip.begin(), trip.end());
  return R;
}

}  // namespace igamotor::assembly
