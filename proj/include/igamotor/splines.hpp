#pragma once

#include <algorithm>
#include <cassert>
#include <utility>
#include <vector>

#include "igamotor/core.hpp"

namespace igamotor::splines {

// Clamped (open) knot vector on [0,1]: first and last knots have multiplicity
// degree+1, interior knots nondecreasing with multiplicity <= degree.
// Basis functions follow the right-continuous convention; evaluation at the
// right endpoint uses the last nonempty span (left-continuous at 1).
class KnotVector {
 public:
  static constexpr int kMaxDegree = 8;

  KnotVector(int degree, std::vector<double> knots)
      : degree_(degree), knots_(std::move(knots)) {
    validate();
  }

  // Open knot vector with `num_elements` equal spans.
  static KnotVector uniform_open(int degree, int num_elements) {
    std::vector<double> interior;
    for (int i = 1; i < num_elements; ++i)
      interior.push_back(static_cast<double>(i) / num_elements);
    return with_interior(degree, interior);
  }

  static KnotVector with_interior(int degree, const std::vector<double>& interior) {
    std::vector<double> k;
    k.insert(k.end(), degree + 1, 0.0);
    k.insert(k.end(), interior.begin(), interior.end());
    k.insert(k.end(), degree + 1, 1.0);
    return KnotVector(degree, std::move(k));
  }

  int degree() const { return degree_; }
  int num_basis() const { return static_cast<int>(knots_.size()) - degree_ - 1; }
  int num_knots() const { return static_cast<int>(knots_.size()); }
  double knot(int i) const { return knots_[static_cast<std::size_t>(i)]; }
  const std::vector<double>& knots() const { return knots_; }

  std::vector<double> interior_knots() const {
    std::vector<double> out;
    for (int i = degree_ + 1; i < num_basis(); ++i) out.push_back(knots_[i]);
    return out;
  }

  // Index i of the span [k_i, k_{i+1}) containing u; u = 1 maps to the last
  // nonempty span.
  int find_span(double u) const {
    const int n = num_basis() - 1;
    if (u >= knots_[n + 1]) return last_span_;
    if (u <= knots_[degree_]) return degree_;
    int lo = degree_, hi = n + 1;
    while (hi - lo > 1) {
      const int mid = (lo + hi) / 2;
      (u < knots_[mid]) ? hi = mid : lo = mid;
    }
    return lo;
  }

  // Values of the degree+1 basis functions that are nonzero on `span`,
  // N[r] = B_{span-degree+r}(u). Cox-de Boor in the stable triangular form.
  void basis(int span, double u, double* N) const {
    double left[kMaxDegree + 1], right[kMaxDegree + 1];
    N[0] = 1.0;
    for (int j = 1; j <= degree_; ++j) {
      left[j] = u - knots_[span + 1 - j];
      right[j] = knots_[span + j] - u;
      double saved = 0.0;
      for (int r = 0; r < j; ++r) {
        const double tmp = N[r] / (right[r + 1] + left[j - r]);
        N[r] = saved + right[r + 1] * tmp;
        saved = left[j - r] * tmp;
      }
      N[j] = saved;
    }
  }

  // Values and first `nders` derivatives: ders[d][r] = d-th derivative of
  // B_{span-degree+r} at u, for d = 0..nders, r = 0..degree.
  void basis_derivatives(int span, double u, int nders, double ders[][kMaxDegree + 1]) const {
    const int p = degree_;
    double ndu[kMaxDegree + 1][kMaxDegree + 1];
    double left[kMaxDegree + 1], right[kMaxDegree + 1];
    ndu[0][0] = 1.0;
    for (int j = 1; j <= p; ++j) {
      left[j] = u - knots_[span + 1 - j];
      right[j] = knots_[span + j] - u;
      double saved = 0.0;
      for (int r = 0; r < j; ++r) {
        ndu[j][r] = right[r + 1] + left[j - r];
        const double tmp = ndu[r][j - 1] / ndu[j][r];
        ndu[r][j] = saved + right[r + 1] * tmp;
        saved = left[j - r] * tmp;
      }
      ndu[j][j] = saved;
    }
    for (int r = 0; r <= p; ++r) ders[0][r] = ndu[r][p];
    double a[2][kMaxDegree + 1];
    for (int r = 0; r <= p; ++r) {
      int s1 = 0, s2 = 1;
      a[0][0] = 1.0;
      for (int k = 1; k <= nders; ++k) {
        double d = 0.0;
        const int rk = r - k, pk = p - k;
        if (r >= k) {
          a[s2][0] = a[s1][0] / ndu[pk + 1][rk];
          d = a[s2][0] * ndu[rk][pk];
        }
        const int j1 = (rk >= -1) ? 1 : -rk;
        const int j2 = (r - 1 <= pk) ? k - 1 : p - r;
        for (int j = j1; j <= j2; ++j) {
          a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][rk + j];
          d += a[s2][j] * ndu[rk + j][pk];
        }
        if (r <= pk) {
          a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
          d += a[s2][k] * ndu[r][pk];
        }
        ders[k][r] = d;
        std::swap(s1, s2);
      }
    }
    double f = p;
    for (int k = 1; k <= nders; ++k) {
      for (int r = 0; r <= p; ++r) ders[k][r] *= f;
      f *= (p - k);
    }
  }

  // Greville abscissae g_i = (k_{i+1} + ... + k_{i+p}) / p (g_i = k_i for p=0).
  std::vector<double> greville() const {
    std::vector<double> g(static_cast<std::size_t>(num_basis()));
    for (int i = 0; i < num_basis(); ++i) {
      double s = 0.0;
      for (int j = 1; j <= degree_; ++j) s += knots_[i + j];
      g[static_cast<std::size_t>(i)] = (degree_ > 0) ? s / degree_ : knots_[i];
    }
    return g;
  }

  // Nonempty spans as [a,b) pairs (last one closed at 1).
  std::vector<std::pair<double, double>> spans() const {
    std::vector<std::pair<double, double>> s;
    for (int i = degree_; i < num_basis(); ++i)
      if (knots_[i + 1] > knots_[i]) s.emplace_back(knots_[i], knots_[i + 1]);
    return s;
  }

  bool operator==(const KnotVector& o) const {
    return degree_ == o.degree_ && knots_ == o.knots_;
  }

 private:
  void validate() const {
    if (degree_ < 1 || degree_ > kMaxDegree)
      throw GeometryError("knot vector: unsupported degree " + std::to_string(degree_));
    const int n = num_basis();
    if (n < degree_ + 1) throw GeometryError("knot vector: too few knots");
    for (std::size_t i = 1; i < knots_.size(); ++i)
      if (knots_[i] < knots_[i - 1]) throw GeometryError("knot vector: not nondecreasing");
    for (int i = 0; i <= degree_; ++i)
      if (knots_[i] != 0.0 || knots_[knots_.size() - 1 - i] != 1.0)
        throw GeometryError("knot vector: not clamped to [0,1]");
    const_cast<KnotVector*>(this)->last_span_ = [this] {
      int s = num_basis() - 1;
      while (s > degree_ && knots_[s] == knots_[s + 1]) --s;
      return s;
    }();
  }

  int degree_;
  std::vector<double> knots_;
  int last_span_ = 0;
};

// Homogeneous control point (w*x, w*y, w) used for rational geometry so knot
// insertion stays exact for conic sections.
using HPoint = Eigen::Vector3d;

inline HPoint to_homogeneous(const Vec2& p, double w) { return HPoint(w * p.x(), w * p.y(), w); }
inline Vec2 from_homogeneous(const HPoint& h) { return Vec2(h.x() / h.z(), h.y() / h.z()); }

// Single-knot insertion (Boehm) on a homogeneous control polygon. Returns the
// refined control points; `kv` is updated to include u.
inline std::vector<HPoint> insert_knot(const KnotVector& kv, const std::vector<HPoint>& cp,
                                       double u, KnotVector* kv_out) {
  const int p = kv.degree();
  const int span = kv.find_span(u);
  std::vector<HPoint> out(cp.size() + 1);
  for (int i = 0; i <= span - p; ++i) out[i] = cp[i];
  for (int i = span - p + 1; i <= span; ++i) {
    const double denom = kv.knot(i + p) - kv.knot(i);
    const double alpha = (denom > 0.0) ? (u - kv.knot(i)) / denom : 0.0;
    out[i] = alpha * cp[i] + (1.0 - alpha) * cp[i - 1];
  }
  for (std::size_t i = span + 1; i < out.size(); ++i) out[i] = cp[i - 1];
  std::vector<double> knots = kv.knots();
  knots.insert(knots.begin() + span + 1, u);
  *kv_out = KnotVector(p, std::move(knots));
  return out;
}

// A rational B-spline curve in the plane, stored in homogeneous form.
class NurbsCurve {
 public:
  NurbsCurve(KnotVector kv, std::vector<HPoint> cp) : kv_(std::move(kv)), cp_(std::move(cp)) {
    if (static_cast<int>(cp_.size()) != kv_.num_basis())
      throw GeometryError("curve: control point count does not match knot vector");
  }

  static NurbsCurve line(const Vec2& a, const Vec2& b, int degree = 2) {
    std::vector<HPoint> cp;
    for (int i = 0; i <= degree; ++i) {
      const double t = static_cast<double>(i) / degree;
      cp.push_back(to_homogeneous((1.0 - t) * a + t * b, 1.0));
    }
    return NurbsCurve(KnotVector::uniform_open(degree, 1), std::move(cp));
  }

  // Exact circular arc about `center`, radius r, from angle a0 to a1
  // (|a1 - a0| < pi), as a single degree-2 rational segment.
  static NurbsCurve arc(const Vec2& center, double r, double a0, double a1) {
    const double half = 0.5 * (a1 - a0);
    if (std::abs(half) >= 0.5 * pi)
      throw GeometryError("arc: sweep must be below 180 degrees");
    const double w = std::cos(half);
    const Vec2 p0 = center + r * unit_dir(a0);
    const Vec2 p2 = center + r * unit_dir(a1);
    const Vec2 pm = center + (r / w) * unit_dir(0.5 * (a0 + a1));
    std::vector<HPoint> cp = {to_homogeneous(p0, 1.0), to_homogeneous(pm, w),
                              to_homogeneous(p2, 1.0)};
    return NurbsCurve(KnotVector::uniform_open(2, 1), std::move(cp));
  }

  // Polyline through the given vertices, with C0 kinks at interior vertices.
  // Degree 1 stores the vertices directly (single interior knots); degree 2
  // doubles the interior knots and keeps every segment an affine image of its
  // chord, so params[i] lands on pts[i] in both cases.
  static NurbsCurve polyline(const std::vector<Vec2>& pts, const std::vector<double>& params,
                             int degree = 2) {
    if (pts.size() < 2 || params.size() != pts.size())
      throw GeometryError("polyline: need matching points and parameters");
    if (params.front() != 0.0 || params.back() != 1.0)
      throw GeometryError("polyline: parameters must span [0,1]");
    if (degree == 1) {
      std::vector<double> interior(params.begin() + 1, params.end() - 1);
      std::vector<HPoint> cp;
      for (const Vec2& p : pts) cp.push_back(to_homogeneous(p, 1.0));
      return NurbsCurve(KnotVector::with_interior(1, interior), std::move(cp));
    }
    if (degree != 2) throw GeometryError("polyline: supported degrees are 1 and 2");
    NurbsCurve c = line(pts.front(), pts.back());
    for (std::size_t i = 1; i + 1 < pts.size(); ++i)
      c = c.with_knot(params[i]).with_knot(params[i]);
    std::vector<HPoint> cp = c.cp_;
    int idx = 0;
    for (std::size_t seg = 0; seg + 1 < pts.size(); ++seg, idx += 2) {
      cp[static_cast<std::size_t>(idx)] = to_homogeneous(pts[seg], 1.0);
      cp[static_cast<std::size_t>(idx + 1)] =
          to_homogeneous(0.5 * (pts[seg] + pts[seg + 1]), 1.0);
    }
    cp[static_cast<std::size_t>(idx)] = to_homogeneous(pts.back(), 1.0);
    return NurbsCurve(c.kv_, std::move(cp));
  }

  const KnotVector& knots() const { return kv_; }
  const std::vector<HPoint>& control_points() const { return cp_; }
  int num_control_points() const { return static_cast<int>(cp_.size()); }
  Vec2 point_at(int i) const { return from_homogeneous(cp_[static_cast<std::size_t>(i)]); }
  double weight_at(int i) const { return cp_[static_cast<std::size_t>(i)].z(); }

  Vec2 evaluate(double u) const {
    const int p = kv_.degree();
    const int span = kv_.find_span(u);
    double N[KnotVector::kMaxDegree + 1];
    kv_.basis(span, u, N);
    HPoint h = HPoint::Zero();
    for (int r = 0; r <= p; ++r) h += N[r] * cp_[span - p + r];
    return from_homogeneous(h);
  }

  NurbsCurve with_knot(double u) const {
    KnotVector kv2 = kv_;
    auto cp2 = insert_knot(kv_, cp_, u, &kv2);
    return NurbsCurve(std::move(kv2), std::move(cp2));
  }

  NurbsCurve with_knots(const std::vector<double>& us) const {
    NurbsCurve c = *this;
    for (double u : us) c = c.with_knot(u);
    return c;
  }

  NurbsCurve reversed() const {
    std::vector<HPoint> cp(cp_.rbegin(), cp_.rend());
    std::vector<double> knots(kv_.num_knots());
    for (int i = 0; i < kv_.num_knots(); ++i)
      knots[static_cast<std::size_t>(i)] = 1.0 - kv_.knot(kv_.num_knots() - 1 - i);
    return NurbsCurve(KnotVector(kv_.degree(), std::move(knots)), std::move(cp));
  }

 private:
  KnotVector kv_;
  std::vector<HPoint> cp_;
};

// Basis data for all functions supported on the span containing one
// parametric point of a patch: rational values and parametric gradients.
struct BasisPoint {
  int span_u = 0, span_v = 0;
  // Entry a = j*(pu+1) + i corresponds to tensor function
  // (span_u - pu + i, span_v - pv + j).
  Eigen::Matrix<double, Eigen::Dynamic, 1> R;
  Eigen::Matrix<double, Eigen::Dynamic, 2> dR;
};

// Tensor-product NURBS patch mapping [0,1]^2 into the plane. Control points
// are stored in homogeneous form with u varying fastest.
class NurbsPatch {
 public:
  NurbsPatch(KnotVector ku, KnotVector kv, std::vector<HPoint> cp)
      : ku_(std::move(ku)), kv_(std::move(kv)), cp_(std::move(cp)) {
    if (static_cast<int>(cp_.size()) != ku_.num_basis() * kv_.num_basis())
      throw GeometryError("patch: control net size does not match knot vectors");
  }

  const KnotVector& knots_u() const { return ku_; }
  const KnotVector& knots_v() const { return kv_; }
  int num_u() const { return ku_.num_basis(); }
  int num_v() const { return kv_.num_basis(); }
  int num_control_points() const { return static_cast<int>(cp_.size()); }
  int index(int i, int j) const { return j * num_u() + i; }
  const HPoint& cp(int l) const { return cp_[static_cast<std::size_t>(l)]; }
  const HPoint& cp(int i, int j) const { return cp_[static_cast<std::size_t>(index(i, j))]; }
  Vec2 point(int l) const { return from_homogeneous(cp_[static_cast<std::size_t>(l)]); }
  double weight(int l) const { return cp_[static_cast<std::size_t>(l)].z(); }

  void set_point(int l, const Vec2& p) {
    const double w = cp_[static_cast<std::size_t>(l)].z();
    cp_[static_cast<std::size_t>(l)] = to_homogeneous(p, w);
  }

  // Rational basis values and parametric gradients of all functions that are
  // nonzero at (u,v).
  void eval_basis(double u, double v, BasisPoint* out) const {
    const int pu = ku_.degree(), pv = kv_.degree();
    const int su = ku_.find_span(u), sv = kv_.find_span(v);
    double du[2][KnotVector::kMaxDegree + 1], dv[2][KnotVector::kMaxDegree + 1];
    ku_.basis_derivatives(su, u, 1, du);
    kv_.basis_derivatives(sv, v, 1, dv);
    const int nloc = (pu + 1) * (pv + 1);
    out->span_u = su;
    out->span_v = sv;
    out->R.resize(nloc);
    out->dR.resize(nloc, 2);
    double W = 0.0, Wu = 0.0, Wv = 0.0;
    int a = 0;
    for (int j = 0; j <= pv; ++j) {
      for (int i = 0; i <= pu; ++i, ++a) {
        const double w = cp_[static_cast<std::size_t>(index(su - pu + i, sv - pv + j))].z();
        const double b = du[0][i] * dv[0][j];
        out->R(a) = w * b;
        out->dR(a, 0) = w * du[1][i] * dv[0][j];
        out->dR(a, 1) = w * du[0][i] * dv[1][j];
        W += out->R(a);
        Wu += out->dR(a, 0);
        Wv += out->dR(a, 1);
      }
    }
    const double invW = 1.0 / W;
    for (a = 0; a < nloc; ++a) {
      const double r = out->R(a) * invW;
      out->dR(a, 0) = (out->dR(a, 0) - r * Wu) * invW;
      out->dR(a, 1) = (out->dR(a, 1) - r * Wv) * invW;
      out->R(a) = r;
    }
  }

  // Geometry mapping x = F(u,v) and its Jacobian J = [dx/du dx/dv; dy/du dy/dv].
  void eval_mapping(const BasisPoint& bp, Vec2* x, Mat2* J) const {
    const int pu = ku_.degree(), pv = kv_.degree();
    x->setZero();
    J->setZero();
    int a = 0;
    for (int j = 0; j <= pv; ++j) {
      for (int i = 0; i <= pu; ++i, ++a) {
        const Vec2 c = point(index(bp.span_u - pu + i, bp.span_v - pv + j));
        *x += bp.R(a) * c;
        J->col(0) += bp.dR(a, 0) * c;
        J->col(1) += bp.dR(a, 1) * c;
      }
    }
  }

  Vec2 evaluate(double u, double v) const {
    BasisPoint bp;
    eval_basis(u, v, &bp);
    Vec2 x;
    Mat2 J;
    eval_mapping(bp, &x, &J);
    return x;
  }

  // Local indices (into the patch control net) of the functions in a BasisPoint.
  void local_indices(const BasisPoint& bp, std::vector<int>* idx) const {
    const int pu = ku_.degree(), pv = kv_.degree();
    idx->resize(static_cast<std::size_t>((pu + 1) * (pv + 1)));
    int a = 0;
    for (int j = 0; j <= pv; ++j)
      for (int i = 0; i <= pu; ++i, ++a)
        (*idx)[static_cast<std::size_t>(a)] = index(bp.span_u - pu + i, bp.span_v - pv + j);
  }

  NurbsPatch with_knot_u(double u) const {
    const int nu = num_u(), nv = num_v();
    KnotVector ku2 = ku_;
    std::vector<HPoint> out(static_cast<std::size_t>((nu + 1) * nv));
    for (int j = 0; j < nv; ++j) {
      std::vector<HPoint> row(static_cast<std::size_t>(nu));
      for (int i = 0; i < nu; ++i) row[static_cast<std::size_t>(i)] = cp(i, j);
      auto row2 = insert_knot(ku_, row, u, &ku2);
      for (int i = 0; i <= nu; ++i)
        out[static_cast<std::size_t>(j * (nu + 1) + i)] = row2[static_cast<std::size_t>(i)];
    }
    return NurbsPatch(std::move(ku2), kv_, std::move(out));
  }

  NurbsPatch with_knot_v(double v) const {
    const int nu = num_u(), nv = num_v();
    KnotVector kv2 = kv_;
    std::vector<HPoint> out(static_cast<std::size_t>(nu * (nv + 1)));
    for (int i = 0; i < nu; ++i) {
      std::vector<HPoint> col(static_cast<std::size_t>(nv));
      for (int j = 0; j < nv; ++j) col[static_cast<std::size_t>(j)] = cp(i, j);
      auto col2 = insert_knot(kv_, col, v, &kv2);
      for (int j = 0; j <= nv; ++j)
        out[static_cast<std::size_t>(j * nu + i)] = col2[static_cast<std::size_t>(j)];
    }
    return NurbsPatch(ku_, std::move(kv2), std::move(out));
  }

  NurbsPatch refined(const std::vector<double>& uknots, const std::vector<double>& vknots) const {
    NurbsPatch p = *this;
    for (double u : uknots) p = p.with_knot_u(u);
    for (double v : vknots) p = p.with_knot_v(v);
    return p;
  }

 private:
  KnotVector ku_, kv_;
  std::vector<HPoint> cp_;
};

}  // namespace igamotor::splines
