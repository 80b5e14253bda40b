#pragma once

#include <vector>

#include "igamotor/core.hpp"
#include "igamotor/geometry.hpp"

namespace igamotor::assembly {

// Identification of two boundary edges of the same geometry: corresponding
// coefficients are constrained to u_a = sign * u_b (sign +1 for periodic
// images, -1 for antiperiodic ones). `reversed` pairs the k-th point of
// edge_a with the (n-1-k)-th point of edge_b.
struct EdgeLink {
  int edge_a = -1;
  int edge_b = -1;
  double sign = 1.0;
  bool reversed = false;
};

// Maps geometry nodes to solution coefficients. Nodes linked across
// periodic/antiperiodic edges share one signed coefficient; nodes on
// Dirichlet edges are eliminated (homogeneous essential condition). If a
// chain of identifications forces a coefficient to equal its own negative,
// the coefficient is eliminated as well, so an essential condition always
// wins where identified edges touch a Dirichlet boundary.
class DofMap {
 public:
  DofMap(const geometry::MultiPatchGeometry& g, const std::vector<int>& dirichlet_edges,
         const std::vector<EdgeLink>& links = {}) {
    const int nn = g.num_nodes;
    parent_.resize(static_cast<std::size_t>(nn));
    std::iota(parent_.begin(), parent_.end(), 0);
    sign_to_parent_.assign(static_cast<std::size_t>(nn), 1.0);
    conflicted_.assign(static_cast<std::size_t>(nn), 0);

    for (const EdgeLink& link : links) {
      const auto na = edge_nodes(g, link.edge_a);
      auto nb = edge_nodes(g, link.edge_b);
      if (link.reversed) std::reverse(nb.begin(), nb.end());
      if (na.size() != nb.size())
        throw GeometryError("linked edges have different discretizations");
      for (std::size_t k = 0; k < na.size(); ++k) unite(na[k], nb[k], link.sign);
    }

    std::vector<char> essential(static_cast<std::size_t>(nn), 0);
    for (int e : dirichlet_edges)
      for (int node : edge_nodes(g, e)) essential[static_cast<std::size_t>(node)] = 1;
    for (int n = 0; n < nn; ++n)
      if (essential[static_cast<std::size_t>(n)])
        essential[static_cast<std::size_t>(find(n).first)] = 1;

    dof_.assign(static_cast<std::size_t>(nn), -1);
    sign_.assign(static_cast<std::size_t>(nn), 1.0);
    std::vector<int> root_dof(static_cast<std::size_t>(nn), -2);
    num_dofs_ = 0;
    for (int n = 0; n < nn; ++n) {
      const auto [root, s] = find(n);
      if (essential[static_cast<std::size_t>(root)] ||
          conflicted_[static_cast<std::size_t>(root)])
        continue;
      int& rd = root_dof[static_cast<std::size_t>(root)];
      if (rd == -2) rd = num_dofs_++;
      dof_[static_cast<std::size_t>(n)] = rd;
      sign_[static_cast<std::size_t>(n)] = s;
    }
  }

  int num_dofs() const { return num_dofs_; }
  // -1 when the node's coefficient is eliminated (held at zero).
  int dof(int node) const { return dof_[static_cast<std::size_t>(node)]; }
  double sign(int node) const { return sign_[static_cast<std::size_t>(node)]; }

  // Nodes along an edge, in edge-curve parameter order.
  static std::vector<int> edge_nodes(const geometry::MultiPatchGeometry& g, int edge) {
    const auto& uses = g.edge_uses[static_cast<std::size_t>(edge)];
    if (uses.empty()) throw GeometryError("edge has no adjacent patch");
    const auto& use = uses.front();
    std::vector<int> locals = g.side_locals(use.patch, use.side);
    if (g.patch_sides[static_cast<std::size_t>(use.patch)][static_cast<std::size_t>(use.side)]
            .reversed)
      std::reverse(locals.begin(), locals.end());
    std::vector<int> nodes;
    nodes.reserve(locals.size());
    for (int l : locals) nodes.push_back(g.node_of(use.patch, l));
    return nodes;
  }

  // Expands a coefficient vector to per-node values (eliminated nodes -> 0).
  VecX node_values(const VecX& u) const {
    VecX out(static_cast<Eigen::Index>(dof_.size()));
    for (std::size_t n = 0; n < dof_.size(); ++n)
      out[static_cast<Eigen::Index>(n)] =
          dof_[n] >= 0 ? sign_[n] * u[dof_[n]] : 0.0;
    return out;
  }

 private:
  std::pair<int, double> find(int a) {
    double s = 1.0;
    while (parent_[static_cast<std::size_t>(a)] != a) {
      const int p = parent_[static_cast<std::size_t>(a)];
      const int gp = parent_[static_cast<std::size_t>(p)];
      // Path halving, keeping the accumulated sign consistent.
      sign_to_parent_[static_cast<std::size_t>(a)] *=
          sign_to_parent_[static_cast<std::size_t>(p)];
      parent_[static_cast<std::size_t>(a)] = gp;
      s *= sign_to_parent_[static_cast<std::size_t>(a)];
      a = gp;
    }
    return {a, s};
  }

  void unite(int a, int b, double sign_ab) {
    const auto [ra, sa] = find(a);
    const auto [rb, sb] = find(b);
    if (ra == rb) {
      if (sa != sign_ab * sb) conflicted_[static_cast<std::size_t>(ra)] = 1;
      return;
    }
    // value_a = sign_ab * value_b, value_a = sa * value_ra, value_b = sb * value_rb
    // => value_ra = (sign_ab * sb / sa) * value_rb.
    parent_[static_cast<std::size_t>(ra)] = rb;
    sign_to_parent_[static_cast<std::size_t>(ra)] = sign_ab * sb / sa;
    if (conflicted_[static_cast<std::size_t>(ra)]) conflicted_[static_cast<std::size_t>(rb)] = 1;
  }

  std::vector<int> parent_;
  std::vector<double> sign_to_parent_;
  std::vector<char> conflicted_;
  std::vector<int> dof_;
  std::vector<double> sign_;
  int num_dofs_ = 0;
};

}  // namespace igamotor::assembly
