#pragma once

#include <cmath>
#include <vector>

#include "igamotor/core.hpp"

namespace igamotor::quadrature {

struct Rule1D {
  std::vector<double> points;   // on [0,1]
  std::vector<double> weights;  // sum to 1
};

// Gauss-Legendre rule with n points, exact for polynomials of degree 2n-1,
// mapped to [0,1]. Nodes are found by Newton iteration from the Chebyshev
// initial guess; this converges to machine precision in a few steps.
inline Rule1D gauss_legendre(int n) {
  Rule1D r;
  r.points.resize(static_cast<std::size_t>(n));
  r.weights.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    double x = std::cos(pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      // Legendre recurrence: P_k(x) and its derivative.
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-15) break;
    }
    r.points[static_cast<std::size_t>(i)] = 0.5 * (1.0 - x);  // descending x -> ascending t
    r.weights[static_cast<std::size_t>(i)] = 1.0 / ((1.0 - x * x) * dp * dp);
  }
  return r;
}

// Quadrature point on a knot span [a,b]: location and weight already scaled
// by the span length.
struct SpanPoint {
  double u;
  double w;
};

inline std::vector<SpanPoint> span_points(double a, double b, const Rule1D& rule) {
  std::vector<SpanPoint> out(rule.points.size());
  for (std::size_t i = 0; i < rule.points.size(); ++i)
    out[i] = {a + (b - a) * rule.points[i], (b - a) * rule.weights[i]};
  return out;
}

}  // namespace igamotor::quadrature
