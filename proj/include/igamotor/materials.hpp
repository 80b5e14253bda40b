#pragma once

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "igamotor/core.hpp"

namespace igamotor::materials {

// Monotone cubic (PCHIP) interpolant of a measured B-H characteristic,
// exposing the reluctivity nu(B) = H/B and its derivative with respect to
// |B|. The table must start at (0,0) and be strictly increasing in both
// columns. Beyond the last sample the curve continues linearly with slope
// exactly 1/mu0 (fully saturated); the last tabulated slope is overridden to
// the same value so the junction is C1.
//
// Shape preservation matters here: the Newton linearization needs
// dH/dB = nu + B dnu/dB > 0 everywhere, which a monotone interpolant of
// monotone data provides.
class BHCurve {
 public:
  static BHCurve from_table(std::vector<double> b, std::vector<double> h) {
    BHCurve c;
    c.b_ = std::move(b);
    c.h_ = std::move(h);
    c.validate();
    c.compute_slopes();
    return c;
  }

  // Two-column CSV "B,H" with optional '#' comment lines.
  static BHCurve from_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open B-H table: " + path);
    std::vector<double> b, h;
    std::string line;
    while (std::getline(in, line)) {
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      if (line.find_first_not_of(" \t\r\n,") == std::string::npos) continue;
      std::istringstream ls(line);
      double bv, hv;
      char comma;
      if (!(ls >> bv >> comma >> hv) || comma != ',')
        throw ConfigError("malformed B-H table line: " + line);
      b.push_back(bv);
      h.push_back(hv);
    }
    return from_table(std::move(b), std::move(h));
  }

  // Lamination-steel default used by the bundled machine configurations.
  static const BHCurve& default_steel() {
    static const BHCurve c = from_table(
        {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.1,
         1.2, 1.3, 1.4, 1.5, 1.6, 1.7, 1.8, 1.9, 2.0, 2.1, 2.2, 2.3},
        {0.0,    22.0,   35.0,   45.0,    55.0,    65.0,    76.0,    90.0,
         107.0,  128.0,  155.0,  193.0,   248.0,   340.0,   520.0,   940.0,
         1950.0, 4500.0, 10600.0, 24000.0, 50000.0, 94000.0, 160000.0, 238000.0});
    return c;
  }

  double b_max() const { return b_.back(); }

  double h(double b) const {
    if (b <= 0.0) return 0.0;
    if (b >= b_.back()) return h_.back() + (b - b_.back()) * nu0;
    const int k = interval(b);
    double v, dv;
    hermite(k, b, &v, &dv);
    return v;
  }

  double dh_db(double b) const {
    if (b <= 0.0) return d_.front();
    if (b >= b_.back()) return nu0;
    const int k = interval(b);
    double v, dv;
    hermite(k, b, &v, &dv);
    return dv;
  }

  // Reluctivity nu = H/B. On the first interval H has a root at B = 0, so the
  // quotient is evaluated from the factored Hermite polynomial; this is exact
  // in the limit B -> 0 where nu(0) = H'(0).
  double nu(double b) const {
    if (b <= b_[1]) {
      double v, dv;
      first_interval_nu(std::max(b, 0.0), &v, &dv);
      return v;
    }
    return h(b) / b;
  }

  double dnu_db(double b) const {
    if (b <= b_[1]) {
      double v, dv;
      first_interval_nu(std::max(b, 0.0), &v, &dv);
      return dv;
    }
    if (b >= b_.back()) return (nu0 - nu(b)) / b;
    const int k = interval(b);
    double v, dv;
    hermite(k, b, &v, &dv);
    return (dv - v / b) / b;
  }

 private:
  void validate() const {
    if (b_.size() < 3 || b_.size() != h_.size())
      throw ConfigError("B-H table needs at least three matching rows");
    if (b_.front() != 0.0 || h_.front() != 0.0)
      throw ConfigError("B-H table must start at (0,0)");
    for (std::size_t i = 1; i < b_.size(); ++i) {
      if (b_[i] <= b_[i - 1] || h_[i] <= h_[i - 1])
        throw ConfigError("B-H table must be strictly increasing");
    }
    const std::size_t n = b_.size() - 1;
    const double slope_last = (h_[n] - h_[n - 1]) / (b_[n] - b_[n - 1]);
    if (slope_last >= nu0)
      throw ConfigError("B-H table already steeper than vacuum at the end");
  }

  // Fritsch-Carlson slopes (weighted harmonic means of secants, three-point
  // endpoint formulas with clamping); the final slope is replaced by 1/mu0.
  void compute_slopes() {
    const std::size_t n = b_.size();
    std::vector<double> hgap(n - 1), delta(n - 1);
    for (std::size_t i = 0; i + 1 < n; ++i) {
      hgap[i] = b_[i + 1] - b_[i];
      delta[i] = (h_[i + 1] - h_[i]) / hgap[i];
    }
    d_.assign(n, 0.0);
    for (std::size_t i = 1; i + 1 < n; ++i) {
      const double w1 = 2.0 * hgap[i] + hgap[i - 1];
      const double w2 = hgap[i] + 2.0 * hgap[i - 1];
      d_[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
    }
    auto endpoint = [](double h0, double h1, double d0, double d1) {
      double d = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
      if (d <= 0.0) return 0.0;
      if (d > 3.0 * d0) return 3.0 * d0;
      return d;
    };
    d_.front() = endpoint(hgap[0], hgap[1], delta[0], delta[1]);
    d_.back() = nu0;  // C1 junction with the saturated extrapolation
  }

  int interval(double b) const {
    const auto it = std::upper_bound(b_.begin(), b_.end(), b);
    return static_cast<int>(it - b_.begin()) - 1;
  }

  void hermite(int k, double b, double* v, double* dv) const {
    const double hk = b_[k + 1] - b_[k];
    const double t = (b - b_[k]) / hk;
    const double t2 = t * t, t3 = t2 * t;
    *v = h_[k] * (2 * t3 - 3 * t2 + 1) + hk * d_[k] * (t3 - 2 * t2 + t) +
         h_[k + 1] * (-2 * t3 + 3 * t2) + hk * d_[k + 1] * (t3 - t2);
    *dv = (h_[k] * (6 * t2 - 6 * t) / hk + d_[k] * (3 * t2 - 4 * t + 1) +
           h_[k + 1] * (6 * t - 6 * t2) / hk + d_[k + 1] * (3 * t2 - 2 * t));
  }

  // On [0, b1] with h0 = 0: H(B) = B * q(t), t = B/b1, where
  // q(t) = d0 (1-t)^2 + (h1/b1) t (3-2t) + d1 t (t-1). Then nu = q and
  // dnu/dB = q'(t)/b1.
  void first_interval_nu(double b, double* v, double* dv) const {
    const double b1 = b_[1], h1 = h_[1], d0 = d_[0], d1 = d_[1];
    const double t = b / b1;
    *v = d0 * (1 - t) * (1 - t) + (h1 / b1) * t * (3 - 2 * t) + d1 * t * (t - 1);
    *dv = (-2 * d0 * (1 - t) + (h1 / b1) * (3 - 4 * t) + d1 * (2 * t - 1)) / b1;
  }

  std::vector<double> b_, h_, d_;
};

// Isotropic material behavior for the field problem: either a constant
// reluctivity (air, copper, magnet) or a saturating B-H characteristic.
struct Material {
  double nu_const = nu0;
  const BHCurve* curve = nullptr;

  static Material air() { return {nu0, nullptr}; }
  static Material linear(double mu_r) { return {nu0 / mu_r, nullptr}; }
  static Material saturating(const BHCurve* c) { return {0.0, c}; }

  bool nonlinear() const { return curve != nullptr; }
  double nu(double b) const { return curve ? curve->nu(b) : nu_const; }
  double dnu_db(double b) const { return curve ? curve->dnu_db(b) : 0.0; }
};

}  // namespace igamotor::materials
