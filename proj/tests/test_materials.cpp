// B-H curve interpolation: frozen reference values from an independent PCHIP
// implementation, interpolation/monotonicity/extrapolation properties, and
// the reluctivity identities the nonlinear assembly depends on.
#include <gtest/gtest.h>

#include <cmath>

#include "igamotor/materials.hpp"

namespace {

using igamotor::mu0;
using igamotor::nu0;
using igamotor::materials::BHCurve;
using igamotor::materials::Material;

BHCurve toy() {
  return BHCurve::from_table({0.0, 1.0, 2.0, 3.0, 4.0}, {0.0, 1.0, 1.5, 2.5, 5.0});
}

// Reference values for the toy table, computed once with an independent
// monotone-cubic implementation (Fritsch-Carlson slopes, three-point
// endpoints). Only intervals untouched by the saturated-end slope override
// are compared.
TEST(BHCurveTest, MatchesReferenceInterpolant) {
  const BHCurve c = toy();
  const struct {
    double b, h, dh;
  } ref[] = {
      {0.25, 0.3007812500000001, 1.151041666666667},
      {0.5, 0.5729166666666667, 1.020833333333333},
      {0.75, 0.80859375, 0.859375},
      {1.5, 1.25, 0.4166666666666667},
      {2.5, 1.904761904761905, 0.9761904761904763},
      {2.9, 2.362285714285714, 1.326666666666666},
  };
  for (const auto& r : ref) {
    EXPECT_NEAR(c.h(r.b), r.h, 1e-13);
    EXPECT_NEAR(c.dh_db(r.b), r.dh, 1e-12);
  }
}

TEST(BHCurveTest, InterpolatesTableValues) {
  const BHCurve& c = BHCurve::default_steel();
  EXPECT_DOUBLE_EQ(c.h(0.0), 0.0);
  EXPECT_NEAR(c.h(1.0), 155.0, 1e-10);
  EXPECT_NEAR(c.h(1.7), 4500.0, 1e-9);
  EXPECT_NEAR(c.h(2.3), 238000.0, 1e-7);
}

TEST(BHCurveTest, StrictlyMonotoneEverywhere) {
  const BHCurve& c = BHCurve::default_steel();
  double prev = -1.0;
  for (int i = 0; i <= 3000; ++i) {
    const double b = 3.0 * i / 3000.0;
    const double h = c.h(b);
    EXPECT_GT(c.dh_db(b), 0.0) << "b=" << b;
    if (i > 0) {
      EXPECT_GT(h, prev) << "b=" << b;
    }
    prev = h;
  }
}

TEST(BHCurveTest, SaturatedExtrapolationIsC1) {
  const BHCurve& c = BHCurve::default_steel();
  const double bmax = c.b_max();
  EXPECT_NEAR(c.dh_db(bmax - 1e-12), nu0, 1e-3 * nu0);
  EXPECT_DOUBLE_EQ(c.dh_db(bmax + 0.5), nu0);
  EXPECT_NEAR(c.h(bmax + 1e-9) - c.h(bmax - 1e-9), 2e-9 * nu0, 1e-4);
  // Far into saturation H(B) tracks the vacuum line offset by magnetization.
  EXPECT_NEAR(c.h(4.0), 238000.0 + 1.7 * nu0, 1e-6);
}

TEST(BHCurveTest, ReluctivityIdentities) {
  const BHCurve& c = BHCurve::default_steel();
  // nu * B == H, and nu + B dnu/dB == dH/dB (used by the Newton tangent).
  for (double b : {1e-9, 0.03, 0.1, 0.37, 0.9, 1.3, 1.55, 1.8, 2.05, 2.3, 2.9}) {
    EXPECT_NEAR(c.nu(b) * b, c.h(b), 1e-9 * std::max(1.0, c.h(b)));
    EXPECT_NEAR(c.nu(b) + b * c.dnu_db(b), c.dh_db(b), 1e-7 * c.dh_db(b)) << "b=" << b;
  }
  // Limit value at zero equals the initial slope, evaluated stably.
  EXPECT_NEAR(c.nu(0.0), c.dh_db(0.0), 1e-9);
  EXPECT_NEAR(c.nu(1e-14), c.nu(0.0), 1e-6 * c.nu(0.0));
  // Initial relative permeability lands in the expected range for steel.
  const double mur0 = 1.0 / (mu0 * c.nu(0.0));
  EXPECT_GT(mur0, 1000.0);
  EXPECT_LT(mur0, 10000.0);
}

TEST(BHCurveTest, DerivativeMatchesFiniteDifferences) {
  const BHCurve& c = BHCurve::default_steel();
  const double h = 1e-7;
  for (double b : {0.04, 0.52, 1.21, 1.69, 2.02, 2.24}) {
    const double fd_h = (c.h(b + h) - c.h(b - h)) / (2 * h);
    EXPECT_NEAR(c.dh_db(b), fd_h, 1e-5 * std::abs(fd_h));
    const double fd_nu = (c.nu(b + h) - c.nu(b - h)) / (2 * h);
    EXPECT_NEAR(c.dnu_db(b), fd_nu, 1e-5 * std::max(std::abs(fd_nu), 1.0));
  }
}

TEST(BHCurveTest, ReluctivityStaysBelowVacuum) {
  const BHCurve& c = BHCurve::default_steel();
  for (int i = 0; i <= 500; ++i) {
    const double b = 6.0 * i / 500.0;
    EXPECT_LT(c.nu(b), nu0);
  }
}

TEST(BHCurveTest, CsvRoundTrip) {
  const BHCurve csv = BHCurve::from_csv(std::string(IGAMOTOR_ASSET_DIR) + "/bh_m27.csv");
  const BHCurve& ref = BHCurve::default_steel();
  for (double b : {0.05, 0.7, 1.45, 1.95, 2.25, 3.0})
    EXPECT_DOUBLE_EQ(csv.h(b), ref.h(b));
}

TEST(BHCurveTest, RejectsBadTables) {
  using igamotor::ConfigError;
  EXPECT_THROW(BHCurve::from_table({0.1, 1.0, 2.0}, {0.0, 1.0, 2.0}), ConfigError);
  EXPECT_THROW(BHCurve::from_table({0.0, 1.0, 0.5}, {0.0, 1.0, 2.0}), ConfigError);
  EXPECT_THROW(BHCurve::from_table({0.0, 1.0, 2.0}, {0.0, 2.0, 1.0}), ConfigError);
  // End slope at or above vacuum reluctivity cannot be extended smoothly.
  EXPECT_THROW(BHCurve::from_table({0.0, 1.0, 2.0}, {0.0, 100.0, 1.1 / mu0}), ConfigError);
}

TEST(MaterialTest, LinearAndSaturatingBehavior) {
  const Material air = Material::air();
  EXPECT_DOUBLE_EQ(air.nu(1.3), nu0);
  EXPECT_DOUBLE_EQ(air.dnu_db(1.3), 0.0);
  const Material magnet = Material::linear(1.05);
  EXPECT_DOUBLE_EQ(magnet.nu(0.2), nu0 / 1.05);
  const Material iron = Material::saturating(&BHCurve::default_steel());
  EXPECT_TRUE(iron.nonlinear());
  EXPECT_LT(iron.nu(1.0), 0.01 * nu0);
  EXPECT_GT(iron.nu(2.5), 100.0 * iron.nu(1.0));  // deep in saturation
  EXPECT_GT(iron.nu(20.0), 0.85 * nu0);           // asymptotically vacuum-like
}

}  // namespace
