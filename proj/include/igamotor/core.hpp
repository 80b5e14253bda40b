#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>
#include <Eigen/Sparse>

namespace igamotor {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;
using SpMat = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

inline constexpr double pi = 3.14159265358979323846;
inline constexpr double mu0 = 4.0e-7 * pi;   // vacuum permeability [H/m]
inline constexpr double nu0 = 1.0 / mu0;     // vacuum reluctivity [m/H]

inline double deg2rad(double deg) { return deg * (pi / 180.0); }
inline double rad2deg(double rad) { return rad * (180.0 / pi); }

// Error taxonomy. Each maps to a distinct CLI exit code so scripted runs can
// distinguish bad input from numerical failure.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raised when a parameter set produces overlapping or inverted patches, or
// violates a structural precondition of the geometry template.
struct GeometryError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SolverError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Unit vector at angle t (radians).
inline Vec2 unit_dir(double t) { return Vec2(std::cos(t), std::sin(t)); }

// CCW perpendicular.
inline Vec2 perp(const Vec2& v) { return Vec2(-v.y(), v.x()); }

}  // namespace igamotor
