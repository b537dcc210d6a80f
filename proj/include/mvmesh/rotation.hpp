#pragma once

#include <array>

#include "mvmesh/types.hpp"

namespace mvmesh {

// Rodrigues formula. Near-zero angles fall back to series expansions so the
// map and its derivatives stay smooth through the origin.
Mat3 axis_angle_to_matrix(const Vec3& omega);

// Principal log map; returned vector has norm <= pi.
Vec3 matrix_to_axis_angle(const Mat3& rot);

// Partial derivatives dR/d(omega_i), i = 0..2.
std::array<Mat3, 3> axis_angle_jacobian(const Vec3& omega);

// Jacobian of R(omega) * p with respect to omega (3x3, column i = d/d omega_i).
Mat3 rotate_point_jacobian(const Vec3& omega, const Vec3& point);

inline Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

}  // namespace mvmesh
