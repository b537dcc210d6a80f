#include "mvmesh/rotation.hpp"

#include <cmath>

namespace mvmesh {

namespace {

// sin(t)/t and (1-cos(t))/t^2 with series fallbacks below t ~ 1e-4.
double sinc_a(double t) {
  if (t < 1e-4) return 1.0 - t * t / 6.0;
  return std::sin(t) / t;
}

double cosc_b(double t) {
  if (t < 1e-4) return 0.5 - t * t / 24.0;
  return (1.0 - std::cos(t)) / (t * t);
}

// d a / d t / t = (t cos t - sin t) / t^3
double da_over_t(double t) {
  if (t < 1e-4) return -1.0 / 3.0 + t * t / 30.0;
  return (t * std::cos(t) - std::sin(t)) / (t * t * t);
}

// d b / d t / t = (t sin t - 2 (1 - cos t)) / t^4
double db_over_t(double t) {
  if (t < 1e-4) return -1.0 / 12.0 + t * t / 180.0;
  return (t * std::sin(t) - 2.0 * (1.0 - std::cos(t))) / (t * t * t * t);
}

}  // namespace

Mat3 axis_angle_to_matrix(const Vec3& omega) {
  const double t = omega.norm();
  const Mat3 k = skew(omega);
  return Mat3::Identity() + sinc_a(t) * k + cosc_b(t) * (k * k);
}

Vec3 matrix_to_axis_angle(const Mat3& rot) {
  const double tr = rot.trace();
  const double c = std::min(1.0, std::max(-1.0, (tr - 1.0) * 0.5));
  const double t = std::acos(c);
  if (t < 1e-10) {
    // First order: R ~ I + [w]x
    return 0.5 * Vec3(rot(2, 1) - rot(1, 2), rot(0, 2) - rot(2, 0), rot(1, 0) - rot(0, 1));
  }
  if (t > M_PI - 1e-6) {
    // Near pi the off-diagonal difference degenerates; recover the axis from
    // the symmetric part instead.
    Mat3 s = 0.5 * (rot + Mat3::Identity());
    Vec3 axis;
    int k = 0;
    s.diagonal().maxCoeff(&k);
    axis = s.col(k) / std::sqrt(std::max(s(k, k), 1e-12));
    axis.normalize();
    // Fix the sign using the skew part where possible.
    Vec3 w(rot(2, 1) - rot(1, 2), rot(0, 2) - rot(2, 0), rot(1, 0) - rot(0, 1));
    if (w.dot(axis) < 0) axis = -axis;
    return t * axis;
  }
  Vec3 w(rot(2, 1) - rot(1, 2), rot(0, 2) - rot(2, 0), rot(1, 0) - rot(0, 1));
  return (t / (2.0 * std::sin(t))) * w;
}

std::array<Mat3, 3> axis_angle_jacobian(const Vec3& omega) {
  const double t = omega.norm();
  const double a_t = da_over_t(t);
  const double b_t = db_over_t(t);
  const double a = sinc_a(t);
  const double b = cosc_b(t);
  const Mat3 k = skew(omega);
  const Mat3 k2 = k * k;
  std::array<Mat3, 3> out;
  for (int i = 0; i < 3; ++i) {
    Vec3 e = Vec3::Zero();
    e(i) = 1.0;
    const Mat3 ke = skew(e);
    out[i] = (a_t * omega(i)) * k + a * ke + (b_t * omega(i)) * k2 + b * (ke * k + k * ke);
  }
  return out;
}

Mat3 rotate_point_jacobian(const Vec3& omega, const Vec3& point) {
  const auto dr = axis_angle_jacobian(omega);
  Mat3 j;
  for (int i = 0; i < 3; ++i) j.col(i) = dr[i] * point;
  return j;
}

}  // namespace mvmesh
