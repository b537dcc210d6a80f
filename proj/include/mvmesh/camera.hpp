#pragma once

#include <vector>

#include "mvmesh/errors.hpp"
#include "mvmesh/types.hpp"

namespace mvmesh {

struct Intrinsics {
  Vec2 focal = Vec2(5000.0, 5000.0);  // pixels
  Vec2 center = Vec2(512.0, 512.0);   // pixels
  int height = 1024;
  int width = 1024;

  void validate() const;
};

// Rigid transform mapping source-frame points into the target frame:
// p_target = R * p_source + T.
struct Extrinsics {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  Points3 apply(const Points3& pts) const;

  // this o inner: first apply `inner`, then this.
  Extrinsics compose(const Extrinsics& inner) const {
    return {rotation * inner.rotation, rotation * inner.translation + translation};
  }
  Extrinsics inverse() const {
    return {rotation.transpose(), -(rotation.transpose() * translation)};
  }
  void validate(double tol = 1e-9) const;
};

// Weak-perspective camera applied to already-rotated points:
// p2d = scale * (x, y) + translation.
struct OrthoCam {
  double scale = 1.0;
  Vec2 translation = Vec2::Zero();
};

// Two-column rotation parameterization (first two matrix columns, stacked
// column-major into 6 values).
struct Rot6D {
  Eigen::Matrix<double, 6, 1> v = Eigen::Matrix<double, 6, 1>::Zero();
};

// Relative transforms cam1 -> cam_n for every view of a rig given
// world -> cam extrinsics. Entry 0 is the identity.
std::vector<Extrinsics> compose_rig(const std::vector<Extrinsics>& world_to_cam);

// Composition (cam1 -> cam_n) o (human -> cam1).
Extrinsics human_to_cam(const Extrinsics& cam1_to_camn, const Extrinsics& human_to_cam1);

// Human frame from an estimated world-frame pelvis position and an estimated
// world -> human rotation: p_h = R * (p_w - pelvis_w).
Extrinsics world_to_human(const Vec3& pelvis_w, const Mat3& rot_w_to_h);

// Per-view human -> cam transforms derived from world -> cam extrinsics and
// the estimated human placement.
std::vector<Extrinsics> human_to_all_cams(const std::vector<Extrinsics>& world_to_cam,
                                          const Vec3& pelvis_w, const Mat3& rot_w_to_h);

constexpr double kMinDepth = 1e-6;

// Perspective projection of camera-frame points. Throws PointBehindCamera if
// any depth falls at or below kMinDepth.
Vec2 project_persp(const Vec3& p_cam, const Intrinsics& intr);
Points2 project_persp(const Points3& pts, const Extrinsics& ext, const Intrinsics& intr);

Vec2 project_ortho(const Vec3& p_rotated, const OrthoCam& cam);
Points2 project_ortho(const Points3& rotated, const OrthoCam& cam);

// Closed-form least-squares fit of an OrthoCam from rotated 3D points and
// observed 2D points. The scale is clamped positive. Throws
// DegenerateConfiguration when the projected points carry no spread.
OrthoCam fit_ortho(const Points3& rotated, const Points2& observed);

// Gram-Schmidt reconstruction; throws NearZeroColumn when a column cannot be
// normalized.
Mat3 rot6d_to_matrix(const Rot6D& r);
Rot6D matrix_to_rot6d(const Mat3& rot);

// Camera placed at `center` (world), looking at `target`, with `up` mapping
// to image-up. Returns world -> cam extrinsics.
Extrinsics look_at(const Vec3& center, const Vec3& target, const Vec3& up);

}  // namespace mvmesh
