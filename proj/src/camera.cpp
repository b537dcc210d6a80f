#include "mvmesh/camera.hpp"

#include <cmath>

namespace mvmesh {

void Intrinsics::validate() const {
  if (!(focal.x() > 0.0) || !(focal.y() > 0.0)) throw ConfigError("intrinsics: focal must be positive");
  if (height <= 0 || width <= 0) throw ConfigError("intrinsics: image size must be positive");
  if (center.x() < 0.0 || center.x() > width || center.y() < 0.0 || center.y() > height)
    throw ConfigError("intrinsics: principal point outside image bounds");
}

Points3 Extrinsics::apply(const Points3& pts) const {
  Points3 out(pts.rows(), 3);
  for (Eigen::Index i = 0; i < pts.rows(); ++i)
    out.row(i) = (rotation * pts.row(i).transpose() + translation).transpose();
  return out;
}

void Extrinsics::validate(double tol) const {
  const double ortho = (rotation * rotation.transpose() - Mat3::Identity()).norm();
  if (ortho > tol) throw NumericError("extrinsics: rotation is not orthonormal");
  if (rotation.determinant() < 0.0) throw NumericError("extrinsics: rotation has negative determinant");
  if (!translation.allFinite()) throw NumericError("extrinsics: non-finite translation");
}

std::vector<Extrinsics> compose_rig(const std::vector<Extrinsics>& world_to_cam) {
  if (world_to_cam.empty()) throw ConfigError("compose_rig: empty rig");
  std::vector<Extrinsics> rel;
  rel.reserve(world_to_cam.size());
  const Extrinsics cam1_from_world = world_to_cam.front();
  const Extrinsics world_from_cam1 = cam1_from_world.inverse();
  for (const auto& wc : world_to_cam) {
    // R_{c1->cn} = R_{w->cn} R_{w->c1}^T ; T_{c1->cn} = T_{w->cn} - R_{c1->cn} T_{w->c1}
    rel.push_back(wc.compose(world_from_cam1));
  }
  return rel;
}

Extrinsics human_to_cam(const Extrinsics& cam1_to_camn, const Extrinsics& human_to_cam1) {
  return cam1_to_camn.compose(human_to_cam1);
}

Extrinsics world_to_human(const Vec3& pelvis_w, const Mat3& rot_w_to_h) {
  return {rot_w_to_h, -(rot_w_to_h * pelvis_w)};
}

std::vector<Extrinsics> human_to_all_cams(const std::vector<Extrinsics>& world_to_cam,
                                          const Vec3& pelvis_w, const Mat3& rot_w_to_h) {
  std::vector<Extrinsics> out;
  out.reserve(world_to_cam.size());
  for (const auto& wc : world_to_cam) {
    Extrinsics hc;
    hc.rotation = wc.rotation * rot_w_to_h.transpose();
    hc.translation = wc.translation + wc.rotation * pelvis_w;
    out.push_back(hc);
  }
  return out;
}

Vec2 project_persp(const Vec3& p_cam, const Intrinsics& intr) {
  if (p_cam.z() <= kMinDepth) throw PointBehindCamera("project_persp: depth below threshold");
  return Vec2(intr.focal.x() * p_cam.x() / p_cam.z() + intr.center.x(),
              intr.focal.y() * p_cam.y() / p_cam.z() + intr.center.y());
}

Points2 project_persp(const Points3& pts, const Extrinsics& ext, const Intrinsics& intr) {
  Points2 out(pts.rows(), 2);
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    const Vec3 p = ext.apply(Vec3(pts.row(i).transpose()));
    out.row(i) = project_persp(p, intr).transpose();
  }
  return out;
}

Vec2 project_ortho(const Vec3& p_rotated, const OrthoCam& cam) {
  return cam.scale * p_rotated.head<2>() + cam.translation;
}

Points2 project_ortho(const Points3& rotated, const OrthoCam& cam) {
  Points2 out(rotated.rows(), 2);
  for (Eigen::Index i = 0; i < rotated.rows(); ++i)
    out.row(i) = (cam.scale * rotated.row(i).head<2>().transpose() + cam.translation).transpose();
  return out;
}

OrthoCam fit_ortho(const Points3& rotated, const Points2& observed) {
  if (rotated.rows() != observed.rows() || rotated.rows() < 2)
    throw DegenerateConfiguration("fit_ortho: need >= 2 point pairs of equal count");
  const Eigen::Index n = rotated.rows();
  Vec2 mean_x = Vec2::Zero(), mean_y = Vec2::Zero();
  for (Eigen::Index i = 0; i < n; ++i) {
    mean_x += rotated.row(i).head<2>().transpose();
    mean_y += observed.row(i).transpose();
  }
  mean_x /= static_cast<double>(n);
  mean_y /= static_cast<double>(n);
  double cross = 0.0, var = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec2 dx = rotated.row(i).head<2>().transpose() - mean_x;
    const Vec2 dy = observed.row(i).transpose() - mean_y;
    cross += dx.dot(dy);
    var += dx.squaredNorm();
  }
  if (var < 1e-12) throw DegenerateConfiguration("fit_ortho: projected points are coincident");
  OrthoCam cam;
  cam.scale = cross / var;
  if (cam.scale <= 0.0) cam.scale = 1e-6;
  cam.translation = mean_y - cam.scale * mean_x;
  return cam;
}

Mat3 rot6d_to_matrix(const Rot6D& r) {
  const Vec3 a = r.v.head<3>();
  const Vec3 b = r.v.tail<3>();
  const double na = a.norm();
  if (na < 1e-9) throw NearZeroColumn("rot6d: first column has near-zero norm");
  const Vec3 c1 = a / na;
  Vec3 c2 = b - c1.dot(b) * c1;
  const double nc2 = c2.norm();
  if (nc2 < 1e-9) throw NearZeroColumn("rot6d: second column degenerate after orthogonalization");
  c2 /= nc2;
  const Vec3 c3 = c1.cross(c2);
  Mat3 out;
  out.col(0) = c1;
  out.col(1) = c2;
  out.col(2) = c3;
  return out;
}

Rot6D matrix_to_rot6d(const Mat3& rot) {
  Rot6D r;
  r.v.head<3>() = rot.col(0);
  r.v.tail<3>() = rot.col(1);
  return r;
}

Extrinsics look_at(const Vec3& center, const Vec3& target, const Vec3& up) {
  const Vec3 f = (target - center).normalized();
  Vec3 y = -up + up.dot(f) * f;  // image-down axis, orthogonal to forward
  const double ny = y.norm();
  if (ny < 1e-9) throw DegenerateConfiguration("look_at: up axis parallel to viewing direction");
  y /= ny;
  const Vec3 x = y.cross(f);
  Extrinsics e;
  e.rotation.row(0) = x.transpose();
  e.rotation.row(1) = y.transpose();
  e.rotation.row(2) = f.transpose();
  e.translation = -(e.rotation * center);
  return e;
}

}  // namespace mvmesh
