#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mvmesh/errors.hpp"
#include "mvmesh/types.hpp"

namespace mvmesh {

constexpr int kNumJoints = 17;   // regressed joints, joint 0 = pelvis
constexpr int kNumShapes = 10;
constexpr int kNumParts = 6;     // head, torso, l/r arm, l/r leg

enum BodyPart : int {
  kPartHead = 0,
  kPartTorso = 1,
  kPartLeftArm = 2,
  kPartRightArm = 3,
  kPartLeftLeg = 4,
  kPartRightLeg = 5,
};

struct BodyParams {
  Vec3 theta_g = Vec3::Zero();                       // global rotation about the pelvis
  MatX theta_j = MatX::Zero(kNumJoints - 1, 3);      // per-joint axis-angle, joints 1..K-1
  VecX beta = VecX::Zero(kNumShapes);

  void validate() const;
};

struct TemplateConfig {
  int ring_segments = 7;          // vertices per tube ring
  std::uint64_t seed = 0;
  std::vector<int> parents;       // optional skeleton override; empty = default tree

  void validate() const;
};

struct BodyTemplate {
  Points3 rest_vertices;               // V x 3
  Faces faces;                         // F x 3
  std::vector<Points3> shape_basis;    // S entries of V x 3 displacement fields
  Eigen::VectorXi parents;             // K entries, parents[0] == -1
  MatX skin_weights;                   // V x K, convex rows
  MatX joint_regressor;                // N_J x V, convex rows
  std::array<std::pair<int, int>, kNumParts> part_ranges;  // [begin, end) vertex ranges
  std::vector<Points3> joint_shape_dirs;  // S entries of N_J x 3 (= regressor * basis)
  std::uint64_t seed = 0;

  int n_vertices() const { return static_cast<int>(rest_vertices.rows()); }
  int n_faces() const { return static_cast<int>(faces.rows()); }
  int n_joints() const { return kNumJoints; }
  int n_shapes() const { return kNumShapes; }

  // Rest joint locations for a given shape: joint_regressor * shaped vertices.
  Points3 rest_joints(const VecX& beta) const;
  Points3 shaped_vertices(const VecX& beta) const;
};

struct PosedBody {
  Points3 vertices;  // V x 3, pelvis-centered human frame
  Points3 joints;    // N_J x 3, equals joint_regressor * vertices
};

// Parameter packing used by jacobians and the fitting stages:
// [theta_j flattened row-major (48) | beta (10) | theta_g (3)].
constexpr int kThetaJDim = (kNumJoints - 1) * 3;
constexpr int kPoseShapeDim = kThetaJDim + kNumShapes;
constexpr int kParamDim = kPoseShapeDim + 3;

struct BodyJacobian {
  MatX d_joints;    // (N_J * 3) x kParamDim, rows grouped per joint (x, y, z)
  MatX d_vertices;  // (V * 3) x kParamDim when requested, else 0 x 0
};

BodyTemplate make_template(const TemplateConfig& config);

PosedBody forward(const BodyTemplate& tmpl, const BodyParams& params);

BodyJacobian forward_jacobian(const BodyTemplate& tmpl, const BodyParams& params,
                              bool with_vertices = false);

void save_template(const BodyTemplate& tmpl, const std::string& path);
BodyTemplate load_template(const std::string& path);

// Default toy skeleton in the droppable-joint index convention:
// 0 pelvis, 1 spine, 2 chest, 3 neck, 4 head, 5/6 shoulders, 7/8 elbows,
// 9/10 wrists, 11/12 hips, 13/14 knees, 15/16 ankles. Left side carries +x.
const std::vector<int>& default_parents();

}  // namespace mvmesh
