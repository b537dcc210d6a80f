#pragma once

#include <array>
#include <string>
#include <vector>

#include "mvmesh/bodymodel.hpp"
#include "mvmesh/camera.hpp"
#include "mvmesh/render2d.hpp"
#include "mvmesh/rng.hpp"
#include "mvmesh/types.hpp"

namespace mvmesh {

enum class RigTemplateKind { kRing, kHemisphere };

struct SynthConfig {
  int n_views = 4;
  RigTemplateKind rig = RigTemplateKind::kRing;

  // Body shape prior, one mean/variance pair per coefficient.
  VecX shape_mu;
  VecX shape_sigma2;

  // First-camera translation prior (meters) and per-view jitter, applied in
  // camera axes; z is depth.
  Vec3 cam_trans_mu = Vec3(0.0, 0.0, 42.0);
  Vec3 cam_trans_sigma2 = Vec3(0.05, 0.05, 5.0);

  Vec2 focal = Vec2(5000.0, 5000.0);
  int render_size = 1024;
  int target_size = 256;
  Vec2 bbox_scale_range = Vec2(1.0, 1.2);
  double heatmap_sigma = 4.0;  // pixels at target_size
  double tau_heat = 1e-3;

  Vec3 vertex_perturb_sigma2 = Vec3(0.01, 0.01, 0.0);  // silhouette rendering only

  std::array<double, kNumParts> part_occlusion_prob = {0.1, 0.1, 0.1, 0.1, 0.1, 0.1};
  double box_occlusion_prob = 0.1;
  int box_occlusion_size = 48;
  double joint_jitter_sigma2 = 8.0;  // px^2 at target_size
  std::vector<int> joint_drop_indices = {7, 8, 9, 10, 13, 14, 15, 16};
  double joint_drop_prob = 0.05;

  // Ground-truth pelvis placement: uniform cube [-range, range]^3 in world.
  double pelvis_range = 1.0;

  // Optional pose bank: when non-empty the pose sampler picks uniformly from
  // these (K-1) x 3 axis-angle tables instead of the parametric sampler.
  std::vector<MatX> pose_bank;

  SynthConfig();
  void validate() const;
};

struct CameraRig {
  std::vector<Intrinsics> intrinsics;
  std::vector<Extrinsics> world_to_cam;

  int n_views() const { return static_cast<int>(world_to_cam.size()); }
};

struct RigSample {
  std::vector<Extrinsics> cam1_to_cams;  // entry 0 is the identity
  Vec3 t_h_to_cam1 = Vec3::Zero();
};

struct TrainingSample {
  std::vector<ViewObservation> observations;
  BodyParams gt_params;
  Points3 gt_vertices;  // human frame, pelvis centered, global rotation excluded
  Points3 gt_joints;
  Extrinsics world_from_human;  // p_w = R(theta_g) p_h + pelvis_w
  CameraRig rig;
  std::vector<Extrinsics> human_to_cam;
  std::uint64_t seed = 0;

  // Augmentation support; regenerated with the sample, not serialized.
  std::vector<std::array<BinaryMap, kNumParts>> part_masks;
  std::vector<Points2> joints_crop;

  Points3 gt_joints_in_view(int n) const;
};

// Camera positions for the requested layout, radius meters from the origin.
std::vector<Extrinsics> rig_template_world_to_cams(RigTemplateKind kind, int n_views,
                                                   double radius);

BodyParams sample_params(const SynthConfig& config, Rng& rng);

// Relative rig: template layout composed through compose_rig, first-camera
// translation from the prior, independent translation jitter on the rest.
RigSample sample_rig(const SynthConfig& config, Rng& rng);

TrainingSample generate_sample(const BodyTemplate& tmpl, const SynthConfig& config, Rng& rng);

// Observation corruption: part/box occlusion on the silhouette, joint jitter
// with heatmap regeneration, droppable-joint erasure. Ground truth untouched.
TrainingSample augment(const TrainingSample& sample, const SynthConfig& config, Rng& rng);

}  // namespace mvmesh
