#pragma once

#include <array>
#include <string>
#include <vector>

#include "mvmesh/bodymodel.hpp"
#include "mvmesh/camera.hpp"
#include "mvmesh/render2d.hpp"
#include "mvmesh/synth.hpp"
#include "mvmesh/types.hpp"
#include "mvmesh/volumetric.hpp"

namespace mvmesh {

enum class MaskKind { kNone, kIntersection, kUnion };
enum class FusionKind { kAverage, kBalanced };

struct StagePlan {
  MaskKind mask = MaskKind::kNone;
  FusionKind fusion = FusionKind::kAverage;
};

struct SolverWeights {
  double joints3d = 1.0;
  double joints2d = 0.1;
  double theta_prior = 0.1;
  double beta_prior = 0.1;
  double vertices = 1.0;  // supervised evaluation only, off unless GT passed in
};

struct SolverConfig {
  std::array<StagePlan, 3> stages = {
      StagePlan{MaskKind::kIntersection, FusionKind::kAverage},
      StagePlan{MaskKind::kUnion, FusionKind::kAverage},
      StagePlan{MaskKind::kNone, FusionKind::kBalanced}};

  int grid_g = 16;
  double cube_edge = 3.0;
  int calib_grid_g = 32;
  Vec3 calib_center = Vec3::Zero();

  int max_iters = 200;
  double grad_tol = 1e-6;
  SolverWeights weights;

  double epsilon_consistency = 1.0;
  double conf_min = 0.1;        // gate on target confidence for the initial camera fit
  double frame_conf_min = 0.01; // weaker gate for the rotation-frame anchors, so the
                                // frame degrades with the evidence instead of aborting
  double peak_min = 0.2;        // gate on observed 2D peak value before the 2D term uses it
  double heatmap_sigma = 4.0;  // reprojected heat blobs during consistency weighting
  double tau_heat = 1e-3;

  // Extra blur (px) on heat channels before unprojection so blobs span at
  // least a voxel; the lost peak amplitude is restored analytically. 3D
  // target extraction only; 2D peaks and consistency use the raw maps.
  double target_blur_sigma = 10.0;
  // Radius of the per-joint search window around the previous estimate when
  // extracting stage targets, in voxel edges. <= 0 searches the whole grid.
  double target_window_vox = 3.0;

  static SolverConfig progressive();
  static SolverConfig naive();
  void validate() const;
};

struct JointTargets {
  Points3 positions;  // N_J x 3 in the grid's reference frame
  VecX confidence;    // N_J, in [0, 1]; 0 marks an unusable target
};

struct StageEvidence {
  VoxelGrid fused;  // N_J + 1 channels: joint heat + silhouette
  JointTargets targets;
  std::string tag;
};

struct StageRecord {
  std::string tag;
  std::vector<double> objective_history;  // accepted values, entry 0 = start
  int iterations = 0;
  bool converged = false;
  JointTargets targets;  // evidence extracted for this stage, human frame
};

struct FitResult {
  std::array<BodyParams, 3> theta_stages;
  Mat3 rot_w_to_h = Mat3::Identity();
  Vec3 pelvis_w = Vec3::Zero();
  std::vector<OrthoCam> ortho_cams;
  std::array<StageRecord, 3> stages;
};

// Per-view quantities the objective consumes. The 2D term compares
// orthographic projections of rotated model joints against observed heatmap
// argmax positions, in crop pixel coordinates.
struct ViewFitData {
  Mat3 rot_h_to_cam = Mat3::Identity();
  OrthoCam ortho;
  Points2 joints_px;
  std::vector<std::uint8_t> usable;  // visible and peak above the gate
};

// Orthonormal body frame from pelvis, neck, and the two hips: spine axis
// maps to +y, hip-to-hip to +x after Gram-Schmidt. Returns world -> human.
// Throws DegenerateFrame on low confidence or near-parallel axes.
Mat3 estimate_rotation(const JointTargets& world_targets, double conf_min = 0.1);

// Fallback frame when anchors carry no evidence: confidence-weighted rigid
// alignment (Kabsch) of the triangulated joints onto the rest-pose skeleton.
// Needs three usable joints spanning a plane. Returns world -> human.
Mat3 orient_to_template(const Points3& rest_joints, const JointTargets& world_targets,
                        double conf_min);

// Per joint channel: confidence = grid max; target = value-weighted centroid
// of voxels within half the max. Channels with max <= 0 get confidence 0 and
// the grid center as placeholder.
JointTargets soft_argmax_targets(const VoxelGrid& grid, int n_joints);

// Same extraction restricted per joint to a ball around its previous
// estimate. Channels with no positive voxel inside the window keep the
// previous position and get confidence 0.
JointTargets windowed_targets(const VoxelGrid& grid, const Points3& prev_joints, double radius);

struct ObjectiveEval {
  double value = 0.0;
  VecX gradient;  // over [theta_j | beta], kPoseShapeDim entries
};

// Weighted least-squares objective over pose and shape with the global
// rotation held at zero (the estimated frame carries it). Terms: confidence-
// weighted 3D joint distance, per-view 2D reprojection (expressed in meters
// through the orthographic scale), rotation-matrix distance to the previous
// stage's pose, shape magnitude, optional supervised vertex distance.
ObjectiveEval stage_objective(const BodyTemplate& tmpl, const BodyParams& params,
                              const JointTargets& targets,
                              const std::vector<ViewFitData>& views, const BodyParams& prev,
                              const SolverWeights& weights,
                              const Points3* gt_vertices = nullptr);

// Damped Gauss-Newton on the stage objective. Accepted objective values are
// strictly non-increasing; steps that fail to decrease are rejected and the
// damping doubled. Throws NonFiniteObjective if the objective degenerates.
BodyParams run_stage(const BodyTemplate& tmpl, const BodyParams& start,
                     const JointTargets& targets, const std::vector<ViewFitData>& views,
                     const BodyParams& prev, const SolverConfig& config, StageRecord& record);

// Full pipeline: pelvis localization on a coarse grid, rotation estimate from
// triangulated joints, per-stage evidence fusion per the configured plan,
// three fitting stages. The final stage starts from whichever earlier result
// scores better on its own evidence.
FitResult fit_progressive(const BodyTemplate& tmpl,
                          const std::vector<ViewObservation>& observations,
                          const CameraRig& rig, const SolverConfig& config);

}  // namespace mvmesh
