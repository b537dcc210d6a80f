#include "mvmesh/solver.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "mvmesh/errors.hpp"
#include "mvmesh/rotation.hpp"

namespace mvmesh {

namespace {

constexpr double kPoseNormCap = 0.999 * M_PI;

VecX pack(const BodyParams& p) {
  VecX x(kPoseShapeDim);
  for (int j = 0; j < kNumJoints - 1; ++j) x.segment<3>(3 * j) = p.theta_j.row(j).transpose();
  x.tail(kNumShapes) = p.beta;
  return x;
}

BodyParams unpack(const VecX& x) {
  BodyParams p;
  for (int j = 0; j < kNumJoints - 1; ++j) p.theta_j.row(j) = x.segment<3>(3 * j).transpose();
  p.beta = x.tail(kNumShapes);
  return p;
}

void clamp_pose(BodyParams& p) {
  for (int j = 0; j < kNumJoints - 1; ++j) {
    const double n = p.theta_j.row(j).norm();
    if (n > kPoseNormCap) p.theta_j.row(j) *= kPoseNormCap / n;
  }
}

struct ResidualSystem {
  VecX r;
  MatX jac;
};

ResidualSystem assemble(const BodyTemplate& tmpl, const BodyParams& params,
                        const JointTargets& targets, const std::vector<ViewFitData>& views,
                        const BodyParams& prev, const SolverWeights& w,
                        const Points3* gt_vertices) {
  const bool with_verts = gt_vertices != nullptr && w.vertices > 0;
  BodyParams zeroed = params;
  zeroed.theta_g.setZero();
  const PosedBody body = forward(tmpl, zeroed);
  const BodyJacobian bj = forward_jacobian(tmpl, zeroed, with_verts);

  int rows = 0;
  if (w.joints3d > 0)
    for (int j = 0; j < kNumJoints; ++j)
      if (targets.confidence[j] > 0) rows += 3;
  if (w.joints2d > 0)
    for (const ViewFitData& v : views)
      for (int j = 0; j < kNumJoints; ++j)
        if (v.usable[static_cast<size_t>(j)]) rows += 2;
  if (w.theta_prior > 0) rows += 9 * (kNumJoints - 1);
  if (w.beta_prior > 0) rows += kNumShapes;
  if (with_verts) rows += 3 * tmpl.n_vertices();

  ResidualSystem sys;
  sys.r = VecX::Zero(rows);
  sys.jac = MatX::Zero(rows, kPoseShapeDim);
  int row = 0;

  if (w.joints3d > 0) {
    for (int j = 0; j < kNumJoints; ++j) {
      const double c = targets.confidence[j];
      if (c <= 0) continue;
      const double s = std::sqrt(w.joints3d * c);
      sys.r.segment<3>(row) =
          s * (body.joints.row(j) - targets.positions.row(j)).transpose();
      sys.jac.middleRows(row, 3) =
          s * bj.d_joints.middleRows(3 * j, 3).leftCols(kPoseShapeDim);
      row += 3;
    }
  }

  if (w.joints2d > 0) {
    const double s2 = std::sqrt(w.joints2d);
    for (const ViewFitData& v : views) {
      for (int j = 0; j < kNumJoints; ++j) {
        if (!v.usable[static_cast<size_t>(j)]) continue;
        const Vec3 q = v.rot_h_to_cam * Vec3(body.joints.row(j).transpose());
        // Pixel residual divided by the orthographic scale, so the term is
        // expressed in meters and commensurate with the 3D term.
        const Vec2 resid =
            q.head<2>() +
            (v.ortho.translation - Vec2(v.joints_px.row(j).transpose())) / v.ortho.scale;
        sys.r.segment<2>(row) = s2 * resid;
        sys.jac.middleRows(row, 2) =
            s2 * (v.rot_h_to_cam.topRows(2) *
                  bj.d_joints.middleRows(3 * j, 3).leftCols(kPoseShapeDim));
        row += 2;
      }
    }
  }

  if (w.theta_prior > 0) {
    const double st = std::sqrt(w.theta_prior);
    for (int k = 0; k < kNumJoints - 1; ++k) {
      const Vec3 tk = params.theta_j.row(k).transpose();
      const Mat3 rk = axis_angle_to_matrix(tk);
      const Mat3 rp = axis_angle_to_matrix(Vec3(prev.theta_j.row(k).transpose()));
      const std::array<Mat3, 3> dr = axis_angle_jacobian(tk);
      for (int e = 0; e < 9; ++e) {
        const int er = e / 3, ec = e % 3;
        sys.r[row + e] = st * (rk(er, ec) - rp(er, ec));
        for (int i = 0; i < 3; ++i) sys.jac(row + e, 3 * k + i) = st * dr[static_cast<size_t>(i)](er, ec);
      }
      row += 9;
    }
  }

  if (w.beta_prior > 0) {
    const double sb = std::sqrt(w.beta_prior);
    sys.r.segment(row, kNumShapes) = sb * params.beta;
    sys.jac.block(row, kThetaJDim, kNumShapes, kNumShapes) =
        sb * MatX::Identity(kNumShapes, kNumShapes);
    row += kNumShapes;
  }

  if (with_verts) {
    const double sv = std::sqrt(w.vertices);
    const int nv = tmpl.n_vertices();
    for (int i = 0; i < nv; ++i) {
      sys.r.segment<3>(row + 3 * i) =
          sv * (body.vertices.row(i) - gt_vertices->row(i)).transpose();
    }
    sys.jac.middleRows(row, 3 * nv) = sv * bj.d_vertices.leftCols(kPoseShapeDim);
    row += 3 * nv;
  }

  return sys;
}

// Heat channels widened so a blob spans at least a voxel after unprojection.
// Blurring an amplitude-1 Gaussian of width sigma_h with a normalized kernel
// of width sigma_b scales its peak by sigma_h^2 / (sigma_h^2 + sigma_b^2);
// the inverse factor restores the confidence scale.
MapStack widened_heat(const MapStack& heatmaps, const SolverConfig& config) {
  if (config.target_blur_sigma <= 0.0) return heatmaps;
  MapStack out = gaussian_blur(heatmaps, config.target_blur_sigma);
  const double s2 = config.heatmap_sigma * config.heatmap_sigma;
  const double b2 = config.target_blur_sigma * config.target_blur_sigma;
  const double restore = (s2 + b2) / s2;
  for (double& v : out.data) v *= restore;
  return out;
}

MapStack feature_stack(const MapStack& heat, const BinaryMap& mask) {
  const int size = mask.height;
  MapStack stack(kNumJoints + 1, size, size);
  const size_t plane = static_cast<size_t>(size) * size;
  for (int c = 0; c < kNumJoints; ++c)
    std::copy(heat.channel(c), heat.channel(c) + plane, stack.channel(c));
  double* sil = stack.channel(kNumJoints);
  for (size_t i = 0; i < plane; ++i) sil[i] = mask.data[i] ? 1.0 : 0.0;
  return stack;
}

MapStack single_channel(const std::vector<std::uint8_t>& bytes, int size) {
  MapStack m(1, size, size);
  for (size_t i = 0; i < bytes.size(); ++i) m.data[i] = bytes[i] ? 1.0 : 0.0;
  return m;
}

// Fallback weak-perspective camera from the pelvis depth when a least-squares
// fit has too little support.
OrthoCam ortho_from_depth(const Extrinsics& h_to_cam, const Intrinsics& intr,
                          const CropInfo& crop) {
  const Vec3 pelvis_cam = h_to_cam.apply(Vec3(Vec3::Zero()));
  if (pelvis_cam.z() <= kMinDepth)
    throw DegenerateConfiguration("ortho fallback: estimated pelvis behind the camera");
  OrthoCam cam;
  cam.scale = intr.focal.x() / pelvis_cam.z() / crop.scale;
  const Vec2 px(intr.focal.x() * pelvis_cam.x() / pelvis_cam.z() + intr.center.x(),
                intr.focal.y() * pelvis_cam.y() / pelvis_cam.z() + intr.center.y());
  cam.translation = crop.to_crop(px);
  return cam;
}

OrthoCam fit_view_ortho(const Points3& rotated, const Points2& observed,
                        const std::vector<std::uint8_t>& keep, const Extrinsics& h_to_cam,
                        const Intrinsics& intr, const CropInfo& crop) {
  int n = 0;
  for (auto k : keep) n += k != 0;
  if (n >= 2) {
    Points3 pts(n, 3);
    Points2 obs(n, 2);
    int at = 0;
    for (size_t j = 0; j < keep.size(); ++j) {
      if (!keep[j]) continue;
      pts.row(at) = rotated.row(static_cast<Eigen::Index>(j));
      obs.row(at) = observed.row(static_cast<Eigen::Index>(j));
      ++at;
    }
    try {
      return fit_ortho(pts, obs);
    } catch (const DegenerateConfiguration&) {
      // fall through to the depth-based camera
    }
  }
  return ortho_from_depth(h_to_cam, intr, crop);
}

std::string plan_tag(const StagePlan& plan) {
  if (plan.fusion == FusionKind::kBalanced) return "balanced";
  switch (plan.mask) {
    case MaskKind::kIntersection:
      return "intersection";
    case MaskKind::kUnion:
      return "union";
    case MaskKind::kNone:
      return "mean";
  }
  return "mean";
}

}  // namespace

SolverConfig SolverConfig::progressive() { return SolverConfig{}; }

SolverConfig SolverConfig::naive() {
  SolverConfig cfg;
  cfg.stages = {StagePlan{MaskKind::kNone, FusionKind::kAverage},
                StagePlan{MaskKind::kNone, FusionKind::kAverage},
                StagePlan{MaskKind::kNone, FusionKind::kAverage}};
  return cfg;
}

void SolverConfig::validate() const {
  if (grid_g < 2 || calib_grid_g < 2) throw ConfigError("solver: grid resolution must be >= 2");
  if (cube_edge <= 0) throw ConfigError("solver: cube edge must be positive");
  if (max_iters < 1) throw ConfigError("solver: max_iters must be >= 1");
  if (grad_tol <= 0) throw ConfigError("solver: gradient tolerance must be positive");
  if (weights.joints3d < 0 || weights.joints2d < 0 || weights.theta_prior < 0 ||
      weights.beta_prior < 0 || weights.vertices < 0)
    throw ConfigError("solver: weights must be >= 0");
  if (epsilon_consistency <= 0) throw ConfigError("solver: consistency epsilon must be positive");
  if (conf_min < 0 || conf_min >= 1) throw ConfigError("solver: conf_min outside [0, 1)");
  if (frame_conf_min < 0 || frame_conf_min >= 1)
    throw ConfigError("solver: frame_conf_min outside [0, 1)");
  if (peak_min < 0 || peak_min >= 1) throw ConfigError("solver: peak_min outside [0, 1)");
  if (heatmap_sigma <= 0) throw ConfigError("solver: heatmap sigma must be positive");
  if (target_blur_sigma < 0) throw ConfigError("solver: target blur sigma must be >= 0");
}

Mat3 estimate_rotation(const JointTargets& world_targets, double conf_min) {
  constexpr int kPelvis = 0, kNeck = 3, kLeftHip = 11, kRightHip = 12;
  for (int j : {kPelvis, kNeck, kLeftHip, kRightHip})
    if (world_targets.confidence[j] <= conf_min)
      throw DegenerateFrame("rotation estimate: anchor joint confidence too low");

  const Vec3 pelvis = world_targets.positions.row(kPelvis).transpose();
  const Vec3 neck = world_targets.positions.row(kNeck).transpose();
  const Vec3 lhip = world_targets.positions.row(kLeftHip).transpose();
  const Vec3 rhip = world_targets.positions.row(kRightHip).transpose();

  Vec3 up = neck - pelvis;
  Vec3 across = lhip - rhip;
  if (up.norm() < 1e-9 || across.norm() < 1e-9)
    throw DegenerateFrame("rotation estimate: coincident anchor joints");
  up.normalize();

  const double cos_lim = std::cos(5.0 * M_PI / 180.0);
  if (std::abs(up.dot(across.normalized())) > cos_lim)
    throw DegenerateFrame("rotation estimate: spine and hip axes within 5 degrees of parallel");

  Vec3 e1 = across - across.dot(up) * up;
  e1.normalize();
  const Vec3 e3 = e1.cross(up);
  Mat3 human_to_world;
  human_to_world.col(0) = e1;
  human_to_world.col(1) = up;
  human_to_world.col(2) = e3;
  return human_to_world.transpose();
}

Mat3 orient_to_template(const Points3& rest_joints, const JointTargets& world_targets,
                        double conf_min) {
  const int n = static_cast<int>(world_targets.confidence.size());
  if (rest_joints.rows() != n)
    throw ConfigError("orient_to_template: joint counts disagree");

  double wsum = 0.0;
  Vec3 mean_obs = Vec3::Zero();
  Vec3 mean_rest = Vec3::Zero();
  int lit = 0;
  for (int j = 0; j < n; ++j) {
    const double w = world_targets.confidence[j];
    if (w <= conf_min) continue;
    mean_obs += w * world_targets.positions.row(j).transpose();
    mean_rest += w * rest_joints.row(j).transpose();
    wsum += w;
    ++lit;
  }
  if (lit < 3)
    throw DegenerateFrame("orientation: fewer than three joints with evidence");
  mean_obs /= wsum;
  mean_rest /= wsum;

  Mat3 h = Mat3::Zero();
  for (int j = 0; j < n; ++j) {
    const double w = world_targets.confidence[j];
    if (w <= conf_min) continue;
    h += w * (world_targets.positions.row(j).transpose() - mean_obs) *
         (rest_joints.row(j) - mean_rest.transpose());
  }
  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 s = svd.singularValues();
  if (s[0] <= 0.0 || s[1] <= 1e-9 * s[0])
    throw DegenerateFrame("orientation: usable joints are collinear");
  Mat3 r = svd.matrixV() * svd.matrixU().transpose();
  if (r.determinant() < 0) {
    Mat3 flip = Mat3::Identity();
    flip(2, 2) = -1.0;
    r = svd.matrixV() * flip * svd.matrixU().transpose();
  }
  return r;
}

JointTargets soft_argmax_targets(const VoxelGrid& grid, int n_joints) {
  if (grid.channels < n_joints)
    throw ConfigError("soft_argmax_targets: grid has fewer channels than joints");
  JointTargets out;
  out.positions = Points3::Zero(n_joints, 3);
  out.confidence = VecX::Zero(n_joints);
  const int g = grid.spec.g;
  for (int c = 0; c < n_joints; ++c) {
    double best = 0.0;
    for (int i = 0; i < g; ++i)
      for (int j = 0; j < g; ++j)
        for (int k = 0; k < g; ++k) best = std::max(best, grid.at(i, j, k, c));
    if (best <= 0.0) {
      out.positions.row(c) = grid.spec.center.transpose();
      out.confidence[c] = 0.0;
      continue;
    }
    const double cut = 0.5 * best;
    Vec3 acc = Vec3::Zero();
    double total = 0.0;
    for (int i = 0; i < g; ++i)
      for (int j = 0; j < g; ++j)
        for (int k = 0; k < g; ++k) {
          const double v = grid.at(i, j, k, c);
          if (v < cut) continue;
          acc += v * grid.spec.voxel_center(i, j, k);
          total += v;
        }
    out.positions.row(c) = (acc / total).transpose();
    out.confidence[c] = std::min(best, 1.0);
  }
  return out;
}

JointTargets windowed_targets(const VoxelGrid& grid, const Points3& prev_joints, double radius) {
  const int n_joints = static_cast<int>(prev_joints.rows());
  if (grid.channels < n_joints)
    throw ConfigError("windowed_targets: grid has fewer channels than joints");
  if (radius <= 0) throw ConfigError("windowed_targets: radius must be positive");
  JointTargets out;
  out.positions = prev_joints;
  out.confidence = VecX::Zero(n_joints);
  const int g = grid.spec.g;
  const double r2 = radius * radius;
  for (int c = 0; c < n_joints; ++c) {
    const Vec3 center = prev_joints.row(c).transpose();
    double best = 0.0;
    for (int i = 0; i < g; ++i)
      for (int j = 0; j < g; ++j)
        for (int k = 0; k < g; ++k) {
          if ((grid.spec.voxel_center(i, j, k) - center).squaredNorm() > r2) continue;
          best = std::max(best, grid.at(i, j, k, c));
        }
    if (best <= 0.0) continue;
    const double cut = 0.5 * best;
    Vec3 acc = Vec3::Zero();
    double total = 0.0;
    for (int i = 0; i < g; ++i)
      for (int j = 0; j < g; ++j)
        for (int k = 0; k < g; ++k) {
          const Vec3 p = grid.spec.voxel_center(i, j, k);
          if ((p - center).squaredNorm() > r2) continue;
          const double v = grid.at(i, j, k, c);
          if (v < cut) continue;
          acc += v * p;
          total += v;
        }
    out.positions.row(c) = (acc / total).transpose();
    out.confidence[c] = std::min(best, 1.0);
  }
  return out;
}

ObjectiveEval stage_objective(const BodyTemplate& tmpl, const BodyParams& params,
                              const JointTargets& targets,
                              const std::vector<ViewFitData>& views, const BodyParams& prev,
                              const SolverWeights& weights, const Points3* gt_vertices) {
  const ResidualSystem sys = assemble(tmpl, params, targets, views, prev, weights, gt_vertices);
  ObjectiveEval eval;
  eval.value = sys.r.squaredNorm();
  eval.gradient = 2.0 * sys.jac.transpose() * sys.r;
  return eval;
}

BodyParams run_stage(const BodyTemplate& tmpl, const BodyParams& start,
                     const JointTargets& targets, const std::vector<ViewFitData>& views,
                     const BodyParams& prev, const SolverConfig& config, StageRecord& record) {
  BodyParams cur = start;
  cur.theta_g.setZero();
  clamp_pose(cur);

  ResidualSystem sys =
      assemble(tmpl, cur, targets, views, prev, config.weights, nullptr);
  double value = sys.r.squaredNorm();
  if (!std::isfinite(value))
    throw NonFiniteObjective("stage " + record.tag + ": non-finite objective at start");
  record.objective_history.assign(1, value);
  record.converged = false;

  VecX x = pack(cur);
  double lambda = 1e-3;
  int accepted = 0;
  for (int iter = 0; iter < config.max_iters; ++iter) {
    const VecX grad = 2.0 * sys.jac.transpose() * sys.r;
    if (!grad.allFinite())
      throw NonFiniteObjective("stage " + record.tag + ": non-finite gradient");
    if (grad.lpNorm<Eigen::Infinity>() < config.grad_tol) {
      record.converged = true;
      break;
    }
    const MatX hess = sys.jac.transpose() * sys.jac;
    bool stepped = false;
    while (lambda <= 1e14) {
      MatX damped = hess;
      damped.diagonal().array() += lambda;
      const VecX delta = damped.ldlt().solve(-0.5 * grad);
      BodyParams cand = unpack(x + delta);
      clamp_pose(cand);
      ResidualSystem trial =
          assemble(tmpl, cand, targets, views, prev, config.weights, nullptr);
      const double trial_value = trial.r.squaredNorm();
      if (std::isfinite(trial_value) && trial_value < value) {
        cur = cand;
        x = pack(cand);
        sys = std::move(trial);
        value = trial_value;
        lambda = std::max(lambda * 0.5, 1e-12);
        record.objective_history.push_back(value);
        ++accepted;
        stepped = true;
        break;
      }
      lambda *= 2.0;
    }
    if (!stepped) break;
  }
  record.iterations = accepted;
  return cur;
}

FitResult fit_progressive(const BodyTemplate& tmpl,
                          const std::vector<ViewObservation>& observations,
                          const CameraRig& rig, const SolverConfig& config) {
  config.validate();
  const int n_views = static_cast<int>(observations.size());
  if (n_views < 1) throw ConfigError("fit: at least one view required");
  if (rig.n_views() != n_views || static_cast<int>(rig.intrinsics.size()) != n_views)
    throw ConfigError("fit: rig and observation counts disagree");

  std::vector<ProjectionChain> world_chains(static_cast<size_t>(n_views));
  for (int n = 0; n < n_views; ++n) {
    world_chains[static_cast<size_t>(n)] = ProjectionChain{
        rig.world_to_cam[static_cast<size_t>(n)], rig.intrinsics[static_cast<size_t>(n)],
        observations[static_cast<size_t>(n)].crop, Vec2::Ones()};
  }

  std::vector<MapStack> wide_heat;
  wide_heat.reserve(static_cast<size_t>(n_views));
  for (const ViewObservation& obs : observations)
    wide_heat.push_back(widened_heat(obs.heatmaps, config));

  // Pelvis localization on the coarse grid.
  std::vector<MapStack> pelvis_maps;
  pelvis_maps.reserve(static_cast<size_t>(n_views));
  for (int n = 0; n < n_views; ++n) {
    const MapStack& heat = wide_heat[static_cast<size_t>(n)];
    MapStack m(1, heat.height, heat.width);
    const size_t plane = static_cast<size_t>(heat.height) * heat.width;
    std::copy(heat.channel(0), heat.channel(0) + plane, m.data.begin());
    pelvis_maps.push_back(std::move(m));
  }
  const GridSpec calib_spec{config.calib_grid_g, config.cube_edge, config.calib_center};
  Vec3 pelvis_w;
  try {
    pelvis_w = estimate_translation(pelvis_maps, world_chains, calib_spec);
  } catch (const AllZeroLikelihood&) {
    // Occlusion can blank the pelvis channel in every view; localize on the
    // mean of all joint channels instead.
    std::vector<MapStack> mean_maps;
    mean_maps.reserve(static_cast<size_t>(n_views));
    for (int n = 0; n < n_views; ++n) {
      const MapStack& heat = wide_heat[static_cast<size_t>(n)];
      MapStack m(1, heat.height, heat.width);
      const size_t plane = static_cast<size_t>(heat.height) * heat.width;
      for (size_t p = 0; p < plane; ++p) {
        double acc = 0.0;
        for (int c = 0; c < heat.channels; ++c) acc += heat.data[c * plane + p];
        m.data[p] = acc / heat.channels;
      }
      mean_maps.push_back(std::move(m));
    }
    pelvis_w = estimate_translation(mean_maps, world_chains, calib_spec);
  }

  // World-frame joint triangulation seeds the body orientation.
  const GridSpec seed_spec{config.grid_g, config.cube_edge, pelvis_w};
  std::vector<VoxelGrid> world_feats;
  world_feats.reserve(static_cast<size_t>(n_views));
  for (int n = 0; n < n_views; ++n)
    world_feats.push_back(unproject(wide_heat[static_cast<size_t>(n)],
                                    world_chains[static_cast<size_t>(n)], seed_spec));
  const JointTargets world_targets =
      soft_argmax_targets(masked_fusion(world_feats, nullptr), kNumJoints);
  Mat3 rot_w_to_h;
  try {
    rot_w_to_h = estimate_rotation(world_targets, config.frame_conf_min);
  } catch (const DegenerateFrame&) {
    rot_w_to_h = orient_to_template(tmpl.rest_joints(VecX::Zero(kNumShapes)), world_targets,
                                    config.frame_conf_min);
  }

  FitResult result;
  result.pelvis_w = pelvis_w;
  result.rot_w_to_h = rot_w_to_h;

  const std::vector<Extrinsics> h_to_cam =
      human_to_all_cams(rig.world_to_cam, pelvis_w, rot_w_to_h);

  // Human-frame evidence grids: joint channels plus the silhouette channel.
  const GridSpec grid_spec{config.grid_g, config.cube_edge, Vec3::Zero()};
  std::vector<ProjectionChain> chains(static_cast<size_t>(n_views));
  std::vector<VoxelGrid> feats;
  std::vector<VoxelGrid> occupancy;
  feats.reserve(static_cast<size_t>(n_views));
  occupancy.reserve(static_cast<size_t>(n_views));
  for (int n = 0; n < n_views; ++n) {
    const ViewObservation& obs = observations[static_cast<size_t>(n)];
    chains[static_cast<size_t>(n)] =
        ProjectionChain{h_to_cam[static_cast<size_t>(n)], rig.intrinsics[static_cast<size_t>(n)],
                        obs.crop, Vec2::Ones()};
    feats.push_back(unproject(feature_stack(wide_heat[static_cast<size_t>(n)], obs.mask),
                              chains[static_cast<size_t>(n)], grid_spec));
    occupancy.push_back(binarize(
        unproject(single_channel(obs.occupancy.data, obs.size()), chains[static_cast<size_t>(n)],
                  grid_spec),
        0.5));
  }
  const auto [grid_i, grid_u] = occupancy_intersection_union(occupancy);

  // Observed argmax positions and per-view usability gates for the 2D term.
  std::vector<ViewFitData> views(static_cast<size_t>(n_views));
  for (int n = 0; n < n_views; ++n) {
    const ViewObservation& obs = observations[static_cast<size_t>(n)];
    ViewFitData& v = views[static_cast<size_t>(n)];
    v.rot_h_to_cam = h_to_cam[static_cast<size_t>(n)].rotation;
    v.joints_px = Points2::Zero(kNumJoints, 2);
    v.usable.assign(kNumJoints, 0);
    for (int j = 0; j < kNumJoints; ++j) {
      const PeakInfo peak = channel_peak(obs.heatmaps, j);
      v.joints_px.row(j) = peak.position.transpose();
      v.usable[static_cast<size_t>(j)] =
          obs.joint_visibility[static_cast<size_t>(j)] && peak.value > config.peak_min;
    }
  }

  // Initial weak-perspective cameras from the triangulated joints.
  Points3 seed_joints_h(kNumJoints, 3);
  for (int j = 0; j < kNumJoints; ++j)
    seed_joints_h.row(j) =
        (rot_w_to_h * Vec3(world_targets.positions.row(j).transpose() - pelvis_w)).transpose();
  for (int n = 0; n < n_views; ++n) {
    ViewFitData& v = views[static_cast<size_t>(n)];
    Points3 rotated(kNumJoints, 3);
    std::vector<std::uint8_t> keep(kNumJoints, 0);
    for (int j = 0; j < kNumJoints; ++j) {
      rotated.row(j) = (v.rot_h_to_cam * Vec3(seed_joints_h.row(j).transpose())).transpose();
      keep[static_cast<size_t>(j)] =
          v.usable[static_cast<size_t>(j)] && world_targets.confidence[j] > config.conf_min;
    }
    v.ortho = fit_view_ortho(rotated, v.joints_px, keep, h_to_cam[static_cast<size_t>(n)],
                             rig.intrinsics[static_cast<size_t>(n)],
                             observations[static_cast<size_t>(n)].crop);
    result.ortho_cams.push_back(v.ortho);
  }

  BodyParams prev;  // rest pose, mean shape
  for (int s = 0; s < 3; ++s) {
    const StagePlan& plan = config.stages[static_cast<size_t>(s)];
    StageEvidence evidence;
    evidence.tag = plan_tag(plan);

    if (plan.fusion == FusionKind::kAverage) {
      const VoxelGrid* mask = nullptr;
      if (plan.mask == MaskKind::kIntersection) mask = &grid_i;
      if (plan.mask == MaskKind::kUnion) mask = &grid_u;
      evidence.fused = masked_fusion(feats, mask);
    } else {
      // Reproject the current prediction per view and weight the evidence by
      // unprojected agreement.
      BodyParams render_params = prev;
      render_params.theta_g.setZero();
      const PosedBody body = forward(tmpl, render_params);
      std::vector<VoxelGrid> phi;
      phi.reserve(static_cast<size_t>(n_views));
      for (int n = 0; n < n_views; ++n) {
        const ViewObservation& obs = observations[static_cast<size_t>(n)];
        const ViewFitData& v = views[static_cast<size_t>(n)];
        Points3 rotated_v(body.vertices.rows(), 3);
        for (Eigen::Index i = 0; i < body.vertices.rows(); ++i)
          rotated_v.row(i) = (v.rot_h_to_cam * Vec3(body.vertices.row(i).transpose())).transpose();
        const BinaryMap reproj_mask =
            rasterize_mask_ortho(rotated_v, tmpl.faces, v.ortho, obs.size(), obs.size());
        Points2 reproj_joints(kNumJoints, 2);
        for (int j = 0; j < kNumJoints; ++j) {
          const Vec3 q = v.rot_h_to_cam * Vec3(body.joints.row(j).transpose());
          reproj_joints.row(j) = project_ortho(q, v.ortho).transpose();
        }
        const std::vector<std::uint8_t> all_vis(kNumJoints, 1);
        const MapStack reproj_heat = joint_heatmaps(reproj_joints, all_vis, obs.size(),
                                                    obs.size(), config.heatmap_sigma);
        const MapStack agreement =
            consistency_map(obs.heatmaps, obs.mask, reproj_heat, reproj_mask,
                            config.epsilon_consistency);
        phi.push_back(unproject(agreement, chains[static_cast<size_t>(n)], grid_spec));
      }
      evidence.fused = balanced_fusion(feats, balance_weights(phi));
      if (plan.mask == MaskKind::kIntersection)
        evidence.fused = masked_fusion({evidence.fused}, &grid_i);
      if (plan.mask == MaskKind::kUnion)
        evidence.fused = masked_fusion({evidence.fused}, &grid_u);
    }

    if (config.target_window_vox > 0) {
      BodyParams prev_render = prev;
      prev_render.theta_g.setZero();
      evidence.targets =
          windowed_targets(evidence.fused, forward(tmpl, prev_render).joints,
                           config.target_window_vox * config.cube_edge / config.grid_g);
    } else {
      evidence.targets = soft_argmax_targets(evidence.fused, kNumJoints);
    }

    StageRecord& record = result.stages[static_cast<size_t>(s)];
    record.tag = evidence.tag;
    record.targets = evidence.targets;

    BodyParams start = prev;
    if (s == 2) {
      // The final stage may resume from whichever earlier estimate scores
      // better on its own evidence, keeping refinement monotone.
      const double from_prev =
          stage_objective(tmpl, prev, evidence.targets, views, prev, config.weights).value;
      const double from_first =
          stage_objective(tmpl, result.theta_stages[0], evidence.targets, views, prev,
                          config.weights)
              .value;
      if (from_first < from_prev) start = result.theta_stages[0];
    }

    result.theta_stages[static_cast<size_t>(s)] =
        run_stage(tmpl, start, evidence.targets, views, prev, config, record);
    prev = result.theta_stages[static_cast<size_t>(s)];

    if (s == 1) {
      // Refit the weak-perspective cameras against the second-stage joints
      // before consistency weighting.
      BodyParams refit_params = prev;
      refit_params.theta_g.setZero();
      const PosedBody body = forward(tmpl, refit_params);
      for (int n = 0; n < n_views; ++n) {
        ViewFitData& v = views[static_cast<size_t>(n)];
        Points3 rotated(kNumJoints, 3);
        for (int j = 0; j < kNumJoints; ++j)
          rotated.row(j) = (v.rot_h_to_cam * Vec3(body.joints.row(j).transpose())).transpose();
        v.ortho = fit_view_ortho(rotated, v.joints_px, v.usable,
                                 h_to_cam[static_cast<size_t>(n)],
                                 rig.intrinsics[static_cast<size_t>(n)],
                                 observations[static_cast<size_t>(n)].crop);
        result.ortho_cams[static_cast<size_t>(n)] = v.ortho;
      }
    }
  }

  return result;
}

}  // namespace mvmesh
