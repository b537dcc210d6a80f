#include "mvmesh/synth.hpp"

#include <algorithm>
#include <cmath>

#include "mvmesh/errors.hpp"
#include "mvmesh/rotation.hpp"

namespace mvmesh {

namespace {

// Per-joint axis-angle norm budget for the parametric pose sampler. Entry 0
// (pelvis) is unused; the global rotation is sampled separately.
constexpr double kJointRange[kNumJoints] = {
    0.0,  0.3, 0.3, 0.3, 0.4,  // pelvis, spine, chest, neck, head
    0.9,  0.9, 1.5, 1.5, 0.5, 0.5,  // shoulders, elbows, wrists
    0.9,  0.9, 1.5, 1.5, 0.5, 0.5,  // hips, knees, ankles
};

Mat3 rot_y(double a) {
  Mat3 r;
  r << std::cos(a), 0, std::sin(a), 0, 1, 0, -std::sin(a), 0, std::cos(a);
  return r;
}

Mat3 rot_x(double a) {
  Mat3 r;
  r << 1, 0, 0, 0, std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a);
  return r;
}

Mat3 rot_z(double a) {
  Mat3 r;
  r << std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a), 0, 0, 0, 1;
  return r;
}

}  // namespace

SynthConfig::SynthConfig() {
  shape_mu = VecX(kNumShapes);
  shape_mu << 0.2056, 0.3356, -0.3507, 0.3561, 0.4175, 0.0309, 0.3048, 0.2361, 0.2091, 0.3121;
  shape_sigma2 = VecX::Constant(kNumShapes, 1.25);
}

void SynthConfig::validate() const {
  if (n_views < 1) throw ConfigError("synth: n_views must be at least 1");
  if (shape_mu.size() != kNumShapes || shape_sigma2.size() != kNumShapes)
    throw ConfigError("synth: shape prior must have one entry per shape coefficient");
  if ((shape_sigma2.array() < 0).any()) throw ConfigError("synth: shape variance must be >= 0");
  if ((cam_trans_sigma2.array() < 0).any())
    throw ConfigError("synth: camera translation variance must be >= 0");
  if (cam_trans_mu.z() <= 0) throw ConfigError("synth: mean camera depth must be positive");
  if (focal.x() <= 0 || focal.y() <= 0) throw ConfigError("synth: focal lengths must be positive");
  if (render_size < 2 || target_size < 2) throw ConfigError("synth: image sizes must exceed 1");
  if (bbox_scale_range.x() <= 0 || bbox_scale_range.y() < bbox_scale_range.x())
    throw ConfigError("synth: bbox scale range must be positive and ordered");
  if (heatmap_sigma <= 0) throw ConfigError("synth: heatmap sigma must be positive");
  if ((vertex_perturb_sigma2.array() < 0).any())
    throw ConfigError("synth: vertex perturbation variance must be >= 0");
  for (double p : part_occlusion_prob)
    if (p < 0 || p > 1) throw ConfigError("synth: part occlusion probability outside [0, 1]");
  if (box_occlusion_prob < 0 || box_occlusion_prob > 1)
    throw ConfigError("synth: box occlusion probability outside [0, 1]");
  if (box_occlusion_size < 1 || box_occlusion_size > target_size)
    throw ConfigError("synth: occlusion box does not fit the target image");
  if (joint_jitter_sigma2 < 0) throw ConfigError("synth: joint jitter variance must be >= 0");
  if (joint_drop_prob < 0 || joint_drop_prob > 1)
    throw ConfigError("synth: joint drop probability outside [0, 1]");
  for (int idx : joint_drop_indices)
    if (idx < 0 || idx >= kNumJoints) throw ConfigError("synth: droppable joint index out of range");
  if (pelvis_range < 0) throw ConfigError("synth: pelvis range must be >= 0");
  for (const MatX& pose : pose_bank) {
    if (pose.rows() != kNumJoints - 1 || pose.cols() != 3)
      throw ConfigError("synth: pose bank entry has wrong shape");
    for (Eigen::Index r = 0; r < pose.rows(); ++r)
      if (pose.row(r).norm() >= M_PI) throw ConfigError("synth: pose bank rotation norm >= pi");
  }
}

Points3 TrainingSample::gt_joints_in_view(int n) const {
  Points3 out = gt_joints;
  const Mat3 r = human_to_cam[static_cast<size_t>(n)].rotation;
  for (Eigen::Index j = 0; j < out.rows(); ++j) out.row(j) = (r * Vec3(out.row(j).transpose())).transpose();
  return out;
}

std::vector<Extrinsics> rig_template_world_to_cams(RigTemplateKind kind, int n_views,
                                                   double radius) {
  if (n_views < 1) throw ConfigError("rig template: n_views must be at least 1");
  if (radius <= 0) throw ConfigError("rig template: radius must be positive");
  std::vector<Extrinsics> cams;
  cams.reserve(static_cast<size_t>(n_views));
  for (int n = 0; n < n_views; ++n) {
    const double az = 2.0 * M_PI * n / n_views;
    double elev = 0.0;
    if (kind == RigTemplateKind::kHemisphere) elev = 0.35 * (n % 3) / 2.0;
    const Vec3 pos = radius * Vec3(std::cos(elev) * std::sin(az), std::sin(elev),
                                   -std::cos(elev) * std::cos(az));
    cams.push_back(look_at(pos, Vec3::Zero(), Vec3(0, 1, 0)));
  }
  return cams;
}

BodyParams sample_params(const SynthConfig& config, Rng& rng) {
  BodyParams params;
  params.beta = VecX(kNumShapes);
  for (int s = 0; s < kNumShapes; ++s) {
    const double sigma = std::sqrt(config.shape_sigma2[s]);
    const double draw = rng.normal(config.shape_mu[s], sigma);
    params.beta[s] = std::clamp(draw, config.shape_mu[s] - 5.0 * sigma,
                                config.shape_mu[s] + 5.0 * sigma);
  }

  params.theta_j = MatX::Zero(kNumJoints - 1, 3);
  if (!config.pose_bank.empty()) {
    const int pick = rng.uniform_int(0, static_cast<int>(config.pose_bank.size()) - 1);
    params.theta_j = config.pose_bank[static_cast<size_t>(pick)];
  } else {
    for (int j = 1; j < kNumJoints; ++j) {
      const double range = kJointRange[j];
      const double comp_sigma = range / 3.0;
      const double comp_clamp = range / std::sqrt(3.0);
      for (int i = 0; i < 3; ++i) {
        const double draw = rng.normal(0.0, comp_sigma);
        params.theta_j(j - 1, i) = std::clamp(draw, -comp_clamp, comp_clamp);
      }
    }
  }

  const double yaw = rng.uniform(-0.99 * M_PI, 0.99 * M_PI);
  const double pitch = std::clamp(rng.normal(0.0, 0.1), -0.3, 0.3);
  const double roll = std::clamp(rng.normal(0.0, 0.1), -0.3, 0.3);
  const Mat3 global = rot_y(yaw) * rot_x(pitch) * rot_z(roll);
  params.theta_g = matrix_to_axis_angle(global);

  params.validate();
  return params;
}

RigSample sample_rig(const SynthConfig& config, Rng& rng) {
  const std::vector<Extrinsics> tmpl =
      rig_template_world_to_cams(config.rig, config.n_views, config.cam_trans_mu.z());
  RigSample out;
  out.cam1_to_cams = compose_rig(tmpl);

  Vec3 sigma = config.cam_trans_sigma2.array().sqrt();
  out.t_h_to_cam1 = config.cam_trans_mu;
  for (int i = 0; i < 3; ++i) out.t_h_to_cam1[i] += sigma[i] * rng.normal();
  for (int n = 1; n < config.n_views; ++n)
    for (int i = 0; i < 3; ++i)
      out.cam1_to_cams[static_cast<size_t>(n)].translation[i] += sigma[i] * rng.normal();
  return out;
}

TrainingSample generate_sample(const BodyTemplate& tmpl, const SynthConfig& config, Rng& rng) {
  config.validate();

  TrainingSample sample;
  sample.gt_params = sample_params(config, rng);

  Vec3 pelvis_w;
  for (int i = 0; i < 3; ++i) pelvis_w[i] = rng.uniform(-config.pelvis_range, config.pelvis_range);

  // The mesh is posed once in the human frame (global rotation excluded); the
  // rotation travels in the camera extrinsics instead.
  BodyParams human_params = sample.gt_params;
  human_params.theta_g = Vec3::Zero();
  const PosedBody body = forward(tmpl, human_params);
  sample.gt_vertices = body.vertices;
  sample.gt_joints = body.joints;

  const Mat3 r_global = axis_angle_to_matrix(sample.gt_params.theta_g);
  sample.world_from_human.rotation = r_global;
  sample.world_from_human.translation = pelvis_w;
  const Extrinsics world_to_human = sample.world_from_human.inverse();

  // Silhouettes render from an independently perturbed copy of the vertices;
  // ground truth stays exact.
  Points3 perturbed = sample.gt_vertices;
  const Vec3 vsigma = config.vertex_perturb_sigma2.array().sqrt();
  for (Eigen::Index v = 0; v < perturbed.rows(); ++v)
    for (int i = 0; i < 3; ++i)
      if (vsigma[i] > 0) perturbed(v, i) += vsigma[i] * rng.normal();

  Intrinsics intr;
  intr.focal = config.focal;
  intr.center = Vec2::Constant(0.5 * config.render_size);
  intr.width = config.render_size;
  intr.height = config.render_size;

  for (int attempt = 0; attempt < 2; ++attempt) {
    const RigSample rig = sample_rig(config, rng);

    const Extrinsics first_template =
        rig_template_world_to_cams(config.rig, config.n_views, config.cam_trans_mu.z()).front();
    Extrinsics human_to_cam1;
    human_to_cam1.rotation = first_template.rotation * r_global;
    human_to_cam1.translation = rig.t_h_to_cam1;

    sample.human_to_cam.clear();
    for (const Extrinsics& rel : rig.cam1_to_cams)
      sample.human_to_cam.push_back(human_to_cam(rel, human_to_cam1));
    sample.rig.intrinsics.assign(static_cast<size_t>(config.n_views), intr);
    sample.rig.world_to_cam.clear();
    for (const Extrinsics& hc : sample.human_to_cam)
      sample.rig.world_to_cam.push_back(hc.compose(world_to_human));

    try {
      sample.observations.clear();
      sample.part_masks.clear();
      sample.joints_crop.clear();
      for (int n = 0; n < config.n_views; ++n) {
        const Extrinsics& hc = sample.human_to_cam[static_cast<size_t>(n)];
        const BinaryMap mask_full = rasterize_mask(perturbed, tmpl.faces, hc, intr);

        Points2 joints_full = Points2::Zero(kNumJoints, 2);
        std::vector<std::uint8_t> vis(kNumJoints, 0);
        for (int j = 0; j < kNumJoints; ++j) {
          const Vec3 p = hc.apply(Vec3(sample.gt_joints.row(j).transpose()));
          if (p.z() <= kMinDepth) continue;
          const Vec2 px(intr.focal.x() * p.x() / p.z() + intr.center.x(),
                        intr.focal.y() * p.y() / p.z() + intr.center.y());
          joints_full.row(j) = px.transpose();
          vis[static_cast<size_t>(j)] =
              px.x() >= 0 && px.x() <= intr.width - 1 && px.y() >= 0 && px.y() <= intr.height - 1;
        }

        const double bbox_scale =
            rng.uniform(config.bbox_scale_range.x(), config.bbox_scale_range.y());
        const CropInfo crop = compute_crop(mask_full, joints_full, vis, bbox_scale,
                                           config.target_size);

        ViewObservation obs;
        obs.crop = crop;
        obs.joint_visibility = vis;
        obs.mask = resample_mask_nearest(mask_full, crop, config.target_size);

        Points2 joints_crop = Points2::Zero(kNumJoints, 2);
        for (int j = 0; j < kNumJoints; ++j)
          joints_crop.row(j) = crop.to_crop(Vec2(joints_full.row(j).transpose())).transpose();
        obs.heatmaps = joint_heatmaps(joints_crop, vis, config.target_size, config.target_size,
                                      config.heatmap_sigma);
        obs.occupancy = occupancy_map(obs.heatmaps, obs.mask, config.tau_heat);

        std::array<BinaryMap, kNumParts> parts;
        for (int p = 0; p < kNumParts; ++p) {
          const auto [lo, hi] = tmpl.part_ranges[static_cast<size_t>(p)];
          Faces part_faces(tmpl.faces.rows(), 3);
          Eigen::Index nf = 0;
          for (Eigen::Index f = 0; f < tmpl.faces.rows(); ++f) {
            const bool in = tmpl.faces(f, 0) >= lo && tmpl.faces(f, 0) < hi &&
                            tmpl.faces(f, 1) >= lo && tmpl.faces(f, 1) < hi &&
                            tmpl.faces(f, 2) >= lo && tmpl.faces(f, 2) < hi;
            if (in) part_faces.row(nf++) = tmpl.faces.row(f);
          }
          part_faces.conservativeResize(nf, 3);
          BinaryMap part_full(intr.height, intr.width);
          if (nf > 0) {
            Points2 pts = Points2::Zero(perturbed.rows(), 2);
            std::vector<std::uint8_t> valid(static_cast<size_t>(perturbed.rows()), 0);
            for (Eigen::Index v = 0; v < perturbed.rows(); ++v) {
              const Vec3 pc = hc.apply(Vec3(perturbed.row(v).transpose()));
              if (pc.z() > kMinDepth) {
                valid[static_cast<size_t>(v)] = 1;
                pts(v, 0) = intr.focal.x() * pc.x() / pc.z() + intr.center.x();
                pts(v, 1) = intr.focal.y() * pc.y() / pc.z() + intr.center.y();
              }
            }
            part_full = rasterize_projected(pts, valid, part_faces, intr.height, intr.width);
          }
          parts[static_cast<size_t>(p)] = resample_mask_nearest(part_full, crop,
                                                                config.target_size);
        }

        sample.observations.push_back(std::move(obs));
        sample.part_masks.push_back(std::move(parts));
        sample.joints_crop.push_back(std::move(joints_crop));
      }
      return sample;
    } catch (const EmptySilhouette&) {
      if (attempt == 1) throw;
      // One retry with a fresh rig; the body itself is kept.
    }
  }
  throw EmptySilhouette("generate_sample: unreachable");
}

TrainingSample augment(const TrainingSample& sample, const SynthConfig& config, Rng& rng) {
  TrainingSample out = sample;
  const int size = config.target_size;
  const double jitter_sigma = std::sqrt(config.joint_jitter_sigma2);

  for (size_t n = 0; n < out.observations.size(); ++n) {
    ViewObservation& obs = out.observations[n];

    for (int p = 0; p < kNumParts; ++p) {
      const bool occlude = rng.bernoulli(config.part_occlusion_prob[static_cast<size_t>(p)]);
      if (!occlude) continue;
      const BinaryMap& part = out.part_masks[n][static_cast<size_t>(p)];
      for (size_t i = 0; i < obs.mask.data.size(); ++i)
        if (part.data[i]) obs.mask.data[i] = 0;
    }

    if (rng.bernoulli(config.box_occlusion_prob)) {
      const int box = config.box_occlusion_size;
      const int x0 = rng.uniform_int(0, size - box);
      const int y0 = rng.uniform_int(0, size - box);
      for (int y = y0; y < y0 + box; ++y)
        for (int x = x0; x < x0 + box; ++x) obs.mask.at(y, x) = 0;
    }

    Points2& joints = out.joints_crop[n];
    bool moved = false;
    for (int j = 0; j < kNumJoints; ++j) {
      const double dx = jitter_sigma * rng.normal();
      const double dy = jitter_sigma * rng.normal();
      if (jitter_sigma > 0 && obs.joint_visibility[static_cast<size_t>(j)]) {
        joints(j, 0) += dx;
        joints(j, 1) += dy;
        moved = true;
      }
    }
    if (moved)
      obs.heatmaps = joint_heatmaps(joints, obs.joint_visibility, size, size,
                                    config.heatmap_sigma);

    for (int idx : config.joint_drop_indices) {
      if (!rng.bernoulli(config.joint_drop_prob)) continue;
      obs.joint_visibility[static_cast<size_t>(idx)] = 0;
      double* ch = obs.heatmaps.channel(idx);
      std::fill(ch, ch + static_cast<size_t>(size) * size, 0.0);
    }

    obs.occupancy = occupancy_map(obs.heatmaps, obs.mask, config.tau_heat);
  }
  return out;
}

}  // namespace mvmesh
