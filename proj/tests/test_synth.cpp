#include <array>
#include <cmath>
#include <vector>

#include <doctest.h>

#include "mvmesh/bodymodel.hpp"
#include "mvmesh/camera.hpp"
#include "mvmesh/render2d.hpp"
#include "mvmesh/rng.hpp"
#include "mvmesh/synth.hpp"

using namespace mvmesh;

namespace {

// Small render settings so a full multi-view sample stays cheap.
SynthConfig small_config() {
  SynthConfig cfg;
  cfg.render_size = 256;
  cfg.target_size = 64;
  cfg.focal = Vec2(1250.0, 1250.0);
  cfg.box_occlusion_size = 16;
  return cfg;
}

SynthConfig quiet(SynthConfig cfg) {
  cfg.part_occlusion_prob.fill(0.0);
  cfg.box_occlusion_prob = 0.0;
  cfg.joint_jitter_sigma2 = 0.0;
  cfg.joint_drop_prob = 0.0;
  return cfg;
}

bool same_maps(const MapStack& a, const MapStack& b) {
  if (a.channels != b.channels || a.height != b.height || a.width != b.width) return false;
  for (size_t i = 0; i < a.data.size(); ++i)
    if (a.data[i] != b.data[i]) return false;
  return true;
}

bool same_mask(const BinaryMap& a, const BinaryMap& b) {
  return a.height == b.height && a.width == b.width && a.data == b.data;
}

// Minimal one-view sample for isolating single augmentation channels.
TrainingSample flat_sample(int size, bool visible_joints) {
  TrainingSample s;
  ViewObservation obs;
  obs.mask = BinaryMap(size, size);
  std::fill(obs.mask.data.begin(), obs.mask.data.end(), std::uint8_t{1});
  obs.heatmaps = MapStack(kNumJoints, size, size);
  obs.occupancy = obs.mask;
  obs.joint_visibility.assign(kNumJoints, visible_joints ? 1 : 0);
  s.observations.push_back(std::move(obs));

  std::array<BinaryMap, kNumParts> parts;
  for (int p = 0; p < kNumParts; ++p) parts[p] = BinaryMap(size, size);
  s.part_masks.push_back(parts);

  Points2 joints(kNumJoints, 2);
  for (int j = 0; j < kNumJoints; ++j)
    joints.row(j) = Eigen::RowVector2d(8.0 + (j % 4), 8.0 + j / 4);
  s.joints_crop.push_back(joints);
  return s;
}

}  // namespace

TEST_CASE("shape coefficients follow the configured prior") {
  const SynthConfig cfg = small_config();
  Rng rng(71);
  const int draws = 10000;
  VecX mean = VecX::Zero(kNumShapes);
  VecX sq = VecX::Zero(kNumShapes);
  for (int t = 0; t < draws; ++t) {
    const BodyParams p = sample_params(cfg, rng);
    mean += p.beta;
    sq += p.beta.cwiseProduct(p.beta);
    for (int j = 0; j < kNumJoints - 1; ++j) CHECK(p.theta_j.row(j).norm() < M_PI);
    CHECK(p.theta_g.norm() < M_PI);
    for (int s = 0; s < kNumShapes; ++s)
      CHECK(std::abs(p.beta[s] - cfg.shape_mu[s]) <=
            5.0 * std::sqrt(cfg.shape_sigma2[s]) + 1e-12);
  }
  mean /= draws;
  for (int s = 0; s < kNumShapes; ++s) {
    const double var = sq[s] / draws - mean[s] * mean[s];
    CHECK(std::abs(mean[s] - cfg.shape_mu[s]) <= 3.0 * std::sqrt(cfg.shape_sigma2[s] / draws));
    CHECK(std::abs(var - cfg.shape_sigma2[s]) <= 0.1 * cfg.shape_sigma2[s]);
  }
}

TEST_CASE("a fixed seed reproduces the identical pose draw") {
  const SynthConfig cfg = small_config();
  Rng a(72), b(72);
  const BodyParams pa = sample_params(cfg, a);
  const BodyParams pb = sample_params(cfg, b);
  CHECK((pa.beta - pb.beta).cwiseAbs().maxCoeff() == 0.0);
  CHECK((pa.theta_j - pb.theta_j).cwiseAbs().maxCoeff() == 0.0);
  CHECK((pa.theta_g - pb.theta_g).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("a pose bank overrides the parametric sampler") {
  SynthConfig cfg = small_config();
  MatX fixed = MatX::Zero(kNumJoints - 1, 3);
  fixed(4, 1) = 0.7;
  cfg.pose_bank = {fixed};
  Rng rng(73);
  const BodyParams p = sample_params(cfg, rng);
  CHECK((p.theta_j - fixed).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("camera translations follow the configured prior") {
  const SynthConfig cfg = small_config();
  Rng rng(74);
  const int draws = 10000;
  double mean_z = 0.0, sq_z = 0.0;
  for (int t = 0; t < draws; ++t) {
    const RigSample rig = sample_rig(cfg, rng);
    mean_z += rig.t_h_to_cam1.z();
    sq_z += rig.t_h_to_cam1.z() * rig.t_h_to_cam1.z();
    CHECK((rig.cam1_to_cams[0].rotation - Mat3::Identity()).cwiseAbs().maxCoeff() == 0.0);
    CHECK(rig.cam1_to_cams[0].translation.cwiseAbs().maxCoeff() == 0.0);
  }
  mean_z /= draws;
  const double var_z = sq_z / draws - mean_z * mean_z;
  CHECK(std::abs(mean_z - cfg.cam_trans_mu.z()) <=
        3.0 * std::sqrt(cfg.cam_trans_sigma2.z() / draws));
  CHECK(std::abs(var_z - cfg.cam_trans_sigma2.z()) <= 0.1 * cfg.cam_trans_sigma2.z());
}

TEST_CASE("the ring template spaces cameras evenly around the subject") {
  const double radius = 42.0;
  const int n = 6;
  const std::vector<Extrinsics> cams = rig_template_world_to_cams(RigTemplateKind::kRing, n, radius);
  std::vector<double> az(n);
  for (int i = 0; i < n; ++i) {
    const Vec3 pos = -(cams[i].rotation.transpose() * cams[i].translation);
    CHECK(std::abs(pos.norm() - radius) <= 1e-9);
    CHECK(std::abs(pos.y()) <= 1e-9);
    az[i] = std::atan2(pos.x(), -pos.z());
    // The optical axis points back at the origin.
    const Vec3 dir = cams[i].rotation * (-pos).normalized();
    CHECK((dir - Vec3(0, 0, 1)).cwiseAbs().maxCoeff() <= 1e-9);
  }
  for (int i = 1; i < n; ++i) {
    double gap = az[i] - az[i - 1];
    while (gap < 0) gap += 2.0 * M_PI;
    CHECK(std::abs(gap - 2.0 * M_PI / n) <= 1e-9);
  }
}

TEST_CASE("generated samples project ground-truth joints onto heatmap peaks") {
  const BodyTemplate tmpl = make_template(TemplateConfig{});
  const SynthConfig cfg = quiet(small_config());
  Rng rng(75);
  const TrainingSample sample = generate_sample(tmpl, cfg, rng);
  REQUIRE(sample.observations.size() == static_cast<size_t>(cfg.n_views));

  for (int n = 0; n < cfg.n_views; ++n) {
    const ViewObservation& obs = sample.observations[n];
    for (int j = 0; j < kNumJoints; ++j) {
      if (!obs.joint_visibility[j]) continue;
      const Vec2 expect(sample.joints_crop[n](j, 0), sample.joints_crop[n](j, 1));
      if (expect.x() < 0 || expect.x() > cfg.target_size - 1 || expect.y() < 0 ||
          expect.y() > cfg.target_size - 1)
        continue;  // joint visible in the full frame but cropped out
      const PeakInfo peak = channel_peak(obs.heatmaps, j);
      CHECK((peak.position - expect).cwiseAbs().maxCoeff() <= 0.5 + 1e-9);

      // The recorded crop coordinates agree with projecting the world-frame
      // joint through the view camera and the crop mapping.
      const Vec3 world =
          sample.world_from_human.apply(Vec3(sample.gt_joints.row(j).transpose()));
      const Vec3 cam = sample.rig.world_to_cam[n].apply(world);
      const Intrinsics& intr = sample.rig.intrinsics[n];
      const Vec2 full(intr.focal.x() * cam.x() / cam.z() + intr.center.x(),
                      intr.focal.y() * cam.y() / cam.z() + intr.center.y());
      CHECK((obs.crop.to_crop(full) - expect).cwiseAbs().maxCoeff() <= 1e-9);
    }
  }
}

TEST_CASE("zero vertex perturbation renders the exact mesh silhouette") {
  const BodyTemplate tmpl = make_template(TemplateConfig{});
  SynthConfig cfg = quiet(small_config());
  cfg.vertex_perturb_sigma2 = Vec3::Zero();
  Rng rng(76);
  const TrainingSample sample = generate_sample(tmpl, cfg, rng);

  Intrinsics intr;
  intr.focal = cfg.focal;
  intr.center = Vec2::Constant(0.5 * cfg.render_size);
  intr.width = cfg.render_size;
  intr.height = cfg.render_size;
  for (int n = 0; n < cfg.n_views; ++n) {
    const BinaryMap full =
        rasterize_mask(sample.gt_vertices, tmpl.faces, sample.human_to_cam[n], intr);
    const BinaryMap expect =
        resample_mask_nearest(full, sample.observations[n].crop, cfg.target_size);
    CHECK(same_mask(sample.observations[n].mask, expect));
  }
}

TEST_CASE("sample generation is deterministic under the seed") {
  const BodyTemplate tmpl = make_template(TemplateConfig{});
  const SynthConfig cfg = small_config();
  Rng a(sample_seed(77, 3)), b(sample_seed(77, 3));
  const TrainingSample sa = generate_sample(tmpl, cfg, a);
  const TrainingSample sb = generate_sample(tmpl, cfg, b);

  CHECK((sa.gt_params.beta - sb.gt_params.beta).cwiseAbs().maxCoeff() == 0.0);
  CHECK((sa.gt_params.theta_j - sb.gt_params.theta_j).cwiseAbs().maxCoeff() == 0.0);
  CHECK((sa.gt_joints - sb.gt_joints).cwiseAbs().maxCoeff() == 0.0);
  for (size_t n = 0; n < sa.observations.size(); ++n) {
    CHECK(same_mask(sa.observations[n].mask, sb.observations[n].mask));
    CHECK(same_maps(sa.observations[n].heatmaps, sb.observations[n].heatmaps));
    CHECK(same_mask(sa.observations[n].occupancy, sb.observations[n].occupancy));
    CHECK((sa.observations[n].crop.origin - sb.observations[n].crop.origin).cwiseAbs().maxCoeff() ==
          0.0);
    CHECK(sa.observations[n].crop.scale == sb.observations[n].crop.scale);
    CHECK((sa.human_to_cam[n].translation - sb.human_to_cam[n].translation).cwiseAbs().maxCoeff() ==
          0.0);
  }
}

TEST_CASE("joints in a view are the human-frame joints under the view rotation") {
  const BodyTemplate tmpl = make_template(TemplateConfig{});
  const SynthConfig cfg = quiet(small_config());
  Rng rng(78);
  const TrainingSample sample = generate_sample(tmpl, cfg, rng);
  for (int n = 0; n < cfg.n_views; ++n) {
    const Points3 got = sample.gt_joints_in_view(n);
    const Mat3 r = sample.human_to_cam[n].rotation;
    for (int j = 0; j < kNumJoints; ++j) {
      const Vec3 want = r * Vec3(sample.gt_joints.row(j).transpose());
      CHECK((Vec3(got.row(j).transpose()) - want).cwiseAbs().maxCoeff() <= 1e-15);
    }
  }
}

TEST_CASE("augmentation with zero probabilities is the identity") {
  const BodyTemplate tmpl = make_template(TemplateConfig{});
  const SynthConfig cfg = quiet(small_config());
  Rng rng(79);
  const TrainingSample sample = generate_sample(tmpl, cfg, rng);
  Rng aug_rng(80);
  const TrainingSample out = augment(sample, cfg, aug_rng);

  for (size_t n = 0; n < sample.observations.size(); ++n) {
    CHECK(same_mask(out.observations[n].mask, sample.observations[n].mask));
    CHECK(same_maps(out.observations[n].heatmaps, sample.observations[n].heatmaps));
    CHECK(same_mask(out.observations[n].occupancy, sample.observations[n].occupancy));
    CHECK(out.observations[n].joint_visibility == sample.observations[n].joint_visibility);
    CHECK((out.joints_crop[n] - sample.joints_crop[n]).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("augmentation never touches the ground truth") {
  const BodyTemplate tmpl = make_template(TemplateConfig{});
  SynthConfig cfg = small_config();
  cfg.part_occlusion_prob.fill(1.0);
  cfg.box_occlusion_prob = 1.0;
  cfg.joint_jitter_sigma2 = 100.0;
  cfg.joint_drop_prob = 1.0;
  Rng rng(81);
  const TrainingSample sample = generate_sample(tmpl, quiet(cfg), rng);
  Rng aug_rng(82);
  const TrainingSample out = augment(sample, cfg, aug_rng);

  CHECK((out.gt_params.beta - sample.gt_params.beta).cwiseAbs().maxCoeff() == 0.0);
  CHECK((out.gt_params.theta_j - sample.gt_params.theta_j).cwiseAbs().maxCoeff() == 0.0);
  CHECK((out.gt_params.theta_g - sample.gt_params.theta_g).cwiseAbs().maxCoeff() == 0.0);
  CHECK((out.gt_joints - sample.gt_joints).cwiseAbs().maxCoeff() == 0.0);
  CHECK((out.gt_vertices - sample.gt_vertices).cwiseAbs().maxCoeff() == 0.0);
  CHECK((out.world_from_human.rotation - sample.world_from_human.rotation).cwiseAbs().maxCoeff() ==
        0.0);
  for (size_t n = 0; n < sample.human_to_cam.size(); ++n) {
    CHECK((out.human_to_cam[n].rotation - sample.human_to_cam[n].rotation).cwiseAbs().maxCoeff() ==
          0.0);
    CHECK((out.rig.world_to_cam[n].translation - sample.rig.world_to_cam[n].translation)
              .cwiseAbs()
              .maxCoeff() == 0.0);
  }

  // Dropped joints really disappear from the observation side.
  for (size_t n = 0; n < out.observations.size(); ++n)
    for (int idx : cfg.joint_drop_indices) {
      CHECK(out.observations[n].joint_visibility[idx] == 0);
      CHECK(out.observations[n].heatmaps.channel_max(idx) == 0.0);
    }
}

TEST_CASE("a certain part occlusion erases exactly the part pixels") {
  const BodyTemplate tmpl = make_template(TemplateConfig{});
  SynthConfig cfg = quiet(small_config());
  Rng rng(83);
  const TrainingSample sample = generate_sample(tmpl, cfg, rng);

  cfg.part_occlusion_prob[kPartTorso] = 1.0;
  Rng aug_rng(84);
  const TrainingSample out = augment(sample, cfg, aug_rng);
  for (size_t n = 0; n < out.observations.size(); ++n) {
    const BinaryMap& part = sample.part_masks[n][kPartTorso];
    for (size_t i = 0; i < part.data.size(); ++i) {
      const std::uint8_t want = part.data[i] ? 0 : sample.observations[n].mask.data[i];
      CHECK(out.observations[n].mask.data[i] == want);
    }
  }
}

TEST_CASE("box occlusion fires at its configured frequency") {
  SynthConfig cfg = quiet(small_config());
  cfg.target_size = 32;
  cfg.box_occlusion_size = 8;
  cfg.box_occlusion_prob = 0.1;
  const TrainingSample base = flat_sample(32, false);

  Rng rng(85);
  const int draws = 10000;
  int fired = 0;
  for (int t = 0; t < draws; ++t) {
    const TrainingSample out = augment(base, cfg, rng);
    size_t zeros = 0;
    for (auto v : out.observations[0].mask.data) zeros += v == 0;
    if (zeros > 0) {
      CHECK(zeros == 64);  // one full 8x8 box, always inside the frame
      ++fired;
    }
  }
  const double freq = static_cast<double>(fired) / draws;
  CHECK(std::abs(freq - cfg.box_occlusion_prob) <= 0.01);
}

TEST_CASE("joint jitter displacements match the configured variance") {
  SynthConfig cfg = quiet(small_config());
  cfg.target_size = 16;
  cfg.box_occlusion_size = 4;
  cfg.joint_jitter_sigma2 = 8.0;
  const TrainingSample base = flat_sample(16, true);

  Rng rng(86);
  const int draws = 2000;
  double sum = 0.0, sq = 0.0;
  const double n = 2.0 * kNumJoints * draws;
  for (int t = 0; t < draws; ++t) {
    const TrainingSample out = augment(base, cfg, rng);
    const Points2 delta = out.joints_crop[0] - base.joints_crop[0];
    sum += delta.sum();
    sq += delta.cwiseProduct(delta).sum();
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  CHECK(std::abs(mean) <= 3.0 * std::sqrt(cfg.joint_jitter_sigma2 / n));
  CHECK(std::abs(var - cfg.joint_jitter_sigma2) <= 0.1 * cfg.joint_jitter_sigma2);
}

TEST_CASE("occupancy stays a union after augmentation") {
  const BodyTemplate tmpl = make_template(TemplateConfig{});
  SynthConfig cfg = small_config();
  cfg.part_occlusion_prob.fill(0.5);
  cfg.box_occlusion_prob = 0.5;
  Rng rng(87);
  const TrainingSample sample = generate_sample(tmpl, quiet(cfg), rng);
  Rng aug_rng(88);
  const TrainingSample out = augment(sample, cfg, aug_rng);

  for (const ViewObservation& obs : out.observations) {
    for (size_t i = 0; i < obs.mask.data.size(); ++i) CHECK(obs.occupancy.data[i] >= obs.mask.data[i]);
    for (int c = 0; c < obs.heatmaps.channels; ++c)
      for (int y = 0; y < obs.heatmaps.height; ++y)
        for (int x = 0; x < obs.heatmaps.width; ++x)
          if (obs.heatmaps.at(c, y, x) > cfg.tau_heat) CHECK(obs.occupancy.at(y, x) == 1);
  }
}

TEST_CASE("invalid synthesis configs are rejected") {
  SynthConfig cfg = small_config();
  cfg.n_views = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = small_config();
  cfg.box_occlusion_prob = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = small_config();
  cfg.box_occlusion_size = cfg.target_size + 1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = small_config();
  cfg.joint_drop_indices = {17};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = small_config();
  cfg.cam_trans_mu.z() = -1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = small_config();
  cfg.pose_bank = {MatX::Zero(3, 3)};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
