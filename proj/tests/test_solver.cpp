#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <limits>
#include <thread>
#include <vector>

#include <doctest.h>

#include "mvmesh/bodymodel.hpp"
#include "mvmesh/camera.hpp"
#include "mvmesh/errors.hpp"
#include "mvmesh/metrics.hpp"
#include "mvmesh/render2d.hpp"
#include "mvmesh/rng.hpp"
#include "mvmesh/rotation.hpp"
#include "mvmesh/solver.hpp"
#include "mvmesh/synth.hpp"
#include "mvmesh/volumetric.hpp"

using namespace mvmesh;

namespace {

Mat3 random_rotation(Rng& rng) {
  Vec3 axis(rng.normal(), rng.normal(), rng.normal());
  axis.normalize();
  return axis_angle_to_matrix(rng.uniform(0.0, 3.0) * axis);
}

BodyParams random_params(Rng& rng, double pose_range = 0.7) {
  BodyParams p;
  for (int k = 0; k < kNumJoints - 1; ++k)
    for (int a = 0; a < 3; ++a) p.theta_j(k, a) = rng.uniform(-pose_range, pose_range);
  for (int s = 0; s < kNumShapes; ++s) p.beta[s] = rng.uniform(-1.5, 1.5);
  for (int a = 0; a < 3; ++a) p.theta_g[a] = rng.uniform(-1.0, 1.0);
  return p;
}

JointTargets targets_at(const Points3& positions, double conf = 1.0) {
  JointTargets t;
  t.positions = positions;
  t.confidence = VecX::Constant(positions.rows(), conf);
  return t;
}

// A view whose observed pixel positions exactly match the orthographic
// projection of the rotated model joints, so its 2D residual is zero.
ViewFitData consistent_view(const Points3& joints_h, const Mat3& rot, const OrthoCam& cam) {
  ViewFitData v;
  v.rot_h_to_cam = rot;
  v.ortho = cam;
  v.joints_px = Points2::Zero(joints_h.rows(), 2);
  v.usable.assign(static_cast<size_t>(joints_h.rows()), 1);
  for (Eigen::Index j = 0; j < joints_h.rows(); ++j) {
    const Vec3 q = rot * Vec3(joints_h.row(j).transpose());
    v.joints_px.row(j) = (cam.scale * q.head<2>() + cam.translation).transpose();
  }
  return v;
}

double angle_deg(const Mat3& r) {
  const double c = std::clamp((r.trace() - 1.0) / 2.0, -1.0, 1.0);
  return std::acos(c) * 180.0 / M_PI;
}

SolverConfig grid16(bool progressive) {
  SolverConfig cfg = progressive ? SolverConfig::progressive() : SolverConfig::naive();
  cfg.grid_g = 16;
  cfg.cube_edge = 3.0;
  return cfg;
}

// Joint and vertex errors of a fitted stage against the sample's ground
// truth, both in the pelvis-centered human frame.
SampleErrors stage_errors(const BodyTemplate& tmpl, const BodyParams& stage,
                          const TrainingSample& sample) {
  BodyParams p = stage;
  p.theta_g.setZero();
  const PosedBody body = forward(tmpl, p);
  return sample_errors(body.joints, body.vertices, sample.gt_joints, sample.gt_vertices);
}

TrainingSample clean_sample(const BodyTemplate& tmpl, std::uint64_t seed, int n_views = 4) {
  SynthConfig cfg;
  cfg.n_views = n_views;
  Rng rng(sample_seed(seed, 0));
  return generate_sample(tmpl, cfg, rng);
}

}  // namespace

TEST_CASE("body frame estimate recovers anchor orientation") {
  const BodyTemplate tmpl = make_template(TemplateConfig{});
  const Points3 rest = tmpl.rest_joints(VecX::Zero(kNumShapes));

  const Mat3 id = estimate_rotation(targets_at(rest), 0.1);
  CHECK((id - Mat3::Identity()).cwiseAbs().maxCoeff() <= 1e-12);

  Rng rng(71);
  for (int t = 0; t < 100; ++t) {
    const Mat3 r_hw = random_rotation(rng);
    Points3 world(kNumJoints, 3);
    for (int j = 0; j < kNumJoints; ++j)
      world.row(j) = (r_hw * Vec3(rest.row(j).transpose())).transpose();
    const Mat3 est = estimate_rotation(targets_at(world), 0.1);
    CHECK((est - r_hw.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(std::abs(est.determinant() - 1.0) <= 1e-12);
  }
}

TEST_CASE("body frame estimate rejects weak or degenerate anchors") {
  const BodyTemplate tmpl = make_template(TemplateConfig{});
  const Points3 rest = tmpl.rest_joints(VecX::Zero(kNumShapes));

  JointTargets weak = targets_at(rest);
  weak.confidence[3] = 0.1;  // the gate is strict, equality fails
  CHECK_THROWS_AS(estimate_rotation(weak, 0.1), DegenerateFrame);
  weak.confidence[3] = 0.11;
  CHECK_NOTHROW(estimate_rotation(weak, 0.1));

  JointTargets non_anchor = targets_at(rest);
  for (int j : {4, 7, 10, 16}) non_anchor.confidence[j] = 0.0;
  CHECK_NOTHROW(estimate_rotation(non_anchor, 0.1));

  auto anchors = [](const Vec3& neck, const Vec3& lhip, const Vec3& rhip) {
    JointTargets t = targets_at(Points3::Zero(kNumJoints, 3));
    t.positions.row(3) = neck.transpose();
    t.positions.row(11) = lhip.transpose();
    t.positions.row(12) = rhip.transpose();
    return t;
  };

  // Hip axis 3 degrees from the spine axis: inside the 5-degree limit.
  const double a3 = 3.0 * M_PI / 180.0;
  CHECK_THROWS_AS(estimate_rotation(anchors(Vec3(0, 1, 0), Vec3(0.1 * std::sin(a3), 0.1 * std::cos(a3), 0),
                                            Vec3(-0.1 * std::sin(a3), -0.1 * std::cos(a3), 0)),
                                    0.01),
                  DegenerateFrame);
  const double a10 = 10.0 * M_PI / 180.0;
  CHECK_NOTHROW(estimate_rotation(anchors(Vec3(0, 1, 0), Vec3(0.1 * std::sin(a10), 0.1 * std::cos(a10), 0),
                                          Vec3(-0.1 * std::sin(a10), -0.1 * std::cos(a10), 0)),
                                  0.01));

  // Coincident anchors destroy an axis.
  CHECK_THROWS_AS(estimate_rotation(anchors(Vec3::Zero(), Vec3(0.1, 0, 0), Vec3(-0.1, 0, 0)), 0.01),
                  DegenerateFrame);
}

TEST_CASE("body frame estimate degrades gracefully under anchor noise") {
  const BodyTemplate tmpl = make_template(TemplateConfig{});
  const Points3 rest = tmpl.rest_joints(VecX::Zero(kNumShapes));

  // The hip baseline is 0.20 m, so 2 cm of noise costs roughly 8 degrees of
  // roll about the spine on average. Bounds frozen from 100-trial runs.
  std::array<double, 2> mean_deg{};
  const std::array<double, 2> sigmas = {0.02, 0.01};
  for (size_t lvl = 0; lvl < sigmas.size(); ++lvl) {
    Rng rng(321);
    double sum = 0.0, worst = 0.0;
    for (int t = 0; t < 100; ++t) {
      Vec3 ax(rng.normal(), rng.normal(), rng.normal());
      ax *= 0.9 * M_PI / ax.norm() * rng.uniform();
      const Mat3 r_hw = axis_angle_to_matrix(ax);
      JointTargets targets = targets_at(Points3::Zero(kNumJoints, 3));
      for (int j = 0; j < kNumJoints; ++j)
        targets.positions.row(j) =
            (r_hw * Vec3(rest.row(j).transpose()) +
             sigmas[lvl] * Vec3(rng.normal(), rng.normal(), rng.normal()))
                .transpose();
      const double deg = angle_deg(estimate_rotation(targets, 0.1) * r_hw);
      sum += deg;
      worst = std::max(worst, deg);
    }
    mean_deg[lvl] = sum / 100.0;
    if (sigmas[lvl] == 0.02) {
      CHECK(mean_deg[lvl] < 10.0);
      CHECK(worst < 30.0);
    } else {
      CHECK(mean_deg[lvl] < 5.0);
    }
  }
  CHECK(mean_deg[1] < mean_deg[0]);
}

TEST_CASE("template orientation fallback recovers a known rotation") {
  const BodyTemplate tmpl = make_template(TemplateConfig{});
  const Points3 rest = tmpl.rest_joints(VecX::Zero(kNumShapes));

  Rng rng(72);
  for (int t = 0; t < 50; ++t) {
    const Mat3 r_hw = random_rotation(rng);
    const Vec3 shift(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2));
    JointTargets targets = targets_at(Points3::Zero(kNumJoints, 3));
    for (int j = 0; j < kNumJoints; ++j)
      targets.positions.row(j) = (r_hw * Vec3(rest.row(j).transpose()) + shift).transpose();
    // Joints at or below the gate are ignored even when their positions are
    // garbage.
    for (int j : {5, 9, 14}) {
      targets.confidence[j] = 0.05;
      targets.positions.row(j) = Vec3(100, -50, 7).transpose();
    }
    const Mat3 est = orient_to_template(rest, targets, 0.1);
    CHECK((est - r_hw.transpose()).cwiseAbs().maxCoeff() <= 1e-9);
    CHECK(std::abs(est.determinant() - 1.0) <= 1e-9);
  }
}

TEST_CASE("template orientation fallback rejects thin evidence") {
  const BodyTemplate tmpl = make_template(TemplateConfig{});
  const Points3 rest = tmpl.rest_joints(VecX::Zero(kNumShapes));

  JointTargets two = targets_at(rest, 0.0);
  two.confidence[0] = 1.0;
  two.confidence[4] = 1.0;
  CHECK_THROWS_AS(orient_to_template(rest, two, 0.1), DegenerateFrame);

  // Four joints lit, observed positions on one line.
  JointTargets line = targets_at(rest, 0.0);
  for (int j = 0; j < 4; ++j) {
    line.confidence[j] = 1.0;
    line.positions.row(j) = Vec3(j * 0.3, j * 0.6, -j * 0.3).transpose();
  }
  CHECK_THROWS_AS(orient_to_template(rest, line, 0.1), DegenerateFrame);

  JointTargets ok = targets_at(rest);
  CHECK_THROWS_AS(orient_to_template(rest.topRows(kNumJoints - 1), ok, 0.1), ConfigError);
}

TEST_CASE("grid target extraction reads single peaks exactly") {
  const GridSpec spec{8, 2.0, Vec3(0.5, -1.0, 3.0)};
  VoxelGrid grid(spec, kNumJoints);
  grid.at(2, 3, 4, 0) = 0.7;
  grid.at(1, 1, 1, 1) = 0.6;
  grid.at(5, 1, 1, 1) = 0.6;
  // Channel 2: the 0.4 voxel sits below half of the 1.0 peak and is ignored.
  grid.at(4, 4, 4, 2) = 1.0;
  grid.at(4, 4, 5, 2) = 0.6;
  grid.at(4, 4, 6, 2) = 0.4;
  grid.at(0, 0, 0, 3) = 1.8;

  const JointTargets t = soft_argmax_targets(grid, kNumJoints);

  CHECK((Vec3(t.positions.row(0).transpose()) - spec.voxel_center(2, 3, 4)).norm() <= 1e-15);
  CHECK(t.confidence[0] == 0.7);

  const Vec3 mid = 0.5 * (spec.voxel_center(1, 1, 1) + spec.voxel_center(5, 1, 1));
  CHECK((Vec3(t.positions.row(1).transpose()) - mid).norm() <= 1e-12);
  CHECK(t.confidence[1] == 0.6);

  const Vec3 weighted =
      (1.0 * spec.voxel_center(4, 4, 4) + 0.6 * spec.voxel_center(4, 4, 5)) / 1.6;
  CHECK((Vec3(t.positions.row(2).transpose()) - weighted).norm() <= 1e-12);
  CHECK(t.confidence[2] == 1.0);

  CHECK(t.confidence[3] == 1.0);  // capped

  CHECK(t.confidence[4] == 0.0);
  CHECK((Vec3(t.positions.row(4).transpose()) - spec.center).norm() <= 1e-15);

  CHECK_THROWS_AS(soft_argmax_targets(VoxelGrid(spec, 3), kNumJoints), ConfigError);
}

TEST_CASE("windowed target extraction searches only the ball around the prior") {
  const GridSpec spec{8, 2.0, Vec3::Zero()};
  VoxelGrid grid(spec, 2);
  // Channel 0: a bright voxel far away and a dim one next to the prior. The
  // dim value is below half the bright one, so a window seeing both keeps
  // only the bright voxel in its centroid.
  grid.at(6, 6, 6, 0) = 0.9;
  grid.at(3, 2, 2, 0) = 0.4;
  // Channel 1: nothing anywhere near the prior.
  grid.at(7, 7, 7, 1) = 1.0;

  Points3 prev(2, 3);
  prev.row(0) = spec.voxel_center(2, 2, 2).transpose();
  prev.row(1) = spec.voxel_center(1, 1, 1).transpose();

  // Radius of exactly one voxel edge: the (3,2,2) neighbor sits precisely on
  // the boundary and is included.
  const JointTargets t = windowed_targets(grid, prev, spec.voxel_size());
  CHECK((Vec3(t.positions.row(0).transpose()) - spec.voxel_center(3, 2, 2)).norm() <= 1e-15);
  CHECK(t.confidence[0] == 0.4);
  CHECK((Vec3(t.positions.row(1).transpose()) - Vec3(prev.row(1).transpose())).norm() <= 1e-15);
  CHECK(t.confidence[1] == 0.0);

  // A wide window sees the bright voxel instead.
  const JointTargets wide = windowed_targets(grid, prev, 10.0);
  CHECK((Vec3(wide.positions.row(0).transpose()) - spec.voxel_center(6, 6, 6)).norm() <= 1e-15);
  CHECK(wide.confidence[0] == 0.9);

  CHECK_THROWS_AS(windowed_targets(grid, prev, 0.0), ConfigError);
  CHECK_THROWS_AS(windowed_targets(grid, Points3::Zero(3, 3), 1.0), ConfigError);
}

TEST_CASE("clean multi-view evidence localizes joints on the grid") {
  // Four clean views fused by plain averaging, grid centered at the true
  // pelvis. Extremity blobs smear along the viewing cones, so the frozen
  // bounds are: every joint within 4 voxel edges, most within 1.
  const BodyTemplate tmpl = make_template(TemplateConfig{});
  const TrainingSample s = clean_sample(tmpl, 501);
  const SolverConfig cfg = grid16(true);
  const GridSpec grid{cfg.grid_g, cfg.cube_edge, s.world_from_human.translation};

  std::vector<VoxelGrid> feats;
  for (int n = 0; n < 4; ++n) {
    const ViewObservation& obs = s.observations[static_cast<size_t>(n)];
    MapStack wide = gaussian_blur(obs.heatmaps, cfg.target_blur_sigma);
    const double s2 = cfg.heatmap_sigma * cfg.heatmap_sigma;
    const double b2 = cfg.target_blur_sigma * cfg.target_blur_sigma;
    for (double& v : wide.data) v *= (s2 + b2) / s2;
    const ProjectionChain chain{s.rig.world_to_cam[static_cast<size_t>(n)],
                                s.rig.intrinsics[static_cast<size_t>(n)], obs.crop, Vec2::Ones()};
    feats.push_back(unproject(wide, chain, grid));
  }
  const JointTargets t = soft_argmax_targets(masked_fusion(feats, nullptr), kNumJoints);

  const double vox = grid.voxel_size();
  int within_one = 0;
  for (int j = 0; j < kNumJoints; ++j) {
    REQUIRE(t.confidence[j] > 0.0);
    const Vec3 gt_w = s.world_from_human.apply(Vec3(s.gt_joints.row(j).transpose()));
    const double d = (Vec3(t.positions.row(j).transpose()) - gt_w).norm();
    CHECK(d <= 4.0 * vox);
    within_one += d <= vox;
  }
  CHECK(within_one >= 12);
}

TEST_CASE("objective is zero at an exact solution") {
  const BodyTemplate tmpl = make_template(TemplateConfig{});
  Rng rng(73);
  for (int t = 0; t < 10; ++t) {
    BodyParams params = random_params(rng);
    params.beta.setZero();  // the shape prior anchors at the mean shape
    const PosedBody body = [&] {
      BodyParams zeroed = params;
      zeroed.theta_g.setZero();
      return forward(tmpl, zeroed);
    }();

    JointTargets targets = targets_at(body.joints);
    targets.confidence[4] = 0.5;
    targets.confidence[9] = 0.0;

    const Mat3 rot = random_rotation(rng);
    OrthoCam cam;
    cam.scale = rng.uniform(40.0, 120.0);
    cam.translation = Vec2(rng.uniform(10, 50), rng.uniform(10, 50));
    std::vector<ViewFitData> views;
    views.push_back(consistent_view(body.joints, rot, cam));
    // A second view full of garbage pixels contributes nothing when gated off.
    ViewFitData off = views[0];
    off.joints_px.setConstant(1e6);
    off.usable.assign(kNumJoints, 0);
    views.push_back(off);

    const ObjectiveEval eval =
        stage_objective(tmpl, params, targets, views, params, SolverWeights{});
    CHECK(eval.value <= 1e-18);
    CHECK(eval.gradient.lpNorm<Eigen::Infinity>() <= 1e-9);
  }
}

TEST_CASE("objective terms scale exactly") {
  const BodyTemplate tmpl = make_template(TemplateConfig{});
  Rng rng(74);
  BodyParams params = random_params(rng);
  params.beta.setZero();
  BodyParams zeroed = params;
  zeroed.theta_g.setZero();
  const PosedBody body = forward(tmpl, zeroed);
  const std::vector<ViewFitData> no_views;

  SUBCASE("3d term carries the confidence and the weight linearly") {
    SolverWeights w{1.0, 0.0, 0.0, 0.0, 0.0};
    JointTargets targets = targets_at(body.joints, 0.0);
    targets.confidence[6] = 0.25;
    const Vec3 d(0.1, 0.0, -0.2);
    targets.positions.row(6) += d.transpose();

    const double v1 = stage_objective(tmpl, params, targets, no_views, params, w).value;
    CHECK(std::abs(v1 - 0.25 * d.squaredNorm()) <= 1e-15);

    w.joints3d = 2.0;
    const double v2 = stage_objective(tmpl, params, targets, no_views, params, w).value;
    CHECK(std::abs(v2 - 2.0 * v1) <= 1e-12 * v2);
  }

  SUBCASE("2d term measures pixel offsets in meters through the scale") {
    SolverWeights w{0.0, 0.1, 0.0, 0.0, 0.0};
    const Mat3 rot = random_rotation(rng);
    OrthoCam cam;
    cam.scale = 64.0;
    cam.translation = Vec2(32.0, 32.0);
    ViewFitData view = consistent_view(body.joints, rot, cam);
    const Vec2 px_shift(3.0, -2.0);
    view.joints_px.row(5) += px_shift.transpose();

    const JointTargets none = targets_at(body.joints, 0.0);
    const double v =
        stage_objective(tmpl, params, none, {view}, params, w).value;
    CHECK(std::abs(v - 0.1 * px_shift.squaredNorm() / (64.0 * 64.0)) <= 1e-15);
  }

  SUBCASE("pose prior is the rotation-matrix distance to the previous stage") {
    SolverWeights w{0.0, 0.0, 0.1, 0.0, 0.0};
    const BodyParams prev = random_params(rng);
    double want = 0.0;
    for (int k = 0; k < kNumJoints - 1; ++k)
      want += (axis_angle_to_matrix(Vec3(params.theta_j.row(k).transpose())) -
               axis_angle_to_matrix(Vec3(prev.theta_j.row(k).transpose())))
                  .squaredNorm();
    const JointTargets none = targets_at(body.joints, 0.0);
    const double v = stage_objective(tmpl, params, none, no_views, prev, w).value;
    CHECK(std::abs(v - 0.1 * want) <= 1e-12 * std::max(1.0, v));
  }

  SUBCASE("shape prior is the squared beta magnitude") {
    SolverWeights w{0.0, 0.0, 0.0, 0.1, 0.0};
    BodyParams shaped = params;
    for (int s = 0; s < kNumShapes; ++s) shaped.beta[s] = 0.2 * (s - 4);
    const JointTargets none = targets_at(body.joints, 0.0);
    const double v = stage_objective(tmpl, shaped, none, no_views, shaped, w).value;
    CHECK(std::abs(v - 0.1 * shaped.beta.squaredNorm()) <= 1e-15);
  }

  SUBCASE("vertex term measures the supervised offset") {
    SolverWeights w{0.0, 0.0, 0.0, 0.0, 1.0};
    Points3 gt = body.vertices;
    const Vec3 d(0.01, 0.02, -0.03);
    gt.row(10) -= d.transpose();
    const JointTargets none = targets_at(body.joints, 0.0);
    const double v = stage_objective(tmpl, params, none, no_views, params, w, &gt).value;
    CHECK(std::abs(v - d.squaredNorm()) <= 1e-12);
  }
}

TEST_CASE("objective gradient matches finite differences") {
  const BodyTemplate tmpl = make_template(TemplateConfig{});
  Rng rng(75);
  const double step = 1e-6;

  for (int t = 0; t < 20; ++t) {
    const BodyParams params = random_params(rng);
    const BodyParams prev = random_params(rng);
    BodyParams zeroed = params;
    zeroed.theta_g.setZero();
    const PosedBody body = forward(tmpl, zeroed);

    JointTargets targets = targets_at(body.joints);
    for (int j = 0; j < kNumJoints; ++j) {
      targets.confidence[j] = (j % 4 == 0) ? 0.0 : rng.uniform(0.1, 1.0);
      targets.positions.row(j) +=
          Vec3(rng.normal(), rng.normal(), rng.normal()).transpose() * 0.1;
    }

    std::vector<ViewFitData> views;
    for (int n = 0; n < 2; ++n) {
      ViewFitData v;
      v.rot_h_to_cam = random_rotation(rng);
      v.ortho.scale = rng.uniform(40.0, 120.0);
      v.ortho.translation = Vec2(rng.uniform(0, 64), rng.uniform(0, 64));
      v.joints_px = Points2::Zero(kNumJoints, 2);
      v.usable.assign(kNumJoints, 0);
      for (int j = 0; j < kNumJoints; ++j) {
        v.joints_px.row(j) = Vec2(rng.uniform(0, 64), rng.uniform(0, 64)).transpose();
        v.usable[static_cast<size_t>(j)] = rng.uniform() < 0.7;
      }
      views.push_back(v);
    }

    Points3 gt_vertices = body.vertices;
    for (Eigen::Index i = 0; i < gt_vertices.rows(); ++i)
      gt_vertices.row(i) += 0.02 * Vec3(rng.normal(), rng.normal(), rng.normal()).transpose();
    const Points3* gt = (t % 2 == 0) ? &gt_vertices : nullptr;

    const ObjectiveEval eval =
        stage_objective(tmpl, params, targets, views, prev, SolverWeights{}, gt);
    REQUIRE(eval.gradient.size() == kPoseShapeDim);

    const double scale = std::max(1.0, eval.gradient.lpNorm<Eigen::Infinity>());
    for (int d = 0; d < kPoseShapeDim; ++d) {
      auto nudged = [&](double eps) {
        BodyParams p = params;
        if (d < kThetaJDim)
          p.theta_j(d / 3, d % 3) += eps;
        else
          p.beta[d - kThetaJDim] += eps;
        return stage_objective(tmpl, p, targets, views, prev, SolverWeights{}, gt).value;
      };
      const double fd = (nudged(step) - nudged(-step)) / (2.0 * step);
      CHECK(std::abs(fd - eval.gradient[d]) <= 1e-4 * scale);
    }
  }
}

TEST_CASE("stage descent walks downhill and stops at stationary points") {
  const BodyTemplate tmpl = make_template(TemplateConfig{});
  Rng rng(76);
  const SolverConfig cfg = grid16(true);

  SUBCASE("descending from rest toward a posed target") {
    BodyParams gt = random_params(rng, 0.5);
    gt.beta.setZero();
    gt.theta_g.setZero();
    const JointTargets targets = targets_at(forward(tmpl, gt).joints);
    const BodyParams rest;

    StageRecord record;
    record.tag = "test";
    const BodyParams out = run_stage(tmpl, rest, targets, {}, rest, cfg, record);

    const auto& h = record.objective_history;
    REQUIRE(h.size() >= 2);
    const double start_obj =
        stage_objective(tmpl, rest, targets, {}, rest, cfg.weights).value;
    CHECK(std::abs(h.front() - start_obj) <= 1e-12 * std::max(1.0, start_obj));
    for (size_t i = 1; i < h.size(); ++i) CHECK(h[i] < h[i - 1]);
    CHECK(record.iterations == static_cast<int>(h.size()) - 1);

    const double err_rest = (forward(tmpl, rest).joints - targets.positions).norm();
    const double err_out = (forward(tmpl, out).joints - targets.positions).norm();
    CHECK(err_out < err_rest);
  }

  SUBCASE("a stationary start converges immediately") {
    BodyParams gt = random_params(rng, 0.5);
    gt.beta.setZero();
    gt.theta_g.setZero();
    const JointTargets targets = targets_at(forward(tmpl, gt).joints);

    StageRecord record;
    const BodyParams out = run_stage(tmpl, gt, targets, {}, gt, cfg, record);
    CHECK(record.converged);
    CHECK(record.iterations <= 2);
    CHECK(record.objective_history.front() <= 1e-18);
    CHECK((out.theta_j - gt.theta_j).cwiseAbs().maxCoeff() < 1e-4);
    CHECK((out.beta - gt.beta).cwiseAbs().maxCoeff() < 1e-4);
  }

  SUBCASE("non-finite evidence aborts") {
    JointTargets bad = targets_at(Points3::Zero(kNumJoints, 3));
    bad.positions(3, 1) = std::numeric_limits<double>::quiet_NaN();
    StageRecord record;
    CHECK_THROWS_AS(run_stage(tmpl, BodyParams{}, bad, {}, BodyParams{}, cfg, record),
                    NonFiniteObjective);
  }
}

TEST_CASE("solver configuration gate rejects invalid settings") {
  const SolverConfig good = grid16(true);
  CHECK_NOTHROW(good.validate());

  auto broken = [&](auto mutate) {
    SolverConfig c = good;
    mutate(c);
    return c;
  };
  CHECK_THROWS_AS(broken([](SolverConfig& c) { c.grid_g = 1; }).validate(), ConfigError);
  CHECK_THROWS_AS(broken([](SolverConfig& c) { c.calib_grid_g = 0; }).validate(), ConfigError);
  CHECK_THROWS_AS(broken([](SolverConfig& c) { c.cube_edge = 0.0; }).validate(), ConfigError);
  CHECK_THROWS_AS(broken([](SolverConfig& c) { c.max_iters = 0; }).validate(), ConfigError);
  CHECK_THROWS_AS(broken([](SolverConfig& c) { c.grad_tol = 0.0; }).validate(), ConfigError);
  CHECK_THROWS_AS(broken([](SolverConfig& c) { c.weights.joints2d = -0.1; }).validate(),
                  ConfigError);
  CHECK_THROWS_AS(broken([](SolverConfig& c) { c.epsilon_consistency = 0.0; }).validate(),
                  ConfigError);
  CHECK_THROWS_AS(broken([](SolverConfig& c) { c.conf_min = 1.0; }).validate(), ConfigError);
  CHECK_THROWS_AS(broken([](SolverConfig& c) { c.frame_conf_min = -0.5; }).validate(),
                  ConfigError);
  CHECK_THROWS_AS(broken([](SolverConfig& c) { c.peak_min = 1.0; }).validate(), ConfigError);
  CHECK_THROWS_AS(broken([](SolverConfig& c) { c.heatmap_sigma = 0.0; }).validate(), ConfigError);
  CHECK_THROWS_AS(broken([](SolverConfig& c) { c.target_blur_sigma = -1.0; }).validate(),
                  ConfigError);

  const BodyTemplate tmpl = make_template(TemplateConfig{});
  CHECK_THROWS_AS(fit_progressive(tmpl, {}, CameraRig{}, good), ConfigError);

  const TrainingSample s = clean_sample(tmpl, 77, 2);
  CameraRig short_rig = s.rig;
  short_rig.world_to_cam.pop_back();
  CHECK_THROWS_AS(fit_progressive(tmpl, s.observations, short_rig, good), ConfigError);
}

TEST_CASE("full fit recovers a clean four-view capture") {
  const BodyTemplate tmpl = make_template(TemplateConfig{});
  const TrainingSample s = clean_sample(tmpl, 501);
  const SolverConfig cfg = grid16(true);
  const FitResult fit = fit_progressive(tmpl, s.observations, s.rig, cfg);

  CHECK((fit.rot_w_to_h * fit.rot_w_to_h.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() <=
        1e-12);
  CHECK(std::abs(fit.rot_w_to_h.determinant() - 1.0) <= 1e-12);
  CHECK((fit.pelvis_w - cfg.calib_center).cwiseAbs().maxCoeff() <= 0.5 * cfg.cube_edge);
  REQUIRE(fit.ortho_cams.size() == 4);
  for (const OrthoCam& cam : fit.ortho_cams) CHECK(cam.scale > 0.0);

  const std::array<std::string, 3> tags = {"intersection", "union", "balanced"};
  for (int st = 0; st < 3; ++st) {
    const StageRecord& rec = fit.stages[static_cast<size_t>(st)];
    CHECK(rec.tag == tags[static_cast<size_t>(st)]);
    REQUIRE(!rec.objective_history.empty());
    for (size_t i = 1; i < rec.objective_history.size(); ++i)
      CHECK(rec.objective_history[i] < rec.objective_history[i - 1]);
    CHECK(rec.iterations == static_cast<int>(rec.objective_history.size()) - 1);
    for (int j = 0; j < kNumJoints; ++j) {
      CHECK(rec.targets.confidence[j] >= 0.0);
      CHECK(rec.targets.confidence[j] <= 1.0);
      CHECK(Vec3(rec.targets.positions.row(j).transpose()).cwiseAbs().maxCoeff() <=
            0.5 * cfg.cube_edge + 1e-12);
    }
  }

  // Joint accuracy: the first stage already lands within two voxel edges and
  // the final stage stays there.
  const double two_vox_mm = 2.0 * cfg.cube_edge / cfg.grid_g * 1000.0;
  const SampleErrors e1 = stage_errors(tmpl, fit.theta_stages[0], s);
  const SampleErrors e3 = stage_errors(tmpl, fit.theta_stages[2], s);
  CHECK(e1.mpjpe_mm <= two_vox_mm);
  CHECK(e3.mpjpe_mm <= two_vox_mm);
  CHECK(e3.pmpjpe_mm <= e3.mpjpe_mm + 1e-9);

  // Monotone refinement: the last stage never scores worse than either
  // earlier estimate on its own evidence.
  const std::vector<Extrinsics> h_to_cam =
      human_to_all_cams(s.rig.world_to_cam, fit.pelvis_w, fit.rot_w_to_h);
  std::vector<ViewFitData> views(4);
  for (int n = 0; n < 4; ++n) {
    const ViewObservation& obs = s.observations[static_cast<size_t>(n)];
    ViewFitData& v = views[static_cast<size_t>(n)];
    v.rot_h_to_cam = h_to_cam[static_cast<size_t>(n)].rotation;
    v.ortho = fit.ortho_cams[static_cast<size_t>(n)];
    v.joints_px = Points2::Zero(kNumJoints, 2);
    v.usable.assign(kNumJoints, 0);
    for (int j = 0; j < kNumJoints; ++j) {
      const PeakInfo peak = channel_peak(obs.heatmaps, j);
      v.joints_px.row(j) = peak.position.transpose();
      v.usable[static_cast<size_t>(j)] =
          obs.joint_visibility[static_cast<size_t>(j)] && peak.value > cfg.peak_min;
    }
  }
  const JointTargets& t3 = fit.stages[2].targets;
  const BodyParams& prev = fit.theta_stages[1];
  const double obj3 =
      stage_objective(tmpl, fit.theta_stages[2], t3, views, prev, cfg.weights).value;
  const double obj_from_2 =
      stage_objective(tmpl, fit.theta_stages[1], t3, views, prev, cfg.weights).value;
  const double obj_from_1 =
      stage_objective(tmpl, fit.theta_stages[0], t3, views, prev, cfg.weights).value;
  const double last = fit.stages[2].objective_history.back();
  CHECK(std::abs(obj3 - last) <= 1e-9 * std::max(1.0, last));
  CHECK(obj3 <= obj_from_2 + 1e-12);
  CHECK(obj3 <= obj_from_1 + 1e-12);
  const double start3 = fit.stages[2].objective_history.front();
  CHECK(std::abs(start3 - std::min(obj_from_2, obj_from_1)) <=
        1e-9 * std::max(1.0, start3));

  // The naive plan runs the same machinery without masking.
  const FitResult plain = fit_progressive(tmpl, s.observations, s.rig, grid16(false));
  for (const StageRecord& rec : plain.stages) CHECK(rec.tag == "mean");
  CHECK(stage_errors(tmpl, plain.theta_stages[2], s).mpjpe_mm <= two_vox_mm);
}

TEST_CASE("one view fits in both modes with shared calibration") {
  const BodyTemplate tmpl = make_template(TemplateConfig{});
  const TrainingSample s = clean_sample(tmpl, 500, 1);

  const FitResult prog = fit_progressive(tmpl, s.observations, s.rig, grid16(true));
  const FitResult naive = fit_progressive(tmpl, s.observations, s.rig, grid16(false));

  // Calibration precedes the stage plans and is identical in both modes.
  CHECK((prog.pelvis_w - naive.pelvis_w).cwiseAbs().maxCoeff() == 0.0);
  CHECK((prog.rot_w_to_h - naive.rot_w_to_h).cwiseAbs().maxCoeff() == 0.0);

  // A single view still has enough signal to place the body; the masked and
  // unmasked plans differ only at silhouette-boundary voxels.
  CHECK(stage_errors(tmpl, prog.theta_stages[2], s).pmpjpe_mm <= 375.0);
  CHECK(stage_errors(tmpl, naive.theta_stages[2], s).pmpjpe_mm <= 375.0);
  for (const FitResult* fit : {&prog, &naive})
    for (const StageRecord& rec : fit->stages)
      for (size_t i = 1; i < rec.objective_history.size(); ++i)
        CHECK(rec.objective_history[i] < rec.objective_history[i - 1]);
}

TEST_CASE("rigid motion of the capture moves the result with it") {
  const BodyTemplate tmpl = make_template(TemplateConfig{});
  const TrainingSample s = clean_sample(tmpl, 501);
  const SolverConfig cfg = grid16(true);
  const FitResult base = fit_progressive(tmpl, s.observations, s.rig, cfg);
  const double base_err = stage_errors(tmpl, base.theta_stages[2], s).pmpjpe_mm;

  Mat3 r90;
  r90 << 0, 0, 1, 0, 1, 0, -1, 0, 0;  // quarter turn about y, lattice-preserving
  const Vec3 t(0.4, -0.2, 0.3);

  // Move the scene by p -> r90 p + t; the cameras follow, so each view's
  // world_to_cam becomes the old one composed with the inverse motion.
  CameraRig moved_rig = s.rig;
  for (size_t n = 0; n < moved_rig.world_to_cam.size(); ++n) {
    const Mat3 r = s.rig.world_to_cam[n].rotation;
    moved_rig.world_to_cam[n].rotation = r * r90.transpose();
    moved_rig.world_to_cam[n].translation =
        s.rig.world_to_cam[n].translation - (r * r90.transpose()) * t;
  }
  SolverConfig moved_cfg = cfg;
  moved_cfg.calib_center = r90 * cfg.calib_center + t;

  const FitResult moved = fit_progressive(tmpl, s.observations, moved_rig, moved_cfg);
  const double moved_err = stage_errors(tmpl, moved.theta_stages[2], s).pmpjpe_mm;

  CHECK(std::abs(moved_err - base_err) <= 1e-6);
  CHECK((moved.pelvis_w - (r90 * base.pelvis_w + t)).cwiseAbs().maxCoeff() <= 1e-9);
  CHECK((moved.rot_w_to_h - base.rot_w_to_h * r90.transpose()).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("erasing one view's mask hurts the naive plan more") {
  const BodyTemplate tmpl = make_template(TemplateConfig{});
  const int trials = 50;
  std::vector<double> err_prog(trials, 0.0), err_naive(trials, 0.0);
  std::vector<int> done(trials, 0);
  std::atomic<int> next{0};

  auto worker = [&]() {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= trials) return;
      SynthConfig sc;
      Rng rng(sample_seed(502, static_cast<std::uint64_t>(i)));
      TrainingSample s = generate_sample(tmpl, sc, rng);
      ViewObservation& obs = s.observations[static_cast<size_t>(i % sc.n_views)];
      std::fill(obs.mask.data.begin(), obs.mask.data.end(), std::uint8_t{0});
      obs.occupancy = occupancy_map(obs.heatmaps, obs.mask, sc.tau_heat);

      const FitResult p = fit_progressive(tmpl, s.observations, s.rig, grid16(true));
      const FitResult n = fit_progressive(tmpl, s.observations, s.rig, grid16(false));
      err_prog[static_cast<size_t>(i)] = stage_errors(tmpl, p.theta_stages[2], s).pmpjpe_mm;
      err_naive[static_cast<size_t>(i)] = stage_errors(tmpl, n.theta_stages[2], s).pmpjpe_mm;
      done[static_cast<size_t>(i)] = 1;
    }
  };
  std::vector<std::thread> pool;
  for (int w = 0; w < 8; ++w) pool.emplace_back(worker);
  for (auto& th : pool) th.join();

  int wins = 0;
  double mean_prog = 0.0, mean_naive = 0.0;
  for (int i = 0; i < trials; ++i) {
    REQUIRE(done[static_cast<size_t>(i)] == 1);
    wins += err_prog[static_cast<size_t>(i)] < err_naive[static_cast<size_t>(i)];
    mean_prog += err_prog[static_cast<size_t>(i)];
    mean_naive += err_naive[static_cast<size_t>(i)];
  }
  CHECK(wins >= 30);  // 60 percent of trials
  CHECK(mean_prog < mean_naive);
}
