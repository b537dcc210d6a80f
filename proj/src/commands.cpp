#include "mvmesh/commands.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <sstream>
#include <thread>

#include "mvmesh/errors.hpp"
#include "mvmesh/io.hpp"
#include "mvmesh/volumetric.hpp"

namespace fs = std::filesystem;

namespace mvmesh {

namespace {

double as_num(const Json& v, const std::string& where) {
  if (!v.is_number()) throw ConfigError(where + ": expected a number");
  return v.get<double>();
}

int as_int(const Json& v, const std::string& where) {
  if (!v.is_number_integer()) throw ConfigError(where + ": expected an integer");
  return v.get<int>();
}

std::uint64_t as_u64(const Json& v, const std::string& where) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer()) {
    const std::int64_t s = v.get<std::int64_t>();
    if (s < 0) throw ConfigError(where + ": expected a non-negative integer");
    return static_cast<std::uint64_t>(s);
  }
  throw ConfigError(where + ": expected a non-negative integer");
}

std::string as_str(const Json& v, const std::string& where) {
  if (!v.is_string()) throw ConfigError(where + ": expected a string");
  return v.get<std::string>();
}

std::vector<double> as_num_list(const Json& v, const std::string& where) {
  if (!v.is_array()) throw ConfigError(where + ": expected an array of numbers");
  std::vector<double> out;
  for (size_t i = 0; i < v.size(); ++i) out.push_back(as_num(v[i], where));
  return out;
}

std::vector<int> as_int_list(const Json& v, const std::string& where) {
  if (!v.is_array()) throw ConfigError(where + ": expected an array of integers");
  std::vector<int> out;
  for (size_t i = 0; i < v.size(); ++i) out.push_back(as_int(v[i], where));
  return out;
}

Vec2 as_vec2(const Json& v, const std::string& where) {
  const std::vector<double> n = as_num_list(v, where);
  if (n.size() != 2) throw ConfigError(where + ": expected 2 numbers");
  return Vec2(n[0], n[1]);
}

Vec3 as_vec3(const Json& v, const std::string& where) {
  const std::vector<double> n = as_num_list(v, where);
  if (n.size() != 3) throw ConfigError(where + ": expected 3 numbers");
  return Vec3(n[0], n[1], n[2]);
}

VecX as_vecx(const Json& v, Eigen::Index expected, const std::string& where) {
  const std::vector<double> n = as_num_list(v, where);
  if (static_cast<Eigen::Index>(n.size()) != expected)
    throw ConfigError(where + ": expected " + std::to_string(expected) + " numbers");
  VecX out(expected);
  for (Eigen::Index i = 0; i < expected; ++i) out[i] = n[i];
  return out;
}

Json vecx_to_json(const VecX& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Json vec3_to_json(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }
Json vec2_to_json(const Vec2& v) { return Json::array({v.x(), v.y()}); }

const char* mask_name(MaskKind m) {
  switch (m) {
    case MaskKind::kIntersection: return "intersection";
    case MaskKind::kUnion: return "union";
    default: return "none";
  }
}

const char* fusion_name(FusionKind f) {
  return f == FusionKind::kBalanced ? "balanced" : "average";
}

MaskKind parse_mask_kind(const std::string& s, const std::string& where) {
  if (s == "none") return MaskKind::kNone;
  if (s == "intersection") return MaskKind::kIntersection;
  if (s == "union") return MaskKind::kUnion;
  throw ConfigError(where + ": unknown mask kind '" + s + "'");
}

FusionKind parse_fusion_kind(const std::string& s, const std::string& where) {
  if (s == "average") return FusionKind::kAverage;
  if (s == "balanced") return FusionKind::kBalanced;
  throw ConfigError(where + ": unknown fusion kind '" + s + "'");
}

StagePlan parse_stage_plan(const Json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  StagePlan plan;
  for (const auto& [key, val] : j.items()) {
    if (key == "mask")
      plan.mask = parse_mask_kind(as_str(val, where + ".mask"), where + ".mask");
    else if (key == "fusion")
      plan.fusion = parse_fusion_kind(as_str(val, where + ".fusion"), where + ".fusion");
    else
      throw ConfigError(where + ": unknown key '" + key + "'");
  }
  return plan;
}

void parse_body(const Json& j, TemplateConfig& out) {
  if (!j.is_object()) throw ConfigError("body: expected an object");
  for (const auto& [key, val] : j.items()) {
    if (key == "ring_segments")
      out.ring_segments = as_int(val, "body.ring_segments");
    else if (key == "seed")
      out.seed = as_u64(val, "body.seed");
    else if (key == "parents")
      out.parents = as_int_list(val, "body.parents");
    else
      throw ConfigError("body: unknown key '" + key + "'");
  }
}

void parse_synth(const Json& j, SynthConfig& out) {
  if (!j.is_object()) throw ConfigError("synth: expected an object");
  for (const auto& [key, val] : j.items()) {
    if (key == "n_views")
      out.n_views = as_int(val, "synth.n_views");
    else if (key == "rig") {
      const std::string s = as_str(val, "synth.rig");
      if (s == "ring")
        out.rig = RigTemplateKind::kRing;
      else if (s == "hemisphere")
        out.rig = RigTemplateKind::kHemisphere;
      else
        throw ConfigError("synth.rig: unknown layout '" + s + "'");
    } else if (key == "shape_mu")
      out.shape_mu = as_vecx(val, kNumShapes, "synth.shape_mu");
    else if (key == "shape_sigma2")
      out.shape_sigma2 = as_vecx(val, kNumShapes, "synth.shape_sigma2");
    else if (key == "cam_trans_mu")
      out.cam_trans_mu = as_vec3(val, "synth.cam_trans_mu");
    else if (key == "cam_trans_sigma2")
      out.cam_trans_sigma2 = as_vec3(val, "synth.cam_trans_sigma2");
    else if (key == "focal")
      out.focal = as_vec2(val, "synth.focal");
    else if (key == "render_size")
      out.render_size = as_int(val, "synth.render_size");
    else if (key == "target_size")
      out.target_size = as_int(val, "synth.target_size");
    else if (key == "bbox_scale_range")
      out.bbox_scale_range = as_vec2(val, "synth.bbox_scale_range");
    else if (key == "heatmap_sigma")
      out.heatmap_sigma = as_num(val, "synth.heatmap_sigma");
    else if (key == "tau_heat")
      out.tau_heat = as_num(val, "synth.tau_heat");
    else if (key == "vertex_perturb_sigma2")
      out.vertex_perturb_sigma2 = as_vec3(val, "synth.vertex_perturb_sigma2");
    else if (key == "part_occlusion_prob") {
      const std::vector<double> probs = as_num_list(val, "synth.part_occlusion_prob");
      if (probs.size() != kNumParts)
        throw ConfigError("synth.part_occlusion_prob: expected " + std::to_string(kNumParts) +
                          " numbers");
      std::copy(probs.begin(), probs.end(), out.part_occlusion_prob.begin());
    } else if (key == "box_occlusion_prob")
      out.box_occlusion_prob = as_num(val, "synth.box_occlusion_prob");
    else if (key == "box_occlusion_size")
      out.box_occlusion_size = as_int(val, "synth.box_occlusion_size");
    else if (key == "joint_jitter_sigma2")
      out.joint_jitter_sigma2 = as_num(val, "synth.joint_jitter_sigma2");
    else if (key == "joint_drop_indices")
      out.joint_drop_indices = as_int_list(val, "synth.joint_drop_indices");
    else if (key == "joint_drop_prob")
      out.joint_drop_prob = as_num(val, "synth.joint_drop_prob");
    else if (key == "pelvis_range")
      out.pelvis_range = as_num(val, "synth.pelvis_range");
    else if (key == "pose_bank") {
      if (!val.is_array()) throw ConfigError("synth.pose_bank: expected an array");
      out.pose_bank.clear();
      for (size_t p = 0; p < val.size(); ++p) {
        const std::string where = "synth.pose_bank[" + std::to_string(p) + "]";
        const Json& entry = val[p];
        if (!entry.is_array() || entry.size() != kNumJoints - 1)
          throw ConfigError(where + ": expected " + std::to_string(kNumJoints - 1) + " rows");
        MatX pose(kNumJoints - 1, 3);
        for (size_t r = 0; r < entry.size(); ++r) {
          const Vec3 row = as_vec3(entry[r], where);
          pose.row(static_cast<Eigen::Index>(r)) = row.transpose();
        }
        out.pose_bank.push_back(pose);
      }
    } else
      throw ConfigError("synth: unknown key '" + key + "'");
  }
}

void parse_weights(const Json& j, SolverWeights& out) {
  if (!j.is_object()) throw ConfigError("solver.weights: expected an object");
  for (const auto& [key, val] : j.items()) {
    if (key == "joints3d")
      out.joints3d = as_num(val, "solver.weights.joints3d");
    else if (key == "joints2d")
      out.joints2d = as_num(val, "solver.weights.joints2d");
    else if (key == "theta_prior")
      out.theta_prior = as_num(val, "solver.weights.theta_prior");
    else if (key == "beta_prior")
      out.beta_prior = as_num(val, "solver.weights.beta_prior");
    else if (key == "vertices")
      out.vertices = as_num(val, "solver.weights.vertices");
    else
      throw ConfigError("solver.weights: unknown key '" + key + "'");
  }
}

// Returns true when the config carried an explicit stage list.
bool parse_solver(const Json& j, SolverConfig& out) {
  if (!j.is_object()) throw ConfigError("solver: expected an object");
  bool saw_stages = false;
  for (const auto& [key, val] : j.items()) {
    if (key == "stages") {
      if (!val.is_array() || val.size() != 3)
        throw ConfigError("solver.stages: expected exactly 3 entries");
      for (size_t s = 0; s < 3; ++s)
        out.stages[s] = parse_stage_plan(val[s], "solver.stages[" + std::to_string(s) + "]");
      saw_stages = true;
    } else if (key == "grid_g")
      out.grid_g = as_int(val, "solver.grid_g");
    else if (key == "cube_edge")
      out.cube_edge = as_num(val, "solver.cube_edge");
    else if (key == "calib_grid_g")
      out.calib_grid_g = as_int(val, "solver.calib_grid_g");
    else if (key == "calib_center")
      out.calib_center = as_vec3(val, "solver.calib_center");
    else if (key == "max_iters")
      out.max_iters = as_int(val, "solver.max_iters");
    else if (key == "grad_tol")
      out.grad_tol = as_num(val, "solver.grad_tol");
    else if (key == "weights")
      parse_weights(val, out.weights);
    else if (key == "epsilon_consistency")
      out.epsilon_consistency = as_num(val, "solver.epsilon_consistency");
    else if (key == "conf_min")
      out.conf_min = as_num(val, "solver.conf_min");
    else if (key == "frame_conf_min")
      out.frame_conf_min = as_num(val, "solver.frame_conf_min");
    else if (key == "peak_min")
      out.peak_min = as_num(val, "solver.peak_min");
    else if (key == "heatmap_sigma")
      out.heatmap_sigma = as_num(val, "solver.heatmap_sigma");
    else if (key == "tau_heat")
      out.tau_heat = as_num(val, "solver.tau_heat");
    else if (key == "target_blur_sigma")
      out.target_blur_sigma = as_num(val, "solver.target_blur_sigma");
    else if (key == "target_window_vox")
      out.target_window_vox = as_num(val, "solver.target_window_vox");
    else
      throw ConfigError("solver: unknown key '" + key + "'");
  }
  return saw_stages;
}

void parse_sweep(const Json& j, SweepConfig& out) {
  if (!j.is_object()) throw ConfigError("sweep: expected an object");
  for (const auto& [key, val] : j.items()) {
    if (key == "target")
      out.target = as_str(val, "sweep.target");
    else if (key == "probabilities")
      out.probabilities = as_num_list(val, "sweep.probabilities");
    else if (key == "samples_per_point")
      out.samples_per_point = as_int(val, "sweep.samples_per_point");
    else
      throw ConfigError("sweep: unknown key '" + key + "'");
  }
}

std::string fit_file_name(int index) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "sample_%04d.fit.json", index);
  return buf;
}

std::string mesh_file_name(int index) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "sample_%04d.obj", index);
  return buf;
}

std::string grid_file_name(int index) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "sample_%04d.calib.mvg", index);
  return buf;
}

void parallel_for(int count, int workers, const std::function<void(int)>& fn) {
  workers = std::max(1, std::min(workers, count));
  if (workers <= 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < count; i = next.fetch_add(1)) fn(i);
    });
  for (std::thread& t : pool) t.join();
}

// Sample population shared by the sweep and the variant matrix: clean
// generations from the run seed, one child seed per index, no augmentation.
std::vector<TrainingSample> regenerate_clean(const BodyTemplate& tmpl, const RunConfig& cfg,
                                             int count, int workers) {
  std::vector<TrainingSample> samples(count);
  parallel_for(count, workers, [&](int i) {
    Rng rng(sample_seed(cfg.seed, static_cast<std::uint64_t>(i)));
    samples[i] = generate_sample(tmpl, cfg.synth, rng);
    samples[i].seed = sample_seed(cfg.seed, static_cast<std::uint64_t>(i));
  });
  return samples;
}

// Final-stage prediction mapped back to world through the estimated frame,
// scored against world-frame ground truth.
SampleErrors fit_errors(const BodyTemplate& tmpl, const TrainingSample& sample,
                        const FitResult& fit) {
  const PosedBody pred = forward(tmpl, fit.theta_stages[2]);
  const Points3 pred_joints =
      (pred.joints * fit.rot_w_to_h).rowwise() + fit.pelvis_w.transpose();
  const Points3 pred_vertices =
      (pred.vertices * fit.rot_w_to_h).rowwise() + fit.pelvis_w.transpose();
  const Points3 gt_joints = sample.world_from_human.apply(sample.gt_joints);
  const Points3 gt_vertices = sample.world_from_human.apply(sample.gt_vertices);
  return sample_errors(pred_joints, pred_vertices, gt_joints, gt_vertices);
}

void erase_region(ViewObservation& obs, int y0, int y1, int x0, int x1) {
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) {
      obs.mask.at(y, x) = 0;
      for (int c = 0; c < obs.heatmaps.channels; ++c) obs.heatmaps.at(c, y, x) = 0.0;
    }
}

std::vector<double> average_ranks(const std::vector<double>& values) {
  const int n = static_cast<int>(values.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return values[a] < values[b]; });
  std::vector<double> ranks(n, 0.0);
  int i = 0;
  while (i < n) {
    int j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double avg = 0.5 * (i + j) + 1.0;
    for (int k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

void SweepConfig::validate() const {
  if (target != "mask" && target != "joints")
    throw ConfigError("sweep.target must be 'mask' or 'joints', got '" + target + "'");
  if (probabilities.empty()) throw ConfigError("sweep.probabilities must be non-empty");
  for (double p : probabilities)
    if (!(p >= 0.0 && p <= 1.0))
      throw ConfigError("sweep.probabilities entries must lie in [0, 1]");
  if (samples_per_point < 1) throw ConfigError("sweep.samples_per_point must be >= 1");
}

void RunConfig::validate() const {
  if (n_samples < 0) throw ConfigError("n_samples must be >= 0");
  stages_for_mode(mode);
  body.validate();
  synth.validate();
  solver.validate();
  sweep.validate();
}

std::array<StagePlan, 3> stages_for_mode(const std::string& mode) {
  if (mode == "progressive") return SolverConfig::progressive().stages;
  if (mode == "naive") return SolverConfig::naive().stages;
  throw ConfigError("mode must be 'progressive' or 'naive', got '" + mode + "'");
}

RunConfig parse_run_config(const Json& j) {
  if (!j.is_object()) throw ConfigError("config root: expected an object");
  RunConfig cfg;
  bool saw_stages = false;
  for (const auto& [key, val] : j.items()) {
    if (key == "seed")
      cfg.seed = as_u64(val, "seed");
    else if (key == "n_samples")
      cfg.n_samples = as_int(val, "n_samples");
    else if (key == "mode")
      cfg.mode = as_str(val, "mode");
    else if (key == "body")
      parse_body(val, cfg.body);
    else if (key == "synth")
      parse_synth(val, cfg.synth);
    else if (key == "solver")
      saw_stages = parse_solver(val, cfg.solver);
    else if (key == "sweep")
      parse_sweep(val, cfg.sweep);
    else
      throw ConfigError("config root: unknown key '" + key + "'");
  }
  if (!saw_stages) cfg.solver.stages = stages_for_mode(cfg.mode);
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::string text;
  try {
    text = read_text(path);
  } catch (const DataError& e) {
    throw ConfigError(std::string("cannot read config: ") + e.what());
  }
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::exception& e) {
    throw ConfigError("cannot parse config " + path + ": " + e.what());
  }
  return parse_run_config(j);
}

Json run_config_to_json(const RunConfig& cfg) {
  Json stages = Json::array();
  for (const StagePlan& plan : cfg.solver.stages)
    stages.push_back(Json{{"mask", mask_name(plan.mask)}, {"fusion", fusion_name(plan.fusion)}});

  Json body{{"ring_segments", cfg.body.ring_segments}, {"seed", cfg.body.seed}};
  if (!cfg.body.parents.empty()) body["parents"] = cfg.body.parents;

  Json synth{{"n_views", cfg.synth.n_views},
             {"rig", cfg.synth.rig == RigTemplateKind::kHemisphere ? "hemisphere" : "ring"},
             {"shape_mu", vecx_to_json(cfg.synth.shape_mu)},
             {"shape_sigma2", vecx_to_json(cfg.synth.shape_sigma2)},
             {"cam_trans_mu", vec3_to_json(cfg.synth.cam_trans_mu)},
             {"cam_trans_sigma2", vec3_to_json(cfg.synth.cam_trans_sigma2)},
             {"focal", vec2_to_json(cfg.synth.focal)},
             {"render_size", cfg.synth.render_size},
             {"target_size", cfg.synth.target_size},
             {"bbox_scale_range", vec2_to_json(cfg.synth.bbox_scale_range)},
             {"heatmap_sigma", cfg.synth.heatmap_sigma},
             {"tau_heat", cfg.synth.tau_heat},
             {"vertex_perturb_sigma2", vec3_to_json(cfg.synth.vertex_perturb_sigma2)},
             {"part_occlusion_prob", cfg.synth.part_occlusion_prob},
             {"box_occlusion_prob", cfg.synth.box_occlusion_prob},
             {"box_occlusion_size", cfg.synth.box_occlusion_size},
             {"joint_jitter_sigma2", cfg.synth.joint_jitter_sigma2},
             {"joint_drop_indices", cfg.synth.joint_drop_indices},
             {"joint_drop_prob", cfg.synth.joint_drop_prob},
             {"pelvis_range", cfg.synth.pelvis_range}};
  if (!cfg.synth.pose_bank.empty()) {
    Json bank = Json::array();
    for (const MatX& pose : cfg.synth.pose_bank) {
      Json rows = Json::array();
      for (Eigen::Index r = 0; r < pose.rows(); ++r)
        rows.push_back(Json::array({pose(r, 0), pose(r, 1), pose(r, 2)}));
      bank.push_back(rows);
    }
    synth["pose_bank"] = bank;
  }

  Json solver{{"stages", stages},
              {"grid_g", cfg.solver.grid_g},
              {"cube_edge", cfg.solver.cube_edge},
              {"calib_grid_g", cfg.solver.calib_grid_g},
              {"calib_center", vec3_to_json(cfg.solver.calib_center)},
              {"max_iters", cfg.solver.max_iters},
              {"grad_tol", cfg.solver.grad_tol},
              {"weights", Json{{"joints3d", cfg.solver.weights.joints3d},
                               {"joints2d", cfg.solver.weights.joints2d},
                               {"theta_prior", cfg.solver.weights.theta_prior},
                               {"beta_prior", cfg.solver.weights.beta_prior},
                               {"vertices", cfg.solver.weights.vertices}}},
              {"epsilon_consistency", cfg.solver.epsilon_consistency},
              {"conf_min", cfg.solver.conf_min},
              {"frame_conf_min", cfg.solver.frame_conf_min},
              {"peak_min", cfg.solver.peak_min},
              {"heatmap_sigma", cfg.solver.heatmap_sigma},
              {"tau_heat", cfg.solver.tau_heat},
              {"target_blur_sigma", cfg.solver.target_blur_sigma},
              {"target_window_vox", cfg.solver.target_window_vox}};

  Json sweep{{"target", cfg.sweep.target},
             {"probabilities", cfg.sweep.probabilities},
             {"samples_per_point", cfg.sweep.samples_per_point}};

  return Json{{"seed", cfg.seed},   {"n_samples", cfg.n_samples}, {"mode", cfg.mode},
              {"body", body},       {"synth", synth},             {"solver", solver},
              {"sweep", sweep}};
}

TrainingSample corrupt_sample(const TrainingSample& sample, const SynthConfig& synth,
                              const std::string& target, double probability, Rng& rng) {
  TrainingSample out = sample;
  const int n_views = static_cast<int>(out.observations.size());

  if (target == "mask") {
    // Occluder semantics: an erased region removes both the silhouette and
    // every heat channel there, as a real occluder would. Draw order per
    // view: one Bernoulli per part, then the box Bernoulli, then box x/y.
    if (sample.part_masks.size() != static_cast<size_t>(n_views))
      throw DataError("mask corruption needs in-memory samples with part masks");
    for (int v = 0; v < n_views; ++v) {
      ViewObservation& obs = out.observations[v];
      const int h = obs.mask.height;
      const int w = obs.mask.width;
      for (int part = 0; part < kNumParts; ++part) {
        if (!rng.bernoulli(probability)) continue;
        const BinaryMap& region = sample.part_masks[v][part];
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) {
            if (!region.at(y, x)) continue;
            obs.mask.at(y, x) = 0;
            for (int c = 0; c < obs.heatmaps.channels; ++c) obs.heatmaps.at(c, y, x) = 0.0;
          }
      }
      if (rng.bernoulli(probability)) {
        const int box = std::min(synth.box_occlusion_size, std::min(h, w));
        const int x0 = rng.uniform_int(0, w - box);
        const int y0 = rng.uniform_int(0, h - box);
        erase_region(obs, y0, y0 + box, x0, x0 + box);
      }
      obs.occupancy = occupancy_map(obs.heatmaps, obs.mask, synth.tau_heat);
    }
    return out;
  }

  if (target == "joints") {
    // Draw order per view: one Bernoulli per joint (two normals when it
    // fires on a visible joint), then one Bernoulli per droppable joint.
    if (sample.joints_crop.size() != static_cast<size_t>(n_views))
      throw DataError("joint corruption needs in-memory samples with crop-space joints");
    const double sigma = std::sqrt(synth.joint_jitter_sigma2);
    for (int v = 0; v < n_views; ++v) {
      ViewObservation& obs = out.observations[v];
      Points2 pts = sample.joints_crop[v];
      std::vector<std::uint8_t> vis = obs.joint_visibility;
      for (int j = 0; j < kNumJoints; ++j) {
        if (!rng.bernoulli(probability) || !vis[j]) continue;
        pts(j, 0) += sigma * rng.normal();
        pts(j, 1) += sigma * rng.normal();
      }
      for (int idx : synth.joint_drop_indices)
        if (rng.bernoulli(probability)) vis[idx] = 0;
      obs.heatmaps = joint_heatmaps(pts, vis, obs.mask.height, obs.mask.width,
                                    synth.heatmap_sigma);
      obs.joint_visibility = vis;
      obs.occupancy = occupancy_map(obs.heatmaps, obs.mask, synth.tau_heat);
      out.joints_crop[v] = pts;
    }
    return out;
  }

  throw ConfigError("sweep target must be 'mask' or 'joints', got '" + target + "'");
}

int cmd_synth(const RunConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  const BodyTemplate tmpl = make_template(cfg.body);
  fs::create_directories(out_dir);

  DatasetManifest manifest;
  manifest.seed = cfg.seed;
  manifest.n_samples = cfg.n_samples;
  manifest.n_views = cfg.synth.n_views;
  manifest.config = run_config_to_json(cfg);

  auto generate_into = [&](int index, const std::string& dir) {
    Rng rng(sample_seed(cfg.seed, static_cast<std::uint64_t>(index)));
    TrainingSample sample = generate_sample(tmpl, cfg.synth, rng);
    sample = augment(sample, cfg.synth, rng);
    sample.seed = sample_seed(cfg.seed, static_cast<std::uint64_t>(index));
    fs::create_directories(dir);
    write_sample(dir, sample);
  };

  const std::string manifest_path = out_dir + "/manifest.json";
  if (fs::exists(manifest_path)) {
    const DatasetManifest existing = read_manifest(out_dir);
    if (existing.seed != manifest.seed || existing.n_samples != manifest.n_samples ||
        existing.n_views != manifest.n_views || existing.config != manifest.config)
      throw DataError("dataset at " + out_dir + " was generated from a different config");
    const std::string tmp = out_dir + "/.verify_tmp";
    for (int i = 0; i < cfg.n_samples; ++i) {
      fs::remove_all(tmp);
      generate_into(i, tmp);
      const std::uint64_t fresh = sample_input_hash(tmp, cfg.synth.n_views);
      const std::uint64_t stored =
          sample_input_hash(out_dir + "/" + sample_dir_name(i), cfg.synth.n_views);
      if (fresh != stored)
        throw DataError("dataset at " + out_dir + " differs from a fresh generation at " +
                        sample_dir_name(i));
    }
    fs::remove_all(tmp);
    std::printf("dataset %s: verified %d samples unchanged\n", out_dir.c_str(), cfg.n_samples);
    return 0;
  }

  for (int i = 0; i < cfg.n_samples; ++i) {
    generate_into(i, out_dir + "/" + sample_dir_name(i));
    std::printf("%s written\n", sample_dir_name(i).c_str());
  }
  write_manifest(out_dir, manifest);
  std::printf("dataset %s: %d samples, %d views\n", out_dir.c_str(), cfg.n_samples,
              cfg.synth.n_views);
  return 0;
}

int cmd_fit(const RunConfig& cfg, const std::string& dataset_dir, const std::string& out_dir,
            int workers, bool dump_grids) {
  const DatasetManifest manifest = read_manifest(dataset_dir);
  const RunConfig data_cfg = parse_run_config(manifest.config);
  const BodyTemplate tmpl = make_template(data_cfg.body);
  const SolverConfig& solver = cfg.solver;
  solver.validate();
  fs::create_directories(out_dir);

  struct Row {
    std::string line;
    bool failed = false;
  };
  std::vector<Row> rows(manifest.n_samples);

  parallel_for(manifest.n_samples, workers, [&](int i) {
    const std::string dir = dataset_dir + "/" + sample_dir_name(i);
    const std::string fit_path = out_dir + "/" + fit_file_name(i);
    try {
      const std::uint64_t hash = sample_input_hash(dir, manifest.n_views);
      if (fs::exists(fit_path)) {
        bool reusable = false;
        try {
          const StoredFit prior = read_fit_result(fit_path);
          reusable = prior.input_hash == hash && prior.mode == cfg.mode;
        } catch (const DataError&) {
          reusable = false;
        }
        if (reusable) {
          rows[i].line = sample_dir_name(i) + ": reused";
          return;
        }
      }
      const TrainingSample sample = read_sample(dir, manifest.n_views);
      const FitResult result = fit_progressive(tmpl, sample.observations, sample.rig, solver);
      write_fit_result(fit_path, result, hash, cfg.mode);
      const PosedBody posed = forward(tmpl, result.theta_stages[2]);
      write_obj(out_dir + "/" + mesh_file_name(i), posed.vertices, tmpl.faces);
      if (dump_grids) {
        GridSpec calib{solver.calib_grid_g, solver.cube_edge, solver.calib_center};
        std::vector<VoxelGrid> per_view;
        for (int v = 0; v < manifest.n_views; ++v) {
          const ViewObservation& obs = sample.observations[v];
          MapStack pelvis(1, obs.heatmaps.height, obs.heatmaps.width);
          std::copy(obs.heatmaps.channel(0),
                    obs.heatmaps.channel(0) + static_cast<size_t>(obs.heatmaps.height) *
                                                  obs.heatmaps.width,
                    pelvis.channel(0));
          const ProjectionChain chain{sample.rig.world_to_cam[v], sample.rig.intrinsics[v],
                                      obs.crop, Vec2::Ones()};
          per_view.push_back(unproject(pelvis, chain, calib));
        }
        save_grid(masked_fusion(per_view, nullptr), "world", out_dir + "/" + grid_file_name(i));
      }
      const StageRecord& last = result.stages[2];
      rows[i].line = sample_dir_name(i) + ": fit, " + std::to_string(last.iterations) +
                     " final-stage iterations";
    } catch (const std::exception& e) {
      rows[i].line = sample_dir_name(i) + ": FAILED (" + e.what() + ")";
      rows[i].failed = true;
    }
  });

  int failures = 0;
  Json failed = Json::array();
  for (int i = 0; i < manifest.n_samples; ++i) {
    std::printf("%s\n", rows[i].line.c_str());
    if (rows[i].failed) {
      ++failures;
      failed.push_back(i);
    }
  }
  Json fit_manifest{{"format", 1},
                    {"mode", cfg.mode},
                    {"n_samples", manifest.n_samples},
                    {"n_views", manifest.n_views},
                    {"dataset_seed", manifest.seed},
                    {"solver", run_config_to_json(cfg).at("solver")},
                    {"failed", failed}};
  write_text(out_dir + "/fit_manifest.json", fit_manifest.dump(2) + "\n");
  std::printf("fit complete: %d ok, %d failed\n", manifest.n_samples - failures, failures);
  return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& dataset_dir,
             const std::string& results_dir, const std::string& csv_path) {
  const DatasetManifest manifest = read_manifest(dataset_dir);
  const RunConfig data_cfg = parse_run_config(manifest.config);
  const BodyTemplate tmpl = make_template(data_cfg.body);

  std::string mode = cfg.mode;
  const std::string fit_manifest_path = results_dir + "/fit_manifest.json";
  if (fs::exists(fit_manifest_path)) {
    const Json fm = Json::parse(read_text(fit_manifest_path));
    mode = fm.at("mode").get<std::string>();
  }

  std::vector<Points3> pred_joints, pred_vertices, gt_joints, gt_vertices;
  for (int i = 0; i < manifest.n_samples; ++i) {
    const std::string dir = dataset_dir + "/" + sample_dir_name(i);
    const std::string fit_path = results_dir + "/" + fit_file_name(i);
    if (!fs::exists(fit_path))
      throw DataError("missing fit result for sample " + std::to_string(i) + ": " + fit_path);
    const StoredFit stored = read_fit_result(fit_path);
    if (stored.input_hash != sample_input_hash(dir, manifest.n_views))
      throw DataError("fit result for sample " + std::to_string(i) +
                      " does not match the dataset");
    const SampleTruth truth = read_sample_truth(dir);
    const PosedBody pred = forward(tmpl, stored.result.theta_stages[2]);
    pred_joints.push_back((pred.joints * stored.result.rot_w_to_h).rowwise() +
                          stored.result.pelvis_w.transpose());
    pred_vertices.push_back((pred.vertices * stored.result.rot_w_to_h).rowwise() +
                            stored.result.pelvis_w.transpose());
    gt_joints.push_back(truth.world_from_human.apply(truth.joints));
    gt_vertices.push_back(truth.world_from_human.apply(truth.vertices));
  }

  const EvalReport report = evaluate(pred_joints, pred_vertices, gt_joints, gt_vertices, mode);
  write_eval_csv(csv_path, report);
  std::printf("eval (%s): n=%d mpjpe=%.1fmm pmpjpe=%.1fmm pve=%.1fmm ppve=%.1fmm\n",
              mode.c_str(), report.count(), report.mean.mpjpe_mm, report.mean.pmpjpe_mm,
              report.mean.pve_mm, report.mean.ppve_mm);
  return 0;
}

SweepOutcome run_sweep(const RunConfig& cfg, int workers) {
  cfg.validate();
  const BodyTemplate tmpl = make_template(cfg.body);
  const int n = cfg.sweep.samples_per_point;
  const int n_points = static_cast<int>(cfg.sweep.probabilities.size());

  const std::vector<TrainingSample> base = regenerate_clean(tmpl, cfg, n, workers);

  SolverConfig prog_cfg = cfg.solver;
  prog_cfg.stages = stages_for_mode("progressive");
  SolverConfig naive_cfg = cfg.solver;
  naive_cfg.stages = stages_for_mode("naive");

  SweepOutcome outcome;
  outcome.trials.resize(static_cast<size_t>(n_points) * n);

  parallel_for(n_points * n, workers, [&](int t) {
    const int pi = t / n;
    const int i = t % n;
    SweepTrial& trial = outcome.trials[t];
    trial.point = pi;
    trial.sample = i;
    try {
      Rng rng(sample_seed(cfg.seed, 1000003ull * (pi + 1) + static_cast<std::uint64_t>(i)));
      const TrainingSample corrupted =
          corrupt_sample(base[i], cfg.synth, cfg.sweep.target, cfg.sweep.probabilities[pi], rng);
      const FitResult fit_prog =
          fit_progressive(tmpl, corrupted.observations, corrupted.rig, prog_cfg);
      const FitResult fit_naive =
          fit_progressive(tmpl, corrupted.observations, corrupted.rig, naive_cfg);
      const SampleErrors err_prog = fit_errors(tmpl, base[i], fit_prog);
      const SampleErrors err_naive = fit_errors(tmpl, base[i], fit_naive);
      trial.pmpjpe_prog = err_prog.pmpjpe_mm;
      trial.pmpjpe_naive = err_naive.pmpjpe_mm;
      trial.mpjpe_prog = err_prog.mpjpe_mm;
      trial.mpjpe_naive = err_naive.mpjpe_mm;
      trial.ok = true;
    } catch (const std::exception&) {
      trial.ok = false;
    }
  });

  std::vector<double> mean_prog, mean_naive;
  for (int pi = 0; pi < n_points; ++pi) {
    SweepPoint point;
    point.probability = cfg.sweep.probabilities[pi];
    double sum_pp = 0.0, sum_pn = 0.0, sum_mp = 0.0, sum_mn = 0.0;
    for (int i = 0; i < n; ++i) {
      const SweepTrial& trial = outcome.trials[static_cast<size_t>(pi) * n + i];
      if (!trial.ok) continue;
      ++point.completed;
      sum_pp += trial.pmpjpe_prog;
      sum_pn += trial.pmpjpe_naive;
      sum_mp += trial.mpjpe_prog;
      sum_mn += trial.mpjpe_naive;
      if (trial.pmpjpe_prog <= trial.pmpjpe_naive) ++point.wins_prog;
    }
    const double denom = std::max(point.completed, 1);
    point.mean_pmpjpe_prog = sum_pp / denom;
    point.mean_pmpjpe_naive = sum_pn / denom;
    point.mean_mpjpe_prog = sum_mp / denom;
    point.mean_mpjpe_naive = sum_mn / denom;
    if (point.completed > 0 && point.mean_pmpjpe_prog <= point.mean_pmpjpe_naive)
      ++outcome.points_won;
    mean_prog.push_back(point.mean_pmpjpe_prog);
    mean_naive.push_back(point.mean_pmpjpe_naive);
    outcome.points.push_back(point);
  }

  outcome.spearman_prog = spearman_rho(cfg.sweep.probabilities, mean_prog);
  outcome.spearman_naive = spearman_rho(cfg.sweep.probabilities, mean_naive);
  return outcome;
}

double spearman_rho(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size()) throw DataError("spearman inputs differ in length");
  const int n = static_cast<int>(xs.size());
  if (n < 2) return 0.0;
  const std::vector<double> rx = average_ranks(xs);
  const std::vector<double> ry = average_ranks(ys);
  double mx = 0.0, my = 0.0;
  for (int i = 0; i < n; ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double cov = 0.0, vx = 0.0, vy = 0.0;
  for (int i = 0; i < n; ++i) {
    cov += (rx[i] - mx) * (ry[i] - my);
    vx += (rx[i] - mx) * (rx[i] - mx);
    vy += (ry[i] - my) * (ry[i] - my);
  }
  if (vx <= 0.0 || vy <= 0.0) return 0.0;
  return cov / std::sqrt(vx * vy);
}

int cmd_ablate(const RunConfig& cfg, const std::string& dataset_dir, const std::string& out_dir,
               int workers) {
  const DatasetManifest manifest = read_manifest(dataset_dir);
  const RunConfig data_cfg = parse_run_config(manifest.config);

  RunConfig merged = cfg;
  merged.seed = data_cfg.seed;
  merged.body = data_cfg.body;
  merged.synth = data_cfg.synth;
  merged.validate();
  if (merged.sweep.samples_per_point > manifest.n_samples)
    throw ConfigError("sweep needs " + std::to_string(merged.sweep.samples_per_point) +
                      " samples per point but the dataset defines " +
                      std::to_string(manifest.n_samples));
  fs::create_directories(out_dir);

  const BodyTemplate tmpl = make_template(merged.body);
  const int vn = merged.sweep.samples_per_point;
  const std::vector<TrainingSample> clean = regenerate_clean(tmpl, merged, vn, workers);

  struct Variant {
    std::string name;
    std::array<StagePlan, 3> stages;
  };
  const std::vector<Variant> variants = {
      {"progressive", stages_for_mode("progressive")},
      {"naive", stages_for_mode("naive")},
      {"intersection-all",
       {StagePlan{MaskKind::kIntersection, FusionKind::kAverage},
        StagePlan{MaskKind::kIntersection, FusionKind::kAverage},
        StagePlan{MaskKind::kIntersection, FusionKind::kAverage}}},
      {"union-all",
       {StagePlan{MaskKind::kUnion, FusionKind::kAverage},
        StagePlan{MaskKind::kUnion, FusionKind::kAverage},
        StagePlan{MaskKind::kUnion, FusionKind::kAverage}}},
      {"no-balance",
       {StagePlan{MaskKind::kIntersection, FusionKind::kAverage},
        StagePlan{MaskKind::kUnion, FusionKind::kAverage},
        StagePlan{MaskKind::kNone, FusionKind::kAverage}}},
      {"balance-only",
       {StagePlan{MaskKind::kNone, FusionKind::kAverage},
        StagePlan{MaskKind::kNone, FusionKind::kAverage},
        StagePlan{MaskKind::kNone, FusionKind::kBalanced}}}};

  struct VariantCell {
    bool ok = false;
    SampleErrors errors;
  };
  std::vector<VariantCell> cells(variants.size() * static_cast<size_t>(vn));
  parallel_for(static_cast<int>(variants.size()) * vn, workers, [&](int t) {
    const int vi = t / vn;
    const int i = t % vn;
    SolverConfig solver = merged.solver;
    solver.stages = variants[vi].stages;
    VariantCell& cell = cells[t];
    try {
      const FitResult fit =
          fit_progressive(tmpl, clean[i].observations, clean[i].rig, solver);
      cell.errors = fit_errors(tmpl, clean[i], fit);
      cell.ok = true;
    } catch (const std::exception&) {
      cell.ok = false;
    }
  });

  std::ostringstream vcsv;
  vcsv << "variant,mask1,fusion1,mask2,fusion2,mask3,fusion3,n_ok,mpjpe_mm,pmpjpe_mm,pve_mm,"
          "ppve_mm\n";
  Json variant_summary = Json::array();
  for (size_t vi = 0; vi < variants.size(); ++vi) {
    SampleErrors sum;
    int ok = 0;
    for (int i = 0; i < vn; ++i) {
      const VariantCell& cell = cells[vi * vn + i];
      if (!cell.ok) continue;
      ++ok;
      sum.mpjpe_mm += cell.errors.mpjpe_mm;
      sum.pmpjpe_mm += cell.errors.pmpjpe_mm;
      sum.pve_mm += cell.errors.pve_mm;
      sum.ppve_mm += cell.errors.ppve_mm;
    }
    const double denom = std::max(ok, 1);
    char line[256];
    std::snprintf(line, sizeof(line), "%s,%s,%s,%s,%s,%s,%s,%d,%.9g,%.9g,%.9g,%.9g\n",
                  variants[vi].name.c_str(), mask_name(variants[vi].stages[0].mask),
                  fusion_name(variants[vi].stages[0].fusion),
                  mask_name(variants[vi].stages[1].mask),
                  fusion_name(variants[vi].stages[1].fusion),
                  mask_name(variants[vi].stages[2].mask),
                  fusion_name(variants[vi].stages[2].fusion), ok, sum.mpjpe_mm / denom,
                  sum.pmpjpe_mm / denom, sum.pve_mm / denom, sum.ppve_mm / denom);
    vcsv << line;
    variant_summary.push_back(Json{{"variant", variants[vi].name},
                                   {"n_ok", ok},
                                   {"mpjpe_mm", sum.mpjpe_mm / denom},
                                   {"pmpjpe_mm", sum.pmpjpe_mm / denom}});
  }
  write_text(out_dir + "/variants.csv", vcsv.str());

  const SweepOutcome sweep = run_sweep(merged, workers);

  std::ostringstream scsv;
  scsv << "target,probability,mode,n_ok,mpjpe_mm,pmpjpe_mm\n";
  for (const SweepPoint& point : sweep.points) {
    char line[192];
    std::snprintf(line, sizeof(line), "%s,%.9g,progressive,%d,%.9g,%.9g\n",
                  merged.sweep.target.c_str(), point.probability, point.completed,
                  point.mean_mpjpe_prog, point.mean_pmpjpe_prog);
    scsv << line;
    std::snprintf(line, sizeof(line), "%s,%.9g,naive,%d,%.9g,%.9g\n",
                  merged.sweep.target.c_str(), point.probability, point.completed,
                  point.mean_mpjpe_naive, point.mean_pmpjpe_naive);
    scsv << line;
  }
  write_text(out_dir + "/sweep.csv", scsv.str());

  std::ostringstream tcsv;
  tcsv << "probability,sample,ok,pmpjpe_prog_mm,pmpjpe_naive_mm,prog_win\n";
  for (const SweepTrial& trial : sweep.trials) {
    char line[192];
    std::snprintf(line, sizeof(line), "%.9g,%d,%d,%.9g,%.9g,%d\n",
                  merged.sweep.probabilities[trial.point], trial.sample, trial.ok ? 1 : 0,
                  trial.pmpjpe_prog, trial.pmpjpe_naive,
                  trial.ok && trial.pmpjpe_prog <= trial.pmpjpe_naive ? 1 : 0);
    tcsv << line;
  }
  write_text(out_dir + "/trials.csv", tcsv.str());

  Json points = Json::array();
  for (const SweepPoint& point : sweep.points)
    points.push_back(Json{{"probability", point.probability},
                          {"completed", point.completed},
                          {"wins_prog", point.wins_prog},
                          {"mean_pmpjpe_prog", point.mean_pmpjpe_prog},
                          {"mean_pmpjpe_naive", point.mean_pmpjpe_naive},
                          {"mean_mpjpe_prog", point.mean_mpjpe_prog},
                          {"mean_mpjpe_naive", point.mean_mpjpe_naive}});
  Json summary{{"target", merged.sweep.target},
               {"spearman_prog", sweep.spearman_prog},
               {"spearman_naive", sweep.spearman_naive},
               {"points_won", sweep.points_won},
               {"points", points},
               {"variants", variant_summary}};
  write_text(out_dir + "/summary.json", summary.dump(2) + "\n");

  std::printf("ablate: %zu variants on %d samples; sweep target=%s spearman prog=%.3f "
              "naive=%.3f, progressive wins %d of %zu points\n",
              variants.size(), vn, merged.sweep.target.c_str(), sweep.spearman_prog,
              sweep.spearman_naive, sweep.points_won, sweep.points.size());
  return 0;
}

int cmd_inspect_grid(const std::string& grid_path, int axis, int index, int channel,
                     const std::string& out_pgm) {
  const LoadedGrid loaded = load_grid(grid_path);
  const VoxelGrid& grid = loaded.grid;
  const int g = grid.spec.g;
  if (axis < 0 || axis > 2) throw ConfigError("axis must be 0, 1, or 2");
  if (index < 0 || index >= g)
    throw ConfigError("slice index must lie in [0, " + std::to_string(g - 1) + "]");
  if (channel < 0 || channel >= grid.channels)
    throw ConfigError("channel must lie in [0, " + std::to_string(grid.channels - 1) + "]");

  auto value_at = [&](int row, int col) {
    if (axis == 0) return grid.at(index, row, col, channel);
    if (axis == 1) return grid.at(row, index, col, channel);
    return grid.at(row, col, index, channel);
  };

  double vmax = 0.0;
  for (int r = 0; r < g; ++r)
    for (int c = 0; c < g; ++c) vmax = std::max(vmax, value_at(r, c));

  std::vector<std::uint8_t> pixels(static_cast<size_t>(g) * g, 0);
  if (vmax > 0.0)
    for (int r = 0; r < g; ++r)
      for (int c = 0; c < g; ++c) {
        const double v = std::max(value_at(r, c), 0.0);
        pixels[static_cast<size_t>(r) * g + c] =
            static_cast<std::uint8_t>(std::lround(255.0 * v / vmax));
      }
  write_pgm_gray(pixels, g, g, out_pgm);

  const Vec3& center = grid.spec.center;
  std::printf("grid %s: G=%d edge=%g center=(%g, %g, %g) channels=%d frame=%s\n",
              grid_path.c_str(), g, grid.spec.edge, center.x(), center.y(), center.z(),
              grid.channels, loaded.frame_tag.c_str());
  std::printf("slice axis=%d index=%d channel=%d max=%g -> %s\n", axis, index, channel, vmax,
              out_pgm.c_str());
  return 0;
}

}  // namespace mvmesh
