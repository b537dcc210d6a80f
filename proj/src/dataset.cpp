#include "mvmesh/dataset.hpp"

#include <cstdio>
#include <sstream>

#include "mvmesh/errors.hpp"
#include "mvmesh/io.hpp"

namespace mvmesh {

namespace {

Json vec_to_json(const VecX& v) {
  Json arr = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

Json vec3_to_json(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }

Json mat_to_json(const MatX& m) {
  Json arr = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    arr.push_back(row);
  }
  return arr;
}

Json mat3_to_json(const Mat3& m) {
  Json arr = Json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) arr.push_back(m(r, c));
  return arr;
}

Vec3 json_to_vec3(const Json& j) {
  if (!j.is_array() || j.size() != 3) throw DataError("expected a 3-vector");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

VecX json_to_vec(const Json& j, Eigen::Index expected) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != expected)
    throw DataError("vector field has wrong length");
  VecX v(expected);
  for (Eigen::Index i = 0; i < expected; ++i) v[i] = j[static_cast<size_t>(i)].get<double>();
  return v;
}

MatX json_to_mat(const Json& j, Eigen::Index rows, Eigen::Index cols) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows)
    throw DataError("matrix field has wrong row count");
  MatX m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const Json& row = j[static_cast<size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
      throw DataError("matrix field has wrong column count");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<size_t>(c)].get<double>();
  }
  return m;
}

Mat3 json_to_mat3(const Json& j) {
  if (!j.is_array() || j.size() != 9) throw DataError("expected 9 rotation entries");
  Mat3 m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) m(r, c) = j[static_cast<size_t>(3 * r + c)].get<double>();
  return m;
}

Json params_to_json(const BodyParams& p) {
  return Json{{"theta_g", vec3_to_json(p.theta_g)},
              {"theta_j", mat_to_json(p.theta_j)},
              {"beta", vec_to_json(p.beta)}};
}

BodyParams json_to_params(const Json& j) {
  BodyParams p;
  p.theta_g = json_to_vec3(j.at("theta_g"));
  p.theta_j = json_to_mat(j.at("theta_j"), kNumJoints - 1, 3);
  p.beta = json_to_vec(j.at("beta"), kNumShapes);
  return p;
}

std::string view_base(int n) { return "view" + std::to_string(n); }

}  // namespace

std::string sample_dir_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "sample_%04d", index);
  return buf;
}

void write_sample(const std::string& dir, const TrainingSample& sample) {
  Json gt{{"seed", sample.seed},
          {"params", params_to_json(sample.gt_params)},
          {"joints", mat_to_json(sample.gt_joints)},
          {"vertices", mat_to_json(sample.gt_vertices)},
          {"world_from_human",
           Json{{"r", mat3_to_json(sample.world_from_human.rotation)},
                {"t", vec3_to_json(sample.world_from_human.translation)}}}};
  write_text(dir + "/gt.json", gt.dump(2) + "\n");

  Json views = Json::array();
  for (size_t n = 0; n < sample.rig.world_to_cam.size(); ++n) {
    const Intrinsics& intr = sample.rig.intrinsics[n];
    const Extrinsics& ext = sample.rig.world_to_cam[n];
    views.push_back(Json{{"focal", Json::array({intr.focal.x(), intr.focal.y()})},
                         {"center", Json::array({intr.center.x(), intr.center.y()})},
                         {"width", intr.width},
                         {"height", intr.height},
                         {"r", mat3_to_json(ext.rotation)},
                         {"t", vec3_to_json(ext.translation)}});
  }
  write_text(dir + "/rig.json", Json{{"views", views}}.dump(2) + "\n");

  for (size_t n = 0; n < sample.observations.size(); ++n) {
    const ViewObservation& obs = sample.observations[n];
    const std::string base = dir + "/" + view_base(static_cast<int>(n));
    write_pgm(obs.mask, base + "_mask.pgm");
    write_pgm(obs.occupancy, base + "_occ.pgm");
    write_doubles(base + "_heat.f64", obs.heatmaps.data);

    Json visibility = Json::array();
    for (std::uint8_t v : obs.joint_visibility) visibility.push_back(static_cast<int>(v));
    Json meta{{"channels", obs.heatmaps.channels},
              {"height", obs.heatmaps.height},
              {"width", obs.heatmaps.width},
              {"visibility", visibility},
              {"crop", Json{{"origin", Json::array({obs.crop.origin.x(), obs.crop.origin.y()})},
                            {"scale", obs.crop.scale}}}};
    write_text(base + "_meta.json", meta.dump(2) + "\n");
  }
}

TrainingSample read_sample(const std::string& dir, int n_views) {
  TrainingSample sample;
  const Json gt = Json::parse(read_text(dir + "/gt.json"));
  sample.seed = gt.at("seed").get<std::uint64_t>();
  sample.gt_params = json_to_params(gt.at("params"));
  sample.gt_joints = json_to_mat(gt.at("joints"), kNumJoints, 3);
  const Json& verts = gt.at("vertices");
  sample.gt_vertices = json_to_mat(verts, static_cast<Eigen::Index>(verts.size()), 3);
  sample.world_from_human.rotation = json_to_mat3(gt.at("world_from_human").at("r"));
  sample.world_from_human.translation = json_to_vec3(gt.at("world_from_human").at("t"));

  const Json rig = Json::parse(read_text(dir + "/rig.json"));
  const Json& views = rig.at("views");
  if (static_cast<int>(views.size()) != n_views)
    throw DataError("rig view count disagrees with manifest: " + dir);
  for (const Json& v : views) {
    Intrinsics intr;
    intr.focal = Vec2(v.at("focal")[0].get<double>(), v.at("focal")[1].get<double>());
    intr.center = Vec2(v.at("center")[0].get<double>(), v.at("center")[1].get<double>());
    intr.width = v.at("width").get<int>();
    intr.height = v.at("height").get<int>();
    Extrinsics ext;
    ext.rotation = json_to_mat3(v.at("r"));
    ext.translation = json_to_vec3(v.at("t"));
    sample.rig.intrinsics.push_back(intr);
    sample.rig.world_to_cam.push_back(ext);
  }

  for (const Extrinsics& wc : sample.rig.world_to_cam)
    sample.human_to_cam.push_back(wc.compose(sample.world_from_human));

  for (int n = 0; n < n_views; ++n) {
    const std::string base = dir + "/" + view_base(n);
    ViewObservation obs;
    obs.mask = read_pgm(base + "_mask.pgm");
    obs.occupancy = read_pgm(base + "_occ.pgm");

    const Json meta = Json::parse(read_text(base + "_meta.json"));
    const int channels = meta.at("channels").get<int>();
    const int height = meta.at("height").get<int>();
    const int width = meta.at("width").get<int>();
    obs.heatmaps = MapStack(channels, height, width);
    std::vector<double> heat = read_doubles(base + "_heat.f64");
    if (heat.size() != obs.heatmaps.data.size())
      throw DataError("heatmap payload size mismatch: " + base);
    obs.heatmaps.data = std::move(heat);

    for (const Json& v : meta.at("visibility"))
      obs.joint_visibility.push_back(static_cast<std::uint8_t>(v.get<int>() != 0));
    obs.crop.origin = Vec2(meta.at("crop").at("origin")[0].get<double>(),
                           meta.at("crop").at("origin")[1].get<double>());
    obs.crop.scale = meta.at("crop").at("scale").get<double>();
    sample.observations.push_back(std::move(obs));
  }
  return sample;
}

SampleTruth read_sample_truth(const std::string& dir) {
  const Json gt = Json::parse(read_text(dir + "/gt.json"));
  SampleTruth truth;
  truth.seed = gt.at("seed").get<std::uint64_t>();
  truth.params = json_to_params(gt.at("params"));
  truth.joints = json_to_mat(gt.at("joints"), kNumJoints, 3);
  const Json& verts = gt.at("vertices");
  truth.vertices = json_to_mat(verts, static_cast<Eigen::Index>(verts.size()), 3);
  truth.world_from_human.rotation = json_to_mat3(gt.at("world_from_human").at("r"));
  truth.world_from_human.translation = json_to_vec3(gt.at("world_from_human").at("t"));
  return truth;
}

void write_manifest(const std::string& dir, const DatasetManifest& manifest) {
  Json j{{"format", manifest.format},
         {"seed", manifest.seed},
         {"n_samples", manifest.n_samples},
         {"n_views", manifest.n_views},
         {"config", manifest.config}};
  write_text(dir + "/manifest.json", j.dump(2) + "\n");
}

DatasetManifest read_manifest(const std::string& dir) {
  const Json j = Json::parse(read_text(dir + "/manifest.json"));
  DatasetManifest m;
  m.format = j.at("format").get<int>();
  if (m.format != 1) throw DataError("unsupported dataset format in " + dir);
  m.seed = j.at("seed").get<std::uint64_t>();
  m.n_samples = j.at("n_samples").get<int>();
  m.n_views = j.at("n_views").get<int>();
  m.config = j.at("config");
  return m;
}

std::uint64_t sample_input_hash(const std::string& dir, int n_views) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  auto mix = [&hash](const std::vector<std::uint8_t>& bytes) {
    for (std::uint8_t b : bytes) {
      hash ^= b;
      hash *= 0x100000001b3ULL;
    }
  };
  mix(read_bytes(dir + "/gt.json"));
  mix(read_bytes(dir + "/rig.json"));
  for (int n = 0; n < n_views; ++n) {
    const std::string base = dir + "/" + view_base(n);
    mix(read_bytes(base + "_mask.pgm"));
    mix(read_bytes(base + "_occ.pgm"));
    mix(read_bytes(base + "_heat.f64"));
    mix(read_bytes(base + "_meta.json"));
  }
  return hash;
}

void write_fit_result(const std::string& path, const FitResult& result,
                      std::uint64_t input_hash, const std::string& mode) {
  Json stages = Json::array();
  for (const StageRecord& rec : result.stages) {
    Json history = Json::array();
    for (double v : rec.objective_history) history.push_back(v);
    stages.push_back(Json{{"tag", rec.tag},
                          {"iterations", rec.iterations},
                          {"converged", rec.converged},
                          {"objective_history", history}});
  }
  Json thetas = Json::array();
  for (const BodyParams& p : result.theta_stages) thetas.push_back(params_to_json(p));
  Json ortho = Json::array();
  for (const OrthoCam& cam : result.ortho_cams)
    ortho.push_back(Json{{"scale", cam.scale},
                         {"t", Json::array({cam.translation.x(), cam.translation.y()})}});
  const Json j{{"input_hash", input_hash},
               {"mode", mode},
               {"pelvis_w", vec3_to_json(result.pelvis_w)},
               {"rot_w_to_h", mat3_to_json(result.rot_w_to_h)},
               {"ortho_cams", ortho},
               {"theta_stages", thetas},
               {"stages", stages}};
  write_text(path, j.dump(2) + "\n");
}

StoredFit read_fit_result(const std::string& path) {
  const Json j = Json::parse(read_text(path));
  StoredFit fit;
  fit.input_hash = j.at("input_hash").get<std::uint64_t>();
  fit.mode = j.at("mode").get<std::string>();
  fit.result.pelvis_w = json_to_vec3(j.at("pelvis_w"));
  fit.result.rot_w_to_h = json_to_mat3(j.at("rot_w_to_h"));
  for (const Json& cam : j.at("ortho_cams")) {
    OrthoCam c;
    c.scale = cam.at("scale").get<double>();
    c.translation = Vec2(cam.at("t")[0].get<double>(), cam.at("t")[1].get<double>());
    fit.result.ortho_cams.push_back(c);
  }
  const Json& thetas = j.at("theta_stages");
  if (thetas.size() != 3) throw DataError("fit result must carry three stages: " + path);
  for (size_t s = 0; s < 3; ++s) fit.result.theta_stages[s] = json_to_params(thetas[s]);
  const Json& stages = j.at("stages");
  if (stages.size() != 3) throw DataError("fit result must carry three stage records: " + path);
  for (size_t s = 0; s < 3; ++s) {
    const Json& rec = stages[s];
    fit.result.stages[s].tag = rec.at("tag").get<std::string>();
    fit.result.stages[s].iterations = rec.at("iterations").get<int>();
    fit.result.stages[s].converged = rec.at("converged").get<bool>();
    for (const Json& v : rec.at("objective_history"))
      fit.result.stages[s].objective_history.push_back(v.get<double>());
  }
  return fit;
}

void write_eval_csv(const std::string& path, const EvalReport& report) {
  std::ostringstream out;
  out << "index,mpjpe_mm,pmpjpe_mm,pve_mm,ppve_mm\n";
  char line[192];
  for (size_t i = 0; i < report.samples.size(); ++i) {
    const SampleErrors& e = report.samples[i];
    std::snprintf(line, sizeof(line), "%zu,%.9g,%.9g,%.9g,%.9g\n", i, e.mpjpe_mm, e.pmpjpe_mm,
                  e.pve_mm, e.ppve_mm);
    out << line;
  }
  std::snprintf(line, sizeof(line), "mean,%.9g,%.9g,%.9g,%.9g\n", report.mean.mpjpe_mm,
                report.mean.pmpjpe_mm, report.mean.pve_mm, report.mean.ppve_mm);
  out << line;
  write_text(path, out.str());
}

}  // namespace mvmesh
