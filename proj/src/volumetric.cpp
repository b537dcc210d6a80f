#include "mvmesh/volumetric.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

namespace mvmesh {

namespace {

void check_same_layout(const std::vector<VoxelGrid>& grids) {
  if (grids.empty()) throw ConfigError("fusion: no grids supplied");
  for (const auto& g : grids) {
    if (!g.spec.matches(grids.front().spec)) throw ConfigError("fusion: grids disagree on GridSpec");
    if (g.channels != grids.front().channels) throw ConfigError("fusion: grids disagree on channels");
  }
}

}  // namespace

VoxelGrid unproject(const MapStack& maps, const ProjectionChain& proj, const GridSpec& spec) {
  if (spec.g <= 0 || spec.edge <= 0.0) throw ConfigError("unproject: invalid grid spec");
  if (proj.downsample.x() <= 0.0 || proj.downsample.y() <= 0.0)
    throw ConfigError("unproject: downsample factors must be positive");
  VoxelGrid grid(spec, maps.channels);
  for (int i = 0; i < spec.g; ++i) {
    for (int j = 0; j < spec.g; ++j) {
      for (int k = 0; k < spec.g; ++k) {
        const Vec3 p = proj.ref_to_cam.apply(spec.voxel_center(i, j, k));
        if (p.z() <= kMinDepth) continue;  // behind the camera: leave zeros
        const Vec2 full(proj.intr.focal.x() * p.x() / p.z() + proj.intr.center.x(),
                        proj.intr.focal.y() * p.y() / p.z() + proj.intr.center.y());
        const Vec2 crop = proj.crop.to_crop(full);
        const double sx = crop.x() / proj.downsample.x();
        const double sy = crop.y() / proj.downsample.y();
        for (int c = 0; c < maps.channels; ++c)
          grid.at(i, j, k, c) = bilinear_sample(maps.channel(c), maps.height, maps.width, sx, sy);
      }
    }
  }
  return grid;
}

Vec3 estimate_translation(const std::vector<MapStack>& pelvis_maps,
                          const std::vector<ProjectionChain>& projs, const GridSpec& spec) {
  if (pelvis_maps.size() != projs.size() || pelvis_maps.empty())
    throw ConfigError("estimate_translation: need one map per view");
  VoxelGrid sum(spec, 1);
  for (size_t n = 0; n < pelvis_maps.size(); ++n) {
    if (pelvis_maps[n].channels != 1)
      throw ConfigError("estimate_translation: expects single-channel maps");
    const VoxelGrid g = unproject(pelvis_maps[n], projs[n], spec);
    for (size_t i = 0; i < sum.data.size(); ++i) sum.data[i] += g.data[i];
  }
  double best = 0.0;
  for (double v : sum.data) best = std::max(best, v);
  if (best <= 0.0) throw AllZeroLikelihood("estimate_translation: summed likelihood is identically zero");

  Vec3 acc = Vec3::Zero();
  int count = 0;
  for (int i = 0; i < spec.g; ++i)
    for (int j = 0; j < spec.g; ++j)
      for (int k = 0; k < spec.g; ++k)
        if (sum.at(i, j, k, 0) >= best - 1e-12) {
          acc += spec.voxel_center(i, j, k);
          ++count;
        }
  return acc / count;
}

VoxelGrid binarize(const VoxelGrid& grid, double threshold) {
  VoxelGrid out = grid;
  for (auto& v : out.data) v = v >= threshold ? 1.0 : 0.0;
  return out;
}

std::pair<VoxelGrid, VoxelGrid> occupancy_intersection_union(const std::vector<VoxelGrid>& occ) {
  check_same_layout(occ);
  if (occ.front().channels != 1) throw ConfigError("occupancy: expects single-channel grids");
  VoxelGrid inter = occ.front();
  VoxelGrid uni = occ.front();
  for (size_t n = 1; n < occ.size(); ++n)
    for (size_t i = 0; i < inter.data.size(); ++i) {
      inter.data[i] = std::min(inter.data[i], occ[n].data[i]);
      uni.data[i] = std::max(uni.data[i], occ[n].data[i]);
    }
  return {inter, uni};
}

VoxelGrid masked_fusion(const std::vector<VoxelGrid>& features, const VoxelGrid* mask) {
  check_same_layout(features);
  if (mask) {
    if (!mask->spec.matches(features.front().spec))
      throw ConfigError("masked_fusion: mask GridSpec mismatch");
    if (mask->channels != 1) throw ConfigError("masked_fusion: mask must be single-channel");
  }
  VoxelGrid out(features.front().spec, features.front().channels);
  const double inv_n = 1.0 / static_cast<double>(features.size());
  for (const auto& f : features)
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += f.data[i];
  for (auto& v : out.data) v *= inv_n;
  if (mask) {
    const int c = out.channels;
    for (size_t vox = 0; vox < out.voxel_count(); ++vox) {
      const double m = mask->data[vox];
      for (int ch = 0; ch < c; ++ch) out.data[vox * c + ch] *= m;
    }
  }
  return out;
}

MapStack consistency_map(const MapStack& obs_heat, const BinaryMap& obs_mask,
                         const MapStack& reproj_heat, const BinaryMap& reproj_mask,
                         double epsilon) {
  if (obs_heat.channels != reproj_heat.channels || obs_heat.height != reproj_heat.height ||
      obs_heat.width != reproj_heat.width)
    throw ConfigError("consistency_map: heatmap stacks disagree on shape");
  if (obs_mask.height != obs_heat.height || obs_mask.width != obs_heat.width)
    throw ConfigError("consistency_map: mask shape mismatch");
  const int h = obs_heat.height, w = obs_heat.width, nj = obs_heat.channels;
  MapStack out(1, h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double joint_dev = 0.0;
      for (int c = 0; c < nj; ++c) joint_dev += std::abs(reproj_heat.at(c, y, x) - obs_heat.at(c, y, x));
      joint_dev /= nj;
      const double mask_dev =
          std::abs(static_cast<double>(reproj_mask.at(y, x)) - static_cast<double>(obs_mask.at(y, x)));
      out.at(0, y, x) = 1.0 / (epsilon + mask_dev + joint_dev);
    }
  }
  return out;
}

std::vector<VoxelGrid> balance_weights(const std::vector<VoxelGrid>& phi) {
  check_same_layout(phi);
  if (phi.front().channels != 1) throw ConfigError("balance_weights: expects single-channel grids");
  const size_t n = phi.size();
  std::vector<VoxelGrid> out(n, VoxelGrid(phi.front().spec, 1));
  const double uniform = 1.0 / static_cast<double>(n);
  for (size_t i = 0; i < phi.front().data.size(); ++i) {
    double denom = 0.0;
    for (const auto& p : phi) denom += p.data[i];
    if (denom <= 1e-12) {
      for (auto& o : out) o.data[i] = uniform;
    } else {
      for (size_t v = 0; v < n; ++v) out[v].data[i] = phi[v].data[i] / denom;
    }
  }
  return out;
}

VoxelGrid balanced_fusion(const std::vector<VoxelGrid>& features,
                          const std::vector<VoxelGrid>& weights) {
  check_same_layout(features);
  if (weights.size() != features.size()) throw ConfigError("balanced_fusion: view count mismatch");
  for (const auto& w : weights) {
    if (!w.spec.matches(features.front().spec) || w.channels != 1)
      throw ConfigError("balanced_fusion: weight grid layout mismatch");
  }
  VoxelGrid out(features.front().spec, features.front().channels);
  const int c = out.channels;
  for (size_t n = 0; n < features.size(); ++n)
    for (size_t vox = 0; vox < out.voxel_count(); ++vox) {
      const double w = weights[n].data[vox];
      for (int ch = 0; ch < c; ++ch)
        out.data[vox * c + ch] += w * features[n].data[vox * c + ch];
    }
  return out;
}

namespace {
constexpr char kGridMagic[8] = {'M', 'V', 'G', 'D', '0', '0', '0', '1'};
}

void save_grid(const VoxelGrid& grid, const std::string& frame_tag, const std::string& path) {
  nlohmann::json header;
  header["g"] = grid.spec.g;
  header["edge"] = grid.spec.edge;
  header["center"] = {grid.spec.center.x(), grid.spec.center.y(), grid.spec.center.z()};
  header["channels"] = grid.channels;
  header["frame"] = frame_tag;
  const std::string htxt = header.dump();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open grid file for writing: " + path);
  f.write(kGridMagic, 8);
  const std::uint32_t hlen = static_cast<std::uint32_t>(htxt.size());
  f.write(reinterpret_cast<const char*>(&hlen), 4);
  f.write(htxt.data(), hlen);
  f.write(reinterpret_cast<const char*>(grid.data.data()),
          static_cast<std::streamsize>(grid.data.size() * sizeof(double)));
  if (!f) throw DataError("failed writing grid file: " + path);
}

LoadedGrid load_grid(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open grid file: " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kGridMagic, 8) != 0) throw DataError("bad grid magic: " + path);
  std::uint32_t hlen = 0;
  f.read(reinterpret_cast<char*>(&hlen), 4);
  if (!f || hlen > (1u << 20)) throw DataError("bad grid header length: " + path);
  std::string htxt(hlen, '\0');
  f.read(htxt.data(), hlen);
  if (!f) throw DataError("grid header truncated: " + path);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(htxt);
  } catch (const nlohmann::json::exception&) {
    throw DataError("grid header is not valid JSON: " + path);
  }
  LoadedGrid out;
  out.grid.spec.g = header.at("g").get<int>();
  out.grid.spec.edge = header.at("edge").get<double>();
  const auto c = header.at("center");
  out.grid.spec.center = Vec3(c.at(0).get<double>(), c.at(1).get<double>(), c.at(2).get<double>());
  out.grid.channels = header.at("channels").get<int>();
  out.frame_tag = header.at("frame").get<std::string>();
  if (out.grid.spec.g <= 0 || out.grid.channels <= 0) throw DataError("grid header dimensions invalid");
  out.grid.data.resize(out.grid.voxel_count() * out.grid.channels);
  f.read(reinterpret_cast<char*>(out.grid.data.data()),
         static_cast<std::streamsize>(out.grid.data.size() * sizeof(double)));
  if (!f) throw DataError("grid payload truncated: " + path);
  return out;
}

}  // namespace mvmesh
