#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mvmesh/camera.hpp"
#include "mvmesh/errors.hpp"
#include "mvmesh/render2d.hpp"
#include "mvmesh/types.hpp"

namespace mvmesh {

// Axis-aligned cube of G^3 voxels with edge length `edge` (meters) centered
// at `center` in some reference frame. Voxel (i, j, k) spans the x/y/z axes
// respectively; its center is center + edge * ((i + 0.5) / G - 0.5) per axis.
struct GridSpec {
  int g = 16;
  double edge = 3.0;
  Vec3 center = Vec3::Zero();

  double voxel_size() const { return edge / g; }
  Vec3 voxel_center(int i, int j, int k) const {
    return center + edge * (Vec3(i + 0.5, j + 0.5, k + 0.5) / g - Vec3::Constant(0.5));
  }
  bool matches(const GridSpec& o, double tol = 1e-12) const {
    return g == o.g && std::abs(edge - o.edge) <= tol && (center - o.center).norm() <= tol;
  }
};

struct VoxelGrid {
  GridSpec spec;
  int channels = 0;
  std::vector<double> data;  // ((i * G + j) * G + k) * C + c

  VoxelGrid() = default;
  VoxelGrid(const GridSpec& s, int c)
      : spec(s), channels(c),
        data(static_cast<size_t>(s.g) * s.g * s.g * c, 0.0) {}

  double& at(int i, int j, int k, int c) {
    return data[((static_cast<size_t>(i) * spec.g + j) * spec.g + k) * channels + c];
  }
  double at(int i, int j, int k, int c) const {
    return data[((static_cast<size_t>(i) * spec.g + j) * spec.g + k) * channels + c];
  }
  size_t voxel_count() const { return static_cast<size_t>(spec.g) * spec.g * spec.g; }
};

// Full projection pathway from a grid's reference frame into a stored 2D map:
// rigid transform to camera, perspective intrinsics, crop-window correction,
// then a downsample-factor division.
struct ProjectionChain {
  Extrinsics ref_to_cam;
  Intrinsics intr;
  CropInfo crop;
  Vec2 downsample = Vec2::Ones();
};

// Bilinear unprojection of a channel stack into a voxel grid. Voxels behind
// the camera or projecting outside the map support read as zero.
VoxelGrid unproject(const MapStack& maps, const ProjectionChain& proj, const GridSpec& spec);

// Pelvis placement: argmax of the summed single-channel unprojections over
// views, ties within 1e-12 of the maximum averaged. Throws AllZeroLikelihood
// when the summed grid is identically zero (or negative everywhere).
Vec3 estimate_translation(const std::vector<MapStack>& pelvis_maps,
                          const std::vector<ProjectionChain>& projs, const GridSpec& spec);

VoxelGrid binarize(const VoxelGrid& grid, double threshold);

// Voxelwise min (intersection) and max (union) across binarized occupancy
// grids sharing one GridSpec.
std::pair<VoxelGrid, VoxelGrid> occupancy_intersection_union(const std::vector<VoxelGrid>& occ);

// mask (single channel) broadcast-multiplied onto the mean of the feature
// grids. Pass mask = nullptr for a plain unmasked mean.
VoxelGrid masked_fusion(const std::vector<VoxelGrid>& features, const VoxelGrid* mask);

// Per-pixel reprojection agreement phi = 1 / (eps + |m_hat - m| +
// sum_j |j_hat - j| / N_j). Returns a single-channel stack.
MapStack consistency_map(const MapStack& obs_heat, const BinaryMap& obs_mask,
                         const MapStack& reproj_heat, const BinaryMap& reproj_mask,
                         double epsilon);

// Voxelwise normalization of per-view consistency grids; a denominator at or
// below 1e-12 falls back to uniform weights 1/N.
std::vector<VoxelGrid> balance_weights(const std::vector<VoxelGrid>& phi);

VoxelGrid balanced_fusion(const std::vector<VoxelGrid>& features,
                          const std::vector<VoxelGrid>& weights);

void save_grid(const VoxelGrid& grid, const std::string& frame_tag, const std::string& path);
struct LoadedGrid {
  VoxelGrid grid;
  std::string frame_tag;
};
LoadedGrid load_grid(const std::string& path);

}  // namespace mvmesh
