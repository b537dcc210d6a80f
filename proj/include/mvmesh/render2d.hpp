#pragma once

#include <vector>

#include "mvmesh/camera.hpp"
#include "mvmesh/errors.hpp"
#include "mvmesh/types.hpp"

namespace mvmesh {

// Pixel convention: pixel (ix, iy) samples the continuous image plane at
// integer coordinates (ix, iy). Projection, heatmaps, bilinear sampling and
// crop mapping all share this convention.

// Crop window metadata: full-frame coordinate = origin + scale * crop
// coordinate, applied per axis.
struct CropInfo {
  Vec2 origin = Vec2::Zero();
  double scale = 1.0;

  Vec2 to_full(const Vec2& crop_px) const { return origin + scale * crop_px; }
  Vec2 to_crop(const Vec2& full_px) const { return (full_px - origin) / scale; }
};

struct ViewObservation {
  MapStack heatmaps;                         // N_J channels
  BinaryMap mask;
  BinaryMap occupancy;
  std::vector<std::uint8_t> joint_visibility;  // N_J
  CropInfo crop;

  int size() const { return mask.height; }
};

/// Binary coverage rasterization: a pixel is set iff its center lies inside at
// least one projected triangle. Orientation-independent inside test, no
// z-buffer. Faces touching an invalid (behind-camera) vertex are skipped.
BinaryMap rasterize_projected(const Points2& pts, const std::vector<std::uint8_t>& valid,
                              const Faces& faces, int height, int width);

// Perspective silhouette. Throws EmptySilhouette when nothing lands in-frame.
BinaryMap rasterize_mask(const Points3& vertices, const Faces& faces, const Extrinsics& ext,
                         const Intrinsics& intr);

// Orthographic silhouette of rotated vertices under an OrthoCam. Returns an
// empty (all-zero) map rather than throwing; used for reprojection checks.
BinaryMap rasterize_mask_ortho(const Points3& rotated, const Faces& faces, const OrthoCam& cam,
                               int height, int width);

// Per-joint Gaussian heatmaps, peak value 1 at the joint position. Invisible
// joints yield all-zero channels.
MapStack joint_heatmaps(const Points2& joints, const std::vector<std::uint8_t>& visibility,
                        int height, int width, double sigma);

// Union of silhouette support and thresholded heatmap support.
BinaryMap occupancy_map(const MapStack& heatmaps, const BinaryMap& mask, double tau);

// Square crop around the foreground (mask pixels plus visible joint pixels),
// scaled by bbox_scale and resampled to out_size x out_size. Heatmaps are
// sampled bilinearly, the mask with nearest-neighbor; the occupancy map is
// recomputed from the resampled channels. Throws EmptyForeground.
// Square crop window around the foreground: silhouette pixels plus the pixels
// under visible joints, padded by bbox_scale. Throws EmptyForeground when both
// sets are empty.
CropInfo compute_crop(const BinaryMap& mask, const Points2& joints,
                      const std::vector<std::uint8_t>& visibility, double bbox_scale,
                      int out_size);

BinaryMap resample_mask_nearest(const BinaryMap& mask, const CropInfo& crop, int out_size);

ViewObservation crop_and_resize(const MapStack& heatmaps, const BinaryMap& mask,
                                const Points2& joints, const std::vector<std::uint8_t>& visibility,
                                double bbox_scale, int out_size, double tau);

// Zero-padded bilinear lookup at continuous coordinates.
double bilinear_sample(const double* channel, int height, int width, double x, double y);

// Separable Gaussian blur with zero padding outside the map, kernel radius
// 3.5*sigma. sigma <= 0 returns the input unchanged.
MapStack gaussian_blur(const MapStack& maps, double sigma);

// Location and value of the per-channel maximum (first occurrence in scan
// order on exact ties).
struct PeakInfo {
  Vec2 position = Vec2::Zero();
  double value = 0.0;
};
PeakInfo channel_peak(const MapStack& maps, int channel);

}  // namespace mvmesh
