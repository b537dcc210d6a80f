#include "mvmesh/render2d.hpp"

#include <algorithm>
#include <cmath>

namespace mvmesh {

double MapStack::channel_max(int c) const {
  const double* ch = channel(c);
  double best = ch[0];
  const size_t n = static_cast<size_t>(height) * width;
  for (size_t i = 1; i < n; ++i) best = std::max(best, ch[i]);
  return best;
}

size_t BinaryMap::count() const {
  size_t n = 0;
  for (auto v : data) n += v != 0;
  return n;
}

BinaryMap rasterize_projected(const Points2& pts, const std::vector<std::uint8_t>& valid,
                              const Faces& faces, int height, int width) {
  BinaryMap out(height, width);
  for (Eigen::Index f = 0; f < faces.rows(); ++f) {
    const int ia = faces(f, 0), ib = faces(f, 1), ic = faces(f, 2);
    if (!valid[ia] || !valid[ib] || !valid[ic]) continue;
    const double ax = pts(ia, 0), ay = pts(ia, 1);
    const double bx = pts(ib, 0), by = pts(ib, 1);
    const double cx = pts(ic, 0), cy = pts(ic, 1);
    const int x0 = std::max(0, static_cast<int>(std::ceil(std::min({ax, bx, cx}))));
    const int x1 = std::min(width - 1, static_cast<int>(std::floor(std::max({ax, bx, cx}))));
    const int y0 = std::max(0, static_cast<int>(std::ceil(std::min({ay, by, cy}))));
    const int y1 = std::min(height - 1, static_cast<int>(std::floor(std::max({ay, by, cy}))));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double px = x, py = y;
        const double e0 = (bx - ax) * (py - ay) - (by - ay) * (px - ax);
        const double e1 = (cx - bx) * (py - by) - (cy - by) * (px - bx);
        const double e2 = (ax - cx) * (py - cy) - (ay - cy) * (px - cx);
        const bool inside = (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
        if (inside) out.at(y, x) = 1;
      }
    }
  }
  return out;
}

BinaryMap rasterize_mask(const Points3& vertices, const Faces& faces, const Extrinsics& ext,
                         const Intrinsics& intr) {
  const Eigen::Index n = vertices.rows();
  Points2 pts = Points2::Zero(n, 2);
  std::vector<std::uint8_t> valid(n, 0);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec3 p = ext.apply(Vec3(vertices.row(i).transpose()));
    if (p.z() > kMinDepth) {
      valid[i] = 1;
      pts(i, 0) = intr.focal.x() * p.x() / p.z() + intr.center.x();
      pts(i, 1) = intr.focal.y() * p.y() / p.z() + intr.center.y();
    }
  }
  BinaryMap mask = rasterize_projected(pts, valid, faces, intr.height, intr.width);
  if (mask.count() == 0) throw EmptySilhouette("rasterize_mask: no triangle covers any pixel");
  return mask;
}

BinaryMap rasterize_mask_ortho(const Points3& rotated, const Faces& faces, const OrthoCam& cam,
                               int height, int width) {
  const Points2 pts = project_ortho(rotated, cam);
  const std::vector<std::uint8_t> valid(rotated.rows(), 1);
  return rasterize_projected(pts, valid, faces, height, width);
}

MapStack joint_heatmaps(const Points2& joints, const std::vector<std::uint8_t>& visibility,
                        int height, int width, double sigma) {
  if (sigma <= 0.0) throw ConfigError("joint_heatmaps: sigma must be positive");
  const int n = static_cast<int>(joints.rows());
  MapStack out(n, height, width);
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (int j = 0; j < n; ++j) {
    if (!visibility[j]) continue;
    const double jx = joints(j, 0), jy = joints(j, 1);
    double* ch = out.channel(j);
    for (int y = 0; y < height; ++y) {
      const double dy2 = (y - jy) * (y - jy);
      for (int x = 0; x < width; ++x) {
        const double dx2 = (x - jx) * (x - jx);
        ch[static_cast<size_t>(y) * width + x] = std::exp(-(dx2 + dy2) * inv);
      }
    }
  }
  return out;
}

BinaryMap occupancy_map(const MapStack& heatmaps, const BinaryMap& mask, double tau) {
  BinaryMap out(mask.height, mask.width);
  const size_t n = static_cast<size_t>(mask.height) * mask.width;
  for (size_t i = 0; i < n; ++i) out.data[i] = mask.data[i];
  for (int c = 0; c < heatmaps.channels; ++c) {
    const double* ch = heatmaps.channel(c);
    for (size_t i = 0; i < n; ++i)
      if (ch[i] > tau) out.data[i] = 1;
  }
  return out;
}

double bilinear_sample(const double* channel, int height, int width, double x, double y) {
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const double fx = x - x0, fy = y - y0;
  double acc = 0.0;
  for (int dy = 0; dy <= 1; ++dy) {
    const int yy = y0 + dy;
    if (yy < 0 || yy >= height) continue;
    const double wy = dy ? fy : 1.0 - fy;
    for (int dx = 0; dx <= 1; ++dx) {
      const int xx = x0 + dx;
      if (xx < 0 || xx >= width) continue;
      const double wx = dx ? fx : 1.0 - fx;
      acc += wy * wx * channel[static_cast<size_t>(yy) * width + xx];
    }
  }
  return acc;
}

CropInfo compute_crop(const BinaryMap& mask, const Points2& joints,
                      const std::vector<std::uint8_t>& visibility, double bbox_scale,
                      int out_size) {
  if (out_size <= 1) throw ConfigError("compute_crop: out_size must exceed 1");
  if (bbox_scale <= 0.0) throw ConfigError("compute_crop: bbox_scale must be positive");
  int minx = mask.width, maxx = -1, miny = mask.height, maxy = -1;
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      if (mask.at(y, x)) {
        minx = std::min(minx, x);
        maxx = std::max(maxx, x);
        miny = std::min(miny, y);
        maxy = std::max(maxy, y);
      }
  for (Eigen::Index j = 0; j < joints.rows(); ++j) {
    if (!visibility[j]) continue;
    const int jx = static_cast<int>(std::lround(joints(j, 0)));
    const int jy = static_cast<int>(std::lround(joints(j, 1)));
    if (jx < 0 || jx >= mask.width || jy < 0 || jy >= mask.height) continue;
    minx = std::min(minx, jx);
    maxx = std::max(maxx, jx);
    miny = std::min(miny, jy);
    maxy = std::max(maxy, jy);
  }
  if (maxx < minx || maxy < miny)
    throw EmptyForeground("compute_crop: no silhouette pixels and no visible joints");

  const double extent = std::max(maxx - minx + 1, maxy - miny + 1);
  const double side = bbox_scale * extent;
  CropInfo crop;
  crop.scale = side / out_size;
  const Vec2 center(0.5 * (minx + maxx), 0.5 * (miny + maxy));
  crop.origin = center - Vec2::Constant(crop.scale * 0.5 * (out_size - 1));
  return crop;
}

BinaryMap resample_mask_nearest(const BinaryMap& mask, const CropInfo& crop, int out_size) {
  BinaryMap out(out_size, out_size);
  for (int y = 0; y < out_size; ++y) {
    for (int x = 0; x < out_size; ++x) {
      const Vec2 full = crop.to_full(Vec2(x, y));
      const int nx = static_cast<int>(std::lround(full.x()));
      const int ny = static_cast<int>(std::lround(full.y()));
      if (nx >= 0 && nx < mask.width && ny >= 0 && ny < mask.height)
        out.at(y, x) = mask.at(ny, nx);
    }
  }
  return out;
}

ViewObservation crop_and_resize(const MapStack& heatmaps, const BinaryMap& mask,
                                const Points2& joints, const std::vector<std::uint8_t>& visibility,
                                double bbox_scale, int out_size, double tau) {
  const CropInfo crop = compute_crop(mask, joints, visibility, bbox_scale, out_size);

  ViewObservation obs;
  obs.crop = crop;
  obs.joint_visibility = visibility;
  obs.heatmaps = MapStack(heatmaps.channels, out_size, out_size);
  obs.mask = resample_mask_nearest(mask, crop, out_size);
  for (int y = 0; y < out_size; ++y) {
    for (int x = 0; x < out_size; ++x) {
      const Vec2 full = crop.to_full(Vec2(x, y));
      for (int c = 0; c < heatmaps.channels; ++c)
        obs.heatmaps.at(c, y, x) = bilinear_sample(heatmaps.channel(c), heatmaps.height,
                                                   heatmaps.width, full.x(), full.y());
    }
  }
  obs.occupancy = occupancy_map(obs.heatmaps, obs.mask, tau);
  return obs;
}

PeakInfo channel_peak(const MapStack& maps, int channel) {
  PeakInfo info;
  info.value = -1.0;
  for (int y = 0; y < maps.height; ++y)
    for (int x = 0; x < maps.width; ++x) {
      const double v = maps.at(channel, y, x);
      if (v > info.value) {
        info.value = v;
        info.position = Vec2(x, y);
      }
    }
  return info;
}

MapStack gaussian_blur(const MapStack& maps, double sigma) {
  if (sigma <= 0.0) return maps;
  const int radius = static_cast<int>(std::ceil(3.5 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double total = 0.0;
  for (int k = -radius; k <= radius; ++k) {
    kernel[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));
    total += kernel[k + radius];
  }
  for (double& w : kernel) w /= total;

  const int h = maps.height, w = maps.width;
  MapStack tmp(maps.channels, h, w);
  MapStack out(maps.channels, h, w);
  for (int c = 0; c < maps.channels; ++c) {
    const double* src = maps.channel(c);
    double* mid = tmp.channel(c);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        const int k0 = std::max(-radius, -x), k1 = std::min(radius, w - 1 - x);
        for (int k = k0; k <= k1; ++k)
          acc += kernel[k + radius] * src[static_cast<size_t>(y) * w + x + k];
        mid[static_cast<size_t>(y) * w + x] = acc;
      }
    double* dst = out.channel(c);
    for (int y = 0; y < h; ++y) {
      const int k0 = std::max(-radius, -y), k1 = std::min(radius, h - 1 - y);
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int k = k0; k <= k1; ++k)
          acc += kernel[k + radius] * mid[static_cast<size_t>(y + k) * w + x];
        dst[static_cast<size_t>(y) * w + x] = acc;
      }
    }
  }
  return out;
}

}  // namespace mvmesh
