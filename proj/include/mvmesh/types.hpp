#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstdint>
#include <vector>

namespace mvmesh {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

// Point clouds are stored one point per row.
using Points3 = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Points2 = Eigen::Matrix<double, Eigen::Dynamic, 2, Eigen::RowMajor>;
using Faces = Eigen::Matrix<int, Eigen::Dynamic, 3, Eigen::RowMajor>;

// Dense channel stack, C x H x W, row-major within each channel.
struct MapStack {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  MapStack() = default;
  MapStack(int c, int h, int w) : channels(c), height(h), width(w), data(static_cast<size_t>(c) * h * w, 0.0) {}

  double& at(int c, int y, int x) { return data[(static_cast<size_t>(c) * height + y) * width + x]; }
  double at(int c, int y, int x) const { return data[(static_cast<size_t>(c) * height + y) * width + x]; }
  const double* channel(int c) const { return data.data() + static_cast<size_t>(c) * height * width; }
  double* channel(int c) { return data.data() + static_cast<size_t>(c) * height * width; }
  double channel_max(int c) const;
};

// Binary image, 0/1 per pixel.
struct BinaryMap {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  BinaryMap() = default;
  BinaryMap(int h, int w) : height(h), width(w), data(static_cast<size_t>(h) * w, 0) {}

  std::uint8_t& at(int y, int x) { return data[static_cast<size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return data[static_cast<size_t>(y) * width + x]; }
  size_t count() const;
};

}  // namespace mvmesh
