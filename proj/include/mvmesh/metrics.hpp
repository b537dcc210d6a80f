#pragma once

#include <string>
#include <vector>

#include "mvmesh/types.hpp"

namespace mvmesh {

struct SimilarityTransform {
  double scale = 1.0;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Points3 apply(const Points3& pts) const;
};

// Least-squares similarity alignment pred -> gt (SVD-based, det(R) = +1).
// Throws DegenerateSet on fewer than 3 points or a collinear source cloud.
SimilarityTransform procrustes_align(const Points3& pred, const Points3& gt);

struct SampleErrors {
  double mpjpe_mm = 0.0;
  double pmpjpe_mm = 0.0;
  double pve_mm = 0.0;
  double ppve_mm = 0.0;
};

struct EvalReport {
  std::vector<SampleErrors> samples;
  SampleErrors mean;
  std::string mode;

  int count() const { return static_cast<int>(samples.size()); }
};

// Joint errors pelvis-centered (joint 0), Procrustes-aligned for the P
// variants; vertex errors follow the same two conventions. Millimeters.
SampleErrors sample_errors(const Points3& pred_joints, const Points3& pred_vertices,
                           const Points3& gt_joints, const Points3& gt_vertices);

EvalReport evaluate(const std::vector<Points3>& pred_joints,
                    const std::vector<Points3>& pred_vertices,
                    const std::vector<Points3>& gt_joints,
                    const std::vector<Points3>& gt_vertices, const std::string& mode);

}  // namespace mvmesh
