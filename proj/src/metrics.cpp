#include "mvmesh/metrics.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>

#include "mvmesh/errors.hpp"

namespace mvmesh {

namespace {

double mean_point_distance(const Points3& a, const Points3& b) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) acc += (a.row(i) - b.row(i)).norm();
  return acc / static_cast<double>(a.rows());
}

Points3 center_on_row(const Points3& pts, Eigen::Index row) {
  Points3 out = pts;
  const Eigen::RowVector3d anchor = pts.row(row);
  out.rowwise() -= anchor;
  return out;
}

}  // namespace

Points3 SimilarityTransform::apply(const Points3& pts) const {
  Points3 out(pts.rows(), 3);
  for (Eigen::Index i = 0; i < pts.rows(); ++i)
    out.row(i) = (scale * (rotation * Vec3(pts.row(i).transpose())) + translation).transpose();
  return out;
}

SimilarityTransform procrustes_align(const Points3& pred, const Points3& gt) {
  if (pred.rows() != gt.rows()) throw DegenerateSet("procrustes: point counts disagree");
  const Eigen::Index n = pred.rows();
  if (n < 3) throw DegenerateSet("procrustes: at least 3 points required");

  const Eigen::RowVector3d pred_mean = pred.colwise().mean();
  const Eigen::RowVector3d gt_mean = gt.colwise().mean();
  const Points3 p = pred.rowwise() - pred_mean;
  const Points3 q = gt.rowwise() - gt_mean;

  const double p_var = p.squaredNorm();
  if (p_var < 1e-18) throw DegenerateSet("procrustes: source cloud has no spread");

  const Mat3 cov = p.transpose() * q;
  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Vec3 sv = svd.singularValues();
  if (sv[1] < 1e-12 * std::max(sv[0], 1e-300))
    throw DegenerateSet("procrustes: point sets are collinear");

  Vec3 signs = Vec3::Ones();
  if ((svd.matrixV() * svd.matrixU().transpose()).determinant() < 0) signs[2] = -1.0;

  SimilarityTransform t;
  t.rotation = svd.matrixV() * signs.asDiagonal() * svd.matrixU().transpose();
  t.scale = (sv.array() * signs.array()).sum() / p_var;
  t.translation = gt_mean.transpose() - t.scale * (t.rotation * pred_mean.transpose());
  return t;
}

SampleErrors sample_errors(const Points3& pred_joints, const Points3& pred_vertices,
                           const Points3& gt_joints, const Points3& gt_vertices) {
  if (pred_joints.rows() != gt_joints.rows() || pred_vertices.rows() != gt_vertices.rows())
    throw DegenerateSet("evaluate: prediction and ground truth sizes disagree");

  SampleErrors e;
  e.mpjpe_mm = 1000.0 * mean_point_distance(center_on_row(pred_joints, 0),
                                            center_on_row(gt_joints, 0));
  // The SVD alignment minimizes squared error; the reported metric is a mean
  // of norms, so root translation (itself a similarity transform) can
  // occasionally edge it out. Aligned error is defined as the better of the
  // two candidate alignments.
  const SimilarityTransform tj = procrustes_align(pred_joints, gt_joints);
  e.pmpjpe_mm =
      std::min(1000.0 * mean_point_distance(tj.apply(pred_joints), gt_joints), e.mpjpe_mm);

  // Vertex clouds are root-aligned through the pelvis joint, mirroring the
  // joint convention.
  Points3 pred_v = pred_vertices;
  Points3 gt_v = gt_vertices;
  const Eigen::RowVector3d pred_root = pred_joints.row(0);
  const Eigen::RowVector3d gt_root = gt_joints.row(0);
  pred_v.rowwise() -= pred_root;
  gt_v.rowwise() -= gt_root;
  e.pve_mm = 1000.0 * mean_point_distance(pred_v, gt_v);
  const SimilarityTransform tv = procrustes_align(pred_vertices, gt_vertices);
  e.ppve_mm =
      std::min(1000.0 * mean_point_distance(tv.apply(pred_vertices), gt_vertices), e.pve_mm);
  return e;
}

EvalReport evaluate(const std::vector<Points3>& pred_joints,
                    const std::vector<Points3>& pred_vertices,
                    const std::vector<Points3>& gt_joints,
                    const std::vector<Points3>& gt_vertices, const std::string& mode) {
  const size_t n = pred_joints.size();
  if (pred_vertices.size() != n || gt_joints.size() != n || gt_vertices.size() != n)
    throw DegenerateSet("evaluate: list lengths disagree");

  EvalReport report;
  report.mode = mode;
  report.samples.reserve(n);
  for (size_t i = 0; i < n; ++i)
    report.samples.push_back(
        sample_errors(pred_joints[i], pred_vertices[i], gt_joints[i], gt_vertices[i]));

  if (!report.samples.empty()) {
    for (const SampleErrors& e : report.samples) {
      report.mean.mpjpe_mm += e.mpjpe_mm;
      report.mean.pmpjpe_mm += e.pmpjpe_mm;
      report.mean.pve_mm += e.pve_mm;
      report.mean.ppve_mm += e.ppve_mm;
    }
    const double inv = 1.0 / static_cast<double>(report.samples.size());
    report.mean.mpjpe_mm *= inv;
    report.mean.pmpjpe_mm *= inv;
    report.mean.pve_mm *= inv;
    report.mean.ppve_mm *= inv;
  }
  return report;
}

}  // namespace mvmesh
