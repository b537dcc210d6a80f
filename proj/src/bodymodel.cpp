#include "mvmesh/bodymodel.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "mvmesh/rotation.hpp"

namespace mvmesh {

namespace {

// Rest joint locations, meters, pelvis at the origin, y up, left = +x.
const double kJointTable[kNumJoints][3] = {
    {0.00, 0.00, 0.0},    // 0 pelvis
    {0.00, 0.10, 0.0},    // 1 spine
    {0.00, 0.26, 0.0},    // 2 chest
    {0.00, 0.46, 0.0},    // 3 neck
    {0.00, 0.62, 0.0},    // 4 head
    {0.18, 0.42, 0.0},    // 5 l_shoulder
    {-0.18, 0.42, 0.0},   // 6 r_shoulder
    {0.46, 0.42, 0.0},    // 7 l_elbow
    {-0.46, 0.42, 0.0},   // 8 r_elbow
    {0.70, 0.42, 0.0},    // 9 l_wrist
    {-0.70, 0.42, 0.0},   // 10 r_wrist
    {0.10, -0.06, 0.0},   // 11 l_hip
    {-0.10, -0.06, 0.0},  // 12 r_hip
    {0.11, -0.50, 0.0},   // 13 l_knee
    {-0.11, -0.50, 0.0},  // 14 r_knee
    {0.11, -0.93, 0.0},   // 15 l_ankle
    {-0.11, -0.93, 0.0},  // 16 r_ankle
};

// Tube radii keyed by the child joint of each skeleton edge.
const double kRadiusParentEnd[kNumJoints] = {0, 0.12, 0.13, 0.12, 0.045, 0.04, 0.04, 0.05, 0.05,
                                             0.04, 0.04, 0.075, 0.075, 0.06, 0.06, 0.05, 0.05};
const double kRadiusChildEnd[kNumJoints] = {0, 0.13, 0.12, 0.05, 0.05, 0.04, 0.04, 0.04, 0.04,
                                            0.033, 0.033, 0.06, 0.06, 0.05, 0.05, 0.038, 0.038};

const int kEdgePart[kNumJoints] = {-1, kPartTorso, kPartTorso, kPartTorso, kPartHead,
                                   kPartTorso, kPartTorso, kPartLeftArm, kPartRightArm,
                                   kPartLeftArm, kPartRightArm, kPartLeftLeg, kPartRightLeg,
                                   kPartLeftLeg, kPartRightLeg, kPartLeftLeg, kPartRightLeg};

constexpr int kHeadJoint = 4;
constexpr double kHeadRadius = 0.10;
constexpr double kOvershoot = 0.08;  // tube extension past each joint, fraction of length

struct MeshBuilder {
  std::vector<Vec3> verts;
  std::vector<std::array<int, 3>> faces;
  std::vector<std::pair<int, double>> weight_a;  // (joint, weight) pairs per vertex
  std::vector<std::pair<int, double>> weight_b;
  std::vector<std::vector<int>> anchor_rings;    // per joint, vertex indices of the anchor ring

  MeshBuilder() : anchor_rings(kNumJoints) {}

  int add_vertex(const Vec3& p, int ja, double wa, int jb, double wb) {
    verts.push_back(p);
    weight_a.emplace_back(ja, wa);
    weight_b.emplace_back(jb, wb);
    return static_cast<int>(verts.size()) - 1;
  }
};

void ring_basis(const Vec3& axis, Vec3* u, Vec3* w) {
  Vec3 ref(0.0, 1.0, 0.0);
  if (std::abs(axis.dot(ref)) > 0.9) ref = Vec3(1.0, 0.0, 0.0);
  *u = axis.cross(ref).normalized();
  *w = axis.cross(*u);
}

// Tube from joint a to joint b with rings at t = {-e, 0, 1/2, 1, 1+e} plus two
// pole vertices. The t=0 and t=1 rings sit exactly on the joints; their
// centroids reproduce the joint positions, which the joint regressor relies on.
void add_tube(MeshBuilder* mb, int ja, int jb, const Vec3& pa, const Vec3& pb, double ra,
              double rb, int segments) {
  const Vec3 d = pb - pa;
  const double len = d.norm();
  if (len < 1e-6) throw ConfigError("template: zero-length skeleton edge");
  const Vec3 axis = d / len;
  Vec3 u, w;
  ring_basis(axis, &u, &w);

  const double ts[5] = {-kOvershoot, 0.0, 0.5, 1.0, 1.0 + kOvershoot};
  std::vector<std::vector<int>> rings(5);
  for (int r = 0; r < 5; ++r) {
    const double t = ts[r];
    const double tc = std::clamp(t, 0.0, 1.0);
    const Vec3 center = pa + t * len * axis;
    const double radius = ra + tc * (rb - ra);
    const double wb = tc;  // linear proximal->distal skinning ramp
    for (int s = 0; s < segments; ++s) {
      const double phi = 2.0 * M_PI * s / segments;
      const Vec3 p = center + radius * (std::cos(phi) * u + std::sin(phi) * w);
      const int idx = mb->add_vertex(p, ja, 1.0 - wb, jb, wb);
      rings[r].push_back(idx);
    }
  }
  const int pole_a =
      mb->add_vertex(pa - (kOvershoot * len + 0.5 * ra) * axis, ja, 1.0, jb, 0.0);
  const int pole_b =
      mb->add_vertex(pb + (kOvershoot * len + 0.5 * rb) * axis, ja, 0.0, jb, 1.0);

  for (int r = 0; r + 1 < 5; ++r) {
    for (int s = 0; s < segments; ++s) {
      const int sn = (s + 1) % segments;
      mb->faces.push_back({rings[r][s], rings[r + 1][s], rings[r + 1][sn]});
      mb->faces.push_back({rings[r][s], rings[r + 1][sn], rings[r][sn]});
    }
  }
  for (int s = 0; s < segments; ++s) {
    const int sn = (s + 1) % segments;
    mb->faces.push_back({pole_a, rings[0][sn], rings[0][s]});
    mb->faces.push_back({pole_b, rings[4][s], rings[4][sn]});
  }

  // Anchor rings: a joint is claimed by the t=0 ring of its first outgoing
  // edge; leaves fall back to the t=1 ring of their incoming edge.
  if (mb->anchor_rings[ja].empty()) mb->anchor_rings[ja] = rings[1];
  mb->anchor_rings[jb] = rings[3];  // overwritten by an outgoing edge later if any
}

void add_sphere(MeshBuilder* mb, int joint, const Vec3& center, double radius, int segments) {
  const double polar[3] = {M_PI * 0.25, M_PI * 0.5, M_PI * 0.75};
  std::vector<std::vector<int>> rings(3);
  for (int r = 0; r < 3; ++r) {
    for (int s = 0; s < segments; ++s) {
      const double phi = 2.0 * M_PI * s / segments;
      const Vec3 p = center + radius * Vec3(std::sin(polar[r]) * std::cos(phi),
                                            std::cos(polar[r]),
                                            std::sin(polar[r]) * std::sin(phi));
      rings[r].push_back(mb->add_vertex(p, joint, 1.0, joint, 0.0));
    }
  }
  const int top = mb->add_vertex(center + Vec3(0, radius, 0), joint, 1.0, joint, 0.0);
  const int bot = mb->add_vertex(center - Vec3(0, radius, 0), joint, 1.0, joint, 0.0);
  for (int r = 0; r + 1 < 3; ++r) {
    for (int s = 0; s < segments; ++s) {
      const int sn = (s + 1) % segments;
      mb->faces.push_back({rings[r][s], rings[r + 1][s], rings[r + 1][sn]});
      mb->faces.push_back({rings[r][s], rings[r + 1][sn], rings[r][sn]});
    }
  }
  for (int s = 0; s < segments; ++s) {
    const int sn = (s + 1) % segments;
    mb->faces.push_back({top, rings[0][sn], rings[0][s]});
    mb->faces.push_back({bot, rings[2][s], rings[2][sn]});
  }
}

void check_tree(const std::vector<int>& parents) {
  if (static_cast<int>(parents.size()) != kNumJoints)
    throw ConfigError("template: skeleton must have 17 joints");
  if (parents[0] != -1) throw ConfigError("template: joint 0 must be the root");
  for (int j = 1; j < kNumJoints; ++j) {
    if (parents[j] < 0 || parents[j] >= kNumJoints)
      throw ConfigError("template: parent index out of range");
    int cur = j;
    int steps = 0;
    while (cur != 0) {
      cur = parents[cur];
      if (cur < 0 || ++steps > kNumJoints)
        throw ConfigError("template: skeleton is not a tree");
    }
  }
}

// Smooth displacement fields evaluated at rest positions; entry s feeds
// shape coefficient beta_s.
Vec3 shape_field(int s, const Vec3& p, int part) {
  const double x = p.x(), y = p.y(), z = p.z();
  switch (s) {
    case 0: return Vec3(0.0, 0.030 * y, 0.0);
    case 1: return Vec3(0.020 * x, 0.0, 0.0);
    case 2: return Vec3(0.018 * x, 0.0, 0.018 * z);
    case 3: {  // limb length
      if (part == kPartLeftArm || part == kPartRightArm) {
        const double sx = x >= 0 ? 1.0 : -1.0;
        return Vec3(0.025 * (x - sx * 0.18), 0.0, 0.0);
      }
      if (part == kPartLeftLeg || part == kPartRightLeg) return Vec3(0.0, 0.030 * (y + 0.06), 0.0);
      return Vec3::Zero();
    }
    case 4: return Vec3(0.0, 0.025 * std::max(y, 0.0), 0.0);
    case 5: {  // head volume
      const Vec3 c(kJointTable[kHeadJoint][0], kJointTable[kHeadJoint][1], kJointTable[kHeadJoint][2]);
      const Vec3 d = p - c;
      return 0.06 * std::exp(-d.squaredNorm() / (2.0 * 0.12 * 0.12)) * d;
    }
    case 6: {  // shoulder breadth
      const double g = std::exp(-(y - 0.42) * (y - 0.42) / (2.0 * 0.15 * 0.15));
      return Vec3(0.030 * x * g, 0.0, 0.0);
    }
    case 7: {  // leg girth
      if (part != kPartLeftLeg && part != kPartRightLeg) return Vec3::Zero();
      const double sx = x >= 0 ? 1.0 : -1.0;
      const double ramp = std::clamp((-0.06 - y) / 0.2, 0.0, 1.0);
      return 0.020 * ramp * Vec3(x - sx * 0.11, 0.0, z);
    }
    case 8: {  // arm girth
      if (part != kPartLeftArm && part != kPartRightArm) return Vec3::Zero();
      return 0.020 * Vec3(0.0, y - 0.42, z);
    }
    case 9: return Vec3(0.0, 0.0, 0.020 * std::max(y, 0.0));
    default: return Vec3::Zero();
  }
}

struct FkState {
  Points3 rest_joints;             // K x 3
  std::vector<Mat3> local_rot;     // K, root = identity
  std::vector<Mat3> global_rot;    // K
  Points3 posed_joints;            // K x 3, before global rotation / centering
};

FkState run_fk(const BodyTemplate& tmpl, const BodyParams& params) {
  FkState fk;
  fk.rest_joints = tmpl.rest_joints(params.beta);
  const int k = tmpl.n_joints();
  fk.local_rot.assign(k, Mat3::Identity());
  fk.global_rot.assign(k, Mat3::Identity());
  fk.posed_joints = Points3::Zero(k, 3);
  fk.posed_joints.row(0) = fk.rest_joints.row(0);
  for (int j = 1; j < k; ++j) {
    fk.local_rot[j] = axis_angle_to_matrix(Vec3(params.theta_j.row(j - 1).transpose()));
    const int p = tmpl.parents(j);
    fk.global_rot[j] = fk.global_rot[p] * fk.local_rot[j];
    const Vec3 offset = (fk.rest_joints.row(j) - fk.rest_joints.row(p)).transpose();
    fk.posed_joints.row(j) =
        fk.posed_joints.row(p) + (fk.global_rot[p] * offset).transpose();
  }
  return fk;
}

}  // namespace

const std::vector<int>& default_parents() {
  static const std::vector<int> p = {-1, 0, 1, 2, 3, 2, 2, 5, 6, 7, 8, 0, 0, 11, 12, 13, 14};
  return p;
}

void BodyParams::validate() const {
  if (theta_j.rows() != kNumJoints - 1 || theta_j.cols() != 3)
    throw ConfigError("params: theta_j must be (K-1) x 3");
  if (beta.size() != kNumShapes) throw ConfigError("params: beta must have 10 entries");
  for (Eigen::Index j = 0; j < theta_j.rows(); ++j)
    if (theta_j.row(j).norm() >= M_PI) throw ConfigError("params: joint angle magnitude must stay below pi");
  if (theta_g.norm() >= M_PI) throw ConfigError("params: global angle magnitude must stay below pi");
  if (!theta_j.allFinite() || !beta.allFinite() || !theta_g.allFinite())
    throw ConfigError("params: non-finite entries");
}

void TemplateConfig::validate() const {
  if (ring_segments < 3) throw ConfigError("template: ring_segments must be >= 3");
  if (!parents.empty()) check_tree(parents);
}

Points3 BodyTemplate::shaped_vertices(const VecX& beta) const {
  Points3 out = rest_vertices;
  for (int s = 0; s < kNumShapes; ++s) out += beta(s) * shape_basis[s];
  return out;
}

Points3 BodyTemplate::rest_joints(const VecX& beta) const {
  return joint_regressor * shaped_vertices(beta);
}

BodyTemplate make_template(const TemplateConfig& config) {
  config.validate();
  std::vector<int> parents = config.parents.empty() ? default_parents() : config.parents;
  check_tree(parents);

  Points3 joint_pos(kNumJoints, 3);
  for (int j = 0; j < kNumJoints; ++j)
    joint_pos.row(j) = Eigen::RowVector3d(kJointTable[j][0], kJointTable[j][1], kJointTable[j][2]);

  // Children of each part, in generation order so part vertex ranges stay
  // contiguous.
  std::vector<std::vector<int>> part_children(kNumParts);
  for (int j = 1; j < kNumJoints; ++j) part_children[kEdgePart[j]].push_back(j);

  MeshBuilder mb;
  BodyTemplate tmpl;
  std::vector<int> part_of_vertex;
  for (int part = 0; part < kNumParts; ++part) {
    const int begin = static_cast<int>(mb.verts.size());
    for (int child : part_children[part]) {
      const int parent = parents[child];
      add_tube(&mb, parent, child, Vec3(joint_pos.row(parent).transpose()),
               Vec3(joint_pos.row(child).transpose()), kRadiusParentEnd[child],
               kRadiusChildEnd[child], config.ring_segments);
    }
    if (part == kPartHead)
      add_sphere(&mb, kHeadJoint, Vec3(joint_pos.row(kHeadJoint).transpose()), kHeadRadius,
                 config.ring_segments);
    const int end = static_cast<int>(mb.verts.size());
    tmpl.part_ranges[part] = {begin, end};
    part_of_vertex.resize(end, part);
  }

  const int v = static_cast<int>(mb.verts.size());
  tmpl.rest_vertices = Points3(v, 3);
  for (int i = 0; i < v; ++i) tmpl.rest_vertices.row(i) = mb.verts[i].transpose();

  tmpl.faces = Faces(static_cast<Eigen::Index>(mb.faces.size()), 3);
  for (size_t f = 0; f < mb.faces.size(); ++f)
    tmpl.faces.row(static_cast<Eigen::Index>(f)) << mb.faces[f][0], mb.faces[f][1], mb.faces[f][2];

  tmpl.parents = Eigen::VectorXi(kNumJoints);
  for (int j = 0; j < kNumJoints; ++j) tmpl.parents(j) = parents[j];

  tmpl.skin_weights = MatX::Zero(v, kNumJoints);
  for (int i = 0; i < v; ++i) {
    tmpl.skin_weights(i, mb.weight_a[i].first) += mb.weight_a[i].second;
    tmpl.skin_weights(i, mb.weight_b[i].first) += mb.weight_b[i].second;
  }

  tmpl.joint_regressor = MatX::Zero(kNumJoints, v);
  for (int j = 0; j < kNumJoints; ++j) {
    const auto& ring = mb.anchor_rings[j];
    if (ring.empty()) throw ConfigError("template: joint without an anchor ring");
    const double w = 1.0 / static_cast<double>(ring.size());
    for (int idx : ring) tmpl.joint_regressor(j, idx) = w;
  }

  tmpl.shape_basis.resize(kNumShapes);
  for (int s = 0; s < kNumShapes; ++s) {
    tmpl.shape_basis[s] = Points3::Zero(v, 3);
    for (int i = 0; i < v; ++i)
      tmpl.shape_basis[s].row(i) =
          shape_field(s, Vec3(tmpl.rest_vertices.row(i).transpose()), part_of_vertex[i]).transpose();
  }

  tmpl.joint_shape_dirs.resize(kNumShapes);
  for (int s = 0; s < kNumShapes; ++s)
    tmpl.joint_shape_dirs[s] = tmpl.joint_regressor * tmpl.shape_basis[s];

  tmpl.seed = config.seed;
  return tmpl;
}

PosedBody forward(const BodyTemplate& tmpl, const BodyParams& params) {
  params.validate();
  const FkState fk = run_fk(tmpl, params);
  const Points3 shaped = tmpl.shaped_vertices(params.beta);
  const int v = tmpl.n_vertices();
  const int k = tmpl.n_joints();

  Points3 skinned = Points3::Zero(v, 3);
  for (int i = 0; i < v; ++i) {
    Vec3 acc = Vec3::Zero();
    const Vec3 x = shaped.row(i).transpose();
    for (int j = 0; j < k; ++j) {
      const double w = tmpl.skin_weights(i, j);
      if (w == 0.0) continue;
      const Vec3 rj = fk.rest_joints.row(j).transpose();
      const Vec3 pj = fk.posed_joints.row(j).transpose();
      acc += w * (fk.global_rot[j] * (x - rj) + pj);
    }
    skinned.row(i) = acc.transpose();
  }

  const Vec3 pelvis = (tmpl.joint_regressor.row(0) * skinned).transpose();
  const Mat3 rg = axis_angle_to_matrix(params.theta_g);
  PosedBody out;
  out.vertices = Points3(v, 3);
  for (int i = 0; i < v; ++i)
    out.vertices.row(i) = (rg * (skinned.row(i).transpose() - pelvis)).transpose();
  out.joints = tmpl.joint_regressor * out.vertices;
  return out;
}

BodyJacobian forward_jacobian(const BodyTemplate& tmpl, const BodyParams& params,
                              bool with_vertices) {
  params.validate();
  const FkState fk = run_fk(tmpl, params);
  const int k = tmpl.n_joints();
  const Mat3 rg = axis_angle_to_matrix(params.theta_g);

  // Ancestor sets (proper ancestors, excluding the root which carries no
  // theta_j).
  std::vector<std::vector<int>> ancestors(k);
  for (int j = 0; j < k; ++j) {
    int cur = tmpl.parents(j);
    while (cur > 0) {
      ancestors[j].push_back(cur);
      cur = tmpl.parents(cur);
    }
  }

  // M[j][i] = A_parent d R_j / d w_i R_j^T A_parent^T; the derivative of any
  // downstream global rotation is M * A_downstream.
  std::vector<std::array<Mat3, 3>> m(k);
  for (int j = 1; j < k; ++j) {
    const auto dr = axis_angle_jacobian(Vec3(params.theta_j.row(j - 1).transpose()));
    const Mat3& ap = fk.global_rot[tmpl.parents(j)];
    for (int i = 0; i < 3; ++i) m[j][i] = ap * dr[i] * fk.local_rot[j].transpose() * ap.transpose();
  }

  // d posed_joint / d beta_s along the kinematic chain.
  std::vector<Points3> dj_dbeta(kNumShapes);
  for (int s = 0; s < kNumShapes; ++s) {
    const Points3& jd = tmpl.joint_shape_dirs[s];
    dj_dbeta[s] = Points3::Zero(k, 3);
    dj_dbeta[s].row(0) = jd.row(0);
    for (int j = 1; j < k; ++j) {
      const int p = tmpl.parents(j);
      const Vec3 d = (jd.row(j) - jd.row(p)).transpose();
      dj_dbeta[s].row(j) = dj_dbeta[s].row(p) + (fk.global_rot[p] * d).transpose();
    }
  }

  const Vec3 pelvis = fk.posed_joints.row(0).transpose();
  BodyJacobian out;
  out.d_joints = MatX::Zero(k * 3, kParamDim);

  for (int j = 0; j < k; ++j) {
    const Vec3 pj = fk.posed_joints.row(j).transpose();
    // theta_j entries: only proper ancestors move a joint.
    for (int a : ancestors[j]) {
      const Vec3 lever = pj - fk.posed_joints.row(a).transpose();
      for (int i = 0; i < 3; ++i) {
        const Vec3 g = rg * (m[a][i] * lever);
        out.d_joints.block<3, 1>(j * 3, (a - 1) * 3 + i) = g;
      }
    }
    // beta: pelvis motion cancels through the re-centering.
    for (int s = 0; s < kNumShapes; ++s) {
      const Vec3 d = (dj_dbeta[s].row(j) - dj_dbeta[s].row(0)).transpose();
      out.d_joints.block<3, 1>(j * 3, kThetaJDim + s) = rg * d;
    }
    // theta_g rotates the centered joint about the origin.
    const Mat3 dg = rotate_point_jacobian(params.theta_g, pj - pelvis);
    out.d_joints.block<3, 3>(j * 3, kPoseShapeDim) = dg;
  }

  if (!with_vertices) return out;

  const Points3 shaped = tmpl.shaped_vertices(params.beta);
  const int v = tmpl.n_vertices();
  out.d_vertices = MatX::Zero(v * 3, kParamDim);
  for (int i = 0; i < v; ++i) {
    const Vec3 x = shaped.row(i).transpose();
    Vec3 v_pre = Vec3::Zero();
    for (int j = 0; j < k; ++j) {
      const double w = tmpl.skin_weights(i, j);
      if (w == 0.0) continue;
      v_pre += w * (fk.global_rot[j] * (x - fk.rest_joints.row(j).transpose()) +
                    fk.posed_joints.row(j).transpose());
    }

    for (int j = 0; j < k; ++j) {
      const double w = tmpl.skin_weights(i, j);
      if (w == 0.0) continue;
      const Vec3 local = x - fk.rest_joints.row(j).transpose();
      // Rotation at m moves this vertex when m is an ancestor of j or j itself.
      for (int a = 1; a < k; ++a) {
        const bool self = (a == j);
        const bool anc = std::find(ancestors[j].begin(), ancestors[j].end(), a) != ancestors[j].end();
        if (!self && !anc) continue;
        const Vec3 lever_joint =
            anc ? Vec3(fk.posed_joints.row(j).transpose() - fk.posed_joints.row(a).transpose())
                : Vec3::Zero();
        for (int c = 0; c < 3; ++c) {
          const Vec3 d =
              m[a][c] * (fk.global_rot[j] * local) + (anc ? Vec3(m[a][c] * lever_joint) : Vec3::Zero());
          out.d_vertices.block<3, 1>(i * 3, (a - 1) * 3 + c) += w * (rg * d);
        }
      }
      for (int s = 0; s < kNumShapes; ++s) {
        const Vec3 basis_dir = tmpl.shape_basis[s].row(i).transpose();
        const Vec3 joint_dir = tmpl.joint_shape_dirs[s].row(j).transpose();
        const Vec3 d = fk.global_rot[j] * (basis_dir - joint_dir) +
                       dj_dbeta[s].row(j).transpose() - dj_dbeta[s].row(0).transpose();
        out.d_vertices.block<3, 1>(i * 3, kThetaJDim + s) += w * (rg * d);
      }
    }
    out.d_vertices.block<3, 3>(i * 3, kPoseShapeDim) =
        rotate_point_jacobian(params.theta_g, v_pre - pelvis);
  }
  return out;
}

namespace {

constexpr char kTemplateMagic[8] = {'M', 'V', 'T', 'P', '0', '0', '0', '1'};

template <typename T>
void write_raw(std::ofstream& f, const T* data, size_t count) {
  f.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * sizeof(T)));
}

template <typename T>
void read_raw(std::ifstream& f, T* data, size_t count) {
  f.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(count * sizeof(T)));
  if (!f) throw DataError("template file truncated");
}

}  // namespace

void save_template(const BodyTemplate& tmpl, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open template file for writing: " + path);
  f.write(kTemplateMagic, 8);
  const std::int32_t dims[4] = {tmpl.n_vertices(), tmpl.n_faces(), kNumJoints, kNumShapes};
  write_raw(f, dims, 4);
  write_raw(f, &tmpl.seed, 1);
  std::int32_t parents[kNumJoints];
  for (int j = 0; j < kNumJoints; ++j) parents[j] = tmpl.parents(j);
  write_raw(f, parents, kNumJoints);
  std::int32_t ranges[kNumParts * 2];
  for (int p = 0; p < kNumParts; ++p) {
    ranges[p * 2] = tmpl.part_ranges[p].first;
    ranges[p * 2 + 1] = tmpl.part_ranges[p].second;
  }
  write_raw(f, ranges, kNumParts * 2);
  write_raw(f, tmpl.rest_vertices.data(), tmpl.rest_vertices.size());
  write_raw(f, tmpl.faces.data(), tmpl.faces.size());
  for (const auto& b : tmpl.shape_basis) write_raw(f, b.data(), b.size());
  write_raw(f, tmpl.skin_weights.data(), tmpl.skin_weights.size());
  write_raw(f, tmpl.joint_regressor.data(), tmpl.joint_regressor.size());
  if (!f) throw DataError("failed writing template file: " + path);
}

BodyTemplate load_template(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open template file: " + path);
  char magic[8];
  read_raw(f, magic, 8);
  if (std::memcmp(magic, kTemplateMagic, 8) != 0) throw DataError("bad template magic: " + path);
  std::int32_t dims[4];
  read_raw(f, dims, 4);
  const int v = dims[0], nf = dims[1];
  if (dims[2] != kNumJoints || dims[3] != kNumShapes || v <= 0 || nf <= 0)
    throw DataError("template header dimensions invalid");
  BodyTemplate tmpl;
  read_raw(f, &tmpl.seed, 1);
  std::int32_t parents[kNumJoints];
  read_raw(f, parents, kNumJoints);
  tmpl.parents = Eigen::VectorXi(kNumJoints);
  for (int j = 0; j < kNumJoints; ++j) tmpl.parents(j) = parents[j];
  std::int32_t ranges[kNumParts * 2];
  read_raw(f, ranges, kNumParts * 2);
  for (int p = 0; p < kNumParts; ++p) tmpl.part_ranges[p] = {ranges[p * 2], ranges[p * 2 + 1]};
  tmpl.rest_vertices = Points3(v, 3);
  read_raw(f, tmpl.rest_vertices.data(), tmpl.rest_vertices.size());
  tmpl.faces = Faces(nf, 3);
  read_raw(f, tmpl.faces.data(), tmpl.faces.size());
  tmpl.shape_basis.resize(kNumShapes);
  for (int s = 0; s < kNumShapes; ++s) {
    tmpl.shape_basis[s] = Points3(v, 3);
    read_raw(f, tmpl.shape_basis[s].data(), tmpl.shape_basis[s].size());
  }
  tmpl.skin_weights = MatX(v, kNumJoints);
  read_raw(f, tmpl.skin_weights.data(), tmpl.skin_weights.size());
  tmpl.joint_regressor = MatX(kNumJoints, v);
  read_raw(f, tmpl.joint_regressor.data(), tmpl.joint_regressor.size());
  tmpl.joint_shape_dirs.resize(kNumShapes);
  for (int s = 0; s < kNumShapes; ++s)
    tmpl.joint_shape_dirs[s] = tmpl.joint_regressor * tmpl.shape_basis[s];
  return tmpl;
}

}  // namespace mvmesh
