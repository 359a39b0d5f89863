#include "tcc/constraints.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace tcc {

namespace {

constexpr double kTinyNorm = 1e-9;

const KinematicChain& chain_of(const SceneModel& scene, EntityKind k) {
  return (k == EntityKind::HumanBody || k == EntityKind::HumanBase)
             ? scene.human
             : scene.robot;
}

const ChainState& chain_state_of(const KeyframeKinematics& kk, EntityKind k) {
  return (k == EntityKind::HumanBody || k == EntityKind::HumanBase) ? kk.human
                                                                    : kk.robot;
}

int chain_offset_of(const SceneModel& scene, EntityKind k) {
  return (k == EntityKind::HumanBody) ? scene.human_offset()
                                      : scene.robot_offset();
}

bool is_chain_body(EntityKind k) {
  return k == EntityKind::HumanBody || k == EntityKind::RobotBody;
}

bool is_base_anchor(EntityKind k) {
  return k == EntityKind::HumanBase || k == EntityKind::RobotBase;
}

}  // namespace

// ---------------------------------------------------------------------------
// Entity geometry
// ---------------------------------------------------------------------------

namespace {

Vector3d entity_point(const EntityRef& e, const KeyframeKinematics& kk) {
  const SceneModel& scene = *kk.scene;
  switch (e.kind) {
    case EntityKind::Object:
      return kk.object_poses[scene.object_index(e.name)].apply(e.point);
    case EntityKind::HumanBody:
    case EntityKind::RobotBody: {
      const KinematicChain& c = chain_of(scene, e.kind);
      return chain_state_of(kk, e.kind).fk.at(c.body_index(e.name)).apply(
          e.point);
    }
    case EntityKind::HumanBase:
      return scene.human.base_pose().apply(e.point);
    case EntityKind::RobotBase:
      return scene.robot.base_pose().apply(e.point);
    case EntityKind::World:
      return e.point;
  }
  return e.point;
}

// Adds d(world point)/d(state) into J (3 x d_x), scaled.
void add_point_jacobian(const EntityRef& e, const KeyframeKinematics& kk,
                        MatrixXd& J, double scale) {
  const SceneModel& scene = *kk.scene;
  if (e.kind == EntityKind::Object) {
    const int k = scene.object_index(e.name);
    const int off = scene.object_offset(k);
    J.block<3, 3>(0, off) += scale * Matrix3d::Identity();
    if (e.point.squaredNorm() > 0) {
      const Vector3d rp = kk.object_poses[k].orientation * e.point;
      J.block<3, 3>(0, off + 3) +=
          scale * (-hat(rp) * kk.object_left_jacobian[k]);
    }
  } else if (is_chain_body(e.kind)) {
    const KinematicChain& c = chain_of(scene, e.kind);
    const int off = chain_offset_of(scene, e.kind);
    if (c.num_joints() > 0) {
      J.block(0, off, 3, c.num_joints()) +=
          scale *
          point_jacobian(c, chain_state_of(kk, e.kind), c.body_index(e.name),
                         e.point);
    }
  }
  // Base anchors and world points are constant.
}

Vector3d entity_axis(const EntityRef& e, const KeyframeKinematics& kk) {
  const SceneModel& scene = *kk.scene;
  switch (e.kind) {
    case EntityKind::Object:
      return kk.object_poses[scene.object_index(e.name)].orientation * e.axis;
    case EntityKind::HumanBody:
    case EntityKind::RobotBody: {
      const KinematicChain& c = chain_of(scene, e.kind);
      return chain_state_of(kk, e.kind)
                 .fk.at(c.body_index(e.name))
                 .orientation *
             e.axis;
    }
    case EntityKind::HumanBase:
      return scene.human.base_pose().orientation * e.axis;
    case EntityKind::RobotBase:
      return scene.robot.base_pose().orientation * e.axis;
    case EntityKind::World:
      return e.axis;
  }
  return e.axis;
}

// d(world angular velocity)/d(state), 3 x d_x.
void add_angular_jacobian(const EntityRef& e, const KeyframeKinematics& kk,
                          MatrixXd& J, double scale) {
  const SceneModel& scene = *kk.scene;
  if (e.kind == EntityKind::Object) {
    const int k = scene.object_index(e.name);
    J.block<3, 3>(0, scene.object_offset(k) + 3) +=
        scale * kk.object_left_jacobian[k];
  } else if (is_chain_body(e.kind)) {
    const KinematicChain& c = chain_of(scene, e.kind);
    const int off = chain_offset_of(scene, e.kind);
    if (c.num_joints() > 0) {
      J.block(0, off, 3, c.num_joints()) +=
          scale * angular_jacobian(c, chain_state_of(kk, e.kind),
                                   c.body_index(e.name));
    }
  }
}

Matrix3d entity_rotation(const EntityRef& e, const KeyframeKinematics& kk) {
  const SceneModel& scene = *kk.scene;
  switch (e.kind) {
    case EntityKind::Object:
      return kk.object_poses[scene.object_index(e.name)].rotation();
    case EntityKind::HumanBody:
    case EntityKind::RobotBody: {
      const KinematicChain& c = chain_of(scene, e.kind);
      return chain_state_of(kk, e.kind)
          .fk.at(c.body_index(e.name))
          .rotation();
    }
    case EntityKind::HumanBase:
      return scene.human.base_pose().rotation();
    case EntityKind::RobotBase:
      return scene.robot.base_pose().rotation();
    case EntityKind::World:
      return Matrix3d::Identity();
  }
  return Matrix3d::Identity();
}

const KinematicChain& joint_range_chain(const FeatureSpec& f,
                                        const SceneModel& scene) {
  if (f.chain == "human") return scene.human;
  if (f.chain == "robot") return scene.robot;
  throw std::invalid_argument("joint-range: chain must be 'human' or 'robot'");
}

std::vector<int> joint_range_indices(const FeatureSpec& f,
                                     const SceneModel& scene) {
  const KinematicChain& c = joint_range_chain(f, scene);
  std::vector<int> idx;
  if (f.joints.empty()) {
    idx.resize(c.num_joints());
    for (int i = 0; i < c.num_joints(); ++i) idx[i] = i;
  } else {
    for (const auto& name : f.joints) {
      const int i = c.joint_index(name);
      if (i < 0) {
        throw std::invalid_argument("joint-range: unknown joint '" + name +
                                    "'");
      }
      idx.push_back(i);
    }
  }
  return idx;
}

}  // namespace

int feature_rows(const FeatureSpec& f, const SceneModel& scene) {
  switch (f.kind) {
    case FeatureKind::PointPosition:
      return 3;
    case FeatureKind::RelativePose:
      return 6;
    case FeatureKind::JointRange:
      return static_cast<int>(joint_range_indices(f, scene).size());
    default:
      return 1;
  }
}

bool feature_row_rotational(const FeatureSpec& f, int row,
                            const SceneModel& scene) {
  switch (f.kind) {
    case FeatureKind::AxisInclination:
    case FeatureKind::AxisAlignment:
      return true;
    case FeatureKind::RelativePose:
      return row >= 3;
    case FeatureKind::JointRange: {
      const KinematicChain& c = joint_range_chain(f, scene);
      const int j = joint_range_indices(f, scene).at(row);
      return c.joint(j).kind == JointKind::Revolute;
    }
    default:
      return false;
  }
}

bool entities_equal(const EntityRef& a, const EntityRef& b, double tol) {
  return a.kind == b.kind && a.name == b.name &&
         (a.point - b.point).lpNorm<Eigen::Infinity>() <= tol &&
         (a.axis - b.axis).lpNorm<Eigen::Infinity>() <= tol;
}

bool features_equal(const FeatureSpec& a, const FeatureSpec& b, double tol) {
  if (a.kind != b.kind) return false;
  if (!entities_equal(a.a, b.a, tol)) return false;
  if (a.b.has_value() != b.b.has_value()) return false;
  if (a.b && !entities_equal(*a.b, *b.b, tol)) return false;
  if ((a.reference_axis - b.reference_axis).lpNorm<Eigen::Infinity>() > tol) {
    return false;
  }
  return a.chain == b.chain && a.joints == b.joints;
}

bool feature_is_entity_based(const FeatureSpec& f) {
  return f.kind != FeatureKind::JointRange;
}

namespace {

std::string describe(const EntityRef& e) {
  switch (e.kind) {
    case EntityKind::Object:
      return "object:" + e.name;
    case EntityKind::HumanBody:
      return "human:" + e.name;
    case EntityKind::RobotBody:
      return "robot:" + e.name;
    case EntityKind::HumanBase:
      return "human-base";
    case EntityKind::RobotBase:
      return "robot-base";
    case EntityKind::World:
      return "world";
  }
  return "?";
}

const char* kind_name(FeatureKind k) {
  switch (k) {
    case FeatureKind::PointPosition:
      return "point-position";
    case FeatureKind::PointDistance:
      return "point-distance";
    case FeatureKind::Height:
      return "height";
    case FeatureKind::AxisInclination:
      return "axis-inclination";
    case FeatureKind::AxisAlignment:
      return "axis-alignment";
    case FeatureKind::RelativePose:
      return "relative-pose";
    case FeatureKind::JointRange:
      return "joint-range";
    case FeatureKind::SupportProxy:
      return "support-force-proxy";
  }
  return "?";
}

}  // namespace

std::string describe(const FeatureSpec& f) {
  std::ostringstream os;
  os << kind_name(f.kind);
  if (f.kind == FeatureKind::JointRange) {
    os << "(" << f.chain << ")";
  } else {
    os << "(" << describe(f.a);
    if (f.b) os << ", " << describe(*f.b);
    os << ")";
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Keyframe kinematics cache
// ---------------------------------------------------------------------------

KeyframeKinematics keyframe_kinematics(const SceneModel& scene,
                                       const VectorXd& x) {
  if (x.size() != scene.dim()) {
    throw std::invalid_argument("keyframe state has wrong dimension");
  }
  KeyframeKinematics kk;
  kk.scene = &scene;
  kk.x = x;
  kk.object_poses.resize(scene.num_objects());
  kk.object_left_jacobian.resize(scene.num_objects());
  for (int k = 0; k < scene.num_objects(); ++k) {
    const Vector6d c = x.segment<6>(scene.object_offset(k));
    kk.object_poses[k] = pose_from_coords(c);
    kk.object_left_jacobian[k] = left_jacobian_so3(c.tail<3>());
  }
  kk.human = chain_state(scene.human, human_q_of(scene, x));
  kk.robot = chain_state(scene.robot, robot_q_of(scene, x));
  return kk;
}

// ---------------------------------------------------------------------------
// Feature evaluation
// ---------------------------------------------------------------------------

void eval_feature(const FeatureSpec& f, const KeyframeKinematics& kk,
                  VectorXd& value, MatrixXd* jacobian) {
  const SceneModel& scene = *kk.scene;
  const int dx = scene.dim();
  const int rows = feature_rows(f, scene);
  value.resize(rows);
  if (jacobian) *jacobian = MatrixXd::Zero(rows, dx);

  switch (f.kind) {
    case FeatureKind::PointPosition: {
      Vector3d p = entity_point(f.a, kk);
      if (f.b) p -= entity_point(*f.b, kk);
      value = p;
      if (jacobian) {
        MatrixXd J = MatrixXd::Zero(3, dx);
        add_point_jacobian(f.a, kk, J, 1.0);
        if (f.b) add_point_jacobian(*f.b, kk, J, -1.0);
        *jacobian = J;
      }
      break;
    }
    case FeatureKind::Height: {
      double h = entity_point(f.a, kk).z();
      if (f.b) h -= entity_point(*f.b, kk).z();
      value[0] = h;
      if (jacobian) {
        MatrixXd J = MatrixXd::Zero(3, dx);
        add_point_jacobian(f.a, kk, J, 1.0);
        if (f.b) add_point_jacobian(*f.b, kk, J, -1.0);
        jacobian->row(0) = J.row(2);
      }
      break;
    }
    case FeatureKind::PointDistance: {
      if (!f.b) throw std::invalid_argument("point-distance needs entity b");
      const Vector3d d = entity_point(f.a, kk) - entity_point(*f.b, kk);
      const double dist = d.norm();
      value[0] = dist;
      if (jacobian) {
        MatrixXd J = MatrixXd::Zero(3, dx);
        add_point_jacobian(f.a, kk, J, 1.0);
        add_point_jacobian(*f.b, kk, J, -1.0);
        const Vector3d dir = d / std::max(dist, kTinyNorm);
        jacobian->row(0) = dir.transpose() * J;
      }
      break;
    }
    case FeatureKind::SupportProxy: {
      if (!f.b) {
        throw std::invalid_argument("support-force-proxy needs entity b");
      }
      Vector3d d = entity_point(f.a, kk) - entity_point(*f.b, kk);
      d.z() = 0.0;
      const double dist = d.norm();
      value[0] = dist;
      if (jacobian) {
        MatrixXd J = MatrixXd::Zero(3, dx);
        add_point_jacobian(f.a, kk, J, 1.0);
        add_point_jacobian(*f.b, kk, J, -1.0);
        const Vector3d dir = d / std::max(dist, kTinyNorm);
        jacobian->row(0) = dir.x() * J.row(0) + dir.y() * J.row(1);
      }
      break;
    }
    case FeatureKind::AxisInclination:
    case FeatureKind::AxisAlignment: {
      const Vector3d a = entity_axis(f.a, kk).normalized();
      Vector3d r;
      if (f.kind == FeatureKind::AxisAlignment) {
        if (!f.b) throw std::invalid_argument("axis-alignment needs entity b");
        r = entity_axis(*f.b, kk).normalized();
      } else {
        r = f.reference_axis.normalized();
      }
      const double u = std::clamp(a.dot(r), -1.0, 1.0);
      const double sin_theta = a.cross(r).norm();
      value[0] = std::atan2(sin_theta, u);
      if (jacobian) {
        MatrixXd Jwa = MatrixXd::Zero(3, dx);
        add_angular_jacobian(f.a, kk, Jwa, 1.0);
        if (sin_theta > 1e-9) {
          // theta = acos(a.r); da = omega x a  =>  dtheta = r^T hat(a) w / sin
          jacobian->row(0) = (r.transpose() * hat(a) * Jwa) / sin_theta;
          if (f.kind == FeatureKind::AxisAlignment) {
            MatrixXd Jwb = MatrixXd::Zero(3, dx);
            add_angular_jacobian(*f.b, kk, Jwb, 1.0);
            jacobian->row(0) += (a.transpose() * hat(r) * Jwb) / sin_theta;
          }
        } else {
          // Cone apex: the true gradient is undefined. Emit a fixed
          // subgradient (tilt of a about a deterministic axis orthogonal to
          // r) so an active row can still pull the axis off the apex.
          Vector3d t = r.cross(Vector3d::UnitX());
          if (t.norm() < 1e-6) t = r.cross(Vector3d::UnitY());
          t.normalize();
          jacobian->row(0) = (u > 0 ? 1.0 : -1.0) * t.transpose() * Jwa;
        }
      }
      break;
    }
    case FeatureKind::RelativePose: {
      if (!f.b) throw std::invalid_argument("relative-pose needs entity b");
      const Vector3d pa = entity_point(f.a, kk);
      const Vector3d pb = entity_point(*f.b, kk);
      const Matrix3d Ra = entity_rotation(f.a, kk);
      const Matrix3d Rb = entity_rotation(*f.b, kk);
      const Matrix3d Rbt = Rb.transpose();
      const Matrix3d Rrel = Rbt * Ra;
      const Vector3d phi = log_so3(Rrel);
      value.head<3>() = Rbt * (pa - pb);
      value.tail<3>() = phi;
      if (jacobian) {
        MatrixXd Jpa = MatrixXd::Zero(3, dx);
        MatrixXd Jpb = MatrixXd::Zero(3, dx);
        MatrixXd Jwa = MatrixXd::Zero(3, dx);
        MatrixXd Jwb = MatrixXd::Zero(3, dx);
        add_point_jacobian(f.a, kk, Jpa, 1.0);
        add_point_jacobian(*f.b, kk, Jpb, 1.0);
        add_angular_jacobian(f.a, kk, Jwa, 1.0);
        add_angular_jacobian(*f.b, kk, Jwb, 1.0);
        jacobian->topRows(3) = Rbt * (Jpa - Jpb + hat(pa - pb) * Jwb);
        jacobian->bottomRows(3) =
            left_jacobian_inv_so3(phi) * Rbt * (Jwa - Jwb);
      }
      break;
    }
    case FeatureKind::JointRange: {
      const KinematicChain& c = joint_range_chain(f, scene);
      const int off = (f.chain == "human") ? scene.human_offset()
                                           : scene.robot_offset();
      const std::vector<int> idx = joint_range_indices(f, scene);
      for (int r = 0; r < static_cast<int>(idx.size()); ++r) {
        value[r] = kk.x[off + idx[r]];
        if (jacobian) (*jacobian)(r, off + idx[r]) = 1.0;
      }
      (void)c;
      break;
    }
  }
}

// ---------------------------------------------------------------------------
// Barrier
// ---------------------------------------------------------------------------

BarrierResult interval_barrier(double value, const Interval& iv,
                               double delta) {
  if (!(delta > 0)) {
    throw std::invalid_argument("interval_barrier: delta must be > 0");
  }
  BarrierResult out;
  if (value > iv.upper) {
    out.active = true;
    out.raw = value - iv.upper;
  } else if (value < iv.lower) {
    out.active = true;
    out.raw = value - iv.lower;
  }
  out.residual = out.raw;
  if (std::abs(out.residual) > delta) {
    out.clipped = true;
    out.residual = std::copysign(delta, out.residual);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Residual rows
// ---------------------------------------------------------------------------

ResidualRows task_residual(const TaskConstraint& c,
                           const KeyframeKinematics& kk,
                           const BarrierParams& bp) {
  const SceneModel& scene = *kk.scene;
  const int rows = feature_rows(c.feature, scene);
  if (static_cast<int>(c.intervals.size()) != rows) {
    throw std::invalid_argument("task constraint '" + c.name + "' has " +
                                std::to_string(c.intervals.size()) +
                                " intervals for " + std::to_string(rows) +
                                " feature rows");
  }
  VectorXd v;
  MatrixXd J;
  eval_feature(c.feature, kk, v, &J);

  ResidualRows out;
  out.residual.setZero(rows);
  out.jacobian_i = MatrixXd::Zero(rows, scene.dim());
  out.barrier.resize(rows);
  out.equality.resize(rows);
  for (int r = 0; r < rows; ++r) {
    const bool rot = feature_row_rotational(c.feature, r, scene);
    const BarrierResult b =
        interval_barrier(v[r], c.intervals[r], bp.delta_for(rot));
    out.barrier[r] = b;
    out.residual[r] = b.residual;
    out.equality[r] = c.intervals[r].degenerate(1e-12);
    // Inactive inequality rows are locally unconstrained and keep a zero
    // Jacobian; equality rows always keep theirs so the null space
    // preserves them.
    if (b.active || out.equality[r]) out.jacobian_i.row(r) = J.row(r);
  }
  return out;
}

ResidualRows constancy_residual(const ConstancyConstraint& c,
                                const KeyframeKinematics& kk_i,
                                const KeyframeKinematics& kk_j,
                                const BarrierParams& bp) {
  const SceneModel& scene = *kk_i.scene;
  if (c.dims.empty()) {
    throw std::invalid_argument("constancy constraint has no dims");
  }
  VectorXd vi, vj;
  MatrixXd Ji, Jj;
  eval_feature(c.feature, kk_i, vi, &Ji);
  eval_feature(c.feature, kk_j, vj, &Jj);

  const int rows = static_cast<int>(c.dims.size());
  ResidualRows out;
  out.residual.setZero(rows);
  out.jacobian_i = MatrixXd::Zero(rows, scene.dim());
  out.jacobian_j = MatrixXd::Zero(rows, scene.dim());
  out.barrier.resize(rows);
  out.equality.resize(rows);
  for (int r = 0; r < rows; ++r) {
    const int d = c.dims[r];
    if (d < 0 || d >= vi.size()) {
      throw std::invalid_argument("constancy dim out of range");
    }
    const double tol =
        c.tolerance.empty() ? 0.0 : c.tolerance[std::min<size_t>(r, c.tolerance.size() - 1)];
    const bool rot = feature_row_rotational(c.feature, d, scene);
    const BarrierResult b = interval_barrier(
        vi[d] - vj[d], Interval{-tol, tol}, bp.delta_for(rot));
    out.barrier[r] = b;
    out.residual[r] = b.residual;
    out.equality[r] = tol <= 1e-12;
    if (b.active || out.equality[r]) {
      out.jacobian_i.row(r) = Ji.row(d);
      out.jacobian_j.row(r) = -Jj.row(d);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Schedule
// ---------------------------------------------------------------------------

std::vector<KeyframeSchedule::Branch> KeyframeSchedule::branches() const {
  std::vector<bool> has_child(nodes.size(), false);
  for (const auto& n : nodes) {
    if (n.parent >= 0) has_child[n.parent] = true;
  }
  std::vector<Branch> out;
  for (const auto& n : nodes) {
    if (has_child[n.id]) continue;
    Branch b;
    b.label = n.branch;
    for (int cursor = n.id; cursor >= 0; cursor = nodes[cursor].parent) {
      b.path.push_back(cursor);
    }
    std::reverse(b.path.begin(), b.path.end());
    out.push_back(std::move(b));
  }
  return out;
}

void KeyframeSchedule::validate(const SceneModel& scene) const {
  if (nodes.empty()) throw std::invalid_argument("schedule has no keyframes");
  for (int i = 0; i < num_nodes(); ++i) {
    if (nodes[i].id != i) {
      throw std::invalid_argument("keyframe ids must be 0..N in order");
    }
    if (i == 0) {
      if (nodes[i].parent != -1) {
        throw std::invalid_argument("keyframe 0 must be the root");
      }
    } else if (nodes[i].parent < 0 || nodes[i].parent >= i) {
      throw std::invalid_argument(
          "keyframe " + std::to_string(i) +
          ": parent must be an earlier keyframe (child before parent?)");
    }
  }
  auto check_ref = [&](const EntityRef& e) {
    if (e.kind == EntityKind::Object) scene.object_index(e.name);
    if (is_chain_body(e.kind)) chain_of(scene, e.kind).body_index(e.name);
  };
  for (const auto& c : task_constraints) {
    if (c.keyframe < 0 || c.keyframe >= num_nodes()) {
      throw std::invalid_argument("task constraint '" + c.name +
                                  "' references missing keyframe");
    }
    if (feature_is_entity_based(c.feature)) {
      check_ref(c.feature.a);
      if (c.feature.b) check_ref(*c.feature.b);
    }
    for (const auto& iv : c.intervals) {
      if (iv.lower > iv.upper) {
        throw std::invalid_argument("task constraint '" + c.name +
                                    "' has an inverted interval");
      }
    }
    if (static_cast<int>(c.intervals.size()) !=
        feature_rows(c.feature, scene)) {
      throw std::invalid_argument("task constraint '" + c.name +
                                  "' interval count mismatch");
    }
  }
  for (const auto& c : constancy_constraints) {
    if (c.keyframe_i == c.keyframe_j) {
      throw std::invalid_argument("constancy constraint must link two "
                                  "different keyframes");
    }
    if (c.keyframe_i < 0 || c.keyframe_i >= num_nodes() || c.keyframe_j < 0 ||
        c.keyframe_j >= num_nodes()) {
      throw std::invalid_argument("constancy constraint references missing "
                                  "keyframe");
    }
    if (c.dims.empty()) {
      throw std::invalid_argument("constancy constraint has empty dims");
    }
    for (double t : c.tolerance) {
      if (t < 0) {
        throw std::invalid_argument("constancy tolerance must be >= 0");
      }
    }
    if (feature_is_entity_based(c.feature)) {
      check_ref(c.feature.a);
      if (c.feature.b) check_ref(*c.feature.b);
    }
  }
  for (int d : intervention_dims) {
    if (d < 0 || d >= scene.dim()) {
      throw std::invalid_argument("intervention dim out of range");
    }
    if (d >= scene.human_offset() &&
        d < scene.human_offset() + scene.human_dof()) {
      throw std::invalid_argument(
          "intervention dims may not select human DoFs");
    }
  }
}

// ---------------------------------------------------------------------------
// Derivation (task -> constancy)
// ---------------------------------------------------------------------------

std::string DerivationDiff::to_string() const {
  std::ostringstream os;
  for (const auto& r : removed) os << "- " << r << "\n";
  for (const auto& a : added) os << "+ " << a << "\n";
  return os.str();
}

KeyframeSchedule derive_constancy(const KeyframeSchedule& schedule,
                                  DerivationDiff* diff) {
  KeyframeSchedule out = schedule;
  std::vector<bool> remove(out.task_constraints.size(), false);

  // The parent side matches against its *declared* constraints: a copy that
  // was itself rewritten into a constancy link still anchors its children.
  auto constraints_of = [&](int node, bool include_removed) {
    std::vector<int> idx;
    for (int i = 0; i < static_cast<int>(out.task_constraints.size()); ++i) {
      if (out.task_constraints[i].keyframe == node &&
          (include_removed || !remove[i])) {
        idx.push_back(i);
      }
    }
    return idx;
  };

  auto intervals_equal = [](const TaskConstraint& a, const TaskConstraint& b) {
    if (a.intervals.size() != b.intervals.size()) return false;
    for (size_t r = 0; r < a.intervals.size(); ++r) {
      if (std::abs(a.intervals[r].lower - b.intervals[r].lower) > 1e-9 ||
          std::abs(a.intervals[r].upper - b.intervals[r].upper) > 1e-9) {
        return false;
      }
    }
    return true;
  };

  for (int i = 1; i < out.num_nodes(); ++i) {
    const int j = out.parent_of(i);
    const std::vector<int> child = constraints_of(i, false);
    const std::vector<int> parent = constraints_of(j, true);
    for (int ci : child) {
      const TaskConstraint& cc = out.task_constraints[ci];
      if (!feature_is_entity_based(cc.feature)) continue;
      for (int pj : parent) {
        const TaskConstraint& pc = out.task_constraints[pj];
        if (!features_equal(cc.feature, pc.feature)) continue;
        if (!intervals_equal(cc, pc)) continue;
        // Same constraint in parent and child: the child's copy is redundant
        // given a constancy link on the matching feature.
        remove[ci] = true;
        ConstancyConstraint f;
        f.keyframe_i = j;
        f.keyframe_j = i;
        f.feature = cc.feature;
        const int rows = static_cast<int>(cc.intervals.size());
        for (int r = 0; r < rows; ++r) f.dims.push_back(r);
        f.tolerance.assign(rows, 0.0);
        f.derived = true;
        f.name = cc.name;
        out.constancy_constraints.push_back(f);
        if (diff) {
          diff->removed.push_back("task[kf " + std::to_string(i) + "] " +
                                  cc.name + " " + describe(cc.feature));
          diff->added.push_back("constancy(" + std::to_string(j) + "," +
                                std::to_string(i) + ") " + cc.name + " " +
                                describe(cc.feature));
        }
        break;
      }
    }
  }

  std::vector<TaskConstraint> kept;
  for (size_t i = 0; i < out.task_constraints.size(); ++i) {
    if (!remove[i]) kept.push_back(out.task_constraints[i]);
  }
  out.task_constraints = std::move(kept);
  return out;
}

// ---------------------------------------------------------------------------
// Assembly
// ---------------------------------------------------------------------------

StackedSystem assemble(const KeyframeSchedule& schedule,
                       const std::vector<VectorXd>& states,
                       const SceneModel& scene, const BarrierParams& bp) {
  if (static_cast<int>(states.size()) != schedule.num_nodes()) {
    throw std::invalid_argument("assemble: need one state per keyframe");
  }
  const int dx = scene.dim();
  const int ncols = schedule.num_decision_nodes() * dx;

  std::vector<KeyframeKinematics> kin;
  kin.reserve(states.size());
  for (const auto& x : states) kin.push_back(keyframe_kinematics(scene, x));

  // Column block of node id (root has none).
  auto col0 = [&](int node) { return (node - 1) * dx; };

  std::vector<double> residual;
  std::vector<double> raw;
  std::vector<double> barrier_grad;
  std::vector<RowRef> refs;
  std::vector<Eigen::Triplet<double>> trips;

  auto push_block = [&](int row, int node, const MatrixXd& J, int r) {
    if (node == 0) return;  // root columns are fixed
    const int c0 = col0(node);
    for (int c = 0; c < dx; ++c) {
      const double v = J(r, c);
      if (v != 0.0) trips.emplace_back(row, c0 + c, v);
    }
  };

  for (int ci = 0; ci < static_cast<int>(schedule.task_constraints.size());
       ++ci) {
    const TaskConstraint& c = schedule.task_constraints[ci];
    if (c.keyframe == 0) continue;  // root is fixed; validated at load
    const ResidualRows rr = task_residual(c, kin[c.keyframe], bp);
    for (int r = 0; r < rr.residual.size(); ++r) {
      const int row = static_cast<int>(residual.size());
      residual.push_back(rr.residual[r]);
      raw.push_back(rr.barrier[r].raw);
      barrier_grad.push_back(
          (rr.barrier[r].active && !rr.barrier[r].clipped) ? rr.residual[r]
                                                           : 0.0);
      refs.push_back(RowRef{false, ci, r, c.keyframe, -1,
                            rr.barrier[r].active, rr.barrier[r].clipped,
                            rr.equality[r]});
      push_block(row, c.keyframe, rr.jacobian_i, r);
    }
  }

  for (int ci = 0;
       ci < static_cast<int>(schedule.constancy_constraints.size()); ++ci) {
    const ConstancyConstraint& c = schedule.constancy_constraints[ci];
    const ResidualRows rr =
        constancy_residual(c, kin[c.keyframe_i], kin[c.keyframe_j], bp);
    for (int r = 0; r < rr.residual.size(); ++r) {
      const int row = static_cast<int>(residual.size());
      residual.push_back(rr.residual[r]);
      raw.push_back(rr.barrier[r].raw);
      barrier_grad.push_back(
          (rr.barrier[r].active && !rr.barrier[r].clipped) ? rr.residual[r]
                                                           : 0.0);
      refs.push_back(RowRef{true, ci, r, c.keyframe_i, c.keyframe_j,
                            rr.barrier[r].active, rr.barrier[r].clipped,
                            rr.equality[r]});
      push_block(row, c.keyframe_i, rr.jacobian_i, r);
      push_block(row, c.keyframe_j, rr.jacobian_j, r);
    }
  }

  StackedSystem sys;
  const int gamma = static_cast<int>(residual.size());
  sys.residual = Eigen::Map<VectorXd>(residual.data(), gamma);
  sys.violation = Eigen::Map<VectorXd>(raw.data(), gamma);
  sys.barrier_gradient = Eigen::Map<VectorXd>(barrier_grad.data(), gamma);
  sys.jacobian.resize(gamma, ncols);
  sys.jacobian.setFromTriplets(trips.begin(), trips.end());
  sys.row_index = std::move(refs);
  sys.dim_per_keyframe = dx;
  return sys;
}

}  // namespace tcc
