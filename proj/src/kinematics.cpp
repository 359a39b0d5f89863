#include "tcc/kinematics.hpp"

#include <algorithm>
#include <cmath>

namespace tcc {

int KinematicChain::add_body(const std::string& name, int parent,
                             const JointSpec& joint) {
  if (parent < 0 || parent >= num_bodies()) {
    throw std::invalid_argument("add_body: parent index out of range for '" +
                                name + "'");
  }
  if (has_body(name)) {
    throw std::invalid_argument("add_body: duplicate body name '" + name +
                                "'");
  }
  bodies_.push_back(Body{name, parent, joint});
  return num_bodies() - 1;
}

int KinematicChain::body_index(const std::string& name) const {
  for (int i = 0; i < num_bodies(); ++i) {
    if (bodies_[i].name == name) return i;
  }
  throw std::invalid_argument("unknown body '" + name + "'");
}

bool KinematicChain::has_body(const std::string& name) const {
  return std::any_of(bodies_.begin(), bodies_.end(),
                     [&](const Body& b) { return b.name == name; });
}

int KinematicChain::joint_index(const std::string& name) const {
  for (int i = 0; i < num_joints(); ++i) {
    if (joint(i).name == name) return i;
  }
  return -1;
}

VectorXd KinematicChain::lower_limits() const {
  VectorXd lo(num_joints());
  for (int i = 0; i < num_joints(); ++i) lo[i] = joint(i).limits.lower;
  return lo;
}

VectorXd KinematicChain::upper_limits() const {
  VectorXd hi(num_joints());
  for (int i = 0; i < num_joints(); ++i) hi[i] = joint(i).limits.upper;
  return hi;
}

bool KinematicChain::joint_on_path(int joint_idx, int body) const {
  int cursor = body;
  const int joint_body = joint_idx + 1;
  while (cursor >= 0) {
    if (cursor == joint_body) return true;
    cursor = bodies_[cursor].parent;
  }
  return false;
}

void KinematicChain::validate() const {
  for (int i = 1; i < num_bodies(); ++i) {
    const Body& b = bodies_[i];
    if (b.parent < 0 || b.parent >= i) {
      throw std::invalid_argument("chain: parent of '" + b.name +
                                  "' must precede it");
    }
    if (std::abs(b.joint.axis.norm() - 1.0) > 1e-9) {
      throw std::invalid_argument("chain: joint '" + b.joint.name +
                                  "' axis is not unit length");
    }
    if (b.joint.limits.lower > b.joint.limits.upper) {
      throw std::invalid_argument("chain: joint '" + b.joint.name +
                                  "' has inverted limits");
    }
  }
}

namespace {

Pose joint_motion(const JointSpec& j, double q) {
  Pose p;
  if (j.kind == JointKind::Revolute) {
    p.orientation = Quaterniond(Eigen::AngleAxisd(q, j.axis));
  } else {
    p.position = q * j.axis;
  }
  return p;
}

void check_dims(const KinematicChain& chain, const VectorXd& q) {
  if (q.size() != chain.num_joints()) {
    throw std::invalid_argument("configuration has " +
                                std::to_string(q.size()) + " entries, chain has " +
                                std::to_string(chain.num_joints()) + " joints");
  }
}

}  // namespace

BodyPoses forward_kinematics(const KinematicChain& chain, const VectorXd& q) {
  check_dims(chain, q);
  BodyPoses out;
  out.poses.resize(chain.num_bodies());
  out.poses[0] = chain.base_pose();
  for (int i = 1; i < chain.num_bodies(); ++i) {
    const Body& b = chain.body(i);
    out.poses[i] = out.poses[b.parent]
                       .compose(b.joint.origin)
                       .compose(joint_motion(b.joint, q[i - 1]));
  }
  return out;
}

Pose body_pose(const KinematicChain& chain, const BodyPoses& fk,
               const std::string& body) {
  return fk.at(chain.body_index(body));
}

ChainState chain_state(const KinematicChain& chain, const VectorXd& q) {
  ChainState cs;
  cs.fk = forward_kinematics(chain, q);
  const int n = chain.num_joints();
  cs.joint_axis_w.resize(n);
  cs.joint_origin_w.resize(n);
  for (int i = 0; i < n; ++i) {
    const Body& b = chain.body(i + 1);
    // The body frame already includes the joint motion; a revolute axis is
    // invariant under its own rotation and prismatic joints do not rotate.
    cs.joint_axis_w[i] = cs.fk.at(i + 1).orientation * b.joint.axis;
    cs.joint_origin_w[i] = cs.fk.at(b.parent).compose(b.joint.origin).position;
  }
  return cs;
}

MatrixXd point_jacobian(const KinematicChain& chain, const ChainState& cs,
                        int body, const Vector3d& local_point) {
  if (body < 0 || body >= chain.num_bodies()) {
    throw std::invalid_argument("point_jacobian: body index out of range");
  }
  const Vector3d p = cs.fk.at(body).apply(local_point);
  MatrixXd J = MatrixXd::Zero(3, chain.num_joints());
  for (int j = 0; j < chain.num_joints(); ++j) {
    if (!chain.joint_on_path(j, body)) continue;
    if (chain.joint(j).kind == JointKind::Revolute) {
      J.col(j) = cs.joint_axis_w[j].cross(p - cs.joint_origin_w[j]);
    } else {
      J.col(j) = cs.joint_axis_w[j];
    }
  }
  return J;
}

MatrixXd angular_jacobian(const KinematicChain& chain, const ChainState& cs,
                          int body) {
  MatrixXd J = MatrixXd::Zero(3, chain.num_joints());
  for (int j = 0; j < chain.num_joints(); ++j) {
    if (!chain.joint_on_path(j, body)) continue;
    if (chain.joint(j).kind == JointKind::Revolute) {
      J.col(j) = cs.joint_axis_w[j];
    }
  }
  return J;
}

MatrixXd point_jacobian(const KinematicChain& chain, const VectorXd& q,
                        int body, const Vector3d& local_point) {
  check_dims(chain, q);
  return point_jacobian(chain, chain_state(chain, q), body, local_point);
}

MatrixXd point_jacobian(const KinematicChain& chain, const VectorXd& q,
                        const std::string& body, const Vector3d& local_point) {
  return point_jacobian(chain, q, chain.body_index(body), local_point);
}

MatrixXd angular_jacobian(const KinematicChain& chain, const VectorXd& q,
                          int body) {
  check_dims(chain, q);
  return angular_jacobian(chain, chain_state(chain, q), body);
}

MatrixXd spatial_jacobian(const KinematicChain& chain, const VectorXd& q,
                          int body, const Vector3d& local_point) {
  MatrixXd J(6, chain.num_joints());
  J.topRows(3) = point_jacobian(chain, q, body, local_point);
  J.bottomRows(3) = angular_jacobian(chain, q, body);
  return J;
}

MatrixXd finite_difference_jacobian(const KinematicChain& chain,
                                    const VectorXd& q, int body,
                                    const Vector3d& local_point, double h) {
  if (!(h > 0)) {
    throw std::invalid_argument("finite_difference_jacobian: h must be > 0");
  }
  check_dims(chain, q);
  MatrixXd J(3, chain.num_joints());
  VectorXd qp = q;
  for (int j = 0; j < chain.num_joints(); ++j) {
    qp[j] = q[j] + h;
    const Vector3d plus =
        forward_kinematics(chain, qp).at(body).apply(local_point);
    qp[j] = q[j] - h;
    const Vector3d minus =
        forward_kinematics(chain, qp).at(body).apply(local_point);
    qp[j] = q[j];
    J.col(j) = (plus - minus) / (2.0 * h);
  }
  return J;
}

VectorXd static_torques(const KinematicChain& chain, const VectorXd& q,
                        int body, const Vector3d& local_point,
                        const Eigen::Matrix<double, 6, 1>& wrench) {
  return spatial_jacobian(chain, q, body, local_point).transpose() * wrench;
}

VectorXd static_torques(const KinematicChain& chain, const VectorXd& q,
                        const std::string& body, const Vector3d& local_point,
                        const Eigen::Matrix<double, 6, 1>& wrench) {
  return static_torques(chain, q, chain.body_index(body), local_point, wrench);
}

MatrixXd static_torque_jacobian(const KinematicChain& chain, const VectorXd& q,
                                int body, const Vector3d& local_point,
                                const Eigen::Matrix<double, 6, 1>& wrench) {
  check_dims(chain, q);
  const int n = chain.num_joints();
  const ChainState cs = chain_state(chain, q);
  const Vector3d F = wrench.head<3>();
  const Vector3d M = wrench.tail<3>();
  const Vector3d p = cs.fk.at(body).apply(local_point);
  const MatrixXd Jp = point_jacobian(chain, cs, body, local_point);

  // Ancestor test between joints: joint j moves joint i's frame iff j is on
  // the path to the body that carries joint i's origin (its parent body).
  auto moves_frame = [&](int j, int i) {
    return chain.joint_on_path(j, chain.body(i + 1).parent);
  };

  MatrixXd dtau = MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    if (!chain.joint_on_path(i, body)) continue;  // tau_i identically zero
    const bool rev_i = chain.joint(i).kind == JointKind::Revolute;
    for (int j = 0; j < n; ++j) {
      if (!chain.joint_on_path(j, body)) continue;
      Vector3d da_i = Vector3d::Zero();
      Vector3d do_i = Vector3d::Zero();
      if (moves_frame(j, i)) {
        if (chain.joint(j).kind == JointKind::Revolute) {
          da_i = cs.joint_axis_w[j].cross(cs.joint_axis_w[i]);
          do_i = cs.joint_axis_w[j].cross(cs.joint_origin_w[i] -
                                          cs.joint_origin_w[j]);
        } else {
          do_i = cs.joint_axis_w[j];
        }
      }
      const Vector3d dp = Jp.col(j);
      if (rev_i) {
        dtau(i, j) = da_i.dot((p - cs.joint_origin_w[i]).cross(F) + M) +
                     cs.joint_axis_w[i].dot((dp - do_i).cross(F));
      } else {
        dtau(i, j) = da_i.dot(F);
      }
    }
  }
  return dtau;
}

int SceneModel::object_index(const std::string& name) const {
  for (int k = 0; k < num_objects(); ++k) {
    if (objects[k].name == name) return k;
  }
  throw std::invalid_argument("unknown object '" + name + "'");
}

void SceneModel::validate() const {
  human.validate();
  robot.validate();
  std::vector<std::string> names;
  for (const auto& o : objects) names.push_back(o.name);
  std::sort(names.begin(), names.end());
  if (std::adjacent_find(names.begin(), names.end()) != names.end()) {
    throw std::invalid_argument("scene: duplicate object name");
  }
  if (human_q0.size() != human_dof() || robot_q0.size() != robot_dof()) {
    throw std::invalid_argument("scene: q0 dimensions do not match chains");
  }
}

VectorXd SceneModel::initial_state() const {
  std::vector<Vector6d> coords;
  coords.reserve(objects.size());
  for (const auto& o : objects) coords.push_back(coords_from_pose(o.initial));
  return pack_state(*this, coords, human_q0, robot_q0);
}

VectorXd pack_state(const SceneModel& scene,
                    const std::vector<Vector6d>& object_coords,
                    const VectorXd& human_q, const VectorXd& robot_q) {
  if (static_cast<int>(object_coords.size()) != scene.num_objects() ||
      human_q.size() != scene.human_dof() ||
      robot_q.size() != scene.robot_dof()) {
    throw std::invalid_argument("pack_state: entity dimensions do not match");
  }
  VectorXd x(scene.dim());
  for (int k = 0; k < scene.num_objects(); ++k) {
    x.segment<6>(scene.object_offset(k)) = object_coords[k];
  }
  x.segment(scene.human_offset(), scene.human_dof()) = human_q;
  x.segment(scene.robot_offset(), scene.robot_dof()) = robot_q;
  return x;
}

void unpack_state(const SceneModel& scene, const VectorXd& x,
                  std::vector<Vector6d>& object_coords, VectorXd& human_q,
                  VectorXd& robot_q) {
  if (x.size() != scene.dim()) {
    throw std::invalid_argument("unpack_state: state has wrong dimension");
  }
  object_coords.resize(scene.num_objects());
  for (int k = 0; k < scene.num_objects(); ++k) {
    object_coords[k] = x.segment<6>(scene.object_offset(k));
  }
  human_q = x.segment(scene.human_offset(), scene.human_dof());
  robot_q = x.segment(scene.robot_offset(), scene.robot_dof());
}

}  // namespace tcc
