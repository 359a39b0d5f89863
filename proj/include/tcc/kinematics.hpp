#pragma once

#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "tcc/geometry.hpp"

namespace tcc {

enum class JointKind { Revolute, Prismatic };

struct Interval {
  double lower = -std::numeric_limits<double>::infinity();
  double upper = std::numeric_limits<double>::infinity();

  bool contains(double v, double tol = 0.0) const {
    return v >= lower - tol && v <= upper + tol;
  }
  bool degenerate(double tol = 0.0) const { return upper - lower <= tol; }
};

struct JointSpec {
  std::string name;
  JointKind kind = JointKind::Revolute;
  Vector3d axis = Vector3d::UnitZ();  // unit, in the joint frame
  Pose origin;                        // fixed transform from parent body frame
  Interval limits{-1e9, 1e9};
};

/// One rigid body of a chain. Body 0 is the base and carries no joint;
/// every other body is moved by exactly one joint relative to its parent.
struct Body {
  std::string name;
  int parent = -1;
  JointSpec joint;  // ignored for the base body
};

class KinematicChain {
 public:
  KinematicChain() { bodies_.push_back(Body{"base", -1, {}}); }
  explicit KinematicChain(std::string base_name) {
    bodies_.push_back(Body{std::move(base_name), -1, {}});
  }

  /// Appends a body; returns its index. Parent must already exist.
  int add_body(const std::string& name, int parent, const JointSpec& joint);
  int add_body(const std::string& name, const std::string& parent,
               const JointSpec& joint) {
    return add_body(name, body_index(parent), joint);
  }

  int num_bodies() const { return static_cast<int>(bodies_.size()); }
  int num_joints() const { return num_bodies() - 1; }
  const Body& body(int i) const { return bodies_.at(i); }
  int body_index(const std::string& name) const;
  bool has_body(const std::string& name) const;
  int joint_index(const std::string& name) const;  // -1 if absent

  /// Joint of body i+1; joints are indexed in body order.
  const JointSpec& joint(int i) const { return bodies_.at(i + 1).joint; }

  const Pose& base_pose() const { return base_pose_; }
  void set_base_pose(const Pose& p) { base_pose_ = p; }

  VectorXd lower_limits() const;
  VectorXd upper_limits() const;

  /// True if joint j moves body b (j's body is an ancestor of b or b itself).
  bool joint_on_path(int joint, int body) const;

  void validate() const;  // axis norms, limit ordering, topological parents

 private:
  std::vector<Body> bodies_;
  Pose base_pose_;
};

/// World pose of every body, in body order.
struct BodyPoses {
  std::vector<Pose> poses;
  const Pose& at(int body) const { return poses.at(body); }
};

BodyPoses forward_kinematics(const KinematicChain& chain, const VectorXd& q);

/// World pose of one body by name.
Pose body_pose(const KinematicChain& chain, const BodyPoses& fk,
               const std::string& body);

/// FK plus world joint axes/origins, precomputed once per configuration so
/// many Jacobian blocks can be filled without re-running FK.
struct ChainState {
  BodyPoses fk;
  std::vector<Vector3d> joint_axis_w;
  std::vector<Vector3d> joint_origin_w;
};

ChainState chain_state(const KinematicChain& chain, const VectorXd& q);
MatrixXd point_jacobian(const KinematicChain& chain, const ChainState& cs,
                        int body, const Vector3d& local_point);
MatrixXd angular_jacobian(const KinematicChain& chain, const ChainState& cs,
                          int body);

/// 3xn Jacobian of the world position of `local_point` on `body`.
MatrixXd point_jacobian(const KinematicChain& chain, const VectorXd& q,
                        int body, const Vector3d& local_point);
MatrixXd point_jacobian(const KinematicChain& chain, const VectorXd& q,
                        const std::string& body, const Vector3d& local_point);

/// 6xn variant: rows 0-2 linear, rows 3-5 angular.
MatrixXd spatial_jacobian(const KinematicChain& chain, const VectorXd& q,
                          int body, const Vector3d& local_point);

/// 3xn angular-velocity Jacobian of a body frame.
MatrixXd angular_jacobian(const KinematicChain& chain, const VectorXd& q,
                          int body);

/// Central-difference estimate of point_jacobian; h must be > 0.
MatrixXd finite_difference_jacobian(const KinematicChain& chain,
                                    const VectorXd& q, int body,
                                    const Vector3d& local_point, double h);

/// Joint torques statically equivalent to `wrench` (force, torque) applied
/// at `local_point` on `body`: tau = J6^T * wrench.
VectorXd static_torques(const KinematicChain& chain, const VectorXd& q,
                        int body, const Vector3d& local_point,
                        const Eigen::Matrix<double, 6, 1>& wrench);
VectorXd static_torques(const KinematicChain& chain, const VectorXd& q,
                        const std::string& body, const Vector3d& local_point,
                        const Eigen::Matrix<double, 6, 1>& wrench);

/// d(tau)/dq for static_torques, n x n. Needed by metric gradients.
MatrixXd static_torque_jacobian(const KinematicChain& chain, const VectorXd& q,
                                int body, const Vector3d& local_point,
                                const Eigen::Matrix<double, 6, 1>& wrench);

struct FreeObject {
  std::string name;
  Pose initial;
};

/// The kinematic world: K free objects, a human chain, a robot chain.
/// State layout: [object 0 (6) ... object K-1 (6), human q, robot q].
struct SceneModel {
  std::vector<FreeObject> objects;
  KinematicChain human;
  KinematicChain robot;
  VectorXd human_q0;       // initial / nominal configuration
  VectorXd robot_q0;
  VectorXd human_q_pref;   // preferred posture (metrics)

  int human_dof() const { return human.num_joints(); }
  int robot_dof() const { return robot.num_joints(); }
  int num_objects() const { return static_cast<int>(objects.size()); }
  int dim() const { return 6 * num_objects() + human_dof() + robot_dof(); }

  int object_offset(int k) const { return 6 * k; }
  int human_offset() const { return 6 * num_objects(); }
  int robot_offset() const { return human_offset() + human_dof(); }

  int object_index(const std::string& name) const;
  void validate() const;

  /// State with objects at their initial poses and chains at q0.
  VectorXd initial_state() const;
};

using Vector6d = Eigen::Matrix<double, 6, 1>;

/// Object coordinates cross the pack/unpack boundary as raw 6-vectors
/// (position + exponential map) so the pair is a lossless inverse.
VectorXd pack_state(const SceneModel& scene,
                    const std::vector<Vector6d>& object_coords,
                    const VectorXd& human_q, const VectorXd& robot_q);
void unpack_state(const SceneModel& scene, const VectorXd& x,
                  std::vector<Vector6d>& object_coords, VectorXd& human_q,
                  VectorXd& robot_q);

inline VectorXd human_q_of(const SceneModel& scene, const VectorXd& x) {
  return x.segment(scene.human_offset(), scene.human_dof());
}
inline VectorXd robot_q_of(const SceneModel& scene, const VectorXd& x) {
  return x.segment(scene.robot_offset(), scene.robot_dof());
}
inline Pose object_pose_of(const SceneModel& scene, const VectorXd& x, int k) {
  return pose_from_coords(x.segment<6>(scene.object_offset(k)));
}

}  // namespace tcc
