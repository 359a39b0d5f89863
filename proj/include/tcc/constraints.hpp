#pragma once

#include <Eigen/Sparse>
#include <optional>
#include <string>
#include <vector>

#include "tcc/kinematics.hpp"

namespace tcc {

// ---------------------------------------------------------------------------
// Entity references and feature functions
// ---------------------------------------------------------------------------

enum class EntityKind {
  Object,     // free body, 6 state coordinates
  HumanBody,  // body of the human chain
  RobotBody,  // body of the robot chain
  HumanBase,  // point in the human base frame (moves with the base, no DoF)
  RobotBase,
  World,      // fixed world point / axis
};

struct EntityRef {
  EntityKind kind = EntityKind::World;
  std::string name;                    // object or body name
  Vector3d point = Vector3d::Zero();   // local point
  Vector3d axis = Vector3d::UnitZ();   // local axis, for axis features
};

enum class FeatureKind {
  PointPosition,    // 3 rows: world point of a, minus world point of b if set
  PointDistance,    // 1 row: |p_a - p_b|
  Height,           // 1 row: world z of a's point (minus b's if set)
  AxisInclination,  // 1 row: angle between a's axis and a world reference axis
  AxisAlignment,    // 1 row: angle between a's axis and b's axis
  RelativePose,     // 6 rows: b-frame position of a + log(R_b^T R_a)
  JointRange,       // n rows: joint values of a chain subset
  SupportProxy,     // 1 row: horizontal (xy) distance between a and b points
};

/// A coordinate function of one keyframe's state. Task constraints bound its
/// rows with intervals; constancy constraints equate it across two keyframes.
struct FeatureSpec {
  FeatureKind kind = FeatureKind::PointPosition;
  EntityRef a;
  std::optional<EntityRef> b;
  Vector3d reference_axis = Vector3d::UnitZ();  // AxisInclination only
  std::string chain;                            // JointRange: "human"|"robot"
  std::vector<std::string> joints;              // JointRange subset; empty=all
};

int feature_rows(const FeatureSpec& f, const SceneModel& scene);
bool feature_row_rotational(const FeatureSpec& f, int row,
                            const SceneModel& scene);
bool entities_equal(const EntityRef& a, const EntityRef& b, double tol = 1e-12);
bool features_equal(const FeatureSpec& a, const FeatureSpec& b,
                    double tol = 1e-12);
/// True if the feature's arguments are task-space entities (objects, chain
/// bodies, anchors) rather than chain configurations.
bool feature_is_entity_based(const FeatureSpec& f);
std::string describe(const FeatureSpec& f);

// ---------------------------------------------------------------------------
// Constraints and schedule
// ---------------------------------------------------------------------------

struct TaskConstraint {
  int keyframe = 0;
  std::string name;
  FeatureSpec feature;
  std::vector<Interval> intervals;  // one per feature row
};

struct ConstancyConstraint {
  int keyframe_i = 0;  // parent / reference side
  int keyframe_j = 0;  // other side
  FeatureSpec feature;
  std::vector<int> dims;         // feature rows held constant; nonempty
  std::vector<double> tolerance; // per-dim slack, >= 0
  bool derived = false;          // true when produced from task constraints
  std::string name;
};

struct KeyframeNode {
  int id = 0;
  int parent = -1;  // -1 only for the root
  std::string branch;
};

struct KeyframeSchedule {
  std::vector<KeyframeNode> nodes;
  std::vector<TaskConstraint> task_constraints;
  std::vector<ConstancyConstraint> constancy_constraints;
  std::vector<int> intervention_dims;  // state indices the robot may alter

  int num_nodes() const { return static_cast<int>(nodes.size()); }
  int num_decision_nodes() const { return num_nodes() - 1; }
  int parent_of(int id) const { return nodes.at(id).parent; }

  /// Root-to-leaf node paths, one per leaf, with the leaf's branch label.
  struct Branch {
    std::string label;
    std::vector<int> path;
  };
  std::vector<Branch> branches() const;

  void validate(const SceneModel& scene) const;
};

// ---------------------------------------------------------------------------
// Interval barrier
// ---------------------------------------------------------------------------

struct BarrierResult {
  double residual = 0.0;  // clipped signed distance
  double raw = 0.0;       // unclipped signed distance to the nearest bound
  bool active = false;
  bool clipped = false;
};

/// Zero inside [lower, upper]; outside, signed distance to the nearest bound
/// with magnitude clipped to delta.
BarrierResult interval_barrier(double value, const Interval& iv, double delta);

struct BarrierParams {
  double delta_translation = 0.1;  // m
  double delta_rotation = 0.2;     // rad
  double delta_for(bool rotational) const {
    return rotational ? delta_rotation : delta_translation;
  }
};

// ---------------------------------------------------------------------------
// Residual evaluation
// ---------------------------------------------------------------------------

/// Cached kinematics of one keyframe; build once, evaluate many features.
struct KeyframeKinematics {
  const SceneModel* scene = nullptr;
  VectorXd x;
  std::vector<Pose> object_poses;
  std::vector<Matrix3d> object_left_jacobian;  // d(world ang vel)/d(expmap rate)
  ChainState human;
  ChainState robot;
};

KeyframeKinematics keyframe_kinematics(const SceneModel& scene,
                                       const VectorXd& x);

/// Feature value, and optionally its Jacobian (rows x d_x) at the keyframe.
void eval_feature(const FeatureSpec& f, const KeyframeKinematics& kk,
                  VectorXd& value, MatrixXd* jacobian);

struct ResidualRows {
  VectorXd residual;            // barriered, one per row
  MatrixXd jacobian_i;          // rows x d_x (first keyframe)
  MatrixXd jacobian_j;          // rows x d_x (second keyframe; constancy only)
  std::vector<BarrierResult> barrier;
  std::vector<bool> equality;   // row comes from a degenerate interval
};

ResidualRows task_residual(const TaskConstraint& c,
                           const KeyframeKinematics& kk,
                           const BarrierParams& bp);

ResidualRows constancy_residual(const ConstancyConstraint& c,
                                const KeyframeKinematics& kk_i,
                                const KeyframeKinematics& kk_j,
                                const BarrierParams& bp);

// ---------------------------------------------------------------------------
// Task -> constancy derivation
// ---------------------------------------------------------------------------

struct DerivationDiff {
  std::vector<std::string> removed;  // task constraints dropped from children
  std::vector<std::string> added;    // constancy constraints created
  std::string to_string() const;
};

/// Replaces every child task constraint that structurally equals one of its
/// parent's by a parent-child constancy constraint on the same feature.
/// Idempotent; only entity-based features participate.
KeyframeSchedule derive_constancy(const KeyframeSchedule& schedule,
                                  DerivationDiff* diff = nullptr);

// ---------------------------------------------------------------------------
// Stacked system
// ---------------------------------------------------------------------------

struct RowRef {
  bool is_constancy = false;
  int constraint_index = -1;
  int row_in_constraint = 0;
  int node_i = -1;
  int node_j = -1;  // -1 for task rows
  bool active = false;
  bool clipped = false;
  bool equality = false;
};

struct StackedSystem {
  VectorXd residual;                    // length gamma, clip-bounded
  VectorXd violation;                   // unclipped signed distances
  Eigen::SparseMatrix<double> jacobian; // gamma x (N * d_x), root excluded
  VectorXd barrier_gradient;            // length gamma
  std::vector<RowRef> row_index;
  int dim_per_keyframe = 0;

  int rows() const { return static_cast<int>(residual.size()); }
  double max_residual() const {
    return rows() == 0 ? 0.0 : residual.cwiseAbs().maxCoeff();
  }
  /// Feasibility measure: the clip must not hide progress or regression.
  double max_violation() const {
    return rows() == 0 ? 0.0 : violation.cwiseAbs().maxCoeff();
  }
};

/// Stacks all task and constancy rows at the given states. states[i] is the
/// state of node i; states[0] (the root) is constant and contributes no
/// columns. Root task constraints contribute no rows.
StackedSystem assemble(const KeyframeSchedule& schedule,
                       const std::vector<VectorXd>& states,
                       const SceneModel& scene, const BarrierParams& bp);

}  // namespace tcc
