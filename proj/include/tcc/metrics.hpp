#pragma once

#include <map>
#include <string>

#include "tcc/solver.hpp"

namespace tcc {

enum class LoadClass { Light, Medium, Heavy };  // <5 kg, 5-10 kg, >10 kg
enum class Coupling { Good, Fair, Poor, Unacceptable };

/// Inputs of the REBA worksheet. Angles in rad, flexion positive.
struct PostureAngles {
  double trunk_flexion = 0.0;
  bool trunk_bent_or_twisted = false;
  double neck_flexion = 0.0;
  bool neck_bent_or_twisted = false;
  bool legs_unilateral = false;
  bool seated = false;
  double knee_flexion = 0.0;
  double upper_arm_flexion = 0.0;  // negative = extension
  bool shoulder_raised = false;
  bool arm_abducted = false;
  bool arm_supported = false;
  double lower_arm_flexion = 0.0;
  double wrist_flexion = 0.0;
  bool wrist_twisted = false;
  LoadClass load = LoadClass::Light;
  Coupling coupling = Coupling::Good;
  int activity = 0;  // 0..3
};

/// Rapid Entire Body Assessment score, 1 (best) .. 15, from the published
/// Hignett & McAtamney scoring tables.
int reba(const PostureAngles& p);

struct RebaConfig {
  std::string side = "r";  // scored arm: "r" or "l"
  Coupling coupling = Coupling::Good;
  bool seated = false;
  int activity = 0;
};

/// Reads the worksheet angles out of a configuration by joint-role names
/// (trunk_flexion, trunk_side, trunk_twist, neck_flexion, neck_twist,
/// shoulder_<side>_flexion, shoulder_<side>_abduction, elbow_<side>_flexion,
/// legs_flexion). Roles the model lacks stay neutral (the wrist always does).
PostureAngles extract_posture(const KinematicChain& human,
                              const VectorXd& human_q,
                              double hand_load_newtons, const RebaConfig& cfg);

/// A wrench applied at a fixed local point of a chain body.
struct LoadedPoint {
  std::string body;
  Vector3d point = Vector3d::Zero();
  Vector6d wrench = Vector6d::Zero();
};

/// Sum of squared static joint torques of the human chain under `load`
/// at the hand; gradient is with respect to the human configuration.
double static_effort(const SceneModel& scene, const VectorXd& x,
                     const LoadedPoint& load, VectorXd* grad_q = nullptr);

/// Same restricted to the trunk joints (names prefixed "trunk_"), load at
/// the head.
double spine_loading(const SceneModel& scene, const VectorXd& x,
                     const LoadedPoint& load, VectorXd* grad_q = nullptr);

/// Sum of positive limit excesses, in rad.
double joint_limit_violation(const VectorXd& q, const VectorXd& lower,
                             const VectorXd& upper);

/// Weighted sum of squares to a preferred posture.
double posture_sos(const VectorXd& q, const VectorXd& q_pref,
                   const VectorXd& weights, VectorXd* grad = nullptr);

/// Per-node weights of the branch expectation: each branch contributes its
/// weight spread uniformly over its post-intervention keyframes.
VectorXd expectation_node_weights(
    const KeyframeSchedule& schedule,
    const std::map<std::string, double>& branch_weights,
    const std::vector<int>& post_nodes);

/// Branch-weighted expectation of per-keyframe values over the
/// post-intervention keyframes. Branch weights must sum to 1.
double tree_expectation(const KeyframeSchedule& schedule,
                        const VectorXd& per_node_values,
                        const std::map<std::string, double>& branch_weights,
                        const std::vector<int>& post_nodes);

struct MetricConfig {
  LoadedPoint hand_load;
  LoadedPoint head_load;
  RebaConfig reba;
  double w_posture = 1.0;
  double w_effort = 0.0;
  double w_spine = 0.0;
  VectorXd posture_weights;  // per human joint; empty = ones
  std::vector<int> post_nodes;
  std::map<std::string, double> branch_weights;
};

struct MetricReport {
  VectorXd reba_minus_1;  // per node
  VectorXd static_effort;
  VectorXd spine_loading;
  VectorXd joint_limit_violation;
  double mean_reba_minus_1 = 0.0;  // branch expectations over post keyframes
  double mean_static_effort = 0.0;
  double mean_spine_loading = 0.0;
  double mean_joint_limit_violation = 0.0;
  double secondary_cost = 0.0;  // the differentiable c2 the solver used
};

MetricReport evaluate_metrics(const SceneModel& scene,
                              const KeyframeSchedule& schedule,
                              const std::vector<VectorXd>& states,
                              const MetricConfig& cfg);

/// Differentiable secondary objective (posture SOS + static effort + spine
/// loading, branch-expected over post keyframes) for the solver.
Objectives make_objectives(const SceneModel& scene,
                           const KeyframeSchedule& schedule,
                           const MetricConfig& cfg,
                           double displacement_weight);

/// One keyframe's differentiable cost (the c2 integrand); gradient with
/// respect to the human configuration.
double keyframe_cost(const SceneModel& scene, const VectorXd& x,
                     const MetricConfig& cfg, VectorXd* grad_q = nullptr);

}  // namespace tcc
