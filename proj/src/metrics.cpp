#include "tcc/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace tcc {

// ---------------------------------------------------------------------------
// REBA (Hignett & McAtamney 2000 scoring tables)
// ---------------------------------------------------------------------------

namespace {

constexpr double deg(double rad) { return rad * 180.0 / M_PI; }

// Table A: [neck-1][trunk-1][legs-1].
constexpr int kTableA[3][5][4] = {
    {{1, 2, 3, 4}, {2, 3, 4, 5}, {2, 4, 5, 6}, {3, 5, 6, 7}, {4, 6, 7, 8}},
    {{1, 2, 3, 4}, {3, 4, 5, 6}, {4, 5, 6, 7}, {5, 6, 7, 8}, {6, 7, 8, 9}},
    {{3, 3, 5, 6}, {4, 5, 6, 7}, {5, 6, 7, 8}, {6, 7, 8, 9}, {7, 8, 9, 9}}};

// Table B: [upper arm-1][lower arm-1][wrist-1].
constexpr int kTableB[6][2][3] = {
    {{1, 2, 2}, {1, 2, 3}}, {{1, 2, 3}, {2, 3, 4}}, {{3, 4, 5}, {4, 5, 5}},
    {{4, 5, 5}, {5, 6, 7}}, {{6, 7, 8}, {8, 8, 9}}, {{7, 8, 8}, {8, 9, 9}}};

// Table C: [score A-1][score B-1].
constexpr int kTableC[12][12] = {
    {1, 1, 1, 2, 3, 3, 4, 5, 6, 7, 7, 7},
    {1, 2, 2, 3, 4, 4, 5, 6, 6, 7, 7, 8},
    {2, 3, 3, 3, 4, 5, 6, 7, 7, 8, 8, 8},
    {3, 4, 4, 4, 5, 6, 7, 8, 8, 9, 9, 9},
    {4, 4, 4, 5, 6, 7, 8, 8, 9, 9, 9, 9},
    {6, 6, 6, 7, 8, 8, 9, 9, 10, 10, 10, 10},
    {7, 7, 7, 8, 9, 9, 9, 10, 10, 11, 11, 11},
    {8, 8, 8, 9, 10, 10, 10, 10, 10, 11, 11, 11},
    {9, 9, 9, 10, 10, 10, 11, 11, 11, 12, 12, 12},
    {10, 10, 10, 11, 11, 11, 11, 12, 12, 12, 12, 12},
    {11, 11, 11, 11, 12, 12, 12, 12, 12, 12, 12, 12},
    {12, 12, 12, 12, 12, 12, 12, 12, 12, 12, 12, 12}};

int trunk_score(double flexion_rad, bool bent_or_twisted) {
  const double a = deg(flexion_rad);
  int s;
  if (std::abs(a) <= 5.0) {
    s = 1;
  } else if (a > 60.0) {
    s = 4;
  } else if (a > 20.0 || a < -20.0) {
    s = 3;
  } else {
    s = 2;
  }
  if (bent_or_twisted) s += 1;
  return std::min(s, 5);
}

int neck_score(double flexion_rad, bool bent_or_twisted) {
  const double a = deg(flexion_rad);
  int s = (a >= -5.0 && a <= 20.0) ? 1 : 2;
  if (bent_or_twisted) s += 1;
  return std::min(s, 3);
}

int legs_score(const PostureAngles& p) {
  int s = p.legs_unilateral ? 2 : 1;
  if (!p.seated) {
    const double k = deg(p.knee_flexion);
    if (k > 60.0) {
      s += 2;
    } else if (k >= 30.0) {
      s += 1;
    }
  }
  return std::min(s, 4);
}

int upper_arm_score(const PostureAngles& p) {
  const double a = deg(p.upper_arm_flexion);
  int s;
  if (a > 90.0) {
    s = 4;
  } else if (a > 45.0) {
    s = 3;
  } else if (a > 20.0 || a < -20.0) {
    s = 2;
  } else {
    s = 1;
  }
  if (p.shoulder_raised) s += 1;
  if (p.arm_abducted) s += 1;
  if (p.arm_supported) s -= 1;
  return std::clamp(s, 1, 6);
}

int lower_arm_score(double flexion_rad) {
  const double a = deg(flexion_rad);
  return (a >= 60.0 && a <= 100.0) ? 1 : 2;
}

int wrist_score(double flexion_rad, bool twisted) {
  const double a = deg(flexion_rad);
  int s = (std::abs(a) <= 15.0) ? 1 : 2;
  if (twisted) s += 1;
  return std::min(s, 3);
}

}  // namespace

int reba(const PostureAngles& p) {
  const int a_posture = kTableA[neck_score(p.neck_flexion,
                                           p.neck_bent_or_twisted) -
                                1][trunk_score(p.trunk_flexion,
                                               p.trunk_bent_or_twisted) -
                                   1][legs_score(p) - 1];
  const int load = p.load == LoadClass::Light  ? 0
                   : p.load == LoadClass::Medium ? 1
                                                 : 2;
  const int score_a = std::min(a_posture + load, 12);

  const int b_posture =
      kTableB[upper_arm_score(p) - 1][lower_arm_score(p.lower_arm_flexion) -
                                      1][wrist_score(p.wrist_flexion,
                                                     p.wrist_twisted) -
                                         1];
  const int coupling = static_cast<int>(p.coupling);
  const int score_b = std::min(b_posture + coupling, 12);

  const int score_c = kTableC[score_a - 1][score_b - 1];
  return std::clamp(score_c + p.activity, 1, 15);
}

PostureAngles extract_posture(const KinematicChain& human,
                              const VectorXd& human_q,
                              double hand_load_newtons, const RebaConfig& cfg) {
  auto value = [&](const std::string& role) {
    const int j = human.joint_index(role);
    return j >= 0 ? human_q[j] : 0.0;
  };
  constexpr double kFlagThreshold = 10.0 * M_PI / 180.0;

  PostureAngles p;
  p.trunk_flexion = value("trunk_flexion");
  p.trunk_bent_or_twisted = std::abs(value("trunk_side")) > kFlagThreshold ||
                            std::abs(value("trunk_twist")) > kFlagThreshold;
  p.neck_flexion = value("neck_flexion");
  p.neck_bent_or_twisted = std::abs(value("neck_twist")) > kFlagThreshold;
  p.seated = cfg.seated;
  p.knee_flexion = value("legs_flexion");
  p.upper_arm_flexion = value("shoulder_" + cfg.side + "_flexion");
  p.arm_abducted =
      std::abs(value("shoulder_" + cfg.side + "_abduction")) > M_PI / 6.0;
  p.lower_arm_flexion = value("elbow_" + cfg.side + "_flexion");
  // No wrist in the reduced model; stays neutral.
  if (hand_load_newtons < 5.0 * 9.81) {
    p.load = LoadClass::Light;
  } else if (hand_load_newtons <= 10.0 * 9.81) {
    p.load = LoadClass::Medium;
  } else {
    p.load = LoadClass::Heavy;
  }
  p.coupling = cfg.coupling;
  p.activity = cfg.activity;
  return p;
}

// ---------------------------------------------------------------------------
// Torque costs
// ---------------------------------------------------------------------------

namespace {

double torque_sos(const SceneModel& scene, const VectorXd& x,
                  const LoadedPoint& load, const std::vector<int>& joints,
                  VectorXd* grad_q) {
  const KinematicChain& human = scene.human;
  const VectorXd q = human_q_of(scene, x);
  const int body = human.body_index(load.body);
  const VectorXd tau = static_torques(human, q, body, load.point, load.wrench);
  double v = 0.0;
  for (int j : joints) v += tau[j] * tau[j];
  if (grad_q) {
    const MatrixXd dtau =
        static_torque_jacobian(human, q, body, load.point, load.wrench);
    grad_q->setZero(q.size());
    for (int j : joints) *grad_q += 2.0 * tau[j] * dtau.row(j).transpose();
  }
  return v;
}

std::vector<int> all_joints(const KinematicChain& c) {
  std::vector<int> idx(c.num_joints());
  for (int i = 0; i < c.num_joints(); ++i) idx[i] = i;
  return idx;
}

std::vector<int> trunk_joints(const KinematicChain& c) {
  std::vector<int> idx;
  for (int i = 0; i < c.num_joints(); ++i) {
    if (c.joint(i).name.rfind("trunk_", 0) == 0) idx.push_back(i);
  }
  return idx;
}

}  // namespace

double static_effort(const SceneModel& scene, const VectorXd& x,
                     const LoadedPoint& load, VectorXd* grad_q) {
  return torque_sos(scene, x, load, all_joints(scene.human), grad_q);
}

double spine_loading(const SceneModel& scene, const VectorXd& x,
                     const LoadedPoint& load, VectorXd* grad_q) {
  return torque_sos(scene, x, load, trunk_joints(scene.human), grad_q);
}

double joint_limit_violation(const VectorXd& q, const VectorXd& lower,
                             const VectorXd& upper) {
  if (q.size() != lower.size() || q.size() != upper.size()) {
    throw std::invalid_argument("joint_limit_violation: dimension mismatch");
  }
  double v = 0.0;
  for (int i = 0; i < q.size(); ++i) {
    v += std::max(0.0, q[i] - upper[i]) + std::max(0.0, lower[i] - q[i]);
  }
  return v;
}

double posture_sos(const VectorXd& q, const VectorXd& q_pref,
                   const VectorXd& weights, VectorXd* grad) {
  if (q.size() != q_pref.size() || q.size() != weights.size()) {
    throw std::invalid_argument("posture_sos: dimension mismatch");
  }
  const VectorXd d = q - q_pref;
  if (grad) *grad = 2.0 * weights.cwiseProduct(d);
  return d.cwiseProduct(weights).dot(d);
}

// ---------------------------------------------------------------------------
// Branch expectation
// ---------------------------------------------------------------------------

VectorXd expectation_node_weights(
    const KeyframeSchedule& schedule,
    const std::map<std::string, double>& branch_weights,
    const std::vector<int>& post_nodes) {
  const auto branches = schedule.branches();
  std::map<std::string, int> leaves_per_label;
  double total = 0.0;
  for (const auto& b : branches) {
    if (branch_weights.find(b.label) == branch_weights.end()) {
      throw std::invalid_argument("no weight for branch '" + b.label + "'");
    }
    leaves_per_label[b.label] += 1;
  }
  for (const auto& [label, w] : branch_weights) {
    if (leaves_per_label.find(label) == leaves_per_label.end()) {
      throw std::invalid_argument("branch weight for unknown label '" + label +
                                  "'");
    }
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw std::invalid_argument("branch weights must sum to 1");
  }

  // A label shared by several leaves splits its weight uniformly among them.
  VectorXd mu = VectorXd::Zero(schedule.num_nodes());
  for (const auto& b : branches) {
    std::vector<int> post;
    for (int n : b.path) {
      if (std::find(post_nodes.begin(), post_nodes.end(), n) !=
          post_nodes.end()) {
        post.push_back(n);
      }
    }
    if (post.empty()) {
      throw std::invalid_argument("branch '" + b.label +
                                  "' has no post-intervention keyframes");
    }
    const double w = branch_weights.at(b.label) /
                     (leaves_per_label.at(b.label) * post.size());
    for (int n : post) mu[n] += w;
  }
  return mu;
}

double tree_expectation(const KeyframeSchedule& schedule,
                        const VectorXd& per_node_values,
                        const std::map<std::string, double>& branch_weights,
                        const std::vector<int>& post_nodes) {
  if (per_node_values.size() != schedule.num_nodes()) {
    throw std::invalid_argument("tree_expectation: one value per keyframe");
  }
  return expectation_node_weights(schedule, branch_weights, post_nodes)
      .dot(per_node_values);
}

// ---------------------------------------------------------------------------
// Reports and the solver-facing c2
// ---------------------------------------------------------------------------

namespace {

double node_cost(const SceneModel& scene, const VectorXd& x,
                 const MetricConfig& cfg, const VectorXd& posture_w,
                 VectorXd* grad_q) {
  const VectorXd q = human_q_of(scene, x);
  double v = 0.0;
  VectorXd g, tmp;
  if (grad_q) grad_q->setZero(q.size());
  if (cfg.w_posture != 0.0) {
    v += cfg.w_posture *
         posture_sos(q, scene.human_q_pref, posture_w, grad_q ? &g : nullptr);
    if (grad_q) *grad_q += cfg.w_posture * g;
  }
  if (cfg.w_effort != 0.0 && !cfg.hand_load.body.empty()) {
    v += cfg.w_effort *
         static_effort(scene, x, cfg.hand_load, grad_q ? &tmp : nullptr);
    if (grad_q) *grad_q += cfg.w_effort * tmp;
  }
  if (cfg.w_spine != 0.0 && !cfg.head_load.body.empty()) {
    v += cfg.w_spine *
         spine_loading(scene, x, cfg.head_load, grad_q ? &tmp : nullptr);
    if (grad_q) *grad_q += cfg.w_spine * tmp;
  }
  return v;
}

VectorXd posture_weights_or_ones(const SceneModel& scene,
                                 const MetricConfig& cfg) {
  if (cfg.posture_weights.size() == 0) {
    return VectorXd::Ones(scene.human_dof());
  }
  if (cfg.posture_weights.size() != scene.human_dof()) {
    throw std::invalid_argument("posture weights dimension mismatch");
  }
  return cfg.posture_weights;
}

}  // namespace

MetricReport evaluate_metrics(const SceneModel& scene,
                              const KeyframeSchedule& schedule,
                              const std::vector<VectorXd>& states,
                              const MetricConfig& cfg) {
  const int nn = schedule.num_nodes();
  MetricReport r;
  r.reba_minus_1.setZero(nn);
  r.static_effort.setZero(nn);
  r.spine_loading.setZero(nn);
  r.joint_limit_violation.setZero(nn);

  const VectorXd lo = scene.human.lower_limits();
  const VectorXd hi = scene.human.upper_limits();
  const double hand_f = cfg.hand_load.wrench.head<3>().norm();
  const VectorXd posture_w = posture_weights_or_ones(scene, cfg);

  for (int i = 0; i < nn; ++i) {
    const VectorXd q = human_q_of(scene, states[i]);
    r.reba_minus_1[i] =
        reba(extract_posture(scene.human, q, hand_f, cfg.reba)) - 1;
    if (!cfg.hand_load.body.empty()) {
      r.static_effort[i] = static_effort(scene, states[i], cfg.hand_load);
    }
    if (!cfg.head_load.body.empty()) {
      r.spine_loading[i] = spine_loading(scene, states[i], cfg.head_load);
    }
    r.joint_limit_violation[i] = joint_limit_violation(q, lo, hi);
  }

  r.mean_reba_minus_1 = tree_expectation(schedule, r.reba_minus_1,
                                         cfg.branch_weights, cfg.post_nodes);
  r.mean_static_effort = tree_expectation(schedule, r.static_effort,
                                          cfg.branch_weights, cfg.post_nodes);
  r.mean_spine_loading = tree_expectation(schedule, r.spine_loading,
                                          cfg.branch_weights, cfg.post_nodes);
  r.mean_joint_limit_violation = tree_expectation(
      schedule, r.joint_limit_violation, cfg.branch_weights, cfg.post_nodes);

  VectorXd costs(nn);
  for (int i = 0; i < nn; ++i) {
    costs[i] = node_cost(scene, states[i], cfg, posture_w, nullptr);
  }
  r.secondary_cost =
      tree_expectation(schedule, costs, cfg.branch_weights, cfg.post_nodes);
  return r;
}

double keyframe_cost(const SceneModel& scene, const VectorXd& x,
                     const MetricConfig& cfg, VectorXd* grad_q) {
  return node_cost(scene, x, cfg, posture_weights_or_ones(scene, cfg), grad_q);
}

Objectives make_objectives(const SceneModel& scene,
                           const KeyframeSchedule& schedule,
                           const MetricConfig& cfg,
                           double displacement_weight) {
  const VectorXd mu =
      expectation_node_weights(schedule, cfg.branch_weights, cfg.post_nodes);
  const VectorXd posture_w = posture_weights_or_ones(scene, cfg);
  const int dx = scene.dim();
  const int hoff = scene.human_offset();
  const int hdof = scene.human_dof();

  Objectives obj;
  obj.displacement_weight = displacement_weight;
  obj.c2_value = [=, &scene](const std::vector<VectorXd>& states) {
    double v = 0.0;
    for (int i = 0; i < static_cast<int>(states.size()); ++i) {
      if (mu[i] != 0.0) {
        v += mu[i] * node_cost(scene, states[i], cfg, posture_w, nullptr);
      }
    }
    return v;
  };
  obj.c2_gradient = [=, &scene](const std::vector<VectorXd>& states) {
    VectorXd g = VectorXd::Zero((states.size() - 1) * dx);
    VectorXd gq;
    for (int i = 1; i < static_cast<int>(states.size()); ++i) {
      if (mu[i] == 0.0) continue;
      node_cost(scene, states[i], cfg, posture_w, &gq);
      g.segment((i - 1) * dx + hoff, hdof) += mu[i] * gq;
    }
    return g;
  };
  return obj;
}

}  // namespace tcc
