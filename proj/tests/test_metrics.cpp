#include <doctest.h>

#include "support/test_scenes.hpp"
#include "tcc/metrics.hpp"

using namespace tcc;
using namespace tcc::testing;

namespace {

constexpr double rad(double deg) { return deg * M_PI / 180.0; }

/// Human with named roles: trunk + neck on top of a pelvis, one arm.
KinematicChain role_human() {
  KinematicChain c("base");
  JointSpec j;
  j.kind = JointKind::Revolute;

  j.name = "trunk_flexion";
  j.axis = Vector3d::UnitY();
  j.origin = Pose{Vector3d(0, 0, 1.0), Quaterniond::Identity()};
  j.limits = Interval{-0.6, 1.6};
  c.add_body("spine", "base", j);

  j.name = "trunk_twist";
  j.axis = Vector3d::UnitZ();
  j.origin = Pose{};
  j.limits = Interval{-0.8, 0.8};
  c.add_body("chest", "spine", j);

  j.name = "neck_flexion";
  j.axis = Vector3d::UnitY();
  j.origin = Pose{Vector3d(0, 0, 0.5), Quaterniond::Identity()};
  j.limits = Interval{-0.6, 0.8};
  c.add_body("head", "chest", j);

  j.name = "shoulder_r_flexion";
  j.axis = -Vector3d::UnitY();
  j.origin = Pose{Vector3d(0, -0.2, 0.4), Quaterniond::Identity()};
  j.limits = Interval{-2.6, 0.8};
  c.add_body("uparm_r", "chest", j);

  j.name = "elbow_r_flexion";
  j.axis = -Vector3d::UnitY();
  j.origin = Pose{Vector3d(0, 0, -0.3), Quaterniond::Identity()};
  j.limits = Interval{0.0, 2.6};
  c.add_body("forearm_r", "uparm_r", j);
  return c;
}

SceneModel role_scene() {
  SceneModel s;
  s.human = role_human();
  s.robot = KinematicChain("robot_base");
  s.human_q0 = VectorXd::Zero(5);
  s.robot_q0 = VectorXd::Zero(0);
  s.human_q_pref = VectorXd::Zero(5);
  return s;
}

}  // namespace

TEST_CASE("REBA: neutral posture scores 1") {
  PostureAngles p;  // all defaults: neutral, standing, light, good coupling
  CHECK(reba(p) == 1);
}

TEST_CASE("REBA: stooped reach walks the tables to 9") {
  // Hand-walked: trunk 70deg -> 4, neck 25deg -> 2, knees 40deg -> legs 2,
  // table A = 6, light load -> score A 6. Upper arm 100deg -> 4, lower arm
  // 30deg -> 2, wrist 20deg -> 2, table B = 6, fair coupling -> score B 7.
  // Table C[6][7] = 9.
  PostureAngles p;
  p.trunk_flexion = rad(70);
  p.neck_flexion = rad(25);
  p.knee_flexion = rad(40);
  p.upper_arm_flexion = rad(100);
  p.lower_arm_flexion = rad(30);
  p.wrist_flexion = rad(20);
  p.coupling = Coupling::Fair;
  CHECK(reba(p) == 9);
  CHECK(reba(p) >= 8);
}

TEST_CASE("REBA stays in [1, 15] across random inputs") {
  SeededRng rng(41);
  for (int i = 0; i < 500; ++i) {
    PostureAngles p;
    p.trunk_flexion = rng.uniform(-1.5, 2.5);
    p.trunk_bent_or_twisted = rng.uniform01() < 0.5;
    p.neck_flexion = rng.uniform(-1.5, 1.5);
    p.neck_bent_or_twisted = rng.uniform01() < 0.5;
    p.legs_unilateral = rng.uniform01() < 0.5;
    p.knee_flexion = rng.uniform(0, 2.5);
    p.upper_arm_flexion = rng.uniform(-2.5, 3.0);
    p.shoulder_raised = rng.uniform01() < 0.5;
    p.arm_abducted = rng.uniform01() < 0.5;
    p.arm_supported = rng.uniform01() < 0.5;
    p.lower_arm_flexion = rng.uniform(-1, 3);
    p.wrist_flexion = rng.uniform(-1.5, 1.5);
    p.wrist_twisted = rng.uniform01() < 0.5;
    p.load = static_cast<LoadClass>(int(rng.uniform01() * 3));
    p.coupling = static_cast<Coupling>(int(rng.uniform01() * 4));
    p.activity = static_cast<int>(rng.uniform01() * 4);
    const int score = reba(p);
    CHECK(score >= 1);
    CHECK(score <= 15);
  }
}

TEST_CASE("posture extraction reads joint roles") {
  const KinematicChain human = role_human();
  VectorXd q = VectorXd::Zero(5);
  q[human.joint_index("trunk_flexion")] = rad(30);
  q[human.joint_index("trunk_twist")] = rad(15);
  q[human.joint_index("shoulder_r_flexion")] = rad(50);

  RebaConfig cfg;
  const PostureAngles p = extract_posture(human, q, 10.0, cfg);
  CHECK(p.trunk_flexion == doctest::Approx(rad(30)));
  CHECK(p.trunk_bent_or_twisted);  // 15 deg twist over the 10 deg flag
  CHECK(p.upper_arm_flexion == doctest::Approx(rad(50)));
  CHECK(p.load == LoadClass::Light);
  CHECK(p.wrist_flexion == 0.0);  // no wrist in the model

  const PostureAngles heavy = extract_posture(human, q, 120.0, cfg);
  CHECK(heavy.load == LoadClass::Heavy);
}

TEST_CASE("static effort: planar fixture equals 500") {
  SceneModel s;
  s.human = planar_two_link();
  s.robot = KinematicChain("robot_base");
  s.human_q0 = VectorXd::Zero(2);
  s.robot_q0 = VectorXd::Zero(0);
  s.human_q_pref = VectorXd::Zero(2);

  LoadedPoint load;
  load.body = "link2";
  load.point = tip_point();
  load.wrench << 0, -10, 0, 0, 0, 0;

  const VectorXd x = s.initial_state();
  CHECK(static_effort(s, x, load) == doctest::Approx(500.0));

  LoadedPoint none = load;
  none.wrench.setZero();
  CHECK(static_effort(s, x, none) == 0.0);

  LoadedPoint bad = load;
  bad.body = "nope";
  CHECK_THROWS_AS(static_effort(s, x, bad), std::invalid_argument);
}

TEST_CASE("static effort gradient matches finite differences") {
  SceneModel s = role_scene();
  LoadedPoint load;
  load.body = "forearm_r";
  load.point = Vector3d(0, 0, -0.25);
  load.wrench << 3, -12, -8, 0.5, 0, -0.2;

  SeededRng rng(42);
  for (int trial = 0; trial < 10; ++trial) {
    VectorXd x = s.initial_state();
    for (int i = 0; i < 5; ++i) {
      x[i] = rng.uniform(-0.5, 0.5);
    }
    VectorXd g;
    static_effort(s, x, load, &g);
    for (int i = 0; i < 5; ++i) {
      VectorXd xp = x, xm = x;
      xp[i] += 1e-6;
      xm[i] -= 1e-6;
      const double fd =
          (static_effort(s, xp, load) - static_effort(s, xm, load)) / 2e-6;
      CHECK(std::abs(fd - g[i]) / std::max(1.0, std::abs(g[i])) < 1e-5);
    }
  }
}

TEST_CASE("spine loading: upright is torque free, flexion grows it") {
  SceneModel s = role_scene();
  LoadedPoint load;
  load.body = "head";
  load.point = Vector3d(0, 0, 0.12);
  load.wrench << 0, 0, -50, 0, 0, 0;

  VectorXd x = s.initial_state();
  CHECK(spine_loading(s, x, load) == doctest::Approx(0.0).epsilon(1e-12));

  double prev = -1.0;
  for (double deg_v = 0; deg_v <= 90; deg_v += 15) {
    x[0] = rad(deg_v);  // trunk_flexion
    const double v = spine_loading(s, x, load);
    CHECK(v >= prev);
    prev = v;
  }
  CHECK(prev > 0.0);

  // Gradient against finite differences.
  SeededRng rng(43);
  for (int trial = 0; trial < 10; ++trial) {
    for (int i = 0; i < 5; ++i) x[i] = rng.uniform(-0.5, 0.5);
    VectorXd g;
    spine_loading(s, x, load, &g);
    for (int i = 0; i < 5; ++i) {
      VectorXd xp = x, xm = x;
      xp[i] += 1e-6;
      xm[i] -= 1e-6;
      const double fd =
          (spine_loading(s, xp, load) - spine_loading(s, xm, load)) / 2e-6;
      CHECK(std::abs(fd - g[i]) / std::max(1.0, std::abs(g[i])) < 1e-5);
    }
  }
}

TEST_CASE("joint limit violation sums positive excesses") {
  VectorXd q(1), lo(1), hi(1);
  q << 0.5, lo << -1, hi << 1;
  CHECK(joint_limit_violation(q, lo, hi) == 0.0);
  q << 1.2;
  CHECK(joint_limit_violation(q, lo, hi) == doctest::Approx(0.2));

  VectorXd q2(2), lo2(2), hi2(2);
  q2 << 1.1, -1.3;
  lo2 << -1, -1;
  hi2 << 1, 1;
  CHECK(joint_limit_violation(q2, lo2, hi2) == doctest::Approx(0.4));

  CHECK_THROWS_AS(joint_limit_violation(q2, lo, hi), std::invalid_argument);
}

TEST_CASE("posture_sos value and gradient") {
  VectorXd q(1), pref(1), w(1);
  q << 2.0, pref << 0.0, w << 1.0;
  VectorXd g;
  CHECK(posture_sos(q, pref, w, &g) == doctest::Approx(4.0));
  CHECK(g[0] == doctest::Approx(4.0));
  CHECK(posture_sos(pref, pref, w) == 0.0);

  SeededRng rng(44);
  VectorXd q5(5), p5(5), w5(5);
  for (int i = 0; i < 5; ++i) {
    q5[i] = rng.uniform(-2, 2);
    p5[i] = rng.uniform(-2, 2);
    w5[i] = rng.uniform(0.1, 3);
  }
  posture_sos(q5, p5, w5, &g);
  for (int i = 0; i < 5; ++i) {
    VectorXd qp = q5, qm = q5;
    qp[i] += 1e-6;
    qm[i] -= 1e-6;
    const double fd =
        (posture_sos(qp, p5, w5) - posture_sos(qm, p5, w5)) / 2e-6;
    CHECK(std::abs(fd - g[i]) < 1e-8);
  }
}

namespace {

KeyframeSchedule two_branch_tree() {
  KeyframeSchedule sch;
  sch.nodes.push_back(KeyframeNode{0, -1, "root"});
  sch.nodes.push_back(KeyframeNode{1, 0, "left"});
  sch.nodes.push_back(KeyframeNode{2, 1, "left"});
  sch.nodes.push_back(KeyframeNode{3, 0, "right"});
  sch.nodes.push_back(KeyframeNode{4, 3, "right"});
  return sch;
}

}  // namespace

TEST_CASE("tree expectation: uniform, degenerate, point mass") {
  const KeyframeSchedule tree = two_branch_tree();
  VectorXd values(5);
  values << 0, 2, 2, 4, 4;
  const std::vector<int> post = {1, 2, 3, 4};

  CHECK(tree_expectation(tree, values, {{"left", 0.5}, {"right", 0.5}},
                         post) == doctest::Approx(3.0));
  CHECK(tree_expectation(tree, values, {{"left", 1.0}, {"right", 0.0}},
                         post) == doctest::Approx(2.0));

  KeyframeSchedule line;
  line.nodes.push_back(KeyframeNode{0, -1, "main"});
  line.nodes.push_back(KeyframeNode{1, 0, "main"});
  line.nodes.push_back(KeyframeNode{2, 1, "main"});
  VectorXd lv(3);
  lv << 0, 3, 5;
  CHECK(tree_expectation(line, lv, {{"main", 1.0}}, {1, 2}) ==
        doctest::Approx(4.0));

  CHECK_THROWS_AS(
      tree_expectation(tree, values, {{"left", 0.5}, {"right", 0.4}}, post),
      std::invalid_argument);
}

TEST_CASE("tree expectation is linear and order invariant") {
  const KeyframeSchedule tree = two_branch_tree();
  const std::vector<int> post = {1, 2, 3, 4};
  const std::map<std::string, double> w = {{"left", 0.3}, {"right", 0.7}};

  SeededRng rng(45);
  VectorXd a(5), b(5);
  for (int i = 0; i < 5; ++i) {
    a[i] = rng.uniform(-5, 5);
    b[i] = rng.uniform(-5, 5);
  }
  const double lhs = tree_expectation(tree, 2.0 * a + 3.0 * b, w, post);
  const double rhs = 2.0 * tree_expectation(tree, a, w, post) +
                     3.0 * tree_expectation(tree, b, w, post);
  CHECK(lhs == doctest::Approx(rhs));

  // Same tree with branches declared in the opposite order.
  KeyframeSchedule swapped;
  swapped.nodes.push_back(KeyframeNode{0, -1, "root"});
  swapped.nodes.push_back(KeyframeNode{1, 0, "right"});
  swapped.nodes.push_back(KeyframeNode{2, 1, "right"});
  swapped.nodes.push_back(KeyframeNode{3, 0, "left"});
  swapped.nodes.push_back(KeyframeNode{4, 3, "left"});
  VectorXd av(5);
  av << a[0], a[3], a[4], a[1], a[2];
  CHECK(tree_expectation(swapped, av, w, post) ==
        doctest::Approx(tree_expectation(tree, a, w, post)));
}

TEST_CASE("metric report values are nonnegative and REBA in range") {
  SceneModel s = role_scene();
  KeyframeSchedule sch;
  sch.nodes.push_back(KeyframeNode{0, -1, "main"});
  sch.nodes.push_back(KeyframeNode{1, 0, "main"});

  MetricConfig cfg;
  cfg.hand_load.body = "forearm_r";
  cfg.hand_load.point = Vector3d(0, 0, -0.25);
  cfg.hand_load.wrench << 0, 0, -15, 0, 0, 0;
  cfg.head_load.body = "head";
  cfg.head_load.point = Vector3d(0, 0, 0.12);
  cfg.head_load.wrench << 0, 0, -50, 0, 0, 0;
  cfg.w_effort = 0.01;
  cfg.w_spine = 0.01;
  cfg.post_nodes = {1};
  cfg.branch_weights = {{"main", 1.0}};

  SeededRng rng(46);
  std::vector<VectorXd> states(2, s.initial_state());
  for (int i = 0; i < 5; ++i) states[1][i] = rng.uniform(-0.5, 0.5);

  const MetricReport r = evaluate_metrics(s, sch, states, cfg);
  CHECK(r.mean_static_effort >= 0.0);
  CHECK(r.mean_spine_loading >= 0.0);
  CHECK(r.mean_joint_limit_violation >= 0.0);
  CHECK(r.mean_reba_minus_1 >= 0.0);
  CHECK(r.mean_reba_minus_1 <= 14.0);
  CHECK(r.secondary_cost >= 0.0);
}
