// Shared fixtures: small chains, toy scenes and schedules.
#pragma once

#include "tcc/constraints.hpp"
#include "tcc/rng.hpp"

namespace tcc::testing {

/// Planar 2-link arm in the xy plane, both links 1 m along +x, revolute
/// about z. Bodies: base, link1, link2; tip is (1,0,0) on link2.
inline KinematicChain planar_two_link() {
  KinematicChain c("base");
  JointSpec j1;
  j1.name = "q1";
  j1.axis = Vector3d::UnitZ();
  c.add_body("link1", "base", j1);
  JointSpec j2;
  j2.name = "q2";
  j2.axis = Vector3d::UnitZ();
  j2.origin.position = Vector3d(1, 0, 0);
  c.add_body("link2", "link1", j2);
  return c;
}

inline Vector3d tip_point() { return Vector3d(1, 0, 0); }

/// Random serial chain with mixed joint types for property sweeps.
inline KinematicChain random_chain(SeededRng& rng, int joints) {
  KinematicChain c("base");
  for (int i = 0; i < joints; ++i) {
    JointSpec j;
    j.name = "j" + std::to_string(i);
    j.kind = rng.uniform01() < 0.8 ? JointKind::Revolute : JointKind::Prismatic;
    Vector3d axis(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    while (axis.norm() < 1e-3) {
      axis = Vector3d(rng.uniform(-1, 1), rng.uniform(-1, 1),
                      rng.uniform(-1, 1));
    }
    j.axis = axis.normalized();
    j.origin.position =
        Vector3d(rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4),
                 rng.uniform(-0.4, 0.4));
    j.origin.orientation =
        Quaterniond(exp_so3(Vector3d(rng.uniform(-1, 1), rng.uniform(-1, 1),
                                     rng.uniform(-1, 1))))
            .normalized();
    j.limits = Interval{-2.5, 2.5};
    c.add_body("body" + std::to_string(i), i, j);
  }
  return c;
}

inline VectorXd random_q(const KinematicChain& c, SeededRng& rng,
                         double amp = 1.0) {
  VectorXd q(c.num_joints());
  for (int i = 0; i < q.size(); ++i) q[i] = rng.uniform(-amp, amp);
  return q;
}

/// Scene with one object on a rail and a 3-joint arm as the "human".
/// The puck is reachable around x in [0.2, 0.9].
inline SceneModel rail_scene() {
  SceneModel s;
  KinematicChain arm("base");
  JointSpec j1;
  j1.name = "q1";
  j1.axis = Vector3d::UnitZ();
  j1.limits = Interval{-2.5, 2.5};
  arm.add_body("l1", "base", j1);
  JointSpec j2 = j1;
  j2.name = "q2";
  j2.origin.position = Vector3d(0.4, 0, 0);
  arm.add_body("l2", "l1", j2);
  JointSpec j3 = j1;
  j3.name = "q3";
  j3.origin.position = Vector3d(0.4, 0, 0);
  arm.add_body("l3", "l2", j3);
  s.human = arm;
  s.robot = KinematicChain("robot_base");
  s.objects.push_back(FreeObject{"puck", Pose{Vector3d(0.5, 0.2, 0.0),
                                              Quaterniond::Identity()}});
  s.human_q0 = VectorXd::Zero(3);
  s.robot_q0 = VectorXd::Zero(0);
  s.human_q_pref = VectorXd::Zero(3);
  return s;
}

inline EntityRef object_ref(const std::string& name,
                            const Vector3d& point = Vector3d::Zero()) {
  EntityRef e;
  e.kind = EntityKind::Object;
  e.name = name;
  e.point = point;
  return e;
}

inline EntityRef human_ref(const std::string& body,
                           const Vector3d& point = Vector3d::Zero()) {
  EntityRef e;
  e.kind = EntityKind::HumanBody;
  e.name = body;
  e.point = point;
  return e;
}

inline EntityRef world_ref(const Vector3d& point) {
  EntityRef e;
  e.kind = EntityKind::World;
  e.point = point;
  return e;
}

inline TaskConstraint grasp_constraint(int keyframe, const std::string& body,
                                       const Vector3d& body_point,
                                       const std::string& object,
                                       double slack = 0.02) {
  TaskConstraint c;
  c.keyframe = keyframe;
  c.name = "grasp_" + object;
  c.feature.kind = FeatureKind::PointDistance;
  c.feature.a = human_ref(body, body_point);
  c.feature.b = object_ref(object);
  c.intervals = {Interval{0.0, slack}};
  return c;
}

}  // namespace tcc::testing
