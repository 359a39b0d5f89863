#include "tcc/scenario.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

#include "tcc/rng.hpp"

namespace tcc {

namespace {

using nlohmann::json;

double num_or(const json& j, const char* key, double fallback) {
  return j.contains(key) ? j.at(key).get<double>() : fallback;
}

Vector3d vec3(const json& j) {
  if (!j.is_array() || j.size() != 3) {
    throw ValidationError("expected a 3-element array");
  }
  return Vector3d(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

Pose pose_from_json(const json& j) {
  Pose p;
  if (j.contains("xyz")) p.position = vec3(j.at("xyz"));
  if (j.contains("rpy")) {
    const Vector3d rpy = vec3(j.at("rpy"));
    p.orientation = Eigen::AngleAxisd(rpy.z(), Vector3d::UnitZ()) *
                    Eigen::AngleAxisd(rpy.y(), Vector3d::UnitY()) *
                    Eigen::AngleAxisd(rpy.x(), Vector3d::UnitX());
  }
  if (j.contains("rotvec")) {
    p.orientation = Quaterniond(exp_so3(vec3(j.at("rotvec"))));
  }
  return p;
}

// null means unbounded on that side.
Interval interval_from_json(const json& j) {
  if (!j.is_array() || j.size() != 2) {
    throw ValidationError("interval must be [lower, upper]");
  }
  Interval iv;
  if (!j[0].is_null()) iv.lower = j[0].get<double>();
  if (!j[1].is_null()) iv.upper = j[1].get<double>();
  if (iv.lower > iv.upper) throw ValidationError("interval has lower > upper");
  return iv;
}

KinematicChain chain_from_json(const json& j, const std::string& which) {
  KinematicChain chain(which + "_base");
  if (j.contains("base")) chain.set_base_pose(pose_from_json(j.at("base")));
  for (const auto& bj : j.value("bodies", json::array())) {
    JointSpec js;
    const json& jj = bj.at("joint");
    js.name = jj.at("name").get<std::string>();
    const std::string kind = jj.value("kind", "revolute");
    if (kind == "revolute") {
      js.kind = JointKind::Revolute;
    } else if (kind == "prismatic") {
      js.kind = JointKind::Prismatic;
    } else {
      throw ValidationError("joint '" + js.name + "': unknown kind '" + kind +
                            "'");
    }
    js.axis = vec3(jj.at("axis"));
    if (jj.contains("origin")) js.origin = pose_from_json(jj.at("origin"));
    if (jj.contains("limits")) js.limits = interval_from_json(jj.at("limits"));
    const std::string parent =
        bj.value("parent", chain.body(0).name);
    try {
      chain.add_body(bj.at("name").get<std::string>(), parent, js);
    } catch (const std::invalid_argument& e) {
      throw ValidationError(which + " chain: " + e.what());
    }
  }
  try {
    chain.validate();
  } catch (const std::invalid_argument& e) {
    throw ValidationError(which + " chain: " + e.what());
  }
  return chain;
}

EntityRef entity_from_json(const json& j) {
  EntityRef e;
  const std::string kind = j.at("entity").get<std::string>();
  if (kind == "object") {
    e.kind = EntityKind::Object;
    e.name = j.at("name").get<std::string>();
  } else if (kind == "human") {
    e.kind = EntityKind::HumanBody;
    e.name = j.at("body").get<std::string>();
  } else if (kind == "robot") {
    e.kind = EntityKind::RobotBody;
    e.name = j.at("body").get<std::string>();
  } else if (kind == "human_base") {
    e.kind = EntityKind::HumanBase;
  } else if (kind == "robot_base") {
    e.kind = EntityKind::RobotBase;
  } else if (kind == "world") {
    e.kind = EntityKind::World;
  } else {
    throw ValidationError("unknown entity kind '" + kind + "'");
  }
  if (j.contains("point")) e.point = vec3(j.at("point"));
  if (j.contains("axis")) e.axis = vec3(j.at("axis"));
  return e;
}

FeatureKind feature_kind_from_name(const std::string& k) {
  if (k == "point-position" || k == "point-in-box") {
    return FeatureKind::PointPosition;
  }
  if (k == "point-distance") return FeatureKind::PointDistance;
  if (k == "height") return FeatureKind::Height;
  if (k == "axis-inclination") return FeatureKind::AxisInclination;
  if (k == "axis-alignment") return FeatureKind::AxisAlignment;
  if (k == "relative-pose") return FeatureKind::RelativePose;
  if (k == "joint-range") return FeatureKind::JointRange;
  if (k == "support-force-proxy") return FeatureKind::SupportProxy;
  throw ValidationError("unknown constraint kind '" + k + "'");
}

FeatureSpec feature_from_json(const json& j) {
  FeatureSpec f;
  f.kind = feature_kind_from_name(j.at("kind").get<std::string>());
  if (f.kind == FeatureKind::JointRange) {
    f.chain = j.value("chain", "human");
    for (const auto& n : j.value("joints", json::array())) {
      f.joints.push_back(n.get<std::string>());
    }
  } else {
    f.a = entity_from_json(j.at("a"));
    if (j.contains("b")) f.b = entity_from_json(j.at("b"));
  }
  if (j.contains("reference_axis")) {
    f.reference_axis = vec3(j.at("reference_axis"));
  }
  return f;
}

TaskConstraint task_from_json(const json& j, const SceneModel& scene) {
  TaskConstraint c;
  c.keyframe = j.at("keyframe").get<int>();
  c.name = j.value("name", "");
  c.feature = feature_from_json(j);
  if (j.contains("intervals")) {
    for (const auto& iv : j.at("intervals")) {
      c.intervals.push_back(interval_from_json(iv));
    }
  } else if (c.feature.kind == FeatureKind::JointRange) {
    // Default to the chain's joint limits.
    const KinematicChain& ch =
        c.feature.chain == "human" ? scene.human : scene.robot;
    if (c.feature.joints.empty()) {
      for (int i = 0; i < ch.num_joints(); ++i) {
        c.intervals.push_back(ch.joint(i).limits);
      }
    } else {
      for (const auto& name : c.feature.joints) {
        const int i = ch.joint_index(name);
        if (i < 0) {
          throw ValidationError("joint-range: unknown joint '" + name + "'");
        }
        c.intervals.push_back(ch.joint(i).limits);
      }
    }
  } else {
    throw ValidationError("task constraint '" + c.name + "' needs intervals");
  }
  if (c.name.empty()) c.name = describe(c.feature);
  return c;
}

ConstancyConstraint constancy_from_json(const json& j) {
  ConstancyConstraint c;
  c.keyframe_i = j.at("i").get<int>();
  c.keyframe_j = j.at("j").get<int>();
  c.feature = feature_from_json(j.at("feature"));
  for (const auto& d : j.at("dims")) c.dims.push_back(d.get<int>());
  if (j.contains("tolerance")) {
    if (j.at("tolerance").is_array()) {
      for (const auto& t : j.at("tolerance")) {
        c.tolerance.push_back(t.get<double>());
      }
    } else {
      c.tolerance.assign(c.dims.size(), j.at("tolerance").get<double>());
    }
  }
  c.name = j.value("name", describe(c.feature));
  return c;
}

std::vector<int> intervention_from_json(const json& j,
                                        const SceneModel& scene) {
  std::vector<int> dims;
  static const std::map<std::string, int> coord_index = {
      {"x", 0}, {"y", 1}, {"z", 2}, {"rx", 3}, {"ry", 4}, {"rz", 5}};
  for (const auto& d : j.value("dims", json::array())) {
    if (d.contains("index")) {
      dims.push_back(d.at("index").get<int>());
    } else if (d.contains("object")) {
      const int k = scene.object_index(d.at("object").get<std::string>());
      const auto it = coord_index.find(d.at("coord").get<std::string>());
      if (it == coord_index.end()) {
        throw ValidationError("intervention coord must be x|y|z|rx|ry|rz");
      }
      dims.push_back(scene.object_offset(k) + it->second);
    } else if (d.contains("robot_joint")) {
      const int i =
          scene.robot.joint_index(d.at("robot_joint").get<std::string>());
      if (i < 0) throw ValidationError("unknown robot joint in intervention");
      dims.push_back(scene.robot_offset() + i);
    } else {
      throw ValidationError("intervention dim needs index, object or "
                            "robot_joint");
    }
  }
  std::sort(dims.begin(), dims.end());
  dims.erase(std::unique(dims.begin(), dims.end()), dims.end());
  return dims;
}

LoadedPoint load_from_json(const json& j) {
  LoadedPoint lp;
  lp.body = j.at("body").get<std::string>();
  if (j.contains("point")) lp.point = vec3(j.at("point"));
  const auto& w = j.at("wrench");
  if (!w.is_array() || w.size() != 6) {
    throw ValidationError("wrench must have 6 entries");
  }
  for (int i = 0; i < 6; ++i) lp.wrench[i] = w[i].get<double>();
  return lp;
}

Coupling coupling_from_name(const std::string& s) {
  if (s == "good") return Coupling::Good;
  if (s == "fair") return Coupling::Fair;
  if (s == "poor") return Coupling::Poor;
  if (s == "unacceptable") return Coupling::Unacceptable;
  throw ValidationError("unknown coupling '" + s + "'");
}

VectorXd vector_from_json(const json& j) {
  VectorXd v(j.size());
  for (size_t i = 0; i < j.size(); ++i) v[i] = j[i].get<double>();
  return v;
}

}  // namespace

ScenarioSpec parse_scenario(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("scenario parse error: ") + e.what());
  }

  ScenarioSpec spec;
  try {
    spec.name = root.value("name", "scenario");

    // Scene.
    const json& sc = root.at("scene");
    spec.scene.human = chain_from_json(sc.at("human"), "human");
    spec.scene.robot = sc.contains("robot")
                           ? chain_from_json(sc.at("robot"), "robot")
                           : KinematicChain("robot_base");
    for (const auto& oj : sc.value("objects", json::array())) {
      FreeObject o;
      o.name = oj.at("name").get<std::string>();
      o.initial = pose_from_json(oj.at("initial"));
      spec.scene.objects.push_back(o);
    }
    auto q_or_zero = [&](const json& cj, const char* key, int n) {
      if (!cj.contains(key)) return VectorXd::Zero(n).eval();
      VectorXd q = vector_from_json(cj.at(key));
      if (q.size() != n) {
        throw ValidationError(std::string(key) + " has wrong length");
      }
      return q;
    };
    spec.scene.human_q0 =
        q_or_zero(sc.at("human"), "initial_q", spec.scene.human_dof());
    spec.scene.human_q_pref =
        q_or_zero(sc.at("human"), "preferred_q", spec.scene.human_dof());
    spec.scene.robot_q0 =
        sc.contains("robot")
            ? q_or_zero(sc.at("robot"), "initial_q", spec.scene.robot_dof())
            : VectorXd::Zero(0);
    spec.scene.validate();

    // Keyframes.
    for (const auto& nj : root.at("keyframes")) {
      KeyframeNode n;
      n.id = nj.at("id").get<int>();
      n.parent = nj.at("parent").is_null() ? -1 : nj.at("parent").get<int>();
      n.branch = nj.value("branch", "main");
      spec.schedule_raw.nodes.push_back(n);
    }

    for (const auto& cj : root.value("task_constraints", json::array())) {
      spec.schedule_raw.task_constraints.push_back(
          task_from_json(cj, spec.scene));
    }
    for (const auto& cj : root.value("constancy_constraints", json::array())) {
      spec.schedule_raw.constancy_constraints.push_back(
          constancy_from_json(cj));
    }
    if (root.contains("intervention")) {
      spec.schedule_raw.intervention_dims =
          intervention_from_json(root.at("intervention"), spec.scene);
    }
    spec.schedule_raw.validate(spec.scene);

    // Metrics.
    const json mj = root.value("metrics", json::object());
    for (const auto& k : mj.value("post_keyframes", json::array())) {
      spec.metrics.post_nodes.push_back(k.get<int>());
    }
    if (spec.metrics.post_nodes.empty()) {
      for (int i = 1; i < spec.schedule_raw.num_nodes(); ++i) {
        spec.metrics.post_nodes.push_back(i);
      }
    }
    if (mj.contains("branch_weights")) {
      for (const auto& [label, w] : mj.at("branch_weights").items()) {
        spec.metrics.branch_weights[label] = w.get<double>();
      }
    } else {
      std::set<std::string> labels;
      for (const auto& b : spec.schedule_raw.branches()) {
        labels.insert(b.label);
      }
      for (const auto& l : labels) {
        spec.metrics.branch_weights[l] = 1.0 / labels.size();
      }
    }
    const json sj = mj.value("secondary", json::object());
    spec.metrics.w_posture = num_or(sj, "posture_sos", 1.0);
    spec.metrics.w_effort = num_or(sj, "static_effort", 0.0);
    spec.metrics.w_spine = num_or(sj, "spine_loading", 0.0);
    if (mj.contains("posture_weights")) {
      spec.metrics.posture_weights =
          vector_from_json(mj.at("posture_weights"));
    }
    if (mj.contains("hand_load")) {
      spec.metrics.hand_load = load_from_json(mj.at("hand_load"));
      spec.scene.human.body_index(spec.metrics.hand_load.body);
    }
    if (mj.contains("head_load")) {
      spec.metrics.head_load = load_from_json(mj.at("head_load"));
      spec.scene.human.body_index(spec.metrics.head_load.body);
    }
    if (mj.contains("reba")) {
      const json& rj = mj.at("reba");
      spec.metrics.reba.side = rj.value("side", "r");
      spec.metrics.reba.seated = rj.value("seated", false);
      spec.metrics.reba.coupling =
          coupling_from_name(rj.value("coupling", "good"));
    }
    for (const auto& m : mj.value("report", json::array())) {
      spec.report_metrics.push_back(m.get<std::string>());
    }
    if (spec.report_metrics.empty()) {
      spec.report_metrics = {"reba_minus_1", "static_effort", "spine_loading",
                             "joint_limit_violation", "secondary_cost"};
    }

    // Solver.
    const json vj = root.value("solver", json::object());
    spec.solver.lambda0 = num_or(vj, "lambda0", spec.solver.lambda0);
    spec.solver.lambda_grow = num_or(vj, "lambda_grow", spec.solver.lambda_grow);
    spec.solver.lambda_shrink =
        num_or(vj, "lambda_shrink", spec.solver.lambda_shrink);
    spec.solver.tol_step = num_or(vj, "tol_step", spec.solver.tol_step);
    spec.solver.tol_residual =
        num_or(vj, "tol_residual", spec.solver.tol_residual);
    spec.solver.max_iters =
        static_cast<int>(num_or(vj, "max_iters", spec.solver.max_iters));
    spec.solver.innate_rate = num_or(vj, "innate_rate", spec.solver.innate_rate);
    spec.solver.assist_rate = num_or(vj, "assist_rate", spec.solver.assist_rate);
    spec.solver.barrier.delta_translation = num_or(
        vj, "barrier_clip_translation", spec.solver.barrier.delta_translation);
    spec.solver.barrier.delta_rotation =
        num_or(vj, "barrier_clip_rotation", spec.solver.barrier.delta_rotation);
    if (vj.contains("weights")) {
      spec.solver.weights = vector_from_json(vj.at("weights"));
      if (spec.solver.weights.size() != spec.scene.dim()) {
        throw ValidationError("solver weights length must equal d_x");
      }
    }
    spec.displacement_weight =
        num_or(vj, "displacement_weight", spec.displacement_weight);

    // Sampling.
    for (const auto& tj :
         root.value("sampling", json::object()).value("targets", json::array())) {
      SamplingTarget t;
      t.chain = tj.at("chain").get<std::string>();
      if (t.chain != "human" && t.chain != "robot") {
        throw ValidationError("sampling target chain must be human or robot");
      }
      if (tj.contains("x")) t.dx = interval_from_json(tj.at("x"));
      if (tj.contains("y")) t.dy = interval_from_json(tj.at("y"));
      if (tj.contains("yaw")) t.dyaw = interval_from_json(tj.at("yaw"));
      spec.sampling.push_back(t);
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("scenario schema error: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ValidationError(std::string("scenario invalid: ") + e.what());
  }

  // Derivation, applied eagerly.
  spec.schedule = derive_constancy(spec.schedule_raw, &spec.derivation);
  spec.schedule.validate(spec.scene);

  // Metric sanity against the schedule.
  for (int n : spec.metrics.post_nodes) {
    if (n <= 0 || n >= spec.schedule.num_nodes()) {
      throw ValidationError("post_keyframes entries must name non-root "
                            "keyframes");
    }
  }
  expectation_node_weights(spec.schedule, spec.metrics.branch_weights,
                           spec.metrics.post_nodes);

  // Root task constraints are fixed by x0; check they hold.
  const VectorXd x0 = spec.scene.initial_state();
  const KeyframeKinematics kk = keyframe_kinematics(spec.scene, x0);
  for (const auto& c : spec.schedule.task_constraints) {
    if (c.keyframe != 0) continue;
    const ResidualRows rr = task_residual(c, kk, spec.solver.barrier);
    if (rr.residual.lpNorm<Eigen::Infinity>() > 1e-9) {
      spec.warnings.push_back("root keyframe violates '" + c.name +
                              "' at the initial state");
    }
  }
  return spec;
}

ScenarioSpec load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scenario file '" + path + "'");
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("error reading scenario file '" + path + "'");
  return parse_scenario(text);
}

std::vector<BasePoseSample> sample_base_poses(const ScenarioSpec& spec, int n,
                                              uint64_t seed) {
  if (n < 1) throw std::invalid_argument("sample count must be >= 1");
  for (const auto& t : spec.sampling) {
    if (t.dx.lower > t.dx.upper || t.dy.lower > t.dy.upper ||
        t.dyaw.lower > t.dyaw.upper) {
      throw ValidationError("sampling range is empty");
    }
  }
  SeededRng rng(seed);
  std::vector<BasePoseSample> out(n);
  for (int i = 0; i < n; ++i) {
    for (const auto& t : spec.sampling) {
      const double dx = rng.uniform(t.dx.lower, t.dx.upper);
      const double dy = rng.uniform(t.dy.lower, t.dy.upper);
      const double dyaw = rng.uniform(t.dyaw.lower, t.dyaw.upper);
      const Pose& nominal = t.chain == "human"
                                ? spec.scene.human.base_pose()
                                : spec.scene.robot.base_pose();
      Pose p = nominal;
      p.position.x() += dx;
      p.position.y() += dy;
      p.orientation =
          (Quaterniond(Eigen::AngleAxisd(dyaw, Vector3d::UnitZ())) *
           nominal.orientation)
              .normalized();
      out[i].bases.emplace_back(t.chain, p);
    }
  }
  return out;
}

SceneModel scene_with_bases(const SceneModel& scene,
                            const BasePoseSample& sample) {
  SceneModel out = scene;
  for (const auto& [chain, pose] : sample.bases) {
    if (chain == "human") {
      out.human.set_base_pose(pose);
    } else {
      out.robot.set_base_pose(pose);
    }
  }
  return out;
}

}  // namespace tcc
