#include "tcc/harness.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <set>

#include <json.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace tcc {

std::string method_name(MethodKind m) {
  switch (m) {
    case MethodKind::NoIntervention:
      return "none";
    case MethodKind::First:
      return "first";
    case MethodKind::Average:
      return "average";
    case MethodKind::Coupled:
      return "coupled";
  }
  return "?";
}

MethodKind method_from_name(const std::string& name) {
  if (name == "none") return MethodKind::NoIntervention;
  if (name == "first") return MethodKind::First;
  if (name == "average") return MethodKind::Average;
  if (name == "coupled") return MethodKind::Coupled;
  throw ValidationError("unknown method '" + name +
                        "' (none|first|average|coupled)");
}

// ---------------------------------------------------------------------------
// Heuristic methods (First / Average)
// ---------------------------------------------------------------------------

namespace {

// State dims a feature can depend on, at entity-block granularity.
std::vector<int> feature_state_support(const FeatureSpec& f,
                                       const SceneModel& scene) {
  std::vector<int> dims;
  auto add_entity = [&](const EntityRef& e) {
    if (e.kind == EntityKind::Object) {
      const int off = scene.object_offset(scene.object_index(e.name));
      for (int d = 0; d < 6; ++d) dims.push_back(off + d);
    } else if (e.kind == EntityKind::HumanBody) {
      for (int d = 0; d < scene.human_dof(); ++d) {
        dims.push_back(scene.human_offset() + d);
      }
    } else if (e.kind == EntityKind::RobotBody) {
      for (int d = 0; d < scene.robot_dof(); ++d) {
        dims.push_back(scene.robot_offset() + d);
      }
    }
  };
  if (f.kind == FeatureKind::JointRange) {
    const int off = f.chain == "human" ? scene.human_offset()
                                       : scene.robot_offset();
    const KinematicChain& c = f.chain == "human" ? scene.human : scene.robot;
    if (f.joints.empty()) {
      for (int d = 0; d < c.num_joints(); ++d) dims.push_back(off + d);
    } else {
      for (const auto& n : f.joints) dims.push_back(off + c.joint_index(n));
    }
  } else {
    add_entity(f.a);
    if (f.b) add_entity(*f.b);
  }
  return dims;
}

bool touches_intervention(const FeatureSpec& f, const SceneModel& scene,
                          const std::vector<int>& intervention) {
  const std::vector<int> support = feature_state_support(f, scene);
  for (int d : support) {
    if (std::find(intervention.begin(), intervention.end(), d) !=
        intervention.end()) {
      return true;
    }
  }
  return false;
}

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(int n) : parent(n) {
    std::iota(parent.begin(), parent.end(), 0);
  }
  int find(int a) { return parent[a] == a ? a : parent[a] = find(parent[a]); }
  void unite(int a, int b) { parent[find(a)] = find(b); }
};

// Keyframe groups that must share one intervention value: connected
// components of the constancy graph restricted to intervention-coupled
// constraints.
std::vector<std::vector<int>> intervention_groups(
    const KeyframeSchedule& schedule, const SceneModel& scene) {
  UnionFind uf(schedule.num_nodes());
  for (const auto& c : schedule.constancy_constraints) {
    if (touches_intervention(c.feature, scene, schedule.intervention_dims)) {
      uf.unite(c.keyframe_i, c.keyframe_j);
    }
  }
  std::map<int, std::vector<int>> by_root;
  for (int i = 0; i < schedule.num_nodes(); ++i) {
    by_root[uf.find(i)].push_back(i);
  }
  std::vector<std::vector<int>> groups;
  for (auto& [root, members] : by_root) {
    if (members.size() > 1) groups.push_back(std::move(members));
  }
  return groups;
}

// Independent solve of a single keyframe against its (already solved)
// predecessors: the raw per-keyframe task constraints, plus any declared
// non-intervention constancy against a solved node pinned as degenerate
// task rows around the solved value.
VectorXd solve_single_keyframe(const ScenarioSpec& spec,
                               const SceneModel& scene, int node,
                               const std::vector<VectorXd>& solved,
                               const Objectives& node_obj, bool* converged) {
  const KeyframeSchedule& raw = spec.schedule_raw;
  KeyframeSchedule mini;
  mini.nodes.push_back(KeyframeNode{0, -1, "main"});
  mini.nodes.push_back(KeyframeNode{1, 0, "main"});
  mini.intervention_dims = raw.intervention_dims;

  for (const auto& c : raw.task_constraints) {
    if (c.keyframe != node) continue;
    TaskConstraint copy = c;
    copy.keyframe = 1;
    mini.task_constraints.push_back(copy);
  }
  for (const auto& c : raw.constancy_constraints) {
    const bool fwd = c.keyframe_j == node;
    const bool rev = c.keyframe_i == node;
    if (!fwd && !rev) continue;
    if (touches_intervention(c.feature, scene, raw.intervention_dims)) {
      continue;  // dropped: keyframes decide their free dims independently
    }
    const int other = fwd ? c.keyframe_i : c.keyframe_j;
    if (other >= node) continue;  // only solved predecessors can pin
    VectorXd v;
    eval_feature(c.feature, keyframe_kinematics(scene, solved[other]), v,
                 nullptr);
    TaskConstraint pin;
    pin.keyframe = 1;
    pin.name = c.name + "@kf" + std::to_string(other);
    pin.feature = c.feature;
    pin.intervals.assign(v.size(), Interval{});
    for (size_t r = 0; r < c.dims.size(); ++r) {
      const int d = c.dims[r];
      const double tol = c.tolerance.empty()
                             ? 0.0
                             : c.tolerance[std::min(r, c.tolerance.size() - 1)];
      pin.intervals[d] = Interval{v[d] - tol, v[d] + tol};
    }
    mini.task_constraints.push_back(pin);
  }

  const int parent = raw.parent_of(node);
  SolveOptions opts;
  opts.initial_states = {solved[parent], solved[parent]};
  const SelectionMatrix A =
      SelectionMatrix::from_dims(scene.dim(), raw.intervention_dims);
  const SolveResult r = solve(mini, scene, node_obj, A, spec.solver, opts);
  *converged = *converged && r.converged;
  return r.states[1];
}

// Tangent-space mean for a full exponential-map triple; arithmetic otherwise.
void average_group_dims(const SceneModel& scene,
                        const std::vector<int>& group,
                        const std::vector<int>& dims,
                        std::vector<VectorXd>& states) {
  std::set<int> dimset(dims.begin(), dims.end());
  std::set<int> done;
  for (int d : dims) {
    if (done.count(d)) continue;
    // Detect an object rotation block fully inside the intervention set.
    int rot_off = -1;
    for (int k = 0; k < scene.num_objects(); ++k) {
      const int off = scene.object_offset(k) + 3;
      if (d >= off && d < off + 3 && dimset.count(off) &&
          dimset.count(off + 1) && dimset.count(off + 2)) {
        rot_off = off;
        break;
      }
    }
    if (rot_off >= 0) {
      // Mean in the tangent of the first group member's rotation.
      const Matrix3d R0 = exp_so3(states[group.front()].segment<3>(rot_off));
      Vector3d acc = Vector3d::Zero();
      for (int n : group) {
        acc += log_so3(R0.transpose() *
                       exp_so3(states[n].segment<3>(rot_off)));
      }
      const Vector3d mean = log_so3(R0 * exp_so3(acc / group.size()));
      for (int n : group) {
        if (n == 0) continue;  // root is immutable
        states[n].segment<3>(rot_off) = mean;
      }
      for (int i = 0; i < 3; ++i) done.insert(rot_off + i);
    } else {
      double acc = 0.0;
      for (int n : group) acc += states[n][d];
      const double mean = acc / group.size();
      for (int n : group) {
        if (n == 0) continue;
        states[n][d] = mean;
      }
      done.insert(d);
    }
  }
}

TrialResult heuristic_method(const ScenarioSpec& spec, const SceneModel& scene,
                             MethodKind method) {
  TrialResult out;
  out.method = method;
  out.converged = true;

  // Per-keyframe objective: the keyframe's own cost.
  const int dx = scene.dim();
  const int hoff = scene.human_offset();
  const int hdof = scene.human_dof();
  Objectives node_obj;
  node_obj.displacement_weight = spec.displacement_weight;
  node_obj.c2_value = [&](const std::vector<VectorXd>& states) {
    return keyframe_cost(scene, states.back(), spec.metrics, nullptr);
  };
  node_obj.c2_gradient = [&](const std::vector<VectorXd>& states) {
    VectorXd g = VectorXd::Zero((states.size() - 1) * dx);
    VectorXd gq;
    keyframe_cost(scene, states.back(), spec.metrics, &gq);
    g.segment((states.size() - 2) * dx + hoff, hdof) = gq;
    return g;
  };

  // 1. Independent per-keyframe solves, parents first.
  std::vector<VectorXd> states(spec.schedule.num_nodes(),
                               scene.initial_state());
  for (int i = 1; i < spec.schedule.num_nodes(); ++i) {
    states[i] =
        solve_single_keyframe(spec, scene, i, states, node_obj, &out.converged);
  }

  // 2. Overwrite the shared dims per linked group.
  const auto groups = intervention_groups(spec.schedule, scene);
  for (const auto& group : groups) {
    if (method == MethodKind::First) {
      const int first = group.front();  // groups are sorted by node id
      for (int d : spec.schedule.intervention_dims) {
        for (int n : group) {
          if (n != 0) states[n][d] = states[first][d];
        }
      }
    } else {
      average_group_dims(scene, group, spec.schedule.intervention_dims,
                         states);
    }
  }

  // 3. Feasibility re-solve with the intervention dims frozen.
  SolveOptions opts;
  opts.initial_states = states;
  opts.frozen_dims = spec.schedule.intervention_dims;
  Objectives obj = make_objectives(scene, spec.schedule, spec.metrics,
                                   spec.displacement_weight);
  const SolveResult r =
      solve(spec.schedule, scene, obj, SelectionMatrix::none(scene.dim()),
            spec.solver, opts);
  out.converged = out.converged && r.converged;
  out.iterations = r.iterations;
  out.states = r.states;
  out.intervention_values = r.intervention_values;
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// run_method / run_trials
// ---------------------------------------------------------------------------

TrialResult run_method(const ScenarioSpec& spec, MethodKind method,
                       const BasePoseSample& base_pose, uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  const SceneModel scene = scene_with_bases(spec.scene, base_pose);

  TrialResult out;
  if (method == MethodKind::First || method == MethodKind::Average) {
    out = heuristic_method(spec, scene, method);
  } else {
    Objectives obj = make_objectives(scene, spec.schedule, spec.metrics,
                                     spec.displacement_weight);
    SolveOptions opts;
    SelectionMatrix A = SelectionMatrix::none(scene.dim());
    if (method == MethodKind::Coupled) {
      A = SelectionMatrix::from_dims(scene.dim(),
                                     spec.schedule.intervention_dims);
      A.validate(scene);
    } else {
      // Pure prediction: the intervention dims stay at their x0 values.
      opts.frozen_dims = spec.schedule.intervention_dims;
    }
    const SolveResult r = solve(spec.schedule, scene, obj, A, spec.solver, opts);
    out.method = method;
    out.converged = r.converged;
    out.iterations = r.iterations;
    out.states = r.states;
    out.intervention_values = r.intervention_values;
  }

  out.seed = seed;
  out.report = evaluate_metrics(scene, spec.schedule, out.states, spec.metrics);
  out.solve_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return out;
}

std::vector<TrialResult> run_trials(const ScenarioSpec& spec,
                                    const std::vector<MethodKind>& methods,
                                    int samples, uint64_t seed, int workers) {
  const auto poses = sample_base_poses(spec, samples, seed);
  const int total = static_cast<int>(methods.size()) * samples;
  std::vector<TrialResult> out(total);

  auto run_one = [&](int t) {
    const int m = t / samples;
    const int s = t % samples;
    TrialResult r = run_method(spec, methods[m], poses[s], seed + s);
    r.trial = s;
    out[t] = std::move(r);
  };

  if (workers <= 1) {
    for (int t = 0; t < total; ++t) run_one(t);
    return out;
  }

#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) num_threads(workers)
  for (int t = 0; t < total; ++t) run_one(t);
#else
  for (int t = 0; t < total; ++t) run_one(t);
#endif
  return out;
}

// ---------------------------------------------------------------------------
// Aggregation and reports
// ---------------------------------------------------------------------------

double metric_value(const MetricReport& r, const std::string& name) {
  if (name == "reba_minus_1") return r.mean_reba_minus_1;
  if (name == "static_effort") return r.mean_static_effort;
  if (name == "spine_loading") return r.mean_spine_loading;
  if (name == "joint_limit_violation") return r.mean_joint_limit_violation;
  if (name == "secondary_cost") return r.secondary_cost;
  throw ValidationError("unknown report metric '" + name + "'");
}

const AggregateStats::Row& AggregateStats::at(
    MethodKind m, const std::string& metric) const {
  for (const auto& r : rows) {
    if (r.method == m && r.metric == metric) return r;
  }
  throw std::out_of_range("no aggregate row for " + method_name(m) + "/" +
                          metric);
}

AggregateStats aggregate(const std::string& scenario,
                         const std::vector<TrialResult>& trials,
                         const std::vector<std::string>& metrics) {
  if (trials.empty()) throw std::invalid_argument("aggregate: no trials");

  std::vector<MethodKind> methods;
  for (const auto& t : trials) {
    if (std::find(methods.begin(), methods.end(), t.method) == methods.end()) {
      methods.push_back(t.method);
    }
  }

  AggregateStats stats;
  stats.scenario = scenario;
  for (MethodKind m : methods) {
    std::vector<const TrialResult*> ok;
    int failed = 0;
    for (const auto& t : trials) {
      if (t.method != m) continue;
      if (t.converged) {
        ok.push_back(&t);
      } else {
        ++failed;
      }
    }
    if (ok.empty()) {
      throw std::runtime_error("aggregate: zero converged trials for method " +
                               method_name(m));
    }
    for (const auto& metric : metrics) {
      AggregateStats::Row row;
      row.method = m;
      row.metric = metric;
      row.n = static_cast<int>(ok.size());
      row.n_failed = failed;
      double mean = 0.0;
      for (const auto* t : ok) mean += metric_value(t->report, metric);
      mean /= ok.size();
      row.mean = mean;
      if (ok.size() > 1) {
        double ss = 0.0;
        for (const auto* t : ok) {
          const double d = metric_value(t->report, metric) - mean;
          ss += d * d;
        }
        row.stddev = std::sqrt(ss / (ok.size() - 1));
      } else {
        row.stddev = 0.0;
        row.degenerate = true;
      }
      stats.rows.push_back(row);
    }
  }
  return stats;
}

namespace {

// 6 significant digits, locale independent.
std::string format_number(double v) {
  char buf[64];
  const auto res =
      std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 6);
  return std::string(buf, res.ptr);
}

}  // namespace

std::string render_csv(const AggregateStats& stats) {
  std::string out = "scenario,method,metric,mean,std,n,n_failed\n";
  for (const auto& r : stats.rows) {
    out += stats.scenario + "," + method_name(r.method) + "," + r.metric +
           "," + format_number(r.mean) + "," + format_number(r.stddev) + "," +
           std::to_string(r.n) + "," + std::to_string(r.n_failed) + "\n";
  }
  return out;
}

void emit_report(const AggregateStats& stats, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write report '" + path + "'");
  out << render_csv(stats);
  if (!out) throw IoError("error writing report '" + path + "'");
}

void emit_states(const ScenarioSpec& spec,
                 const std::vector<TrialResult>& trials,
                 const std::string& path) {
  nlohmann::ordered_json root;
  root["scenario"] = spec.name;
  auto& arr = root["trials"] = nlohmann::ordered_json::array();
  for (const auto& t : trials) {
    nlohmann::ordered_json tj;
    tj["trial"] = t.trial;
    tj["method"] = method_name(t.method);
    tj["converged"] = t.converged;
    tj["iterations"] = t.iterations;
    auto& kf = tj["keyframes"] = nlohmann::ordered_json::array();
    for (const auto& x : t.states) {
      kf.push_back(std::vector<double>(x.data(), x.data() + x.size()));
    }
    arr.push_back(std::move(tj));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write states '" + path + "'");
  out << root.dump(1) << "\n";
  if (!out) throw IoError("error writing states '" + path + "'");
}

int resolve_workers(int cli_value) {
  if (cli_value > 0) return cli_value;
  if (const char* env = std::getenv("TCC_WORKERS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace tcc
