#pragma once

#include "tcc/metrics.hpp"

namespace tcc {

/// Schema or reference problem in a scenario file.
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// File unreadable / unwritable.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Uniform offset ranges applied to a chain's base pose per trial.
struct SamplingTarget {
  std::string chain;  // "human" | "robot"
  Interval dx{0, 0};
  Interval dy{0, 0};
  Interval dyaw{0, 0};
};

struct BasePoseSample {
  std::vector<std::pair<std::string, Pose>> bases;  // chain name -> base pose
};

struct ScenarioSpec {
  std::string name;
  SceneModel scene;
  KeyframeSchedule schedule;      // constancy-derived
  KeyframeSchedule schedule_raw;  // as declared
  DerivationDiff derivation;
  MetricConfig metrics;
  SolverConfig solver;
  double displacement_weight = 0.01;
  std::vector<SamplingTarget> sampling;
  std::vector<std::string> report_metrics;
  std::vector<std::string> warnings;  // e.g. root constraints unmet at x0
};

/// Parses and validates a scenario file; applies the task-to-constancy
/// derivation eagerly (diff kept on the spec).
ScenarioSpec load_scenario(const std::string& path);
ScenarioSpec parse_scenario(const std::string& json_text);

/// n seeded base-pose samples, uniform within the declared offset ranges.
std::vector<BasePoseSample> sample_base_poses(const ScenarioSpec& spec, int n,
                                              uint64_t seed);

/// Scene with the sampled base poses applied.
SceneModel scene_with_bases(const SceneModel& scene,
                            const BasePoseSample& sample);

}  // namespace tcc
