#pragma once

#include "tcc/scenario.hpp"

namespace tcc {

enum class MethodKind { NoIntervention, First, Average, Coupled };

std::string method_name(MethodKind m);
MethodKind method_from_name(const std::string& name);  // throws ValidationError

struct TrialResult {
  int trial = 0;
  uint64_t seed = 0;
  MethodKind method = MethodKind::NoIntervention;
  bool converged = false;
  int iterations = 0;
  double solve_seconds = 0.0;
  MetricReport report;
  MatrixXd intervention_values;  // num_nodes x intervention dims
  std::vector<VectorXd> states;
};

/// Runs one method on one sampled base pose.
TrialResult run_method(const ScenarioSpec& spec, MethodKind method,
                       const BasePoseSample& base_pose, uint64_t seed);

/// All (method x sample) trials. workers <= 1 runs the serial reference
/// path; larger counts use an OpenMP pool. Results are identical either way
/// and ordered method-major, sample-minor.
std::vector<TrialResult> run_trials(const ScenarioSpec& spec,
                                    const std::vector<MethodKind>& methods,
                                    int samples, uint64_t seed, int workers);

struct AggregateStats {
  struct Row {
    MethodKind method;
    std::string metric;
    double mean = 0.0;
    double stddev = 0.0;  // sample (n-1) convention; 0 when n == 1
    int n = 0;
    int n_failed = 0;
    bool degenerate = false;  // single converged trial
  };
  std::string scenario;
  std::vector<Row> rows;

  const Row& at(MethodKind m, const std::string& metric) const;
};

/// Mean and sample std per (method, metric); non-converged trials are
/// excluded and counted. Throws if a method has zero converged trials.
AggregateStats aggregate(const std::string& scenario,
                         const std::vector<TrialResult>& trials,
                         const std::vector<std::string>& metrics);

/// Metric value by report name ("reba_minus_1", "static_effort",
/// "spine_loading", "joint_limit_violation", "secondary_cost").
double metric_value(const MetricReport& r, const std::string& name);

std::string render_csv(const AggregateStats& stats);
void emit_report(const AggregateStats& stats, const std::string& path);

/// Per-keyframe state dump (JSON) for external plotting.
void emit_states(const ScenarioSpec& spec,
                 const std::vector<TrialResult>& trials,
                 const std::string& path);

/// Worker count: explicit CLI value wins, then TCC_WORKERS, then the
/// hardware default.
int resolve_workers(int cli_value);

}  // namespace tcc
