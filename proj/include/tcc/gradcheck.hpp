#pragma once

#include "tcc/scenario.hpp"

namespace tcc {

struct GradCheckReport {
  bool ok = true;
  double chain_rel_error = 0.0;    // analytic vs FD point Jacobians
  double feature_abs_error = 0.0;  // per-kind feature Jacobians
  double stacked_abs_error = 0.0;  // assembled system rows
  double metric_abs_error = 0.0;   // c2 / metric gradients
  int rows_checked = 0;
  int rows_skipped = 0;  // near kinks or singular configurations
  std::vector<std::string> failures;

  std::string summary() const;
};

/// Central-difference validation of every analytic derivative a scenario
/// exercises: chain Jacobians (per chain, `configs` random interior
/// configurations), each constraint's feature Jacobian, the assembled
/// stacked Jacobian at a perturbed state, and the metric gradients.
GradCheckReport gradcheck_scenario(const ScenarioSpec& spec, uint64_t seed,
                                   int configs = 100);

}  // namespace tcc
