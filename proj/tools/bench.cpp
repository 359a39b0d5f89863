// Timing harness: per-iteration and full-solve costs, plus serial vs
// OpenMP trial throughput on the same workload.
#include <chrono>
#include <iostream>

#include "tcc/harness.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace {

using clock_t_ = std::chrono::steady_clock;

double seconds_since(clock_t_::time_point t0) {
  return std::chrono::duration<double>(clock_t_::now() - t0).count();
}

void bench_step(const tcc::ScenarioSpec& spec) {
  const tcc::SceneModel& scene = spec.scene;
  const tcc::Objectives obj = tcc::make_objectives(
      scene, spec.schedule, spec.metrics, spec.displacement_weight);
  const tcc::SelectionMatrix A = tcc::SelectionMatrix::from_dims(
      scene.dim(), spec.schedule.intervention_dims);
  std::vector<tcc::VectorXd> states(spec.schedule.num_nodes(),
                                    scene.initial_state());

  constexpr int reps = 50;
  const auto t0 = clock_t_::now();
  double sink = 0.0;
  for (int r = 0; r < reps; ++r) {
    const tcc::StepResult s = tcc::tcc_step(spec.schedule, scene, states, obj,
                                            A, spec.solver, 1e-3);
    sink += s.dx.norm();
  }
  const double per_iter = seconds_since(t0) / reps;
  std::cout << "  one TCC iteration: " << per_iter * 1e3 << " ms  (keyframes "
            << spec.schedule.num_nodes() << ", d_x " << scene.dim()
            << ", checksum " << sink << ")\n";

  const auto t1 = clock_t_::now();
  const tcc::SolveResult res =
      tcc::solve(spec.schedule, scene, obj, A, spec.solver);
  std::cout << "  coupled solve: " << seconds_since(t1) * 1e3 << " ms, "
            << res.iterations << " iterations, converged "
            << (res.converged ? "yes" : "NO") << "\n";
}

void bench_trials(const tcc::ScenarioSpec& spec) {
  const std::vector<tcc::MethodKind> methods = {
      tcc::MethodKind::NoIntervention, tcc::MethodKind::First,
      tcc::MethodKind::Average, tcc::MethodKind::Coupled};
  constexpr int samples = 4;

  const auto t0 = clock_t_::now();
  const auto serial = tcc::run_trials(spec, methods, samples, 7, 1);
  const double t_serial = seconds_since(t0);

#ifdef _OPENMP
  const int workers = omp_get_max_threads();
#else
  const int workers = 1;
#endif
  const auto t1 = clock_t_::now();
  const auto parallel = tcc::run_trials(spec, methods, samples, 7, workers);
  const double t_parallel = seconds_since(t1);

  bool identical = serial.size() == parallel.size();
  for (size_t i = 0; identical && i < serial.size(); ++i) {
    identical = serial[i].converged == parallel[i].converged &&
                serial[i].report.secondary_cost ==
                    parallel[i].report.secondary_cost;
  }
  std::cout << "  " << serial.size() << " trials: serial " << t_serial
            << " s, " << workers << " workers " << t_parallel << " s, speedup "
            << t_serial / t_parallel << "x, results "
            << (identical ? "identical" : "DIFFER") << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: tcc_bench SCENARIO [SCENARIO...]\n";
    return 1;
  }
  for (int i = 1; i < argc; ++i) {
    const tcc::ScenarioSpec spec = tcc::load_scenario(argv[i]);
    std::cout << spec.name << ":\n";
    bench_step(spec);
    bench_trials(spec);
  }
  return 0;
}
