// Command-line front end: solve, compare, gradcheck, derive, oracle.
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "tcc/gradcheck.hpp"
#include "tcc/harness.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitNoConvergence = 2;
constexpr int kExitIo = 3;

void print_warnings(const tcc::ScenarioSpec& spec) {
  for (const auto& w : spec.warnings) {
    std::cerr << "warning: " << w << "\n";
  }
}

std::vector<double> parse_grid(const std::string& text) {
  double lo, hi, step;
  if (std::sscanf(text.c_str(), "%lf:%lf:%lf", &lo, &hi, &step) != 3 ||
      step <= 0 || hi < lo) {
    throw tcc::ValidationError("--grid must be lo:hi:step with step > 0");
  }
  std::vector<double> g;
  for (double v = lo; v <= hi + 1e-12; v += step) g.push_back(v);
  return g;
}

int cmd_solve(const std::string& scenario, const std::string& method_name,
              uint64_t seed, const std::string& out_dir) {
  const tcc::ScenarioSpec spec = tcc::load_scenario(scenario);
  print_warnings(spec);
  const tcc::MethodKind method = tcc::method_from_name(method_name);

  tcc::BasePoseSample nominal;  // unsampled bases
  const tcc::TrialResult trial = tcc::run_method(spec, method, nominal, seed);

  std::cout << "scenario: " << spec.name << "\n"
            << "method:   " << tcc::method_name(method) << "\n"
            << "converged " << (trial.converged ? "yes" : "NO") << " in "
            << trial.iterations << " iterations ("
            << trial.solve_seconds << " s)\n"
            << "secondary cost: " << trial.report.secondary_cost << "\n"
            << "mean REBA-1:    " << trial.report.mean_reba_minus_1 << "\n";
  if (trial.intervention_values.size() > 0) {
    std::cout << "intervention values (last keyframe):";
    const int last = static_cast<int>(trial.states.size()) - 1;
    for (int d = 0; d < trial.intervention_values.cols(); ++d) {
      std::cout << " " << trial.intervention_values(last, d);
    }
    std::cout << "\n";
  }

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    tcc::emit_states(spec, {trial},
                     out_dir + "/states_" + tcc::method_name(method) + ".json");
  }
  return trial.converged ? kExitOk : kExitNoConvergence;
}

int cmd_compare(const std::string& scenario, int samples, uint64_t seed,
                const std::string& out_dir, int workers, bool dump_states) {
  const tcc::ScenarioSpec spec = tcc::load_scenario(scenario);
  print_warnings(spec);
  const std::vector<tcc::MethodKind> methods = {
      tcc::MethodKind::NoIntervention, tcc::MethodKind::First,
      tcc::MethodKind::Average, tcc::MethodKind::Coupled};

  const auto trials =
      tcc::run_trials(spec, methods, samples, seed, tcc::resolve_workers(workers));
  const tcc::AggregateStats stats =
      tcc::aggregate(spec.name, trials, spec.report_metrics);

  std::cout << tcc::render_csv(stats);
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    tcc::emit_report(stats, out_dir + "/report.csv");
    if (dump_states) {
      tcc::emit_states(spec, trials, out_dir + "/states.json");
    }
  }
  int failed = 0;
  for (const auto& t : trials) failed += t.converged ? 0 : 1;
  if (failed > 0) {
    std::cerr << failed << " of " << trials.size()
              << " trials did not converge\n";
  }
  return kExitOk;
}

int cmd_gradcheck(const std::string& scenario, uint64_t seed) {
  const tcc::ScenarioSpec spec = tcc::load_scenario(scenario);
  print_warnings(spec);
  const tcc::GradCheckReport rep = tcc::gradcheck_scenario(spec, seed);
  std::cout << rep.summary() << "\n";
  return rep.ok ? kExitOk : kExitValidation;
}

int cmd_derive(const std::string& scenario, bool print) {
  const tcc::ScenarioSpec spec = tcc::load_scenario(scenario);
  print_warnings(spec);
  if (print) {
    std::cout << spec.derivation.to_string();
  }
  std::cout << "task constraints: " << spec.schedule_raw.task_constraints.size()
            << " -> " << spec.schedule.task_constraints.size() << "\n"
            << "constancy constraints: "
            << spec.schedule_raw.constancy_constraints.size() << " -> "
            << spec.schedule.constancy_constraints.size() << "\n";
  return kExitOk;
}

int cmd_oracle(const std::string& scenario, const std::string& dims_text,
               const std::string& grid_text) {
  const tcc::ScenarioSpec spec = tcc::load_scenario(scenario);
  print_warnings(spec);

  std::vector<int> dims;
  {
    std::stringstream ss(dims_text);
    std::string tok;
    while (std::getline(ss, tok, ',')) dims.push_back(std::stoi(tok));
  }
  const std::vector<double> grid = parse_grid(grid_text);
  std::vector<std::vector<double>> grids(dims.size(), grid);

  const tcc::Objectives obj = tcc::make_objectives(
      spec.scene, spec.schedule, spec.metrics, spec.displacement_weight);
  const tcc::OracleResult r = tcc::oracle_grid_search(
      spec.schedule, spec.scene, obj, dims, grids, spec.solver);

  std::cout << "evaluated " << r.evaluated << " grid points, "
            << r.infeasible.size() << " infeasible\n"
            << "best c2: " << r.best_c2 << " at";
  for (int d = 0; d < r.best_values.size(); ++d) {
    std::cout << " " << r.best_values[d];
  }
  std::cout << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Keyframe prediction and null-space intervention optimization"};
  app.require_subcommand(1);

  std::string scenario, method = "coupled", out_dir, dims_text, grid_text;
  uint64_t seed = 0;
  int samples = 10, workers = -1;
  bool print_diff = false, dump_states = false;

  auto* solve = app.add_subcommand("solve", "run one method once");
  solve->add_option("--scenario", scenario)->required();
  solve->add_option("--method", method)
      ->check(CLI::IsMember({"none", "first", "average", "coupled"}));
  solve->add_option("--seed", seed);
  solve->add_option("--out", out_dir);

  auto* compare = app.add_subcommand("compare", "run all four methods over "
                                                "sampled base poses");
  compare->add_option("--scenario", scenario)->required();
  compare->add_option("--samples", samples);
  compare->add_option("--seed", seed);
  compare->add_option("--out", out_dir);
  compare->add_option("--workers", workers);
  compare->add_flag("--dump-states", dump_states);

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference "
                                                    "validation suite");
  gradcheck->add_option("--scenario", scenario)->required();
  gradcheck->add_option("--seed", seed);

  auto* derive = app.add_subcommand("derive", "show the task-to-constancy "
                                              "derivation");
  derive->add_option("--scenario", scenario)->required();
  derive->add_flag("--print", print_diff);

  auto* oracle = app.add_subcommand("oracle", "grid-search the intervention "
                                              "dims");
  oracle->add_option("--scenario", scenario)->required();
  oracle->add_option("--dims", dims_text)->required();
  oracle->add_option("--grid", grid_text)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (solve->parsed()) return cmd_solve(scenario, method, seed, out_dir);
    if (compare->parsed()) {
      return cmd_compare(scenario, samples, seed, out_dir, workers,
                         dump_states);
    }
    if (gradcheck->parsed()) return cmd_gradcheck(scenario, seed);
    if (derive->parsed()) return cmd_derive(scenario, print_diff);
    if (oracle->parsed()) return cmd_oracle(scenario, dims_text, grid_text);
  } catch (const tcc::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const tcc::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::runtime_error& e) {
    // Infeasible oracle grids and friends.
    std::cerr << "error: " << e.what() << "\n";
    return kExitNoConvergence;
  }
  return kExitOk;
}
