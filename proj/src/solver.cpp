#include "tcc/solver.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace tcc {

SelectionMatrix SelectionMatrix::from_dims(int dx,
                                           const std::vector<int>& dims) {
  SelectionMatrix a;
  a.diag_ = VectorXd::Zero(dx);
  for (int d : dims) {
    if (d < 0 || d >= dx) {
      throw std::invalid_argument("selection dim out of range");
    }
    a.diag_[d] = 1.0;
  }
  return a;
}

VectorXd SelectionMatrix::replicated(int decision_nodes) const {
  VectorXd out(decision_nodes * dim());
  for (int i = 0; i < decision_nodes; ++i) out.segment(i * dim(), dim()) = diag_;
  return out;
}

void SelectionMatrix::validate(const SceneModel& scene) const {
  if (dim() != scene.dim()) {
    throw std::invalid_argument("selection matrix has wrong dimension");
  }
  for (int d = scene.human_offset();
       d < scene.human_offset() + scene.human_dof(); ++d) {
    if (diag_[d] != 0.0) {
      throw std::invalid_argument("selection matrix must be zero on human "
                                  "DoFs");
    }
  }
}

VectorXd Objectives::c2_grad(const std::vector<VectorXd>& states,
                             int dx) const {
  const int n = static_cast<int>(states.size() - 1) * dx;
  if (!c2_gradient) return VectorXd::Zero(n);
  VectorXd g = c2_gradient(states);
  if (g.size() != n) {
    throw std::invalid_argument("c2 gradient has wrong dimension");
  }
  return g;
}

double c1_value(const StackedSystem& sys, const std::vector<VectorXd>& states,
                const KeyframeSchedule& schedule, const VectorXd& weights_dx,
                double displacement_weight) {
  double v = 0.5 * sys.residual.squaredNorm();
  for (int i = 1; i < schedule.num_nodes(); ++i) {
    const VectorXd d = states[i] - states[schedule.parent_of(i)];
    v += 0.5 * displacement_weight * d.cwiseProduct(weights_dx).dot(d);
  }
  return v;
}

VectorXd c1_gradient(const StackedSystem& sys,
                     const std::vector<VectorXd>& states,
                     const KeyframeSchedule& schedule,
                     const VectorXd& weights_dx, double displacement_weight) {
  const int dx = sys.dim_per_keyframe;
  VectorXd g = sys.jacobian.transpose() * sys.barrier_gradient;
  for (int i = 1; i < schedule.num_nodes(); ++i) {
    const int par = schedule.parent_of(i);
    const VectorXd d =
        displacement_weight * (states[i] - states[par]).cwiseProduct(weights_dx);
    g.segment((i - 1) * dx, dx) += d;
    if (par != 0) g.segment((par - 1) * dx, dx) -= d;
  }
  return g;
}

// ---------------------------------------------------------------------------
// LM pseudoinverse and projector
// ---------------------------------------------------------------------------

MatrixXd lm_pseudoinverse(const MatrixXd& J, const VectorXd& W,
                          double lambda) {
  const int m = static_cast<int>(J.rows());
  const int n = static_cast<int>(J.cols());
  if (lambda < 0) throw std::invalid_argument("lambda must be >= 0");
  if (W.size() != n) {
    throw std::invalid_argument("weight diagonal has wrong dimension");
  }
  if (W.minCoeff() <= 0) {
    throw std::invalid_argument("weights must be positive");
  }
  if (m == 0) return MatrixXd::Zero(n, 0);

  if (m <= n) {
    // Right form: W^-1 J^T (J W^-1 J^T + lambda I)^-1.
    const MatrixXd JWinv = J * W.cwiseInverse().asDiagonal();
    MatrixXd B = JWinv * J.transpose();
    B.diagonal().array() += lambda;
    if (lambda == 0.0) {
      Eigen::FullPivLU<MatrixXd> lu(B);
      if (!lu.isInvertible()) {
        throw std::runtime_error(
            "lm_pseudoinverse: singular system at lambda = 0");
      }
      return JWinv.transpose() * lu.inverse();
    }
    return JWinv.transpose() * B.llt().solve(MatrixXd::Identity(m, m));
  }

  // Left form: (J^T J + lambda W)^-1 J^T.
  MatrixXd A = J.transpose() * J;
  A += lambda * MatrixXd(W.asDiagonal());
  if (lambda == 0.0) {
    Eigen::FullPivLU<MatrixXd> lu(A);
    if (!lu.isInvertible()) {
      throw std::runtime_error(
          "lm_pseudoinverse: singular system at lambda = 0");
    }
    return lu.inverse() * J.transpose();
  }
  return A.llt().solve(J.transpose());
}

MatrixXd lm_pseudoinverse(const Eigen::SparseMatrix<double>& J,
                          const VectorXd& W, double lambda) {
  return lm_pseudoinverse(MatrixXd(J), W, lambda);
}

MatrixXd nullspace_projector(const MatrixXd& J, const MatrixXd& J_pinv,
                             const VectorXd& W) {
  const int n = static_cast<int>(J.cols());
  MatrixXd P = MatrixXd::Identity(n, n) - J_pinv * J;
  P *= W.cwiseInverse().asDiagonal();
  return P;
}

// ---------------------------------------------------------------------------
// TCC step
// ---------------------------------------------------------------------------

namespace {

VectorXd free_mask(const KeyframeSchedule& schedule, int dx,
                   const std::vector<int>* frozen) {
  VectorXd mask = VectorXd::Ones(schedule.num_decision_nodes() * dx);
  if (frozen) {
    for (int i = 0; i < schedule.num_decision_nodes(); ++i) {
      for (int d : *frozen) {
        if (d < 0 || d >= dx) {
          throw std::invalid_argument("frozen dim out of range");
        }
        mask[i * dx + d] = 0.0;
      }
    }
  }
  return mask;
}

// Parent pull of every decision keyframe, stacked (innate motion metric).
VectorXd parent_pull(const KeyframeSchedule& schedule,
                     const std::vector<VectorXd>& states, int dx) {
  VectorXd pull(schedule.num_decision_nodes() * dx);
  for (int i = 1; i < schedule.num_nodes(); ++i) {
    pull.segment((i - 1) * dx, dx) = states[i] - states[schedule.parent_of(i)];
  }
  return pull;
}

}  // namespace

StepResult tcc_step(const KeyframeSchedule& schedule, const SceneModel& scene,
                    const std::vector<VectorXd>& states, const Objectives& obj,
                    const SelectionMatrix& A, const SolverConfig& config,
                    double lambda, const std::vector<int>* frozen) {
  const int dx = scene.dim();
  const int nn = schedule.num_decision_nodes();
  const int n = nn * dx;

  StepResult out;
  out.system = assemble(schedule, states, scene, config.barrier);
  out.max_residual = out.system.max_residual();

  const VectorXd mask = free_mask(schedule, dx, frozen);
  const VectorXd Wn = [&] {
    const VectorXd w = config.weights_for(dx);
    VectorXd full(n);
    for (int i = 0; i < nn; ++i) full.segment(i * dx, dx) = w;
    return full;
  }();

  MatrixXd J = MatrixXd(out.system.jacobian);
  // Frozen columns leave the decision space.
  for (int c = 0; c < n; ++c) {
    if (mask[c] == 0.0) J.col(c).setZero();
  }

  const MatrixXd J_pinv = lm_pseudoinverse(J, Wn, lambda);
  const MatrixXd NP = MatrixXd::Identity(n, n) - J_pinv * J;

  // Prediction: pull the barriered residuals to zero.
  const VectorXd e_corr = -out.system.residual;
  VectorXd dxp = J_pinv * e_corr;
  dxp = dxp.cwiseProduct(mask);

  // Innate-motion metric: each keyframe is pulled toward its parent in the
  // null space. The assist-selected dims are owned by c2. Clamped per
  // component so one pull stays within linearization reach.
  const VectorXd Arep = A.dim() == dx ? A.replicated(nn) : VectorXd::Zero(n);
  const double cap = config.barrier.delta_translation;
  VectorXd pull =
      parent_pull(schedule, states, dx).cwiseProduct(VectorXd::Ones(n) - Arep);
  pull = pull.cwiseProduct(mask).cwiseMax(-cap).cwiseMin(cap);
  VectorXd dxi = -config.innate_rate * (NP * pull);
  dxi = dxi.cwiseProduct(mask);

  // Assistance: c2 gradient descent through the null-space projector,
  // filtered per dimension by A (in that order).
  VectorXd dxa = VectorXd::Zero(n);
  if (A.dim() == dx && A.any()) {
    const VectorXd g2 = obj.c2_grad(states, dx);
    if (g2.lpNorm<Eigen::Infinity>() > 0) {
      // P = NP W^-1, reusing the already-formed complement.
      const VectorXd v = NP * g2.cwiseQuotient(Wn);
      dxa = -config.assist_rate * Arep.cwiseProduct(v);
      dxa = dxa.cwiseProduct(mask);
    }
  }

  out.dx_predict = dxp;
  out.dx_innate = dxi;
  out.dx_assist = dxa;
  out.dx = dxp + dxi + dxa;
  return out;
}

// ---------------------------------------------------------------------------
// Solve
// ---------------------------------------------------------------------------

namespace {

std::vector<VectorXd> apply_step(const KeyframeSchedule& schedule,
                                 const std::vector<VectorXd>& states,
                                 const VectorXd& dz, int dx) {
  std::vector<VectorXd> out = states;
  for (int i = 1; i < schedule.num_nodes(); ++i) {
    out[i] += dz.segment((i - 1) * dx, dx);
  }
  return out;
}

constexpr double kFeasSlack = 1e-12;
constexpr double kLambdaFloor = 1e-9;
constexpr double kLambdaCeil = 1e12;

}  // namespace

SolveResult solve(const KeyframeSchedule& schedule, const SceneModel& scene,
                  const Objectives& obj, const SelectionMatrix& A,
                  const SolverConfig& config, const SolveOptions& opts) {
  using clock = std::chrono::steady_clock;
  const int dx = scene.dim();

  SolveResult res;
  if (!opts.initial_states.empty()) {
    if (static_cast<int>(opts.initial_states.size()) != schedule.num_nodes()) {
      throw std::invalid_argument("solve: wrong number of initial states");
    }
    res.states = opts.initial_states;
  } else {
    res.states.assign(schedule.num_nodes(), scene.initial_state());
  }
  for (const auto& x : res.states) {
    if (x.size() != dx) {
      throw std::invalid_argument("solve: state dimension mismatch");
    }
  }

  const std::vector<int>* frozen =
      opts.frozen_dims.empty() ? nullptr : &opts.frozen_dims;

  double lambda = config.lambda0;
  StackedSystem sys = assemble(schedule, res.states, scene, config.barrier);
  // The barrier (clipped) max honors the monotone-feasibility contract; the
  // raw violation sum is the strictly decreasing workhorse. While rows are
  // clipped, the max alone is flat and blind.
  double max_res = sys.max_residual();
  double sum_res = sys.violation.squaredNorm();
  double c2 = obj.c2(res.states);

  int small_steps = 0;
  for (int iter = 0; iter < config.max_iters; ++iter) {
    const auto t0 = clock::now();
    StepResult step =
        tcc_step(schedule, scene, res.states, obj, A, config, lambda, frozen);

    // Barrier-correction candidate.
    VectorXd applied = step.dx_predict;
    std::vector<VectorXd> cand = apply_step(schedule, res.states, applied, dx);
    StackedSystem cand_sys = assemble(schedule, cand, scene, config.barrier);
    double cand_res = cand_sys.max_residual();
    double cand_sum = cand_sys.violation.squaredNorm();
    double cand_c2 = obj.c2(cand);

    // The innate pull is scaled back by bisection; it must not regress
    // feasibility at all.
    if (step.dx_innate.lpNorm<Eigen::Infinity>() > 0) {
      double s = 1.0;
      for (int k = 0; k < 13; ++k, s *= 0.5) {
        const VectorXd dz = applied + s * step.dx_innate;
        std::vector<VectorXd> trial = apply_step(schedule, res.states, dz, dx);
        StackedSystem trial_sys =
            assemble(schedule, trial, scene, config.barrier);
        const double trial_res = trial_sys.max_residual();
        const double trial_sum = trial_sys.violation.squaredNorm();
        if (trial_res <= cand_res + kFeasSlack &&
            trial_sum <= cand_sum + kFeasSlack) {
          cand = std::move(trial);
          cand_sys = std::move(trial_sys);
          cand_res = trial_res;
          cand_sum = trial_sum;
          applied = dz;
          break;
        }
      }
      cand_c2 = obj.c2(cand);
    }

    // Accept when neither the worst violation nor the total violation
    // regresses: the max alone lets non-worst rows drift into corners.
    bool accepted = false;
    if (cand_res <= max_res + kFeasSlack && cand_sum <= sum_res + kFeasSlack) {
      res.states = std::move(cand);
      sys = std::move(cand_sys);
      max_res = cand_res;
      sum_res = cand_sum;
      c2 = cand_c2;
      lambda = std::max(lambda * config.lambda_shrink, kLambdaFloor);
      accepted = true;
    } else {
      lambda *= config.lambda_grow;
    }

    // Assistance phase, on top of an accepted near-feasible state. A after P
    // can leave the null space, so each increment is followed by one
    // restoration correction and scaled back by bisection until the restored
    // state stays within the tol_residual regression budget and improves c2.
    double assist_norm = 0.0;
    if (accepted && step.dx_assist.lpNorm<Eigen::Infinity>() > 0 &&
        sys.max_violation() <= config.tol_residual) {
      const double budget = 0.999 * config.tol_residual;
      double s = 1.0;
      for (int k = 0; k < 13; ++k, s *= 0.5) {
        std::vector<VectorXd> pushed =
            apply_step(schedule, res.states, s * step.dx_assist, dx);
        const StepResult restore = tcc_step(schedule, scene, pushed, obj,
                                            SelectionMatrix{}, config, lambda,
                                            frozen);
        std::vector<VectorXd> trial =
            apply_step(schedule, pushed, restore.dx_predict, dx);
        StackedSystem trial_sys =
            assemble(schedule, trial, scene, config.barrier);
        if (trial_sys.max_violation() <= max_res + budget &&
            obj.c2(trial) <= c2 - kFeasSlack) {
          assist_norm = (s * step.dx_assist + restore.dx_predict)
                            .lpNorm<Eigen::Infinity>();
          res.states = std::move(trial);
          sys = std::move(trial_sys);
          max_res = sys.max_residual();
          sum_res = sys.violation.squaredNorm();
          c2 = obj.c2(res.states);
          break;
        }
      }
    }

    res.iterations = iter + 1;
    res.residual_trace.push_back(max_res);
    res.c2_trace.push_back(c2);
    res.iteration_seconds.push_back(
        std::chrono::duration<double>(clock::now() - t0).count());

    if (accepted) {
      const double moved =
          std::max(applied.lpNorm<Eigen::Infinity>(), assist_norm);
      if (moved < config.tol_step) {
        if (++small_steps >= 3) break;
      } else {
        small_steps = 0;
      }
    }
    if (lambda > kLambdaCeil) {
      res.message = "damping exceeded limit";
      break;
    }
  }

  res.converged =
      sys.max_violation() <= config.tol_residual && small_steps >= 3;
  if (!res.converged && res.message.empty()) {
    res.message = sys.max_violation() > config.tol_residual
                      ? "residual above tolerance"
                      : "step did not settle within max_iters";
  }
  res.final_residual = sys.residual;
  res.row_index = sys.row_index;

  const int ndims = static_cast<int>(schedule.intervention_dims.size());
  res.intervention_values.resize(schedule.num_nodes(), ndims);
  for (int i = 0; i < schedule.num_nodes(); ++i) {
    for (int d = 0; d < ndims; ++d) {
      res.intervention_values(i, d) =
          res.states[i][schedule.intervention_dims[d]];
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Grid oracle
// ---------------------------------------------------------------------------

OracleResult oracle_grid_search(const KeyframeSchedule& schedule,
                                const SceneModel& scene, const Objectives& obj,
                                const std::vector<int>& intervention_dims,
                                const std::vector<std::vector<double>>& grids,
                                const SolverConfig& config) {
  if (intervention_dims.empty() || intervention_dims.size() > 2) {
    throw std::invalid_argument(
        "oracle_grid_search supports 1 or 2 intervention dims");
  }
  if (grids.size() != intervention_dims.size()) {
    throw std::invalid_argument("oracle_grid_search: one grid per dim");
  }
  for (const auto& g : grids) {
    if (g.empty()) throw std::invalid_argument("oracle grid is empty");
  }

  std::vector<VectorXd> points;
  const int ndims = static_cast<int>(intervention_dims.size());
  if (ndims == 1) {
    for (double v : grids[0]) {
      points.push_back((VectorXd(1) << v).finished());
    }
  } else {
    for (double v0 : grids[0]) {
      for (double v1 : grids[1]) {
        points.push_back((VectorXd(2) << v0, v1).finished());
      }
    }
  }

  const int np = static_cast<int>(points.size());
  std::vector<double> cost(np, std::numeric_limits<double>::infinity());
  std::vector<char> feasible(np, 0);

  const VectorXd x0 = scene.initial_state();
  const SelectionMatrix A = SelectionMatrix::none(scene.dim());

#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
  for (int p = 0; p < np; ++p) {
    VectorXd seed = x0;
    for (int d = 0; d < ndims; ++d) {
      seed[intervention_dims[d]] = points[p][d];
    }
    SolveOptions opts;
    opts.initial_states.assign(schedule.num_nodes(), seed);
    opts.frozen_dims = intervention_dims;
    const SolveResult r = solve(schedule, scene, obj, A, config, opts);
    if (r.converged) {
      cost[p] = obj.c2(r.states);
      feasible[p] = 1;
    }
  }

  OracleResult out;
  out.evaluated = np;
  int best = -1;
  for (int p = 0; p < np; ++p) {
    if (!feasible[p]) {
      out.infeasible.push_back(points[p]);
      continue;
    }
    if (best < 0 || cost[p] < cost[best]) best = p;
  }
  if (best < 0) {
    std::ostringstream os;
    os << "oracle_grid_search: every grid point was infeasible:";
    for (const auto& pt : out.infeasible) {
      os << " (";
      for (int d = 0; d < pt.size(); ++d) os << (d ? "," : "") << pt[d];
      os << ")";
    }
    throw std::runtime_error(os.str());
  }
  out.best_values = points[best];
  out.best_c2 = cost[best];
  return out;
}

}  // namespace tcc
