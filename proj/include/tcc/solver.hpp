#pragma once

#include <functional>

#include "tcc/constraints.hpp"

namespace tcc {

struct SolverConfig {
  double lambda0 = 1e-3;
  double lambda_grow = 10.0;
  double lambda_shrink = 0.5;
  VectorXd weights;  // diagonal of W per state dim (d_x); empty = identity
  double tol_step = 1e-6;
  double tol_residual = 1e-3;
  int max_iters = 500;
  double innate_rate = 0.5;  // null-space pull of each keyframe to its parent
  double assist_rate = 1.0;  // null-space descent rate on c2
  BarrierParams barrier;

  VectorXd weights_for(int dx) const {
    if (weights.size() == 0) return VectorXd::Ones(dx);
    if (weights.size() != dx) {
      throw std::invalid_argument("solver weights have wrong dimension");
    }
    return weights;
  }
};

/// Diagonal 0/1 selection over one keyframe's state, replicated across
/// keyframes; picks the dimensions the assistance term may drive.
class SelectionMatrix {
 public:
  SelectionMatrix() = default;
  static SelectionMatrix none(int dx) {
    SelectionMatrix a;
    a.diag_ = VectorXd::Zero(dx);
    return a;
  }
  static SelectionMatrix from_dims(int dx, const std::vector<int>& dims);

  const VectorXd& diagonal() const { return diag_; }
  int dim() const { return static_cast<int>(diag_.size()); }
  bool any() const { return diag_.size() > 0 && diag_.maxCoeff() > 0; }
  VectorXd replicated(int decision_nodes) const;

  /// Human DoFs are never intervention targets.
  void validate(const SceneModel& scene) const;

 private:
  VectorXd diag_;
};

/// Secondary objective as value + gradient over the decision keyframes
/// (node i's block at (i-1)*d_x). States passed in always include the root.
struct Objectives {
  double displacement_weight = 0.01;  // innate-motion term of c1
  std::function<double(const std::vector<VectorXd>&)> c2_value;
  std::function<VectorXd(const std::vector<VectorXd>&)> c2_gradient;

  double c2(const std::vector<VectorXd>& states) const {
    return c2_value ? c2_value(states) : 0.0;
  }
  VectorXd c2_grad(const std::vector<VectorXd>& states, int dx) const;
};

/// c1 = 0.5 sum(residual^2) + 0.5 w_disp sum_i |x_i - x_par(i)|^2_W.
double c1_value(const StackedSystem& sys, const std::vector<VectorXd>& states,
                const KeyframeSchedule& schedule, const VectorXd& weights_dx,
                double displacement_weight);
VectorXd c1_gradient(const StackedSystem& sys,
                     const std::vector<VectorXd>& states,
                     const KeyframeSchedule& schedule,
                     const VectorXd& weights_dx, double displacement_weight);

/// Damped weighted pseudoinverse in the state metric W (diagonal, length
/// J.cols()): J# = (J^T J + lambda W)^-1 J^T = W^-1 J^T (J W^-1 J^T +
/// lambda I)^-1. At lambda = 0 the factorizable branch requires full
/// row/column rank; a singular system throws.
MatrixXd lm_pseudoinverse(const Eigen::SparseMatrix<double>& J,
                          const VectorXd& W, double lambda);
MatrixXd lm_pseudoinverse(const MatrixXd& J, const VectorXd& W, double lambda);

/// P = (I - J# J) W^-1.
MatrixXd nullspace_projector(const MatrixXd& J, const MatrixXd& J_pinv,
                             const VectorXd& W);

struct StepResult {
  VectorXd dx;          // dx_predict + dx_innate + dx_assist
  VectorXd dx_predict;  // J# e_corr (barrier correction)
  VectorXd dx_innate;   // null-space pull of each keyframe to its parent
  VectorXd dx_assist;   // -assist_rate * A o (P grad_c2) (secondary)
  StackedSystem system; // assembled at the input states
  double max_residual = 0.0;
};

/// One TCC update at the given states. `frozen` (optional) is a per-state-dim
/// clamp applied to every keyframe; frozen columns leave the decision space.
StepResult tcc_step(const KeyframeSchedule& schedule, const SceneModel& scene,
                    const std::vector<VectorXd>& states, const Objectives& obj,
                    const SelectionMatrix& A, const SolverConfig& config,
                    double lambda, const std::vector<int>* frozen = nullptr);

struct SolveResult {
  std::vector<VectorXd> states;  // per node, root included
  bool converged = false;
  int iterations = 0;
  std::vector<double> residual_trace;  // max abs residual per iteration
  std::vector<double> c2_trace;
  std::vector<double> iteration_seconds;
  VectorXd final_residual;
  std::vector<RowRef> row_index;
  MatrixXd intervention_values;  // num_nodes x intervention dims
  std::string message;
};

struct SolveOptions {
  /// Initial states (one per node, root first). Default: root state
  /// replicated down the tree.
  std::vector<VectorXd> initial_states;
  /// State dims clamped at their seeded values in every keyframe.
  std::vector<int> frozen_dims;
};

/// Iterated LM with residual-monotone acceptance; assistance is scaled back
/// by bisection whenever it would regress feasibility or the secondary cost.
/// Non-convergence is reported via the flag, never thrown.
SolveResult solve(const KeyframeSchedule& schedule, const SceneModel& scene,
                  const Objectives& obj, const SelectionMatrix& A,
                  const SolverConfig& config,
                  const SolveOptions& opts = SolveOptions{});

struct OracleResult {
  VectorXd best_values;
  double best_c2 = 0.0;
  std::vector<VectorXd> infeasible;  // skipped grid points
  int evaluated = 0;
};

/// Brute-force check of the coupled intervention: fixes the (<= 2)
/// intervention dims on a grid, solves the pure prediction per point and
/// returns the c2-minimizing point. Throws if every point is infeasible.
OracleResult oracle_grid_search(const KeyframeSchedule& schedule,
                                const SceneModel& scene, const Objectives& obj,
                                const std::vector<int>& intervention_dims,
                                const std::vector<std::vector<double>>& grids,
                                const SolverConfig& config);

}  // namespace tcc
