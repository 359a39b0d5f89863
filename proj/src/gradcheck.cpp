#include "tcc/gradcheck.hpp"

#include <cmath>
#include <sstream>

#include "tcc/rng.hpp"

namespace tcc {

namespace {

constexpr double kStep = 1e-6;
constexpr double kTol = 1e-5;
constexpr double kKinkMargin = 1e-4;

VectorXd random_interior_q(const KinematicChain& c, SeededRng& rng) {
  VectorXd q(c.num_joints());
  for (int i = 0; i < c.num_joints(); ++i) {
    const Interval& lim = c.joint(i).limits;
    const double lo = std::max(lim.lower, -M_PI);
    const double hi = std::min(lim.upper, M_PI);
    // Stay off the limits themselves.
    q[i] = rng.uniform(lo + 0.05 * (hi - lo), hi - 0.05 * (hi - lo));
  }
  return q;
}

double check_chain(const KinematicChain& chain, SeededRng& rng, int configs,
                   GradCheckReport& rep, const std::string& label) {
  double worst = 0.0;
  if (chain.num_joints() == 0) return worst;
  for (int c = 0; c < configs; ++c) {
    const VectorXd q = random_interior_q(chain, rng);
    const int body = 1 + static_cast<int>(rng.uniform01() *
                                          (chain.num_bodies() - 1));
    const Vector3d point(rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3),
                         rng.uniform(-0.3, 0.3));
    const MatrixXd Ja =
        point_jacobian(chain, q, std::min(body, chain.num_bodies() - 1), point);
    const MatrixXd Jfd = finite_difference_jacobian(
        chain, q, std::min(body, chain.num_bodies() - 1), point, kStep);
    const double scale = std::max(1.0, Ja.cwiseAbs().maxCoeff());
    const double err = (Ja - Jfd).cwiseAbs().maxCoeff() / scale;
    worst = std::max(worst, err);
    if (err >= kTol) {
      rep.ok = false;
      std::ostringstream os;
      os << label << " chain Jacobian mismatch " << err << " at config " << c;
      rep.failures.push_back(os.str());
    }
  }
  return worst;
}

// Feature rows that are smooth at this state (away from norm/angle
// singularities).
bool feature_differentiable(const FeatureSpec& f, const KeyframeKinematics& kk,
                            const VectorXd& value) {
  switch (f.kind) {
    case FeatureKind::PointDistance:
    case FeatureKind::SupportProxy:
      return value[0] > 1e-3;
    case FeatureKind::AxisInclination:
    case FeatureKind::AxisAlignment:
      return std::sin(value[0]) > 1e-3;
    case FeatureKind::RelativePose:
      return value.tail<3>().norm() < M_PI - 0.1;
    default:
      return true;
  }
  (void)kk;
}

double check_features(const ScenarioSpec& spec, SeededRng& rng,
                      GradCheckReport& rep) {
  const SceneModel& scene = spec.scene;
  const int dx = scene.dim();
  double worst = 0.0;

  std::vector<const FeatureSpec*> feats;
  for (const auto& c : spec.schedule.task_constraints) feats.push_back(&c.feature);
  for (const auto& c : spec.schedule.constancy_constraints) {
    feats.push_back(&c.feature);
  }

  for (const FeatureSpec* f : feats) {
    // A generic perturbed state keeps axis features off their cone apices.
    VectorXd x = scene.initial_state();
    for (int d = 0; d < dx; ++d) x[d] += rng.uniform(-0.15, 0.15);

    VectorXd v;
    MatrixXd J;
    const KeyframeKinematics kk = keyframe_kinematics(scene, x);
    eval_feature(*f, kk, v, &J);
    if (!feature_differentiable(*f, kk, v)) {
      rep.rows_skipped += v.size();
      continue;
    }
    MatrixXd Jfd(v.size(), dx);
    for (int d = 0; d < dx; ++d) {
      VectorXd xp = x, xm = x;
      xp[d] += kStep;
      xm[d] -= kStep;
      VectorXd vp, vm;
      eval_feature(*f, keyframe_kinematics(scene, xp), vp, nullptr);
      eval_feature(*f, keyframe_kinematics(scene, xm), vm, nullptr);
      Jfd.col(d) = (vp - vm) / (2.0 * kStep);
    }
    rep.rows_checked += v.size();
    const double err = (J - Jfd).cwiseAbs().maxCoeff();
    worst = std::max(worst, err);
    if (err >= kTol) {
      rep.ok = false;
      rep.failures.push_back("feature Jacobian mismatch " +
                             std::to_string(err) + " in " + describe(*f));
    }
  }
  return worst;
}

double check_stacked(const ScenarioSpec& spec, SeededRng& rng,
                     GradCheckReport& rep) {
  const SceneModel& scene = spec.scene;
  const int dx = scene.dim();
  const int nn = spec.schedule.num_decision_nodes();

  std::vector<VectorXd> states(spec.schedule.num_nodes(),
                               scene.initial_state());
  for (int i = 1; i <= nn; ++i) {
    for (int d = 0; d < dx; ++d) states[i][d] += rng.uniform(-0.1, 0.1);
  }

  const BarrierParams& bp = spec.solver.barrier;
  const StackedSystem sys = assemble(spec.schedule, states, scene, bp);
  const MatrixXd J = MatrixXd(sys.jacobian);

  // Rows differentiable at this state: active, unclipped, and clear of both
  // the interval bound and the clip edge.
  std::vector<bool> usable(sys.rows());
  const double dmin = std::min(bp.delta_translation, bp.delta_rotation);
  for (int r = 0; r < sys.rows(); ++r) {
    const RowRef& ref = sys.row_index[r];
    const double res = std::abs(sys.residual[r]);
    const bool clear = res > kKinkMargin && res < dmin - kKinkMargin;
    usable[r] = !ref.clipped &&
                ((ref.active && clear) ||
                 (ref.equality && res < dmin - kKinkMargin));
    if (!usable[r]) rep.rows_skipped++;
  }

  double worst = 0.0;
  for (int c = 0; c < nn * dx; ++c) {
    const int node = 1 + c / dx;
    const int d = c % dx;
    std::vector<VectorXd> sp = states, sm = states;
    sp[node][d] += kStep;
    sm[node][d] -= kStep;
    const StackedSystem p = assemble(spec.schedule, sp, scene, bp);
    const StackedSystem m = assemble(spec.schedule, sm, scene, bp);
    for (int r = 0; r < sys.rows(); ++r) {
      if (!usable[r]) continue;
      const double fd = (p.residual[r] - m.residual[r]) / (2.0 * kStep);
      const double err = std::abs(fd - J(r, c));
      worst = std::max(worst, err);
      if (err >= kTol) {
        rep.ok = false;
        rep.failures.push_back("stacked row " + std::to_string(r) +
                               " col " + std::to_string(c) + " mismatch " +
                               std::to_string(err));
      }
    }
  }
  for (int r = 0; r < sys.rows(); ++r) {
    if (usable[r]) rep.rows_checked++;
  }
  return worst;
}

double check_metrics(const ScenarioSpec& spec, SeededRng& rng,
                     GradCheckReport& rep, int postures) {
  const SceneModel& scene = spec.scene;
  double worst = 0.0;

  auto check_grad = [&](const std::string& label, auto&& value_fn,
                        const VectorXd& grad, const VectorXd& q0) {
    for (int i = 0; i < q0.size(); ++i) {
      VectorXd qp = q0, qm = q0;
      qp[i] += kStep;
      qm[i] -= kStep;
      const double fd = (value_fn(qp) - value_fn(qm)) / (2.0 * kStep);
      const double scale = std::max(1.0, std::abs(grad[i]));
      const double err = std::abs(fd - grad[i]) / scale;
      worst = std::max(worst, err);
      if (err >= kTol) {
        rep.ok = false;
        rep.failures.push_back(label + " gradient mismatch " +
                               std::to_string(err));
      }
    }
  };

  for (int p = 0; p < postures; ++p) {
    const VectorXd q = random_interior_q(scene.human, rng);
    VectorXd x = scene.initial_state();
    x.segment(scene.human_offset(), scene.human_dof()) = q;

    if (!spec.metrics.hand_load.body.empty()) {
      VectorXd g;
      static_effort(scene, x, spec.metrics.hand_load, &g);
      check_grad(
          "static_effort",
          [&](const VectorXd& qq) {
            VectorXd xx = x;
            xx.segment(scene.human_offset(), scene.human_dof()) = qq;
            return static_effort(scene, xx, spec.metrics.hand_load);
          },
          g, q);
    }
    if (!spec.metrics.head_load.body.empty()) {
      VectorXd g;
      spine_loading(scene, x, spec.metrics.head_load, &g);
      check_grad(
          "spine_loading",
          [&](const VectorXd& qq) {
            VectorXd xx = x;
            xx.segment(scene.human_offset(), scene.human_dof()) = qq;
            return spine_loading(scene, xx, spec.metrics.head_load);
          },
          g, q);
    }
    VectorXd g;
    keyframe_cost(scene, x, spec.metrics, &g);
    check_grad(
        "keyframe_cost",
        [&](const VectorXd& qq) {
          VectorXd xx = x;
          xx.segment(scene.human_offset(), scene.human_dof()) = qq;
          return keyframe_cost(scene, xx, spec.metrics);
        },
        g, q);
  }
  return worst;
}

}  // namespace

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  os << (ok ? "PASS" : "FAIL") << " gradcheck: chain " << chain_rel_error
     << ", features " << feature_abs_error << ", stacked "
     << stacked_abs_error << ", metrics " << metric_abs_error << " ("
     << rows_checked << " rows, " << rows_skipped << " near kinks skipped)";
  for (const auto& f : failures) os << "\n  " << f;
  return os.str();
}

GradCheckReport gradcheck_scenario(const ScenarioSpec& spec, uint64_t seed,
                                   int configs) {
  GradCheckReport rep;
  SeededRng rng(seed);
  rep.chain_rel_error =
      std::max(check_chain(spec.scene.human, rng, configs, rep, "human"),
               check_chain(spec.scene.robot, rng, configs, rep, "robot"));
  rep.feature_abs_error = check_features(spec, rng, rep);
  rep.stacked_abs_error = check_stacked(spec, rng, rep);
  rep.metric_abs_error = check_metrics(spec, rng, rep, 50);
  return rep;
}

}  // namespace tcc
