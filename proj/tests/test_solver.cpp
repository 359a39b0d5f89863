#include <doctest.h>

#include "support/test_scenes.hpp"
#include "tcc/solver.hpp"

using namespace tcc;
using namespace tcc::testing;

namespace {

/// d_x = 1 world: a single prismatic "slider" joint, no objects, no robot.
SceneModel slider_scene() {
  SceneModel s;
  KinematicChain c("base");
  JointSpec j;
  j.name = "slide";
  j.kind = JointKind::Prismatic;
  j.axis = Vector3d::UnitX();
  j.limits = Interval{-10, 10};
  c.add_body("cart", "base", j);
  s.human = c;
  s.robot = KinematicChain("robot_base");
  s.human_q0 = VectorXd::Zero(1);
  s.robot_q0 = VectorXd::Zero(0);
  s.human_q_pref = VectorXd::Zero(1);
  return s;
}

KeyframeSchedule slider_schedule(const Interval& iv) {
  KeyframeSchedule sch;
  sch.nodes.push_back(KeyframeNode{0, -1, "main"});
  sch.nodes.push_back(KeyframeNode{1, 0, "main"});
  TaskConstraint c;
  c.keyframe = 1;
  c.name = "band";
  c.feature.kind = FeatureKind::JointRange;
  c.feature.chain = "human";
  c.intervals = {iv};
  sch.task_constraints.push_back(c);
  return sch;
}

MatrixXd dense(std::initializer_list<std::initializer_list<double>> rows) {
  MatrixXd m(rows.size(), rows.begin()->size());
  int r = 0;
  for (const auto& row : rows) {
    int c = 0;
    for (double v : row) m(r, c++) = v;
    ++r;
  }
  return m;
}

}  // namespace

TEST_CASE("lm_pseudoinverse: scalar, wide, and left-inverse cases") {
  CHECK(lm_pseudoinverse(dense({{1.0}}), VectorXd::Ones(1), 1.0)(0, 0) ==
        doctest::Approx(0.5));

  const MatrixXd J = dense({{1.0, 0.0}});
  const MatrixXd Jp = lm_pseudoinverse(J, VectorXd::Ones(2), 0.0);
  CHECK(Jp.rows() == 2);
  CHECK(Jp(0, 0) == doctest::Approx(1.0));
  CHECK(Jp(1, 0) == doctest::Approx(0.0));

  SeededRng rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    MatrixXd T(6, 3);  // tall, full column rank w.h.p.
    for (int i = 0; i < T.size(); ++i) T(i / 3, i % 3) = rng.uniform(-1, 1);
    const MatrixXd Tp = lm_pseudoinverse(T, VectorXd::Ones(3), 0.0);
    CHECK((Tp * T - MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-10);
  }

  CHECK_THROWS_AS(lm_pseudoinverse(dense({{0.0, 0.0}}), VectorXd::Ones(2), 0.0),
                  std::runtime_error);
  CHECK_THROWS_AS(lm_pseudoinverse(dense({{1.0}}), VectorXd::Ones(1), -1.0),
                  std::invalid_argument);
}

TEST_CASE("lm_pseudoinverse: left and right forms agree for lambda > 0") {
  SeededRng rng(32);
  MatrixXd J(3, 5);
  VectorXd W(5);
  for (int i = 0; i < J.size(); ++i) J(i / 5, i % 5) = rng.uniform(-1, 1);
  for (int i = 0; i < 5; ++i) W[i] = rng.uniform(0.5, 2.0);
  const double lambda = 0.37;
  const MatrixXd right = lm_pseudoinverse(J, W, lambda);
  // Left form computed directly.
  const MatrixXd A =
      J.transpose() * J + lambda * MatrixXd(W.asDiagonal());
  const MatrixXd left = A.ldlt().solve(J.transpose());
  CHECK((right - left).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("nullspace projector: complement, empty, membership sweep") {
  const VectorXd W2 = VectorXd::Ones(2);
  const MatrixXd J = dense({{1.0, 0.0}});
  const MatrixXd Jp = lm_pseudoinverse(J, W2, 0.0);
  const MatrixXd P = nullspace_projector(J, Jp, W2);
  CHECK((P - dense({{0.0, 0.0}, {0.0, 1.0}})).cwiseAbs().maxCoeff() < 1e-12);

  SeededRng rng(33);
  MatrixXd Q(3, 3);
  for (int i = 0; i < 9; ++i) Q(i / 3, i % 3) = rng.uniform(-1, 1);
  Q += 3.0 * MatrixXd::Identity(3, 3);  // comfortably invertible
  const MatrixXd Qp = lm_pseudoinverse(Q, VectorXd::Ones(3), 0.0);
  CHECK(nullspace_projector(Q, Qp, VectorXd::Ones(3)).cwiseAbs().maxCoeff() <
        1e-9);

  MatrixXd F(2, 6);
  for (int i = 0; i < F.size(); ++i) F(i / 6, i % 6) = rng.uniform(-1, 1);
  VectorXd W6(6);
  for (int i = 0; i < 6; ++i) W6[i] = rng.uniform(0.5, 2.0);
  const MatrixXd Fp = lm_pseudoinverse(F, W6, 0.0);
  const MatrixXd PF = nullspace_projector(F, Fp, W6);
  for (int t = 0; t < 20; ++t) {
    VectorXd z(6);
    for (int i = 0; i < 6; ++i) z[i] = rng.uniform(-1, 1);
    CHECK((F * PF * z).norm() <= 1e-6 * z.norm() + 1e-12);
  }
}

TEST_CASE("tcc_step: stationary point gives a zero update") {
  const SceneModel s = slider_scene();
  const KeyframeSchedule sch = slider_schedule(Interval{-1.0, 1.0});
  // Seeded at the root: residual 0 (inside band), no c2, no parent offset.
  const std::vector<VectorXd> states(2, s.initial_state());
  const StepResult r = tcc_step(sch, s, states, Objectives{},
                                SelectionMatrix::none(1), SolverConfig{},
                                1e-3);
  CHECK(r.max_residual == 0.0);
  CHECK(r.dx.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("tcc_step: assistance stays in the null space") {
  // Two keyframes of the rail scene, equality rows + a constancy row, full
  // row rank at lambda = 0; v = P grad_c2 must satisfy J v ~ 0.
  const SceneModel s = rail_scene();
  KeyframeSchedule sch;
  sch.nodes.push_back(KeyframeNode{0, -1, "main"});
  sch.nodes.push_back(KeyframeNode{1, 0, "main"});
  sch.nodes.push_back(KeyframeNode{2, 1, "main"});
  for (int kf = 1; kf <= 2; ++kf) {
    TaskConstraint c;
    c.keyframe = kf;
    c.feature.kind = FeatureKind::Height;
    c.feature.a = object_ref("puck", Vector3d(0.05, 0.02, 0.0));
    c.intervals = {Interval{0.0, 0.0}};
    sch.task_constraints.push_back(c);
  }
  ConstancyConstraint cc;
  cc.keyframe_i = 1;
  cc.keyframe_j = 2;
  cc.feature.kind = FeatureKind::PointPosition;
  cc.feature.a = object_ref("puck");
  cc.dims = {0, 1};
  sch.constancy_constraints.push_back(cc);
  sch.intervention_dims = {0, 1};

  SeededRng rng(34);
  std::vector<VectorXd> states(3, s.initial_state());
  for (int i = 1; i <= 2; ++i) {
    for (int d = 0; d < s.dim(); ++d) states[i][d] += rng.uniform(-0.05, 0.05);
  }

  Objectives obj;
  obj.c2_value = [](const std::vector<VectorXd>&) { return 0.0; };
  obj.c2_gradient = [&](const std::vector<VectorXd>& st) {
    VectorXd g(2 * 9);
    for (int i = 0; i < g.size(); ++i) g[i] = rng.uniform(-1, 1);
    return g;
  };

  SolverConfig cfg;
  cfg.assist_rate = 1.0;
  const StepResult r = tcc_step(sch, s, states, obj,
                                SelectionMatrix::from_dims(9, {0, 1, 2, 3, 4,
                                                               5, 6, 7, 8}),
                                cfg, 0.0);
  const MatrixXd J = MatrixXd(r.system.jacobian);
  const VectorXd v = r.dx_assist;
  REQUIRE(v.norm() > 0);
  CHECK((J * v).norm() <= 1e-8 * v.norm());
}

TEST_CASE("tcc_step: barrier pull toward the nearest bound") {
  const SceneModel s = slider_scene();
  const KeyframeSchedule sch = slider_schedule(Interval{1.0, 2.0});
  const std::vector<VectorXd> states(2, s.initial_state());  // x = 0
  SolverConfig cfg;
  const StepResult r = tcc_step(sch, s, states, Objectives{},
                                SelectionMatrix::none(1), cfg, 0.0);
  // Distance to the band is clipped to the translational delta.
  CHECK(r.dx[0] == doctest::Approx(cfg.barrier.delta_translation));
}

TEST_CASE("solve: 1-DoF barrier convergence to the nearest bound") {
  const SceneModel s = slider_scene();
  const KeyframeSchedule sch = slider_schedule(Interval{1.0, 2.0});
  const SolveResult r = solve(sch, s, Objectives{}, SelectionMatrix::none(1),
                              SolverConfig{});
  CHECK(r.converged);
  CHECK(r.states[1][0] == doctest::Approx(1.0).epsilon(1e-3));
  CHECK(r.states[0][0] == 0.0);  // root untouched
  if (r.converged) {
    CHECK(r.final_residual.cwiseAbs().maxCoeff() <= SolverConfig{}.tol_residual);
  }
}

TEST_CASE("solve: secondary objective finds the interior optimum") {
  const SceneModel s = slider_scene();
  const KeyframeSchedule sch = slider_schedule(Interval{1.0, 2.0});
  Objectives obj;
  obj.c2_value = [](const std::vector<VectorXd>& st) {
    const double x = st[1][0];
    return (x - 1.8) * (x - 1.8);
  };
  obj.c2_gradient = [](const std::vector<VectorXd>& st) {
    VectorXd g(1);
    g[0] = 2.0 * (st[1][0] - 1.8);
    return g;
  };
  const SolveResult r = solve(sch, s, obj, SelectionMatrix::from_dims(1, {0}),
                              SolverConfig{});
  CHECK(r.converged);
  CHECK(r.states[1][0] == doctest::Approx(1.8).epsilon(1e-3));
}

TEST_CASE("solve: residual trace is non-increasing") {
  const SceneModel s = rail_scene();
  KeyframeSchedule sch;
  sch.nodes.push_back(KeyframeNode{0, -1, "main"});
  sch.nodes.push_back(KeyframeNode{1, 0, "main"});
  sch.task_constraints.push_back(
      grasp_constraint(1, "l3", Vector3d(0.4, 0, 0), "puck"));
  const SolveResult r =
      solve(sch, s, Objectives{}, SelectionMatrix::none(9), SolverConfig{});
  CHECK(r.converged);
  for (size_t i = 1; i < r.residual_trace.size(); ++i) {
    CHECK(r.residual_trace[i] <= r.residual_trace[i - 1] + 1e-12);
  }
}

TEST_CASE("solve is deterministic") {
  const SceneModel s = rail_scene();
  KeyframeSchedule sch;
  sch.nodes.push_back(KeyframeNode{0, -1, "main"});
  sch.nodes.push_back(KeyframeNode{1, 0, "main"});
  sch.task_constraints.push_back(
      grasp_constraint(1, "l3", Vector3d(0.4, 0, 0), "puck"));
  sch.intervention_dims = {0};

  Objectives obj;
  obj.c2_value = [](const std::vector<VectorXd>& st) {
    return st[1][0] * st[1][0];
  };
  obj.c2_gradient = [](const std::vector<VectorXd>& st) {
    VectorXd g = VectorXd::Zero(9);
    g[0] = 2 * st[1][0];
    return g;
  };
  const auto A = SelectionMatrix::from_dims(9, {0});
  const SolveResult a = solve(sch, s, obj, A, SolverConfig{});
  const SolveResult b = solve(sch, s, obj, A, SolverConfig{});
  REQUIRE(a.states.size() == b.states.size());
  for (size_t i = 0; i < a.states.size(); ++i) {
    CHECK(a.states[i] == b.states[i]);  // bitwise
  }
  CHECK(a.iterations == b.iterations);
}

TEST_CASE("oracle_grid_search: quadratic minimum and infeasible grids") {
  const SceneModel s = rail_scene();
  KeyframeSchedule sch;
  sch.nodes.push_back(KeyframeNode{0, -1, "main"});
  sch.nodes.push_back(KeyframeNode{1, 0, "main"});
  sch.intervention_dims = {0};

  Objectives obj;
  obj.c2_value = [](const std::vector<VectorXd>& st) {
    const double u = st[1][0];
    return (u - 0.3) * (u - 0.3);
  };

  std::vector<std::vector<double>> grids(1);
  for (int i = 0; i <= 10; ++i) grids[0].push_back(0.1 * i);
  const OracleResult r =
      oracle_grid_search(sch, s, obj, {0}, grids, SolverConfig{});
  CHECK(r.best_values[0] == doctest::Approx(0.3));
  CHECK(r.evaluated == 11);
  CHECK(r.infeasible.empty());

  // A task constraint on the frozen dim that no grid point satisfies.
  KeyframeSchedule bad = sch;
  TaskConstraint c;
  c.keyframe = 1;
  c.feature.kind = FeatureKind::PointPosition;
  c.feature.a = object_ref("puck");
  c.intervals = {Interval{10.0, 11.0}, Interval{}, Interval{}};
  bad.task_constraints.push_back(c);
  CHECK_THROWS_WITH_AS(
      oracle_grid_search(bad, s, obj, {0}, grids, SolverConfig{}),
      doctest::Contains("infeasible"), std::runtime_error);

  CHECK_THROWS_AS(
      oracle_grid_search(sch, s, obj, {0, 1, 2}, grids, SolverConfig{}),
      std::invalid_argument);
}

TEST_CASE("coupled intervention matches the grid oracle") {
  // Two keyframes share the puck via a derived constancy; the coupled solver
  // must land within one grid cell of the brute-force optimum.
  const SceneModel s = rail_scene();
  KeyframeSchedule raw;
  raw.nodes.push_back(KeyframeNode{0, -1, "main"});
  raw.nodes.push_back(KeyframeNode{1, 0, "main"});
  raw.nodes.push_back(KeyframeNode{2, 1, "main"});
  raw.intervention_dims = {0};

  for (int kf = 1; kf <= 2; ++kf) {
    raw.task_constraints.push_back(
        grasp_constraint(kf, "l3", Vector3d(0.4, 0, 0), "puck", 0.01));
    TaskConstraint rail;
    rail.keyframe = kf;
    rail.name = "on_rail";
    rail.feature.kind = FeatureKind::PointPosition;
    rail.feature.a = object_ref("puck");
    rail.intervals = {Interval{0.2, 0.9}, Interval{0.2, 0.2},
                      Interval{0.0, 0.0}};
    raw.task_constraints.push_back(rail);
  }
  // Keyframe 2 differs: the tip must also stay high.
  TaskConstraint lift;
  lift.keyframe = 2;
  lift.name = "tip_high";
  lift.feature.kind = FeatureKind::Height;
  lift.feature.a = human_ref("l3", Vector3d(0.4, 0, 0));
  lift.intervals = {Interval{0.0, 0.0}};
  raw.task_constraints.push_back(lift);

  const KeyframeSchedule sch = derive_constancy(raw);
  REQUIRE(sch.constancy_constraints.size() == 2);  // grasp + rail lifted

  const VectorXd q_pref = (VectorXd(3) << 0.3, 0.5, -0.2).finished();
  Objectives obj;
  obj.c2_value = [q_pref](const std::vector<VectorXd>& st) {
    double v = 0;
    for (int i = 1; i <= 2; ++i) {
      v += 0.5 * (st[i].tail(3) - q_pref).squaredNorm();
    }
    return v;
  };
  obj.c2_gradient = [q_pref](const std::vector<VectorXd>& st) {
    VectorXd g = VectorXd::Zero(2 * 9);
    for (int i = 1; i <= 2; ++i) {
      g.segment((i - 1) * 9 + 6, 3) = (st[i].tail(3) - q_pref);
    }
    return g;
  };

  SolverConfig cfg;
  const auto A = SelectionMatrix::from_dims(9, {0});
  const SolveResult coupled = solve(sch, s, obj, A, cfg);
  REQUIRE(coupled.converged);
  const double u_coupled = coupled.states[1][0];

  std::vector<std::vector<double>> grids(1);
  for (double v = 0.2; v <= 0.9 + 1e-9; v += 0.01) grids[0].push_back(v);
  const OracleResult oracle = oracle_grid_search(sch, s, obj, {0}, grids, cfg);

  CHECK(std::abs(u_coupled - oracle.best_values[0]) <= 0.01 + 1e-9);
  CHECK(obj.c2(coupled.states) <= oracle.best_c2 + 1e-3);
}
