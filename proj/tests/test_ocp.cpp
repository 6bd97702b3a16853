#include <gtest/gtest.h>

#include "test_support.hpp"
#include "uamoc/ocp.hpp"

using namespace uamoc;
using namespace testing_support;

namespace {

Phase timed(const std::string& name, double duration, CostStack costs = {}) {
  Phase p;
  p.name = name;
  p.duration = duration;
  p.costs = std::move(costs);
  return p;
}

Phase instant(const std::string& name, CostStack costs = {}) {
  Phase p;
  p.name = name;
  p.kind = PhaseKind::Task;
  p.costs = std::move(costs);
  return p;
}

/// Move the base by `offset` within `duration`, then hover.
Mission waypoint_mission(const RobotModel& m, const Vector3& offset, double duration, double dt) {
  Mission mission;
  mission.name = "waypoint";
  mission.dt = dt;
  const UamState hold = m.neutral_state();
  CostStack nav;
  nav.residuals.push_back(state_regularization(hold, 1e-2, [&] {
    VectorX W = VectorX::Ones(m.ndx());
    W.head<3>().setConstant(1e3);  // position is free while navigating
    return W;
  }()));
  nav.residuals.push_back(control_regularization(1e-3, m.hover_control()));
  mission.phases.push_back(timed("nav", duration, nav));
  UamState goal = hold;
  goal.pose = Pose(Quaternion::Identity(), offset);
  CostStack task;
  task.residuals.push_back(frame_target(ResidualKind::FramePosition, "base", goal.pose, 100.0));
  ResidualSpec still = state_regularization(goal, 10.0);
  still.blocks = StateBlocks{false, false, false, true};
  task.residuals.push_back(still);
  mission.phases.push_back(instant("reach", task));
  return mission;
}

}  // namespace

TEST(NodeArithmetic, EagleCatchTiming) {
  Mission m;
  m.dt = 0.02;
  m.phases = {timed("approach", 1.4), instant("pre"), timed("grasp", 0.1), instant("catch"), timed("leave", 1.6)};
  EXPECT_EQ(node_count(m), 156u);
  EXPECT_NEAR(m.total_duration(), 3.1, 1e-12);
}

TEST(NodeArithmetic, MonkeyBarTiming) {
  Mission m;
  m.dt = 0.005;
  m.phases = {timed("hang", 1.4), instant("release"), timed("swing", 0.5)};
  EXPECT_EQ(node_count(m), 381u);
}

TEST(NodeArithmetic, SingleNavigationPhase) {
  Mission m;
  m.dt = 0.1;
  m.phases = {timed("nav", 1.0)};
  EXPECT_EQ(node_count(m), 11u);
}

TEST(NodeArithmetic, BoundariesAreShared) {
  Mission m;
  m.dt = 0.1;
  m.phases = {timed("a", 0.5), timed("b", 0.3), instant("t"), timed("c", 0.2)};
  const auto starts = phase_start_nodes(m);
  EXPECT_EQ(starts, (std::vector<std::size_t>{0, 5, 8, 8, 10}));
  const auto tasks = task_instants(m);
  ASSERT_EQ(tasks.size(), 1u);
  EXPECT_EQ(tasks[0].node, 8u);
  EXPECT_NEAR(tasks[0].time, 0.8, 1e-12);
}

TEST(NodeArithmetic, NonDivisibleDurationRejected) {
  Mission m;
  m.dt = 0.03;
  m.phases = {timed("nav", 1.0)};
  EXPECT_THROW(node_count(m), MissionValidationError);
}

TEST(BuildProblem, StacksContactsAndVariants) {
  const RobotModel& base = hexacopter_arm();
  ModelRegistry reg(base);
  reg.add("payload", with_payload(base, 0.3, Vector3::Zero(), Matrix3::Identity() * 1e-4));
  Mission m;
  m.dt = 0.1;
  ContactSpec c;
  c.frame = "ee";
  Phase hold = timed("hold", 0.3, CostStack{{control_regularization(1.0)}});
  hold.contacts = {c};
  Phase carry = timed("carry", 0.2, CostStack{{state_regularization(base.neutral_state(), 2.0)}});
  carry.model_variant = "payload";
  CostStack task{{frame_target(ResidualKind::FramePose, "ee", Pose(), 50.0)}};
  m.phases = {hold, instant("release", task), carry};
  const OcpProblem p = build_problem(m, reg, base.neutral_state());
  ASSERT_EQ(p.n_nodes(), 6u);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(p.nodes[k].dynamics.contacts.size(), 1u);
    EXPECT_EQ(p.nodes[k].dynamics.model, &reg.base());
  }
  EXPECT_EQ(p.nodes[3].dynamics.contacts.size(), 0u);
  EXPECT_EQ(p.nodes[3].dynamics.model, &reg.get("payload"));
  EXPECT_NEAR(p.nodes[3].dynamics.model->total_mass() - p.nodes[2].dynamics.model->total_mass(), 0.3, 1e-15);
  ASSERT_EQ(p.nodes[3].costs.residuals.size(), 2u);
  EXPECT_EQ(p.nodes[3].costs.residuals[1].kind, ResidualKind::FramePose);
  EXPECT_EQ(p.terminal().costs.residuals.size(), 1u);
  EXPECT_NEAR(p.nodes[5].time, 0.5, 1e-15);
}

TEST(BuildProblem, ValidationErrors) {
  const RobotModel& base = hexacopter_arm();
  ModelRegistry reg(base);
  Mission m;
  m.dt = 0.1;
  m.phases = {timed("nav", 1.0, CostStack{{frame_target(ResidualKind::FramePose, "nope", Pose(), 1.0)}})};
  EXPECT_THROW(build_problem(m, reg, base.neutral_state()), MissionValidationError);
  m.phases = {timed("nav", 1.0)};
  m.phases[0].model_variant = "missing";
  EXPECT_THROW(build_problem(m, reg, base.neutral_state()), MissionValidationError);
  m.phases = {instant("only")};
  EXPECT_THROW(build_problem(m, reg, base.neutral_state()), MissionValidationError);
}

TEST(BuildProblem, Deterministic) {
  const RobotModel& base = hexacopter_arm();
  ModelRegistry reg(base);
  const Mission m = waypoint_mission(base, Vector3(1, 0, 0), 1.0, 0.05);
  const OcpProblem a = build_problem(m, reg, base.neutral_state());
  const OcpProblem b = build_problem(m, reg, base.neutral_state());
  const auto [X, U] = hover_guess(a);
  EXPECT_EQ(problem_cost(a, rollout(a, U), U), problem_cost(b, rollout(b, U), U));
}

TEST(Rollout, ZeroHorizonAndHoverEquilibrium) {
  const RobotModel& m = hexacopter();
  Mission mission;
  mission.dt = 0.1;
  mission.phases = {timed("nav", 1.0)};
  ModelRegistry reg(m);
  OcpProblem p = build_problem(mission, reg, m.neutral_state());
  const auto [X0, U] = hover_guess(p);
  const auto X = rollout(p, U);
  for (const auto& x : X) EXPECT_LT(state_ominus(x, m.neutral_state()).cwiseAbs().maxCoeff(), 1e-12);
  OcpProblem empty = p;
  empty.nodes.resize(1);
  EXPECT_EQ(rollout(empty, {}).size(), 1u);
}

TEST(ProblemCost, DecomposesIntoNodeCosts) {
  std::mt19937_64 rng(21);
  const RobotModel& m = hexacopter_arm();
  ModelRegistry reg(m);
  const Mission mission = waypoint_mission(m, Vector3(0.5, 0.2, 0.1), 0.5, 0.05);
  const OcpProblem p = build_problem(mission, reg, m.neutral_state());
  std::vector<VectorX> U;
  for (std::size_t k = 0; k < p.horizon(); ++k) U.push_back(m.hover_control() + 0.1 * random_unit(rng, m.nu()));
  const auto X = rollout(p, U);
  double sum = 0.0;
  for (std::size_t k = 0; k < p.horizon(); ++k) sum += cost_value(p.nodes[k].costs, m, X[k], &U[k]);
  sum += cost_value(p.terminal().costs, m, X.back(), nullptr);
  EXPECT_NEAR(problem_cost(p, X, U), sum, 1e-12 * sum);
  CostStack none;
  OcpProblem zero = p;
  for (auto& n : zero.nodes) n.costs = none;
  EXPECT_EQ(problem_cost(zero, X, U), 0.0);
}

TEST(SolveOcp, HoverFromHoverIsStationary) {
  const RobotModel& m = hexacopter();
  ModelRegistry reg(m);
  Mission mission;
  mission.dt = 0.05;
  CostStack nav{{state_regularization(m.neutral_state(), 1.0), control_regularization(1e-2, m.hover_control())}};
  mission.phases = {timed("hold", 1.0, nav)};
  const OcpProblem p = build_problem(mission, reg, m.neutral_state());
  const auto [X, U] = hover_guess(p);
  const auto r = solve_ocp(p, X, U);
  EXPECT_TRUE(r.converged);
  EXPECT_EQ(r.iterations, 0);
  for (std::size_t k = 0; k < U.size(); ++k) EXPECT_LT((r.U[k] - U[k]).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(SolveOcp, ColdStartWaypointConverges) {
  const RobotModel& m = hexacopter_arm();
  ModelRegistry reg(m);
  const Mission mission = waypoint_mission(m, Vector3(1.0, 0.0, 0.3), 2.0, 0.05);
  const OcpProblem p = build_problem(mission, reg, m.neutral_state());
  std::vector<UamState> X(p.n_nodes(), UamState::zero(m.n_joints()));
  std::vector<VectorX> U(p.horizon(), VectorX::Zero(m.nu()));
  SolverSettings st;
  st.max_iters = 200;
  const auto r = solve_ocp(p, X, U, st);
  EXPECT_TRUE(r.converged) << r.stop_reason << " after " << r.iterations;
  EXPECT_LE(r.gap_inf_norm, st.gap_tol);
  const auto Xr = rollout(p, r.U);
  double gap = 0.0;
  for (std::size_t k = 0; k < Xr.size(); ++k) gap = std::max(gap, state_ominus(Xr[k], r.X[k]).cwiseAbs().maxCoeff());
  EXPECT_LE(gap, 1e-9);
  EXPECT_LT((r.X.back().pose.translation() - Vector3(1.0, 0.0, 0.3)).norm(), 0.02);
  // recorded from a converged run
  EXPECT_NEAR(r.cost, 0.1786415483, 1e-5 * 0.1786415483);
}

TEST(SolveOcp, AcceptedIterationsNeverIncreaseCostFromFeasibleStart) {
  const RobotModel& m = hexacopter_arm();
  ModelRegistry reg(m);
  const Mission mission = waypoint_mission(m, Vector3(0.6, -0.3, 0.2), 1.5, 0.05);
  const OcpProblem p = build_problem(mission, reg, m.neutral_state());
  auto [X, U] = hover_guess(p);
  X = rollout(p, U);
  SolverSettings st;
  st.max_iters = 200;
  const auto r = solve_ocp(p, X, U, st);
  ASSERT_FALSE(r.log.empty());
  double prev = r.log.front().cost;
  for (const auto& rec : r.log) {
    EXPECT_LE(rec.cost, prev);
    if (rec.alpha > 0.0) {
      EXPECT_GE(rec.actual, 0.0);
    }
    prev = rec.cost;
  }
  EXPECT_LE(r.cost, prev);
  EXPECT_TRUE(r.converged);
}

// Around a zero-residual optimum the Gauss-Newton model is exact, so the
// feedback gain is the true first-order sensitivity of the optimal control.
TEST(SolveOcp, FeedbackGainPredictsResolvedControl) {
  const RobotModel& m = hexacopter_arm();
  ModelRegistry reg(m);
  Mission mission;
  mission.dt = 0.05;
  CostStack hold{{state_regularization(m.neutral_state(), 1.0), control_regularization(1e-2, m.hover_control())}};
  mission.phases = {timed("hold", 1.0, hold)};
  const OcpProblem p = build_problem(mission, reg, m.neutral_state());
  SolverSettings st;
  st.max_iters = 300;
  st.grad_tol = 1e-9;
  st.squash_regularization = 0.0;
  auto [X, U] = hover_guess(p);
  const auto base = solve_ocp(p, X, U, st);
  ASSERT_TRUE(base.converged);
  std::mt19937_64 rng(22);
  const double eps = 1e-4;
  const VectorX d = random_unit(rng, m.ndx());
  OcpProblem moved = p;
  moved.x0 = state_oplus(p.x0, eps * d);
  const auto again = solve_ocp(moved, base.X, base.U, st);
  ASSERT_TRUE(again.converged) << again.stop_reason;
  // gains act on the raw decision; map the change through the squash slope
  Squash s(m.control_lower(), m.control_upper());
  const VectorX predicted = s.jacobian(base.Z[0]).cwiseProduct(base.K[0] * (eps * d));
  const VectorX actual = again.U[0] - base.U[0];
  EXPECT_LE((actual - predicted).norm(), 1e-2 * actual.norm()) << actual.transpose() << "\n" << predicted.transpose();
}
