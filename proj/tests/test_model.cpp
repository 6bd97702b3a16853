#include <gtest/gtest.h>

#include "oracles/gauss_qp.hpp"
#include "oracles/newton_euler.hpp"
#include "test_support.hpp"
#include "uamoc/model_io.hpp"

using namespace uamoc;
using namespace testing_support;

namespace {

double max_abs(const MatrixX& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

ContactSpec ee_contact(const RobotModel& model, const UamState& x) {
  ContactSpec c;
  c.frame = "ee";
  c.anchor = frame_placement(model, x, "ee").translation();
  return c;
}

}  // namespace

// ---------------------------------------------------------------------------
// loading and actuation

TEST(ModelLoad, PlanarHexacopter) {
  const RobotModel& m = hexacopter();
  EXPECT_EQ(m.n_rotors(), 6);
  EXPECT_EQ(m.n_joints(), 0);
  EXPECT_EQ(m.nu(), 6);
  for (int i = 0; i < 6; ++i) EXPECT_EQ(m.rotors[i].ccw, i % 2 == 0);
}

TEST(ModelLoad, HexacopterWithArmDimensions) {
  const RobotModel& m = hexacopter_arm();
  EXPECT_EQ(m.nu(), 9);
  EXPECT_EQ(m.ndx(), 18);
  EXPECT_TRUE(m.has_frame("ee"));
  EXPECT_TRUE(m.has_frame("link2"));
  EXPECT_NEAR(m.total_mass() * 9.81, 25.0, 0.05);
}

TEST(ModelLoad, ZeroBaseMassRejected) {
  const std::string doc = R"(
base:
  mass: 0.0
  inertia: [0.01, 0, 0, 0.01, 0, 0.02]
  rotors:
    - {position: [0.2, 0, 0], ccw: true, cm_over_cf: 0.01, max_thrust: 5}
)";
  try {
    load_model(doc, "bad.yaml");
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("base.mass"), std::string::npos);
  }
}

TEST(ModelLoad, MalformedDocumentIsParseError) {
  EXPECT_THROW(load_model("base: {mass: [1, 2\n", "broken.yaml"), ParseError);
}

TEST(ModelLoad, MissingFieldReportsPath) {
  const std::string doc = R"(
base:
  mass: 1.0
  inertia: [0.01, 0, 0, 0.01, 0, 0.02]
  rotors:
    - {position: [0.2, 0, 0], ccw: true, max_thrust: 5}
)";
  try {
    load_model(doc, "m.yaml");
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("base.rotors[0].cm_over_cf"), std::string::npos) << e.what();
  }
}

TEST(ModelLoad, UnknownFrameParent) {
  const std::string doc = R"(
base:
  mass: 1.0
  inertia: [0.01, 0, 0, 0.01, 0, 0.02]
  rotors:
    - {position: [0.2, 0, 0], ccw: true, cm_over_cf: 0.01, max_thrust: 5}
frames:
  - {name: tool, parent: nowhere}
)";
  EXPECT_THROW(load_model(doc), ValidationError);
}

TEST(Actuation, SingleRotorColumn) {
  RobotModel m;
  m.base_mass = 1.0;
  m.base_inertia = 0.01 * Matrix3::Identity();
  RotorSpec r;
  r.position = Vector3(0.3, 0, 0);
  r.ccw = false;
  r.cm_over_cf = 0.02;
  r.max_thrust = 5.0;
  m.rotors.push_back(r);
  m.finalize();
  Vector6 expected;
  expected << 0, 0, 1, 0, -0.3, 0.02;
  EXPECT_LT((m.actuation_matrix().col(0) - expected).cwiseAbs().maxCoeff(), 1e-15);
  m.rotors[0].ccw = true;
  m.finalize();
  EXPECT_NEAR(m.actuation_matrix()(5, 0), -0.02, 1e-15);
}

TEST(Actuation, PlanarPlatformIsUnderactuated) {
  const MatrixX& G = hexacopter_arm().actuation_matrix();
  EXPECT_EQ(G.row(0).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(G.row(1).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_TRUE(G.bottomRightCorner(3, 3).isIdentity(0.0));
  EXPECT_EQ(G.topRightCorner(6, 3).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(G.bottomLeftCorner(3, 6).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Actuation, TilthexIsFullyActuated) {
  const MatrixX G = tilthex_arm().actuation_matrix().topLeftCorner(6, 6);
  EXPECT_EQ(Eigen::FullPivLU<MatrixX>(G).rank(), 6);
}

// ---------------------------------------------------------------------------
// kinematics

TEST(Kinematics, ZeroJointsComposeParentTransforms) {
  const RobotModel& m = hexacopter_arm();
  const UamState x = m.neutral_state();
  Pose expected = Pose::identity();
  for (const auto& j : m.joints) expected = expected * j.parent_transform;
  expected = expected * Pose(Quaternion::Identity(), Vector3(0, 0, -0.12));
  EXPECT_TRUE(frame_placement(m, x, "ee").is_approx(expected, 1e-14));
}

TEST(Kinematics, BaseTranslationMovesFrames) {
  const RobotModel& m = hexacopter_arm();
  UamState x = m.neutral_state();
  const Pose ee0 = frame_placement(m, x, "ee");
  x.pose = Pose(Quaternion(Eigen::AngleAxisd(0.7, Vector3::UnitZ())), Vector3(1, 2, 3));
  const Pose ee = frame_placement(m, x, "ee");
  EXPECT_LT((ee.translation() - (x.pose.rotation() * ee0.translation() + Vector3(1, 2, 3))).norm(), 1e-14);
}

TEST(Kinematics, UnknownFrame) {
  EXPECT_THROW(frame_placement(hexacopter_arm(), hexacopter_arm().neutral_state(), "gripper"), UnknownFrame);
  EXPECT_THROW(frame_jacobian(hexacopter_arm(), hexacopter_arm().neutral_state(), "gripper"), UnknownFrame);
}

TEST(Kinematics, FrameVelocityMatchesDifferentiatedPlacement) {
  std::mt19937_64 rng(21);
  const RobotModel& m = hexacopter_arm();
  const double h = 1e-6;
  for (int trial = 0; trial < 20; ++trial) {
    const UamState x = random_state(rng, m);
    VectorX dq = VectorX::Zero(m.ndx());
    dq.head(m.nv()) = x.velocity;
    for (const auto& [name, fs] : forward_kinematics(m, x)) {
      const Pose p_plus = frame_placement(m, state_oplus(x, h * dq), name);
      const Pose p_minus = frame_placement(m, state_oplus(x, -h * dq), name);
      const Vector3 lin = (p_plus.translation() - p_minus.translation()) / (2 * h);
      const Vector3 ang = fs.placement.rotation() * log_so3(p_minus.quaternion().conjugate() * p_plus.quaternion()) / (2 * h);
      EXPECT_LT((lin - fs.velocity.linear).cwiseAbs().maxCoeff(), 1e-6) << name;
      EXPECT_LT((ang - fs.velocity.angular).cwiseAbs().maxCoeff(), 1e-6) << name;
    }
  }
}

TEST(Kinematics, BaseJacobianOfArmlessModelIsIdentity) {
  std::mt19937_64 rng(3);
  const UamState x = random_state(rng, hexacopter());
  EXPECT_TRUE(frame_jacobian(hexacopter(), x, "base").isIdentity(1e-14));
}

TEST(Kinematics, JacobianTimesVelocityEqualsTwist) {
  std::mt19937_64 rng(4);
  const RobotModel& m = hexacopter_arm();
  for (int trial = 0; trial < 50; ++trial) {
    const UamState x = random_state(rng, m);
    for (const auto& [name, fs] : forward_kinematics(m, x)) {
      const VectorX v = frame_jacobian_world(m, x, name) * x.velocity;
      EXPECT_LT((v.head<3>() - fs.velocity.linear).cwiseAbs().maxCoeff(), 1e-12);
      EXPECT_LT((v.tail<3>() - fs.velocity.angular).cwiseAbs().maxCoeff(), 1e-12);
      const VectorX vl = frame_jacobian(m, x, name) * x.velocity;
      const Matrix3 R = fs.placement.rotation();
      EXPECT_LT((R * vl.head<3>() - fs.velocity.linear).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(Kinematics, DistalJointColumnsAreZero) {
  std::mt19937_64 rng(5);
  const RobotModel& m = hexacopter_arm();
  const UamState x = random_state(rng, m);
  const MatrixX J = frame_jacobian(m, x, "link1");
  EXPECT_EQ(J.col(7).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(J.col(8).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_GT(J.col(6).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Kinematics, FrameVelocityConfigurationDerivative) {
  std::mt19937_64 rng(6);
  const RobotModel& m = tilthex_arm();
  const double h = 1e-6;
  for (int trial = 0; trial < 20; ++trial) {
    const UamState x = random_state(rng, m);
    for (std::size_t f = 0; f < m.frames.size(); ++f) {
      BodyKinematics kin;
      compute_kinematics(m, x.pose, x.joints, &x.velocity, kin);
      const MatrixX D = frame_velocity_config_derivative(m, kin, x.velocity, int(f));
      for (Eigen::Index i = 0; i < m.nv(); ++i) {
        VectorX e = VectorX::Zero(m.ndx());
        e(i) = h;
        const FrameState p = frame_state(m, state_oplus(x, e), m.frames[f].name);
        e(i) = -h;
        const FrameState q = frame_state(m, state_oplus(x, e), m.frames[f].name);
        Vector6 fd;
        fd << (p.velocity.linear - q.velocity.linear) / (2 * h), (p.velocity.angular - q.velocity.angular) / (2 * h);
        EXPECT_LT((fd - D.col(i)).cwiseAbs().maxCoeff(), 1e-7) << m.frames[f].name << " col " << i;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// free dynamics

TEST(FreeDynamics, HoverEquilibrium) {
  const RobotModel& m = hexacopter();
  UamState x = m.neutral_state();
  x.pose = Pose(Quaternion(Eigen::AngleAxisd(0.3, Vector3::UnitZ())), Vector3(1, -2, 5));
  const VectorX u = VectorX::Constant(6, m.total_mass() * 9.81 / 6.0);
  EXPECT_LE(fd_free(m, x, u).cwiseAbs().maxCoeff(), 1e-9);
  const RobotModel& arm = hexacopter_arm();
  EXPECT_LE(fd_free(arm, arm.neutral_state(), arm.hover_control()).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(FreeDynamics, FreeFallAcceleratesComAtGravity) {
  std::mt19937_64 rng(8);
  for (const RobotModel* m : {&hexacopter(), &hexacopter_arm()}) {
    for (int trial = 0; trial < 20; ++trial) {
      UamState x = random_state(rng, *m, 0.0);
      const VectorX qdd = fd_free(*m, x, VectorX::Zero(m->nu()));
      // centre-of-mass acceleration from momentum rate: m_tot a_com = Σ m_i a_i
      const double h = 1e-5;
      auto com = [&](const UamState& s) {
        BodyKinematics kin;
        compute_kinematics(*m, s.pose, s.joints, nullptr, kin);
        Vector3 c = m->base_mass * kin.placement[0].translation();
        for (Eigen::Index j = 0; j < m->n_joints(); ++j) c += m->joints[j].link_mass * kin.placement[j + 1].act(m->joints[j].link_com);
        return Vector3(c / m->total_mass());
      };
      // x(t) ≈ x ⊕ (½ h² qdd) since velocity is zero
      VectorX d = VectorX::Zero(m->ndx());
      d.head(m->nv()) = 0.5 * h * h * qdd;
      const Vector3 acc = 2.0 * (com(state_oplus(x, d)) - com(x)) / (h * h);
      EXPECT_LT((acc - m->gravity).cwiseAbs().maxCoeff(), 1e-4);
    }
  }
}

TEST(FreeDynamics, MassMatrixAndBiasMatchProbingOracle) {
  std::mt19937_64 rng(9);
  for (const RobotModel* m : {&hexacopter(), &hexacopter_arm(), &tilthex_arm()}) {
    for (int trial = 0; trial < 50; ++trial) {
      const UamState x = random_state(rng, *m);
      const auto [H, C] = oracle::probe_mass_matrix(*m, x);
      EXPECT_LT(max_abs(crba(*m, x) - H), 1e-10);
      EXPECT_LT(max_abs(nonlinear_effects(*m, x) - C), 1e-10);
      const VectorX u = random_control(rng, *m);
      const VectorX qdd = fd_free(*m, x, u);
      const VectorX expected = H.ldlt().solve(m->actuation_matrix() * u - C);
      EXPECT_LT(max_abs(qdd - expected), 1e-9);
      // round trip through inverse dynamics
      EXPECT_LT(max_abs(oracle::inverse_dynamics_world(*m, x, qdd) - m->actuation_matrix() * u), 1e-9);
    }
  }
}

TEST(FreeDynamics, ExternalForceActsAtBaseCom) {
  const RobotModel& m = hexacopter();
  UamState x = m.neutral_state();
  x.pose = Pose(Quaternion(Eigen::AngleAxisd(0.5, Vector3::UnitY())), Vector3::Zero());
  const VectorX u = VectorX::Constant(6, m.total_mass() * 9.81 / 6.0);
  const Vector3 F(3.0, 4.0, 0.0);
  const VectorX a0 = fd_free(m, x, u);
  const VectorX a1 = fd_free(m, x, u, F);
  EXPECT_LT((x.pose.rotation() * (a1 - a0).head<3>() - F / m.total_mass()).norm(), 1e-12);
  EXPECT_LT((a1 - a0).tail<3>().norm(), 1e-12);
}

// ---------------------------------------------------------------------------
// contact dynamics

TEST(ContactDynamics, PointMassResting) {
  const RobotModel m = point_mass(2.0);
  UamState x = m.neutral_state();
  ContactSpec c;
  c.frame = "base";
  const auto r = fd_contact(m, x, VectorX::Zero(3), {c});
  EXPECT_LT(r.qdd.cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((r.lambda - Vector3(0, 0, 2.0 * 9.81)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ContactDynamics, UnconstrainedAxesMoveFreely) {
  const RobotModel m = point_mass(1.5);
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    UamState x = random_state(rng, m, 0.0);
    ContactSpec c;
    c.frame = "base";
    c.anchor = x.pose.translation();
    c.axes = {false, false, true};  // vertical only
    const VectorX u = random_control(rng, m);
    const VectorX free = fd_free(m, x, u);
    const auto r = fd_contact(m, x, u, {c});
    // world linear accelerations along x and y unchanged, vertical cancelled
    const Matrix3 R = x.pose.rotation();
    const Vector3 a_free = R * free.head<3>();
    const Vector3 a_con = R * r.qdd.head<3>();
    EXPECT_NEAR(a_con.x(), a_free.x(), 1e-10);
    EXPECT_NEAR(a_con.y(), a_free.y(), 1e-10);
    EXPECT_NEAR(a_con.z(), 0.0, 1e-10);
    EXPECT_LT((r.qdd.tail<3>() - free.tail<3>()).norm(), 1e-10);
  }
}

TEST(ContactDynamics, DriftMatchesDifferentiatedJacobian) {
  std::mt19937_64 rng(12);
  const RobotModel& m = hexacopter_arm();
  const double h = 1e-7;
  for (int trial = 0; trial < 20; ++trial) {
    const UamState x = random_state(rng, m);
    const ContactSpec c = ee_contact(m, x);
    const ContactTerms ct = contact_terms(m, x, {c});
    VectorX d = VectorX::Zero(m.ndx());
    d.head(m.nv()) = x.velocity;
    const MatrixX Jp = contact_terms(m, state_oplus(x, h * d), {c}).J;
    const MatrixX Jm = contact_terms(m, state_oplus(x, -h * d), {c}).J;
    const VectorX fd = (Jp - Jm) / (2 * h) * x.velocity;
    EXPECT_LT(max_abs(fd - ct.drift), 1e-6);
  }
}

TEST(ContactDynamics, MatchesGaussPrincipleQp) {
  std::mt19937_64 rng(13);
  for (const RobotModel* m : {&hexacopter_arm(), &tilthex_arm()}) {
    for (int trial = 0; trial < 100; ++trial) {
      const UamState x = random_state(rng, *m);
      const VectorX u = random_control(rng, *m);
      const ContactSpec c = ee_contact(*m, x);
      const auto r = fd_contact(*m, x, u, {c});
      const auto [H, C] = oracle::probe_mass_matrix(*m, x);
      const VectorX tau = m->actuation_matrix() * u - C;
      const ContactTerms ct = contact_terms(*m, x, {c});
      const auto qp = oracle::gauss_qp(H, H.ldlt().solve(tau), ct.J, -ct.drift);
      EXPECT_LT(max_abs(r.qdd - qp.a), 1e-8);
      EXPECT_LT(max_abs(r.lambda - qp.lambda), 1e-8);
      EXPECT_LT(max_abs(H * r.qdd - ct.J.transpose() * r.lambda - tau), 1e-8);
      EXPECT_LT(max_abs(ct.J * r.qdd + ct.drift), 1e-8);
    }
  }
}

TEST(ContactDynamics, RedundantConstraintsRejected) {
  const RobotModel m = point_mass(1.0);
  ContactSpec c;
  c.frame = "base";
  EXPECT_THROW(fd_contact(m, m.neutral_state(), VectorX::Zero(3), {c, c}), RankDeficientContact);
}

TEST(ContactDynamics, ContactDriftOverOneSecondWithRk4) {
  const RobotModel& m = hexacopter_arm();
  UamState x = m.neutral_state();
  x.joints << 0.3, 0.6, -0.4;
  const ContactSpec c = ee_contact(m, x);
  const VectorX u = m.hover_control() * 0.8;
  for (int k = 0; k < 200; ++k) x = step(m, x, u, 0.005, Integrator::Rk4, {c});
  EXPECT_LE((frame_placement(m, x, "ee").translation() - c.anchor).norm(), 1e-4);
}

// ---------------------------------------------------------------------------
// integration

TEST(Step, RestingEquilibriumUnchanged) {
  const RobotModel& m = hexacopter();
  UamState x = m.neutral_state();
  const VectorX u = VectorX::Constant(6, m.total_mass() * 9.81 / 6.0);
  for (Integrator in : {Integrator::SemiImplicitEuler, Integrator::Rk4}) {
    const UamState y = step(m, x, u, 0.02, in);
    EXPECT_LT(state_ominus(y, x).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Step, FreeFallSemiImplicitEuler) {
  const RobotModel& m = hexacopter();
  const UamState y = step(m, m.neutral_state(), VectorX::Zero(6), 0.1, Integrator::SemiImplicitEuler);
  EXPECT_NEAR(y.velocity(2), -0.981, 1e-12);
  EXPECT_NEAR(y.pose.translation().z(), -0.0981, 1e-12);
}

TEST(Step, Rk4MatchesFineEuler) {
  const RobotModel& m = hexacopter_arm();
  UamState x0 = m.neutral_state();
  x0.velocity.segment<3>(3) << 0.02, -0.01, 0.03;
  VectorX u = m.hover_control();
  u.tail<3>() << 0.0, 0.01, -0.005;
  const double T = 0.5;
  auto run = [&](double dt, Integrator in) {
    UamState x = x0;
    for (long k = 0; k < std::lround(T / dt); ++k) x = step(m, x, u, dt, in);
    return x;
  };
  const double dt = 0.005;
  EXPECT_LE(state_ominus(run(dt, Integrator::Rk4), run(dt / 100, Integrator::SemiImplicitEuler)).cwiseAbs().maxCoeff(),
            1e-4);
  // fourth-order convergence towards a fine RK4 solution
  const UamState ref = run(dt / 20, Integrator::Rk4);
  const double e1 = state_ominus(run(2 * dt, Integrator::Rk4), ref).cwiseAbs().maxCoeff();
  const double e2 = state_ominus(run(dt, Integrator::Rk4), ref).cwiseAbs().maxCoeff();
  EXPECT_GT(e1 / e2, 12.0);
}

TEST(StepDerivatives, DoubleIntegratorLimit) {
  RobotModel m = point_mass(2.0);
  m.gravity.setZero();
  const double dt = 1e-3;
  const auto d = step_derivatives(m, m.neutral_state(), VectorX::Zero(3), dt, Integrator::SemiImplicitEuler);
  MatrixX expected = MatrixX::Identity(12, 12);
  expected.topRightCorner(6, 6) = dt * MatrixX::Identity(6, 6);
  EXPECT_LT(max_abs(d.fx - expected), 1e-6);
  EXPECT_LT(max_abs(d.fu.block(6, 0, 3, 3) - dt / 2.0 * Matrix3::Identity()), 1e-8);
  EXPECT_LT(max_abs(d.fu.block(0, 0, 3, 3) - dt * dt / 2.0 * Matrix3::Identity()), 1e-8);
}

TEST(StepDerivatives, DirectionalCheck) {
  std::mt19937_64 rng(15);
  for (Integrator in : {Integrator::SemiImplicitEuler, Integrator::Rk4}) {
    for (int trial = 0; trial < 10; ++trial) {
      const RobotModel& m = hexacopter_arm();
      const UamState x = random_state(rng, m);
      const VectorX u = random_control(rng, m);
      const std::vector<ContactSpec> contacts = trial % 2 ? std::vector<ContactSpec>{ee_contact(m, x)} : std::vector<ContactSpec>{};
      const auto d = step_derivatives(m, x, u, 0.01, in, contacts);
      const VectorX dx = random_unit(rng, m.ndx());
      const VectorX du = random_unit(rng, m.nu());
      const double eps = 1e-5;
      const UamState y0 = step(m, x, u, 0.01, in, contacts);
      const VectorX lhs = state_ominus(step(m, state_oplus(x, eps * dx), u + eps * du, 0.01, in, contacts), y0);
      const VectorX rhs = eps * (d.fx * dx + d.fu * du);
      EXPECT_LE((lhs - rhs).norm() / rhs.norm(), 1e-4);
    }
  }
}

TEST(StepDerivatives, ControlColumnsVanishWhenFullyConstrained) {
  const RobotModel m = point_mass(1.0);
  std::mt19937_64 rng(16);
  const UamState x = random_state(rng, m, 0.0);
  ContactSpec c;
  c.frame = "base";
  c.anchor = x.pose.translation();
  const auto d = step_derivatives(m, x, VectorX::Constant(3, 2.0), 0.01, Integrator::SemiImplicitEuler, {c});
  EXPECT_LT(max_abs(d.fu), 1e-8);
}

TEST(StepDerivatives, ControlColumnsMatchKktSensitivity) {
  std::mt19937_64 rng(17);
  const RobotModel& m = hexacopter_arm();
  const double dt = 0.01;
  for (int trial = 0; trial < 10; ++trial) {
    const UamState x = random_state(rng, m);
    const ContactSpec c = ee_contact(m, x);
    const auto d = step_derivatives(m, x, random_control(rng, m), dt, Integrator::SemiImplicitEuler, {c});
    // dq̈/du = (H⁻¹ − H⁻¹Jᵀ(JH⁻¹Jᵀ)⁻¹JH⁻¹) G, independent of the drift term
    const auto [H, C] = oracle::probe_mass_matrix(m, x);
    const MatrixX J = contact_terms(m, x, {c}).J;
    const MatrixX Hi = H.inverse();
    const MatrixX P = Hi - Hi * J.transpose() * (J * Hi * J.transpose()).inverse() * J * Hi;
    EXPECT_LT(max_abs(d.fu.bottomRows(m.nv()) - dt * P * m.actuation_matrix()), 1e-6);
  }
}
