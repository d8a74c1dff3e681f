#include <chrono>
#include <random>

#include <gtest/gtest.h>

#include "holistic/controller.hpp"
#include "holistic/model_io.hpp"
#include "holistic/sim.hpp"

using namespace holistic;

namespace {

const KinematicModel& frankie() {
  static const KinematicModel m = load_model(HOLISTIC_DATA_DIR "/frankie.model");
  return m;
}

// One revolute z joint and a tool placed 1 m out at 0.5 m height.
const KinematicModel& pointer() {
  static const KinematicModel m = parse_model(
      "name pointer\n"
      "base omnidirectional\n"
      "joint revolute axis=z qmin=-4 qmax=4 qdmax=2\n"
      "tool 1 0 0.5 0 0 0\n");
  return m;
}

Configuration random_cfg(const KinematicModel& m, std::mt19937& rng, double inset = 0.05) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Configuration c;
  c.base = {4.0 * u(rng) - 2.0, 4.0 * u(rng) - 2.0, 6.0 * u(rng) - 3.0};
  c.q_arm.resize(m.n_arm());
  for (int i = 0; i < m.n_arm(); ++i) {
    const auto& j = m.links[static_cast<std::size_t>(i)].joint;
    c.q_arm(i) = j.q_min + (j.q_max - j.q_min) * (inset + (1.0 - 2.0 * inset) * u(rng));
  }
  return c;
}

// Integrates qd (base virtual rates then arm rates) for one step.
Configuration integrate(const KinematicModel& m, Configuration c, const Eigen::VectorXd& qd, double dt) {
  ControlCommand cmd = ControlCommand::zero(m.n_arm());
  apply_base_rates(m, qd.head(m.n()), cmd);
  cmd.qd_arm = qd.segment(m.n_base(), m.n_arm());
  WorldState w;
  w.base = c.base;
  w.q_arm = c.q_arm;
  w = step_world(m, w, cmd, dt);
  return w.config();
}

}  // namespace

TEST(Pbs, Examples) {
  const Pose3 t = Pose3::from_xyz_rpy(0.3, -0.2, 0.5, 0.1, 0.2, 0.3);
  EXPECT_LT(pbs_twist(t, t, 1.0).norm(), 1e-12);
  const Vector6d ahead = pbs_twist(Pose3::identity(), Pose3::from_translation(1, 0, 0), 1.0).vector();
  EXPECT_LT((ahead - (Vector6d() << 1, 0, 0, 0, 0, 0).finished()).norm(), 1e-15);
  const Pose3 g = Pose3::from_xyz_rpy(1.0, 0.5, -0.2, 0.4, -0.1, 0.7);
  const Vector6d a = pbs_twist(t, g, 1.0).vector();
  const Vector6d b = pbs_twist(t, g, 2.0).vector();
  EXPECT_LT((b - 2.0 * a).norm(), 1e-12);
}

TEST(Pbs, TranslationIsExpressedInTheParentFrame) {
  // EE turned 90 degrees: a goal 1 m along parent x is still (1,0,0) in the base frame.
  const Pose3 e = Pose3::from_rotation(rot_z(deg2rad(90)));
  Pose3 g = e;
  g.translation.x() += 1.0;
  const Vector6d v = pbs_twist(e, g, 1.0).vector();
  EXPECT_LT((v - (Vector6d() << 1, 0, 0, 0, 0, 0).finished()).norm(), 1e-12);
}

TEST(Rrmc, ZeroTwistGivesZeroRates) {
  const auto& m = frankie();
  Configuration c{PlanarPose{}, m.config("ready")};
  EXPECT_LT(rrmc_step(m, c, Twist{}).norm(), 1e-15);
}

TEST(Rrmc, ResidualAndLeastNormAgainstKktOracle) {
  const auto& m = frankie();
  std::mt19937 rng(11);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int t = 0; t < 50; ++t) {
    const Configuration c = random_cfg(m, rng);
    const Vector6d nu = (Vector6d() << g(rng), g(rng), g(rng), g(rng), g(rng), g(rng)).finished();
    const Eigen::VectorXd qd = rrmc_step(m, c, Twist::from_vector(nu));
    const Matrix6Xd j = jacobian(m, c, Frame::base);
    EXPECT_LT((j * qd - nu).norm(), 1e-9);
    // min |x|^2 s.t. J x = nu via the KKT system [I J'; J 0].
    const int n = m.n();
    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(n + 6, n + 6);
    kkt.topLeftCorner(n, n).setIdentity();
    kkt.topRightCorner(n, 6) = j.transpose();
    kkt.bottomLeftCorner(6, n) = j;
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n + 6);
    rhs.tail(6) = nu;
    const Eigen::VectorXd sol = kkt.fullPivLu().solve(rhs);
    EXPECT_LT((sol.head(n) - qd).norm(), 1e-8 * (1.0 + qd.norm()));
  }
}

TEST(BaseAngle, Examples) {
  const auto& m = pointer();
  auto at = [&](double q) {
    Configuration c{PlanarPose{}, Eigen::VectorXd::Constant(1, q)};
    return base_angle(m, c);
  };
  EXPECT_NEAR(at(0.0), 0.0, 1e-15);
  EXPECT_NEAR(at(std::numbers::pi / 2), std::numbers::pi / 2, 1e-12);
  EXPECT_NEAR(at(std::numbers::pi), std::numbers::pi, 1e-12);
  EXPECT_LE(at(std::numbers::pi), std::numbers::pi);
  EXPECT_GT(at(std::numbers::pi), -std::numbers::pi);
  // EE on the base z axis has no bearing.
  const KinematicModel up = parse_model("base omnidirectional\njoint revolute axis=z qmin=-1 qmax=1 qdmax=1\ntool 0 0 1 0 0 0\n");
  EXPECT_EQ(base_angle(up, {PlanarPose{}, Eigen::VectorXd::Zero(1)}), 0.0);
}

TEST(BuildQp, FarGoalWeights) {
  const auto& m = frankie();
  const Configuration c{PlanarPose{}, m.config("ready")};
  const ControllerGains g;
  const QPProblem p = build_qp(m, c, Twist{}, 4.0, g);
  ASSERT_EQ(p.dim(), m.n() + 6);
  for (int i = 0; i < m.n_base(); ++i) EXPECT_DOUBLE_EQ(p.Q(i, i), 0.25);
  for (int i = m.n_base(); i < m.n(); ++i) EXPECT_DOUBLE_EQ(p.Q(i, i), 0.01);
  for (int i = m.n(); i < p.dim(); ++i) EXPECT_DOUBLE_EQ(p.Q(i, i), 0.25);
  EXPECT_LT((p.Q - Eigen::MatrixXd(p.Q.diagonal().asDiagonal())).norm(), 1e-15);
  // Equality block is [J | I].
  EXPECT_LT((p.Jeq.leftCols(m.n()) - jacobian(m, c, Frame::base)).norm(), 1e-15);
  EXPECT_LT((p.Jeq.rightCols(6) - Eigen::MatrixXd::Identity(6, 6)).norm(), 1e-15);
  EXPECT_TRUE(p.C.tail(6).isZero());
}

TEST(BuildQp, ZeroErrorUsesCap) {
  const auto& m = frankie();
  const Configuration c{PlanarPose{}, m.config("ready")};
  ControllerGains g;
  const QPProblem p = build_qp(m, c, Twist{}, 0.0, g);
  EXPECT_DOUBLE_EQ(p.Q(0, 0), g.lambda_delta_cap);
  EXPECT_DOUBLE_EQ(p.Q(m.n(), m.n()), g.lambda_delta_cap);
  EXPECT_TRUE(p.Q.allFinite());
}

TEST(BuildQp, EpsilonTermOnBaseRotation) {
  const auto& m = pointer();
  ControllerGains g;
  g.k_eps = 0.5;
  Configuration c{PlanarPose{}, Eigen::VectorXd::Zero(1)};
  QPProblem p = build_qp(m, c, Twist{}, 1.0, g, ManipVariant::zero);
  EXPECT_TRUE(p.C.isZero());  // theta_eps = 0
  c.q_arm(0) = 0.4;
  p = build_qp(m, c, Twist{}, 1.0, g, ManipVariant::zero);
  EXPECT_NEAR(p.C(m.base_rotation_index()), -0.5 * 0.4, 1e-12);
  for (int i = 0; i < p.dim(); ++i) {
    if (i != m.base_rotation_index()) {
      EXPECT_EQ(p.C(i), 0.0);
    }
  }
}

TEST(BuildQp, DamperRows) {
  const auto& m = frankie();
  ControllerGains g;
  Configuration c{PlanarPose{}, m.config("ready")};
  const int j = 3;
  const auto& jd = m.links[j].joint;
  c.q_arm(j) = jd.q_max - g.rho_s;
  const QPProblem p = build_qp(m, c, Twist{}, 1.0, g);
  const int col = m.n_base() + j;
  bool found = false;
  for (Eigen::Index r = 0; r < p.A.rows(); ++r) {
    for (int b = 0; b < m.n_base(); ++b) EXPECT_EQ(p.A(r, b), 0.0);
    EXPECT_TRUE(p.A.row(r).tail(6).isZero());
    if (p.A(r, col) == 1.0) {
      found = true;
      EXPECT_NEAR(p.B(r), 0.0, 1e-12);
    }
  }
  EXPECT_TRUE(found);

  // Arm well inside its range: no rows at all.
  Configuration mid{PlanarPose{}, Eigen::VectorXd::Zero(m.n_arm())};
  for (int k = 0; k < m.n_arm(); ++k) mid.q_arm(k) = 0.5 * (m.links[k].joint.q_min + m.links[k].joint.q_max);
  EXPECT_EQ(build_qp(m, mid, Twist{}, 1.0, g).A.rows(), 0);

  // Lower-side row: -qd <= bound.
  Configuration lo = mid;
  lo.q_arm(0) = m.links[0].joint.q_min + deg2rad(20.0);
  const QPProblem pl = build_qp(m, lo, Twist{}, 1.0, g);
  ASSERT_EQ(pl.A.rows(), 1);
  EXPECT_EQ(pl.A(0, m.n_base()), -1.0);
  EXPECT_NEAR(pl.B(0), g.eta * (deg2rad(20.0) - g.rho_s) / (g.rho_i - g.rho_s), 1e-12);
}

TEST(BuildQp, Bounds) {
  const auto& m = frankie();
  ControllerGains g;
  const QPProblem p = build_qp(m, {PlanarPose{}, m.config("ready")}, Twist{}, 1.0, g);
  EXPECT_EQ(p.upper(0), g.base_vel_limits.omega_max);
  EXPECT_EQ(p.upper(1), g.base_vel_limits.v_max);
  for (int k = 0; k < m.n_arm(); ++k) {
    EXPECT_EQ(p.upper(m.n_base() + k), m.links[k].joint.qd_max);
    EXPECT_EQ(p.lower(m.n_base() + k), -m.links[k].joint.qd_max);
  }
  for (int k = 0; k < 6; ++k) EXPECT_EQ(p.upper(m.n() + k), g.slack_bound(k));
}

TEST(Controller, EqualitySatisfiedOnOptimalSteps) {
  const auto& m = frankie();
  std::mt19937 rng(21);
  ControllerGains g;
  int optimal = 0;
  for (int t = 0; t < 100; ++t) {
    const Configuration c = random_cfg(m, rng, 0.1);
    const Configuration goal_cfg = random_cfg(m, rng, 0.1);
    const Pose3 goal = fkine(m, goal_cfg);
    const Pose3 b_goal = inverse(c.base.pose()) * goal;
    const Pose3 b_ee = fkine_base(m, c.q_arm);
    const Twist nu = pbs_twist(b_ee, b_goal, g.beta);
    const QPProblem p = build_qp(m, c, nu, pose_error(b_ee, b_goal).translation, g);
    const QPSolution s = solve(p);
    if (s.status != QPStatus::optimal) continue;
    ++optimal;
    const Eigen::VectorXd qd = s.x.head(m.n());
    const Vector6d delta = s.x.tail<6>();
    EXPECT_LT((jacobian(m, c, Frame::base) * qd + delta - nu.vector()).norm(), 1e-6);
    EXPECT_LE(s.kkt_residual, 1e-6);
  }
  EXPECT_GT(optimal, 90);
}

TEST(Controller, ManipulabilityTermRaisesManipulability) {
  const auto& m = frankie();
  std::mt19937 rng(31);
  ControllerGains g;
  g.k_eps = 0.0;
  int checked = 0;
  for (int t = 0; t < 200 && checked < 30; ++t) {
    Configuration c = random_cfg(m, rng, 0.0);
    for (int k = 0; k < m.n_arm(); ++k) {
      const auto& jd = m.links[k].joint;
      const double lo = jd.q_min + g.rho_i + 0.05, hi = jd.q_max - g.rho_i - 0.05;
      c.q_arm(k) = lo >= hi ? 0.5 * (jd.q_min + jd.q_max) : std::clamp(c.q_arm(k), lo, hi);
    }
    const QPProblem p = build_qp(m, c, Twist{}, 1.0, g, ManipVariant::arm_only);
    if (p.A.rows() != 0) continue;
    const double m0 = arm_manipulability(m, c.q_arm);
    if (m0 < 1e-3) continue;
    const QPSolution s = solve(p);
    ASSERT_EQ(s.status, QPStatus::optimal);
    const Configuration c1 = integrate(m, c, s.x.head(m.n()), 1e-3);
    EXPECT_GT(arm_manipulability(m, c1.q_arm), m0);
    ++checked;
  }
  EXPECT_GE(checked, 10);
}

TEST(Controller, EpsilonTermTurnsBaseTowardEndEffector) {
  const auto& m = frankie();
  ControllerGains g;
  g.k_eps = 0.5;
  for (double q1 : {-1.2, -0.5, 0.3, 0.9, 1.5}) {
    Configuration c{PlanarPose{0.5, -0.3, 0.2}, m.config("ready")};
    c.q_arm(0) = q1;
    const double th0 = base_angle(m, c);
    ASSERT_GT(std::abs(th0), 1e-3);
    const QPProblem p = build_qp(m, c, Twist{}, 1.0, g, ManipVariant::zero);
    const QPSolution s = solve(p);
    ASSERT_EQ(s.status, QPStatus::optimal);
    const Configuration c1 = integrate(m, c, s.x.head(m.n()), kDefaultDt);
    EXPECT_LT(std::abs(base_angle(m, c1)), std::abs(th0)) << "q1=" << q1;
  }
}

TEST(Controller, AtGoalWithoutLinearTermsCommandsNothing) {
  const auto& m = frankie();
  ControllerGains g;
  g.k_eps = 0.0;
  Configuration c{PlanarPose{1.0, 2.0, 0.3}, m.config("ready")};
  const ControlCommand cmd = holistic_step(m, c, fkine(m, c), g, ManipVariant::zero);
  ASSERT_TRUE(cmd.ok());
  EXPECT_LE(cmd.qd_arm.norm(), 1e-6);
  EXPECT_LE(std::hypot(cmd.base.vx, cmd.base.omega), 1e-6);
  EXPECT_LT(cmd.error_norm, 1e-12);
}

TEST(Controller, WheelsConsistentWithBase) {
  const auto& m = frankie();
  std::mt19937 rng(41);
  ControllerGains g;
  HolisticController hc(g, ManipVariant::arm_only);
  for (int t = 0; t < 20; ++t) {
    const Configuration c = random_cfg(m, rng, 0.1);
    const ControlCommand cmd = hc.step(m, c, fkine(m, random_cfg(m, rng, 0.1)));
    if (!cmd.ok()) continue;
    const BaseRates r = inverse_wheel_map(cmd.wheels, m.wheel_radius, m.wheel_separation);
    EXPECT_NEAR(r.theta_dot, cmd.base.omega, 1e-12);
    EXPECT_NEAR(r.d_dot, cmd.base.vx, 1e-12);
    EXPECT_EQ(cmd.base.vy, 0.0);
  }
}

TEST(Controller, ForwardGoalDrivesForwardAndKeepsBearing) {
  const auto& m = frankie();
  const ControllerGains g;
  const Pose3 goal = exp1_goal(m, Exp1::a);
  HolisticController hc(g, ManipVariant::arm_only);
  WorldState w = make_world(m);
  const ControlCommand first = hc.step(m, w.config(), goal);
  ASSERT_TRUE(first.ok());
  EXPECT_GT(first.base.vx, 0.5);
  EXPECT_GT(std::abs(first.base.vx), 10.0 * std::abs(first.base.omega));
  double prev = std::abs(first.theta_eps);
  w = step_world(m, w, first, kDefaultDt);
  for (int k = 1; k < 200; ++k) {
    const ControlCommand cmd = hc.step(m, w.config(), goal);
    ASSERT_TRUE(cmd.ok());
    EXPECT_LE(std::abs(cmd.theta_eps), prev + 1e-9);
    prev = std::abs(cmd.theta_eps);
    w = step_world(m, w, cmd, kDefaultDt);
  }
}

TEST(Controller, OmnidirectionalPipeline) {
  const KinematicModel m = parse_model(
      "name omni\nbase omnidirectional\nmount 0.1 0 0.4 0 0 0\n"
      "joint revolute axis=z qmin=-2.8 qmax=2.8 qdmax=2\n"
      "fixed 0 0 0.3 0 0 0\njoint revolute axis=y qmin=-1.7 qmax=1.7 qdmax=2\n"
      "fixed 0 0 0.4 0 0 0\njoint revolute axis=y qmin=-2.5 qmax=2.5 qdmax=2\n"
      "fixed 0 0 0.3 0 0 0\njoint revolute axis=x qmin=-2.8 qmax=2.8 qdmax=2\n"
      "joint revolute axis=y qmin=-1.7 qmax=1.7 qdmax=2\n"
      "joint revolute axis=x qmin=-2.8 qmax=2.8 qdmax=2\n"
      "tool 0 0 0.1 0 0 0\n");
  ASSERT_EQ(m.n_base(), 3);
  ControllerGains g;
  Eigen::VectorXd q(6);
  q << 0.1, 0.4, 0.9, 0.2, 0.5, -0.1;
  const Configuration c{PlanarPose{}, q};
  Pose3 goal = fkine(m, c);
  goal.translation += Eigen::Vector3d(0.5, 1.0, 0.0);
  const ControlCommand cmd = holistic_step(m, c, goal, g);
  ASSERT_TRUE(cmd.ok());
  EXPECT_GT(cmd.base.vy, 0.0);
  // Equality: J qd + delta = nu.
  const Pose3 be = fkine_base(m, q);
  const Twist nu = pbs_twist(be, inverse(c.base.pose()) * goal, g.beta);
  Eigen::VectorXd qd(m.n());
  qd << cmd.base.vx, cmd.base.vy, cmd.base.omega, cmd.qd_arm;
  EXPECT_LT((jacobian(m, c, Frame::base) * qd + cmd.slack - nu.vector()).norm(), 1e-6);
}

TEST(Controller, InvalidGainsRejected) {
  ControllerGains g;
  g.rho_s = g.rho_i;
  EXPECT_THROW(g.validate(), std::invalid_argument);
  g = {};
  g.beta = 0.0;
  EXPECT_THROW(HolisticController(g, ManipVariant::arm_only), std::invalid_argument);
}

TEST(Controller, MeanStepTimeUnderTenMs) {
  const auto& m = frankie();
  ControllerGains g;
  HolisticController hc(g, ManipVariant::arm_only);
  WorldState w = make_world(m);
  const Pose3 goal = exp1_goal(m, Exp1::b);
  const int steps = 1000;
  const auto t0 = std::chrono::steady_clock::now();
  for (int k = 0; k < steps; ++k) {
    const ControlCommand cmd = hc.step(m, w.config(), goal);
    w = step_world(m, w, cmd, kDefaultDt);
  }
  const double mean = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / steps;
  EXPECT_LT(mean, 10e-3);
}

TEST(Sequential, PhasesCommandDisjointDofs) {
  const auto& m = frankie();
  ControllerGains g;
  SequentialController sc(g, {});
  WorldState w = make_world(m);
  const Pose3 goal = exp1_goal(m, Exp1::b);
  bool saw_base = false, saw_arm = false;
  for (int k = 0; k < 6000; ++k) {
    const SequentialPhase before = sc.state.phase;
    const ControlCommand cmd = sc.step(m, w.config(), goal);
    ASSERT_TRUE(cmd.ok());
    if (sc.state.phase != SequentialPhase::arm) {
      saw_base = true;
      EXPECT_TRUE(cmd.qd_arm.isZero()) << "k=" << k;
    } else {
      saw_arm = true;
      EXPECT_EQ(cmd.base.vx, 0.0);
      EXPECT_EQ(cmd.base.vy, 0.0);
      EXPECT_EQ(cmd.base.omega, 0.0);
    }
    EXPECT_GE(static_cast<int>(sc.state.phase), static_cast<int>(before));
    w = step_world(m, w, cmd, kDefaultDt);
    if (pose_error(fkine(m, w.config()), goal).translation < 0.02 && sc.state.phase == SequentialPhase::arm)
      break;
  }
  EXPECT_TRUE(saw_base);
  EXPECT_TRUE(saw_arm);
}

TEST(Sequential, FreeFunctionCarriesPhaseState) {
  const auto& m = frankie();
  ControllerGains g;
  SequentialState st;
  WorldState w = make_world(m);
  const Pose3 goal = exp1_goal(m, Exp1::a);
  const ControlCommand cmd = sequential_baseline_step(m, w.config(), goal, g, st);
  EXPECT_TRUE(st.planned);
  EXPECT_GT(cmd.base.vx, 0.0);
  EXPECT_TRUE(cmd.qd_arm.isZero());
}
