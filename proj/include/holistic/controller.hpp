#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "holistic/model.hpp"
#include "holistic/qp.hpp"
#include "holistic/spatial.hpp"

namespace holistic {

struct BaseLimits {
  double v_max = 1.0;      // m/s, forward (and lateral for omnidirectional bases)
  double omega_max = 1.5;  // rad/s
};

struct ControllerGains {
  double k_eps = 0.5;
  double lambda_arm = 0.01;
  double eta = 1.0;
  double rho_i = deg2rad(50.0);
  double rho_s = deg2rad(2.0);
  double beta = 1.0;
  Vector6d slack_bound = Vector6d::Constant(10.0);
  double lambda_delta_cap = 1e4;
  BaseLimits base_vel_limits;

  void validate() const {
    if (!(rho_s < rho_i)) throw std::invalid_argument("rho_s must be less than rho_i");
    if (!(rho_s >= 0.0)) throw std::invalid_argument("rho_s must be non-negative");
    if (!(eta > 0.0)) throw std::invalid_argument("eta must be positive");
    if (!(beta > 0.0)) throw std::invalid_argument("beta must be positive");
    if (!(lambda_arm > 0.0)) throw std::invalid_argument("lambda_arm must be positive");
    if (!(lambda_delta_cap > 0.0)) throw std::invalid_argument("lambda_delta_cap must be positive");
    if (!(k_eps >= 0.0)) throw std::invalid_argument("k_eps must be non-negative");
    if (!(slack_bound.array() > 0.0).all()) throw std::invalid_argument("slack bounds must be positive");
    if (!(base_vel_limits.v_max > 0.0 && base_vel_limits.omega_max > 0.0))
      throw std::invalid_argument("base velocity limits must be positive");
  }
};

// Planar base velocity in the base frame. vy is zero for non-holonomic bases.
struct BaseVelocity {
  double vx = 0.0;
  double vy = 0.0;
  double omega = 0.0;
};

struct ControlCommand {
  Eigen::VectorXd qd_arm;
  BaseVelocity base;
  WheelSpeeds wheels;
  Vector6d slack = Vector6d::Zero();
  double theta_eps = 0.0;
  double error_norm = 0.0;
  double angular_error = 0.0;
  double manip = 0.0;
  QPStatus status = QPStatus::optimal;

  bool ok() const { return status == QPStatus::optimal; }

  static ControlCommand zero(int n_arm) {
    ControlCommand c;
    c.qd_arm = Eigen::VectorXd::Zero(n_arm);
    return c;
  }
};

// beta * psi(T_e^-1 T_goal), with both parts rotated into the frame T_e is
// expressed in (the base frame for the controller).
inline Twist pbs_twist(const Pose3& t_e, const Pose3& t_goal, double beta) {
  const Twist local = psi(inverse(t_e) * t_goal);
  return {beta * (t_e.rotation * local.linear), beta * (t_e.rotation * local.angular)};
}

// Least-squares / least-norm resolved-rate solution using the base-frame Jacobian.
inline Eigen::VectorXd rrmc_step(const KinematicModel& m, const Configuration& cfg,
                                 const Twist& nu) {
  const Matrix6Xd j = jacobian(m, cfg, Frame::base);
  return j.completeOrthogonalDecomposition().solve(nu.vector());
}

// Planar bearing of the end-effector in the base frame, in (-pi, pi].
inline double base_angle(const KinematicModel& m, const Configuration& cfg) {
  const Eigen::Vector3d p = fkine_base(m, cfg.q_arm).translation;
  if (std::hypot(p.x(), p.y()) < 1e-12) return 0.0;
  const double a = std::atan2(p.y(), p.x());
  return a <= -std::numbers::pi ? std::numbers::pi : a;
}

// Goal error terms: translational distance and rotation angle.
struct PoseError {
  double translation = 0.0;
  double rotation = 0.0;
};

inline PoseError pose_error(const Pose3& current, const Pose3& goal) {
  return {(goal.translation - current.translation).norm(),
          rotation_angle(current.rotation.transpose() * goal.rotation)};
}

// Assembles the QP over x = (qd, slack). `error_norm` is the translational
// distance to the goal; `base_bounds_zero` freezes the base joints.
inline QPProblem build_qp(const KinematicModel& m, const Configuration& cfg, const Twist& nu_star,
                          double error_norm, const ControllerGains& gains,
                          ManipVariant variant = ManipVariant::arm_only,
                          bool base_bounds_zero = false) {
  const int n = m.n();
  const int nb = m.n_base();
  const int dim = n + 6;
  constexpr double inf = std::numeric_limits<double>::infinity();

  QPProblem p;
  const double inv_e =
      error_norm > 0.0 ? std::min(1.0 / error_norm, gains.lambda_delta_cap) : gains.lambda_delta_cap;

  p.Q = Eigen::MatrixXd::Zero(dim, dim);
  for (int i = 0; i < nb; ++i) p.Q(i, i) = inv_e;
  for (int i = nb; i < n; ++i) p.Q(i, i) = gains.lambda_arm;
  for (int i = n; i < dim; ++i) p.Q(i, i) = inv_e;

  p.Jeq.resize(6, dim);
  p.Jeq.leftCols(n) = jacobian(m, cfg, Frame::base);
  p.Jeq.rightCols(6).setIdentity();
  p.nu = nu_star.vector();

  // Negative gradient: minimising C'x rewards motion that raises manipulability.
  p.C = Eigen::VectorXd::Zero(dim);
  p.C.head(n) = -manipulability_jacobian(m, cfg, variant);
  p.C(m.base_rotation_index()) += -gains.k_eps * base_angle(m, cfg);

  // Velocity dampers on arm joints only, one row per approached limit.
  const double span = gains.rho_i - gains.rho_s;
  std::vector<std::pair<int, double>> rows;  // (signed joint index + 1, bound)
  for (int j = 0; j < m.n_arm(); ++j) {
    const auto& jd = m.links[static_cast<std::size_t>(j)].joint;
    const double q = cfg.q_arm(j);
    const double to_upper = jd.q_max - q;
    const double to_lower = q - jd.q_min;
    if (to_upper <= gains.rho_i) rows.emplace_back(nb + j + 1, gains.eta * (to_upper - gains.rho_s) / span);
    if (to_lower <= gains.rho_i) rows.emplace_back(-(nb + j + 1), gains.eta * (to_lower - gains.rho_s) / span);
  }
  p.A = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows.size()), dim);
  p.B.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto [signed_idx, bound] = rows[r];
    const int col = std::abs(signed_idx) - 1;
    p.A(static_cast<Eigen::Index>(r), col) = signed_idx > 0 ? 1.0 : -1.0;
    p.B(static_cast<Eigen::Index>(r)) = bound;
  }

  p.lower.resize(dim);
  p.upper.resize(dim);
  const auto vj = m.base_joints();
  for (int i = 0; i < nb; ++i) {
    const double lim = base_bounds_zero ? 0.0
                       : is_rotational(vj[static_cast<std::size_t>(i)].kind)
                           ? gains.base_vel_limits.omega_max
                           : gains.base_vel_limits.v_max;
    p.lower(i) = -lim;
    p.upper(i) = lim;
  }
  for (int j = 0; j < m.n_arm(); ++j) {
    const double qd = m.links[static_cast<std::size_t>(j)].joint.qd_max;
    p.lower(nb + j) = std::isfinite(qd) ? -qd : -inf;
    p.upper(nb + j) = std::isfinite(qd) ? qd : inf;
  }
  p.lower.tail(6) = -gains.slack_bound;
  p.upper.tail(6) = gains.slack_bound;
  return p;
}

// Splits the virtual base rates into a planar base command (and wheel speeds).
inline void apply_base_rates(const KinematicModel& m, const Eigen::VectorXd& qd, ControlCommand& cmd) {
  if (m.base_kind == BaseKind::nonholonomic) {
    cmd.base = {qd(1), 0.0, qd(0)};
    cmd.wheels = wheel_map({qd(0), qd(1)}, m.wheel_radius, m.wheel_separation);
  } else {
    cmd.base = {qd(0), qd(1), qd(2)};
    cmd.wheels = {};
  }
}

// Holistic reactive controller: owns solver workspace and the previous solution.
class HolisticController {
 public:
  ControllerGains gains;
  ManipVariant variant = ManipVariant::arm_only;

  HolisticController() = default;
  HolisticController(ControllerGains g, ManipVariant v) : gains(g), variant(v) { gains.validate(); }

  ControlCommand step(const KinematicModel& m, const Configuration& cfg, const Pose3& world_goal) {
    return solve_step(m, cfg, world_goal, false);
  }

  // Same QP with the base frozen (arm-only servoing).
  ControlCommand arm_only_step(const KinematicModel& m, const Configuration& cfg,
                               const Pose3& world_goal) {
    return solve_step(m, cfg, world_goal, true);
  }

  void reset() { warm_.reset(); }

 private:
  QPSolver solver_;
  std::optional<Eigen::VectorXd> warm_;

  ControlCommand solve_step(const KinematicModel& m, const Configuration& cfg,
                            const Pose3& world_goal, bool freeze_base) {
    const Pose3 b_goal = inverse(cfg.base.pose()) * world_goal;
    const Pose3 b_ee = fkine_base(m, cfg.q_arm);
    const Twist nu = pbs_twist(b_ee, b_goal, gains.beta);
    const PoseError err = pose_error(b_ee, b_goal);
    const QPProblem qp = build_qp(m, cfg, nu, err.translation, gains, variant, freeze_base);

    ControlCommand cmd = ControlCommand::zero(m.n_arm());
    cmd.theta_eps = base_angle(m, cfg);
    cmd.error_norm = err.translation;
    cmd.angular_error = err.rotation;
    cmd.manip = arm_manipulability(m, cfg.q_arm);

    const QPSolution sol = solver_.solve(qp, warm_);
    cmd.status = sol.status;
    if (sol.status != QPStatus::optimal) {
      warm_.reset();
      return cmd;
    }
    warm_ = sol.x;
    const Eigen::VectorXd qd = sol.x.head(m.n());
    cmd.qd_arm = qd.tail(m.n_arm());
    cmd.slack = sol.x.tail<6>();
    apply_base_rates(m, qd, cmd);
    return cmd;
  }
};

inline ControlCommand holistic_step(const KinematicModel& m, const Configuration& cfg,
                                    const Pose3& world_goal, const ControllerGains& gains,
                                    ManipVariant variant = ManipVariant::arm_only) {
  HolisticController c(gains, variant);
  return c.step(m, cfg, world_goal);
}

// Base-then-arm baseline: the base turns, drives and aligns to a standoff pose
// with the arm frozen, then the arm alone servos to the goal.
struct SequentialParams {
  double standoff = 0.1;          // m short of the pose that puts the ready EE on the goal
  double position_tol = 0.02;     // m, base phase completion
  double heading_tol = deg2rad(2.0);
  double k_v = 1.0;
  double k_omega = 1.0;
  std::string arm_config = "ready";
};

enum class SequentialPhase { turn, drive, align, arm };

struct SequentialState {
  SequentialPhase phase = SequentialPhase::turn;
  bool planned = false;
  PlanarPose target;
};

inline double saturate(double v, double lim) { return std::clamp(v, -lim, lim); }

// Planar base pose from which the arm at `q_arm` places the EE at the goal,
// backed off by `standoff` along the base heading.
inline PlanarPose standoff_base_pose(const KinematicModel& m, const Eigen::VectorXd& q_arm,
                                     const Pose3& world_goal, double standoff) {
  const Pose3 b_ee = fkine_base(m, q_arm);
  // Base yaw so that the ready EE heading in the plane matches the goal's.
  const Eigen::Vector3d fe = b_ee.rotation.col(0);
  const Eigen::Vector3d fg = world_goal.rotation.col(0);
  double yaw = std::atan2(fg.y(), fg.x()) - std::atan2(fe.y(), fe.x());
  if (std::hypot(fe.x(), fe.y()) < 1e-6 || std::hypot(fg.x(), fg.y()) < 1e-6) yaw = 0.0;
  yaw = wrap_angle(yaw);
  const Eigen::Vector2d offset = Eigen::Rotation2Dd(yaw) * b_ee.translation.head<2>();
  const Eigen::Vector2d pos = world_goal.translation.head<2>() - offset -
                              standoff * Eigen::Vector2d(std::cos(yaw), std::sin(yaw));
  return {pos.x(), pos.y(), yaw};
}

class SequentialController {
 public:
  ControllerGains gains;
  SequentialParams params;
  SequentialState state;

  SequentialController() = default;
  SequentialController(ControllerGains g, SequentialParams p) : gains(g), params(p) {
    gains.validate();
    arm_.gains = gains;
  }

  ControlCommand step(const KinematicModel& m, const Configuration& cfg, const Pose3& world_goal) {
    if (!state.planned) {
      state.target = standoff_base_pose(m, m.config(params.arm_config), world_goal, params.standoff);
      state.planned = true;
    }
    if (state.phase == SequentialPhase::arm) {
      ControlCommand cmd = arm_.arm_only_step(m, cfg, world_goal);
      cmd.base = {};
      cmd.wheels = {};
      return cmd;
    }

    ControlCommand cmd = ControlCommand::zero(m.n_arm());
    const Pose3 b_goal = inverse(cfg.base.pose()) * world_goal;
    const Pose3 b_ee = fkine_base(m, cfg.q_arm);
    const PoseError err = pose_error(b_ee, b_goal);
    cmd.theta_eps = base_angle(m, cfg);
    cmd.error_norm = err.translation;
    cmd.angular_error = err.rotation;
    cmd.manip = arm_manipulability(m, cfg.q_arm);

    const double dx = state.target.x - cfg.base.x;
    const double dy = state.target.y - cfg.base.y;
    const double dist = std::hypot(dx, dy);
    const double bearing = dist > 1e-9 ? std::atan2(dy, dx) : cfg.base.theta;
    const double to_bearing = wrap_angle(bearing - cfg.base.theta);
    const double to_final = wrap_angle(state.target.theta - cfg.base.theta);
    const BaseLimits& lim = gains.base_vel_limits;

    if (state.phase == SequentialPhase::turn) {
      if (dist < params.position_tol) {
        state.phase = SequentialPhase::align;
      } else if (std::abs(to_bearing) < params.heading_tol) {
        state.phase = SequentialPhase::drive;
      } else {
        cmd.base.omega = saturate(params.k_omega * to_bearing, lim.omega_max);
      }
    }
    if (state.phase == SequentialPhase::drive) {
      if (dist < params.position_tol) {
        state.phase = SequentialPhase::align;
      } else {
        cmd.base.vx = saturate(params.k_v * dist * std::cos(to_bearing), lim.v_max);
        cmd.base.omega = saturate(params.k_omega * to_bearing, lim.omega_max);
      }
    }
    if (state.phase == SequentialPhase::align) {
      if (std::abs(to_final) < params.heading_tol) {
        state.phase = SequentialPhase::arm;
        cmd.base = {};
        return step(m, cfg, world_goal);
      }
      cmd.base.omega = saturate(params.k_omega * to_final, lim.omega_max);
    }
    if (m.base_kind == BaseKind::nonholonomic)
      cmd.wheels = wheel_map({cmd.base.omega, cmd.base.vx}, m.wheel_radius, m.wheel_separation);
    return cmd;
  }

  void reset() {
    state = {};
    arm_.reset();
  }

 private:
  HolisticController arm_;
};

inline ControlCommand sequential_baseline_step(const KinematicModel& m, const Configuration& cfg,
                                               const Pose3& world_goal, const ControllerGains& gains,
                                               SequentialState& phase_state,
                                               const SequentialParams& params = {}) {
  SequentialController c(gains, params);
  c.state = phase_state;
  ControlCommand cmd = c.step(m, cfg, world_goal);
  phase_state = c.state;
  return cmd;
}

}  // namespace holistic
