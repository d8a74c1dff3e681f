#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "holistic/controller.hpp"
#include "holistic/model.hpp"
#include "holistic/spatial.hpp"

namespace holistic {

inline constexpr double kDefaultDt = 1.0 / 200.0;

struct WorldObject {
  int id = 0;
  Pose3 pose;
};

struct WorldState {
  PlanarPose base;
  Eigen::VectorXd q_arm;
  double gripper_width = 0.08;
  std::optional<int> held_object;
  std::vector<WorldObject> objects;
  double time = 0.0;
  bool arm_error = false;

  Configuration config() const { return {base, q_arm}; }
};

inline WorldState make_world(const KinematicModel& m, const std::string& arm_config = "ready",
                             PlanarPose base = {}) {
  WorldState w;
  w.base = base;
  w.q_arm = m.config(arm_config);
  return w;
}

// Integrates one command. Non-holonomic bases ignore cmd.base.vy.
inline WorldState step_world(const KinematicModel& m, WorldState w, const ControlCommand& cmd, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("dt must be positive");
  const double c = std::cos(w.base.theta), s = std::sin(w.base.theta);
  const double vy = m.base_kind == BaseKind::omnidirectional ? cmd.base.vy : 0.0;
  w.base.x += (cmd.base.vx * c - vy * s) * dt;
  w.base.y += (cmd.base.vx * s + vy * c) * dt;
  w.base.theta = wrap_angle(w.base.theta + cmd.base.omega * dt);
  if (cmd.qd_arm.size() == w.q_arm.size()) w.q_arm += cmd.qd_arm * dt;
  for (int j = 0; j < m.n_arm(); ++j) {
    const auto& jd = m.links[static_cast<std::size_t>(j)].joint;
    if (w.q_arm(j) > jd.q_max) {
      w.q_arm(j) = jd.q_max;
      w.arm_error = true;
    } else if (w.q_arm(j) < jd.q_min) {
      w.q_arm(j) = jd.q_min;
      w.arm_error = true;
    }
  }
  w.time += dt;
  return w;
}

enum class FailureReason { timeout, qp_infeasible, joint_limit };

inline const char* to_string(FailureReason r) {
  switch (r) {
    case FailureReason::timeout: return "timeout";
    case FailureReason::qp_infeasible: return "qp_infeasible";
    case FailureReason::joint_limit: return "joint_limit";
  }
  return "?";
}

struct TrajectoryMetrics {
  bool success = false;
  double completion_time = 0.0;
  double final_theta_eps = 0.0;
  double final_manip = 0.0;
  double cumulative_jerk = 0.0;
  std::optional<FailureReason> failure_reason;
  // diagnostics beyond the headline metrics
  double start_manip = 0.0;
  double min_manip = 0.0;
  int damper_violations = 0;  // steps with an arm joint inside rho_s of a limit while feasible
  int steps = 0;
};

struct TrajectorySample {
  double t = 0.0;
  PlanarPose base;
  Eigen::VectorXd q_arm;
  Pose3 ee;
};

enum class ControllerKind { holistic, sequential };

inline const char* to_string(ControllerKind k) {
  return k == ControllerKind::holistic ? "holistic" : "sequential";
}

struct ScenarioOptions {
  double dt = kDefaultDt;
  double budget = 30.0;
  double position_tol = 0.02;
  double angle_tol = deg2rad(2.0);
  double jerk_skip = 0.5;
  bool record = false;
  SequentialParams sequential;
};

struct ScenarioResult {
  TrajectoryMetrics metrics;
  std::vector<TrajectorySample> trajectory;  // only filled when options.record
};

// Sum of third finite differences of the EE translation, skipping the first
// `skip` seconds. Uses the four-point stencil centred between samples.
inline double cumulative_jerk(const std::vector<Eigen::Vector3d>& p, double dt, double skip = 0.5) {
  if (p.size() < 4) throw std::invalid_argument("cumulative_jerk needs at least 4 samples");
  double total = 0.0;
  const double inv = 1.0 / (dt * dt * dt);
  for (std::size_t k = 1; k + 2 < p.size(); ++k) {
    const double centre = (static_cast<double>(k) + 0.5) * dt;
    if (centre < skip) continue;
    const Eigen::Vector3d d3 = p[k + 2] - 3.0 * p[k + 1] + 3.0 * p[k] - p[k - 1];
    total += d3.norm() * inv * dt;
  }
  return total;
}

inline double min_limit_margin(const KinematicModel& m, const Eigen::VectorXd& q) {
  double margin = std::numeric_limits<double>::infinity();
  for (int j = 0; j < m.n_arm(); ++j) {
    const auto& jd = m.links[static_cast<std::size_t>(j)].joint;
    margin = std::min({margin, jd.q_max - q(j), q(j) - jd.q_min});
  }
  return margin;
}

inline ScenarioResult run_goal_scenario(const KinematicModel& m, const WorldState& start,
                                        const Pose3& goal, const ControllerGains& gains,
                                        ManipVariant variant, ControllerKind kind,
                                        const ScenarioOptions& opt = {}) {
  if (!(opt.budget > 0.0)) throw std::invalid_argument("budget must be positive");
  HolisticController holo(gains, variant);
  SequentialController seq(gains, opt.sequential);
  ScenarioResult res;
  TrajectoryMetrics& mt = res.metrics;
  WorldState w = start;
  std::vector<Eigen::Vector3d> ee_path;
  const auto max_steps = static_cast<int>(std::ceil(opt.budget / opt.dt - 1e-9));
  ee_path.reserve(static_cast<std::size_t>(std::min(max_steps, 20000)) + 1);

  auto record = [&](const Pose3& ee) {
    ee_path.push_back(ee.translation);
    if (opt.record) res.trajectory.push_back({w.time, w.base, w.q_arm, ee});
  };

  mt.start_manip = arm_manipulability(m, w.q_arm);
  mt.min_manip = mt.start_manip;
  for (int k = 0;; ++k) {
    const Configuration cfg = w.config();
    const Pose3 ee = fkine(m, cfg);
    record(ee);
    const PoseError err = pose_error(ee, goal);
    const double manip = arm_manipulability(m, w.q_arm);
    mt.min_manip = std::min(mt.min_manip, manip);
    mt.final_theta_eps = base_angle(m, cfg);
    mt.final_manip = manip;
    if (err.translation < opt.position_tol && err.rotation < opt.angle_tol) {
      mt.success = true;
      break;
    }
    if (k >= max_steps) {
      mt.failure_reason = FailureReason::timeout;
      break;
    }
    const ControlCommand cmd =
        kind == ControllerKind::holistic ? holo.step(m, cfg, goal) : seq.step(m, cfg, goal);
    if (!cmd.ok()) {
      mt.failure_reason = FailureReason::qp_infeasible;
      break;
    }
    w = step_world(m, std::move(w), cmd, opt.dt);
    ++mt.steps;
    if (min_limit_margin(m, w.q_arm) < gains.rho_s - 1e-9) ++mt.damper_violations;
    if (w.arm_error) {
      mt.failure_reason = FailureReason::joint_limit;
      mt.final_manip = arm_manipulability(m, w.q_arm);
      break;
    }
  }
  mt.completion_time = w.time;
  mt.cumulative_jerk = ee_path.size() >= 4 ? cumulative_jerk(ee_path, opt.dt, opt.jerk_skip) : 0.0;
  return res;
}

// Experiment 1 goals relative to the starting EE pose (base at origin, arm ready).
enum class Exp1 { a, b, c };

inline Pose3 exp1_goal(const KinematicModel& m, Exp1 which) {
  const Pose3 ee0 = fkine(m, {PlanarPose{}, m.config("ready")});
  Pose3 g = ee0;
  switch (which) {
    case Exp1::a:
      g.translation.x() += 4.0;
      break;
    case Exp1::b:
      g.translation.y() += 4.0;
      g.rotation = rot_z(std::numbers::pi / 2) * ee0.rotation;
      break;
    case Exp1::c:
      g.translation.x() -= 4.0;
      g.rotation = rot_z(std::numbers::pi) * ee0.rotation;
      break;
  }
  return g;
}

struct GoalSample {
  Pose3 goal;
  PlanarPose base;
  Eigen::VectorXd q_arm;
};

// Generative valid goal: base uniform in the disc, arm uniform within limits
// shrunk by 5 degrees, EE kept above 0.1 m and inside the radius.
inline GoalSample sample_valid_goal(std::mt19937_64& rng, double radius, const KinematicModel& m) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double margin = deg2rad(5.0);
  for (;;) {
    GoalSample s;
    const double r = radius * std::sqrt(u(rng));
    const double a = 2.0 * std::numbers::pi * u(rng);
    s.base = {r * std::cos(a), r * std::sin(a), wrap_angle(2.0 * std::numbers::pi * u(rng))};
    s.q_arm.resize(m.n_arm());
    for (int j = 0; j < m.n_arm(); ++j) {
      const auto& jd = m.links[static_cast<std::size_t>(j)].joint;
      s.q_arm(j) = (jd.q_min + margin) + u(rng) * (jd.q_max - jd.q_min - 2.0 * margin);
    }
    s.goal = fkine(m, {s.base, s.q_arm});
    if (s.goal.translation.z() < 0.1) continue;
    if (s.goal.translation.head<2>().norm() > radius) continue;
    return s;
  }
}

inline std::vector<GoalSample> sample_goals(std::uint64_t seed, int count, const KinematicModel& m,
                                            double radius = 4.0) {
  std::mt19937_64 rng(seed);
  std::vector<GoalSample> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) out.push_back(sample_valid_goal(rng, radius, m));
  return out;
}

inline unsigned worker_count() {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("HOLISTIC_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) n = static_cast<unsigned>(v);
  }
  return n;
}

// Runs f(i) for i in [0, count) on a pool; results land in index order.
template <class F>
auto parallel_map(int count, F&& f) -> std::vector<decltype(f(0))> {
  std::vector<decltype(f(0))> out(static_cast<std::size_t>(count));
  std::atomic<int> next{0};
  const unsigned nw = std::min<unsigned>(worker_count(), static_cast<unsigned>(std::max(count, 1)));
  auto work = [&] {
    for (int i = next++; i < count; i = next++) out[static_cast<std::size_t>(i)] = f(i);
  };
  if (nw <= 1) {
    work();
    return out;
  }
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < nw; ++t) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  return out;
}

struct SweepCell {
  std::string label;
  int trials = 0;
  int failures = 0;
  double mean_final_theta_eps_deg = 0.0;  // over successful trials
  double mean_final_manip = 0.0;          // over successful trials
  int damper_violations = 0;
  std::vector<TrajectoryMetrics> runs;
};

inline SweepCell run_sweep_cell(const KinematicModel& m, const std::vector<GoalSample>& goals,
                                const ControllerGains& gains, ManipVariant variant,
                                const std::string& label, const ScenarioOptions& opt = {}) {
  SweepCell cell;
  cell.label = label;
  cell.trials = static_cast<int>(goals.size());
  const WorldState start = make_world(m);
  cell.runs = parallel_map(cell.trials, [&](int i) {
    return run_goal_scenario(m, start, goals[static_cast<std::size_t>(i)].goal, gains, variant,
                             ControllerKind::holistic, opt)
        .metrics;
  });
  int ok = 0;
  double th = 0.0, mn = 0.0;
  for (const auto& r : cell.runs) {
    cell.damper_violations += r.damper_violations;
    if (!r.success) {
      ++cell.failures;
      continue;
    }
    ++ok;
    th += std::abs(rad2deg(r.final_theta_eps));
    mn += r.final_manip;
  }
  if (ok > 0) {
    cell.mean_final_theta_eps_deg = th / ok;
    cell.mean_final_manip = mn / ok;
  }
  return cell;
}

// ---- CSV output ----

inline std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

inline void write_runs_csv(std::ostream& os, const std::string& scenario, std::uint64_t seed,
                           const std::vector<TrajectoryMetrics>& runs, bool header = true) {
  if (header)
    os << "scenario,seed,success,time_s,final_theta_eps_deg,final_manip,cum_jerk,failure_reason\n";
  for (const auto& r : runs) {
    os << scenario << ',' << seed << ',' << (r.success ? 1 : 0) << ',' << fmt(r.completion_time) << ','
       << fmt(rad2deg(r.final_theta_eps)) << ',' << fmt(r.final_manip) << ',' << fmt(r.cumulative_jerk)
       << ',' << (r.failure_reason ? to_string(*r.failure_reason) : "") << '\n';
  }
}

inline void write_sweep_csv(std::ostream& os, const std::string& parameter,
                            const std::vector<SweepCell>& cells) {
  os << parameter << ",trials,failures,mean_final_theta_eps_deg,mean_final_manip\n";
  for (const auto& c : cells)
    os << c.label << ',' << c.trials << ',' << c.failures << ',' << fmt(c.mean_final_theta_eps_deg)
       << ',' << fmt(c.mean_final_manip) << '\n';
}

inline void write_trajectory_csv(std::ostream& os, const std::vector<TrajectorySample>& traj) {
  if (traj.empty()) return;
  const auto na = traj.front().q_arm.size();
  os << "t,x,y,theta";
  for (Eigen::Index j = 0; j < na; ++j) os << ",q" << j + 1;
  os << ",ee_x,ee_y,ee_z,ee_rx,ee_ry,ee_rz\n";
  for (const auto& s : traj) {
    os << fmt(s.t) << ',' << fmt(s.base.x) << ',' << fmt(s.base.y) << ',' << fmt(s.base.theta);
    for (Eigen::Index j = 0; j < na; ++j) os << ',' << fmt(s.q_arm(j));
    const Eigen::Vector3d w = rotation_log(s.ee.rotation);
    os << ',' << fmt(s.ee.translation.x()) << ',' << fmt(s.ee.translation.y()) << ','
       << fmt(s.ee.translation.z()) << ',' << fmt(w.x()) << ',' << fmt(w.y()) << ',' << fmt(w.z()) << '\n';
  }
}

}  // namespace holistic
