#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "holistic/bt.hpp"
#include "holistic/controller.hpp"
#include "holistic/model.hpp"
#include "holistic/sim.hpp"

namespace holistic {

// Stand-in for a learned grasp detector: grasp poses come from the known
// object poses and each attempt fails with probability p.
class ScriptedGraspSource {
 public:
  ScriptedGraspSource() = default;
  ScriptedGraspSource(double fail_p, std::uint64_t seed) : fail_p_(fail_p), rng_(seed) {
    if (!(fail_p >= 0.0 && fail_p <= 1.0)) throw std::invalid_argument("grasp failure probability must be in [0, 1]");
  }
  bool attempt_fails() { return std::bernoulli_distribution(fail_p_)(rng_); }
  double failure_probability() const { return fail_p_; }

 private:
  double fail_p_ = 0.0;
  std::mt19937_64 rng_{0};
};

inline constexpr double kGripperOpen = 0.08;
inline constexpr double kGripperObjectWidth = 0.04;

// Top-down grasp frame: tool z pointing at the floor, tool x along `yaw`.
inline Pose3 top_down(const Eigen::Vector3d& p, double yaw) {
  Pose3 t;
  t.rotation = rot_z(yaw) * rot_x(std::numbers::pi);
  t.translation = p;
  return t;
}

struct PickPlaceMetrics {
  int placements = 0;
  int attempts = 0;
  int failed_grasps = 0;
  int recovered_errors = 0;
  int unrecovered_errors = 0;
  bool complete = false;
  double sim_time = 0.0;
  double max_idle_gap = 0.0;
  std::vector<double> grasp_times;  // first attempt start to confirmed grasp
  std::vector<double> cycle_times;  // between consecutive placements
  double mean_grasp_time() const { return mean(grasp_times); }
  double mean_cycle_time() const { return mean(cycle_times); }

 private:
  static double mean(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  }
};

struct Blackboard {
  const KinematicModel* model = nullptr;
  WorldState world;
  ControllerGains gains;
  ManipVariant variant = ManipVariant::arm_only;
  std::optional<Pose3> goal;
  std::map<std::string, PlanarPose> places;  // map poses for the base
  std::map<std::string, Pose3> ee_poses;      // named end-effector targets
  std::uint64_t seed = 0;
  ScriptedGraspSource grasp_source;

  double dt = kDefaultDt;
  int steps_per_tick = 10;
  int steps_left = 0;  // remaining control steps in the current tick

  // Task bookkeeping
  std::vector<int> pile;      // objects still in the container
  std::vector<int> placed;
  std::optional<double> grasp_started;
  std::optional<double> last_place_time;
  double idle_run = 0.0;
  PickPlaceMetrics metrics;

  const KinematicModel& m() const { return *model; }
  Configuration config() const { return world.config(); }
  Pose3 ee() const { return fkine(*model, world.config()); }

  // Integrates one control step and tracks stationary time.
  void advance(const ControlCommand& cmd) {
    world = step_world(*model, std::move(world), cmd, dt);
    --steps_left;
    const bool moving = std::abs(cmd.base.vx) > 1e-9 || std::abs(cmd.base.vy) > 1e-9 ||
                        std::abs(cmd.base.omega) > 1e-9 ||
                        (cmd.qd_arm.size() > 0 && cmd.qd_arm.cwiseAbs().maxCoeff() > 1e-9);
    note_motion(moving, dt);
    if (world.held_object) {
      for (auto& o : world.objects)
        if (o.id == *world.held_object) o.pose = ee();
    }
  }
  void note_motion(bool moving, double span) {
    idle_run = moving ? 0.0 : idle_run + span;
    metrics.max_idle_gap = std::max(metrics.max_idle_gap, idle_run);
  }
  WorldObject* object(int id) {
    for (auto& o : world.objects)
      if (o.id == id) return &o;
    return nullptr;
  }
};

using PPNode = bt::Node<Blackboard>;
using PPBehaviour = bt::Behaviour<Blackboard>;

struct PickPlaceConfig {
  std::map<std::string, PlanarPose> places;  // needs init, pickup, dropoff
  Eigen::Vector3d pickup_offset{0.75, 0.0, 0.35};   // container centre in the pickup base frame
  Eigen::Vector3d dropoff_offset{0.7, 0.0, 0.5};    // release point in the dropoff base frame
  double grasp_lock_distance = 0.25;
  double position_tol = 0.02;
  double angle_tol = deg2rad(2.0);
  double arm_ramp_gain = 2.0;     // 1/s
  double arm_ramp_scale = 0.5;    // fraction of qd_max
  double arm_config_tol = 5e-3;   // rad
  double base_k_v = 1.0;
  double base_k_omega = 1.5;
  double base_position_tol = 0.02;
  double base_heading_tol = deg2rad(2.0);
  double grasp_capture_radius = 0.03;  // m, EE to object for a successful close

  static PickPlaceConfig standard() {
    PickPlaceConfig c;
    c.places["init"] = {0.0, 0.0, 0.0};
    c.places["pickup"] = {1.5, 0.0, 0.0};
    c.places["dropoff"] = {-1.5, 0.0, std::numbers::pi};
    return c;
  }
};

namespace leaves {

inline double param(const bt::LeafParams& p, const std::string& k, double def) {
  auto it = p.find(k);
  return it == p.end() ? def : std::stod(it->second);
}

inline std::string param(const bt::LeafParams& p, const std::string& k, const std::string& def) {
  auto it = p.find(k);
  return it == p.end() ? def : it->second;
}

inline PPBehaviour arm_error() {
  return {[](Blackboard& bb) { return bb.world.arm_error ? bt::TickStatus::success : bt::TickStatus::failure; }, {}};
}

inline PPBehaviour recover_arm() {
  return {[](Blackboard& bb) {
            bb.world.arm_error = false;
            ++bb.metrics.recovered_errors;
            if (bb.world.held_object) {  // an object in hand goes back to the container
              bb.pile.insert(bb.pile.begin(), *bb.world.held_object);
              bb.world.held_object.reset();
            }
            bb.world.gripper_width = kGripperOpen;
            return bt::TickStatus::success;
          },
          {}};
}

inline PPBehaviour arm_to_config(std::string name, const PickPlaceConfig& cfg) {
  return {[name, cfg](Blackboard& bb) {
            const Eigen::VectorXd target = bb.m().config(name);
            while (bb.steps_left > 0) {
              const Eigen::VectorXd err = target - bb.world.q_arm;
              if (err.cwiseAbs().maxCoeff() < cfg.arm_config_tol) return bt::TickStatus::success;
              ControlCommand cmd = ControlCommand::zero(bb.m().n_arm());
              for (int j = 0; j < bb.m().n_arm(); ++j) {
                const double lim = cfg.arm_ramp_scale * bb.m().links[static_cast<std::size_t>(j)].joint.qd_max;
                cmd.qd_arm(j) = saturate(cfg.arm_ramp_gain * err(j), lim);
              }
              bb.advance(cmd);
            }
            const Eigen::VectorXd err = target - bb.world.q_arm;
            return err.cwiseAbs().maxCoeff() < cfg.arm_config_tol ? bt::TickStatus::success
                                                                   : bt::TickStatus::running;
          },
          {}};
}

// Turn toward the target, drive, then align; arm held still.
inline PPBehaviour base_to_pose(std::string place, const PickPlaceConfig& cfg) {
  return {[place, cfg](Blackboard& bb) {
            auto it = bb.places.find(place);
            if (it == bb.places.end()) return bt::TickStatus::failure;
            const PlanarPose t = it->second;
            const BaseLimits& lim = bb.gains.base_vel_limits;
            while (bb.steps_left > 0) {
              const PlanarPose& b = bb.world.base;
              const double dx = t.x - b.x, dy = t.y - b.y;
              const double dist = std::hypot(dx, dy);
              const double to_final = wrap_angle(t.theta - b.theta);
              ControlCommand cmd = ControlCommand::zero(bb.m().n_arm());
              if (dist >= cfg.base_position_tol) {
                const double to_bearing = wrap_angle(std::atan2(dy, dx) - b.theta);
                cmd.base.omega = saturate(cfg.base_k_omega * to_bearing, lim.omega_max);
                if (std::abs(to_bearing) < deg2rad(30.0))
                  cmd.base.vx = saturate(cfg.base_k_v * dist * std::cos(to_bearing), lim.v_max);
              } else if (std::abs(to_final) >= cfg.base_heading_tol) {
                cmd.base.omega = saturate(cfg.base_k_omega * to_final, lim.omega_max);
              } else {
                return bt::TickStatus::success;
              }
              bb.advance(cmd);
            }
            return bt::TickStatus::running;
          },
          {}};
}

inline PPBehaviour open_gripper(const PickPlaceConfig& cfg) {
  return {[cfg](Blackboard& bb) {
            if (bb.world.held_object) {
              const int id = *bb.world.held_object;
              bb.world.held_object.reset();
              const auto drop = bb.ee_poses.find("dropoff");
              const bool at_drop = drop != bb.ee_poses.end() &&
                                   (bb.ee().translation - drop->second.translation).norm() < 2.0 * cfg.position_tol;
              if (at_drop) {
                bb.placed.push_back(id);
                ++bb.metrics.placements;
                const double t = bb.world.time;
                bb.metrics.cycle_times.push_back(t - bb.last_place_time.value_or(0.0));
                bb.last_place_time = t;
              } else {
                bb.pile.insert(bb.pile.begin(), id);  // falls back into the container
              }
            }
            bb.world.gripper_width = kGripperOpen;
            return bt::TickStatus::success;
          },
          {}};
}

inline PPBehaviour close_gripper(const PickPlaceConfig& cfg) {
  return {[cfg](Blackboard& bb) {
            ++bb.metrics.attempts;
            const bool fails = bb.grasp_source.attempt_fails();
            if (!fails && !bb.pile.empty()) {
              WorldObject* o = bb.object(bb.pile.front());
              if (o && (bb.ee().translation - o->pose.translation).norm() < cfg.grasp_capture_radius) {
                bb.world.held_object = o->id;
                bb.pile.erase(bb.pile.begin());
                bb.world.gripper_width = kGripperObjectWidth;
                if (bb.grasp_started) bb.metrics.grasp_times.push_back(bb.world.time - *bb.grasp_started);
                bb.grasp_started.reset();
                return bt::TickStatus::success;
              }
            }
            ++bb.metrics.failed_grasps;
            bb.world.gripper_width = 0.0;
            return bt::TickStatus::success;
          },
          {}};
}

inline PPBehaviour gripper_closed() {
  return {[](Blackboard& bb) {
            return std::abs(bb.world.gripper_width) <= 1e-6 ? bt::TickStatus::success : bt::TickStatus::failure;
          },
          {}};
}

inline PPBehaviour clear_goal() {
  return {[](Blackboard& bb) {
            bb.goal.reset();
            return bt::TickStatus::success;
          },
          {}};
}

inline PPBehaviour load_pose(std::string name) {
  return {[name](Blackboard& bb) {
            auto it = bb.ee_poses.find(name);
            if (it == bb.ee_poses.end()) return bt::TickStatus::failure;
            bb.goal = it->second;
            return bt::TickStatus::success;
          },
          {}};
}

inline PPBehaviour publish_grasp_pose() {
  return {[](Blackboard& bb) {
            if (bb.pile.empty()) return bt::TickStatus::failure;
            const WorldObject* o = bb.object(bb.pile.front());
            if (!o) return bt::TickStatus::failure;
            if (!bb.grasp_started) bb.grasp_started = bb.world.time;
            bb.goal = o->pose;
            return bt::TickStatus::success;
          },
          {}};
}

inline PPBehaviour distance_to_goal(double threshold) {
  return {[threshold](Blackboard& bb) {
            if (!bb.goal) return bt::TickStatus::failure;
            return (bb.ee().translation - bb.goal->translation).norm() < threshold ? bt::TickStatus::success
                                                                                   : bt::TickStatus::failure;
          },
          {}};
}

// Drives the holistic controller toward the goal channel for the tick slice.
inline PPBehaviour motion_control(const PickPlaceConfig& cfg) {
  auto ctrl = std::make_shared<std::optional<HolisticController>>();
  return {[cfg, ctrl](Blackboard& bb) {
            if (!bb.goal) return bt::TickStatus::failure;
            if (!*ctrl) ctrl->emplace(bb.gains, bb.variant);
            while (bb.steps_left > 0) {
              const PoseError e = pose_error(bb.ee(), *bb.goal);
              if (e.translation < cfg.position_tol && e.rotation < cfg.angle_tol) return bt::TickStatus::success;
              const ControlCommand cmd = (*ctrl)->step(bb.m(), bb.config(), *bb.goal);
              if (!cmd.ok()) {
                bb.world.arm_error = true;
                return bt::TickStatus::failure;
              }
              bb.advance(cmd);
              if (bb.world.arm_error) return bt::TickStatus::failure;
            }
            const PoseError e = pose_error(bb.ee(), *bb.goal);
            return e.translation < cfg.position_tol && e.rotation < cfg.angle_tol ? bt::TickStatus::success
                                                                                  : bt::TickStatus::running;
          },
          [ctrl](Blackboard&) { ctrl->reset(); }};
}

}  // namespace leaves

inline bt::LeafRegistry<Blackboard> pick_place_registry(const PickPlaceConfig& cfg) {
  bt::LeafRegistry<Blackboard> r;
  r.add("arm_error", [](const bt::LeafParams&) { return leaves::arm_error(); });
  r.add("recover_arm", [](const bt::LeafParams&) { return leaves::recover_arm(); });
  r.add("arm_to_config", [cfg](const bt::LeafParams& p) {
    return leaves::arm_to_config(leaves::param(p, "config", std::string("ready")), cfg);
  });
  r.add("base_to_pose", [cfg](const bt::LeafParams& p) {
    return leaves::base_to_pose(leaves::param(p, "pose", std::string("init")), cfg);
  });
  r.add("open_gripper", [cfg](const bt::LeafParams&) { return leaves::open_gripper(cfg); });
  r.add("close_gripper", [cfg](const bt::LeafParams&) { return leaves::close_gripper(cfg); });
  r.add("gripper_closed", [](const bt::LeafParams&) { return leaves::gripper_closed(); });
  r.add("clear_goal", [](const bt::LeafParams&) { return leaves::clear_goal(); });
  r.add("load_pose", [](const bt::LeafParams& p) {
    return leaves::load_pose(leaves::param(p, "pose", std::string("dropoff")));
  });
  r.add("publish_grasp_pose", [](const bt::LeafParams&) { return leaves::publish_grasp_pose(); });
  r.add("distance_to_goal", [cfg](const bt::LeafParams& p) {
    return leaves::distance_to_goal(leaves::param(p, "threshold", cfg.grasp_lock_distance));
  });
  r.add("motion_control", [cfg](const bt::LeafParams&) { return leaves::motion_control(cfg); });
  return r;
}

inline const char* kPickPlaceTree = R"(
(selector:root
  (memory_sequence:recovery
    (leaf arm_error)
    (leaf recover_arm)
    (leaf arm_to_config config=ready)
    (leaf base_to_pose pose=init))
  (success_is_running:repeat
    (memory_sequence:task
      (failure_is_running:retry
        (memory_sequence:grasp_attempt
          (selector:ensure_open
            (inverter (leaf gripper_closed))
            (leaf open_gripper))
          (leaf clear_goal)
          (leaf base_to_pose pose=pickup)
          (sequence:move_to_grasp
            (selector:lock_in
              (leaf distance_to_goal threshold=0.25)
              (leaf publish_grasp_pose))
            (leaf motion_control))
          (leaf close_gripper)
          (leaf:retreat arm_to_config config=ready)
          (inverter:grasp_check (leaf gripper_closed))))
      (leaf:load_dropoff load_pose pose=dropoff)
      (leaf:to_dropoff motion_control)
      (leaf:place open_gripper)
      (leaf:reset_arm arm_to_config config=ready))))
)";

inline PPNode::Ptr build_pick_place_tree(const PickPlaceConfig& cfg) {
  for (const char* k : {"init", "pickup", "dropoff"})
    if (!cfg.places.count(k)) throw bt::TreeError(std::string("pick and place needs the '") + k + "' pose");
  return bt::parse_tree<Blackboard>(kPickPlaceTree, pick_place_registry(cfg));
}

// World with `n_objects` in the pickup container, blackboard wired up.
inline Blackboard make_pick_place_blackboard(const KinematicModel& m, const PickPlaceConfig& cfg,
                                             int n_objects, double grasp_fail_p, std::uint64_t seed,
                                             const ControllerGains& gains = {}) {
  Blackboard bb;
  bb.model = &m;
  bb.gains = gains;
  bb.seed = seed;
  bb.places = cfg.places;
  bb.world = make_world(m, "ready", cfg.places.at("init"));
  bb.grasp_source = ScriptedGraspSource(grasp_fail_p, seed ^ 0x9e3779b97f4a7c15ULL);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(-0.08, 0.08);
  std::uniform_real_distribution<double> yaw(-0.4, 0.4);
  const Pose3 pickup = cfg.places.at("pickup").pose();
  for (int i = 0; i < n_objects; ++i) {
    const Eigen::Vector3d local = cfg.pickup_offset + Eigen::Vector3d(jitter(rng), jitter(rng), 0.0);
    const Eigen::Vector3d p = pickup * local;
    bb.world.objects.push_back({i, top_down(p, cfg.places.at("pickup").theta + yaw(rng))});
    bb.pile.push_back(i);
  }
  const PlanarPose drop = cfg.places.at("dropoff");
  bb.ee_poses["dropoff"] = top_down(drop.pose() * cfg.dropoff_offset, drop.theta);
  return bb;
}

// One behaviour-tree tick: the tree gets a 1/20 s slice of control steps.
inline bt::TickStatus tick_once(PPNode& root, Blackboard& bb) {
  bb.steps_left = bb.steps_per_tick;
  const bt::TickStatus s = root.tick(bb);
  while (bb.steps_left > 0) {  // unused slice time: platform stationary
    bb.world.time += bb.dt;
    --bb.steps_left;
    bb.note_motion(false, bb.dt);
  }
  return s;
}

struct PickPlaceRun {
  PickPlaceMetrics metrics;
  std::vector<bt::TickStatus> statuses;
};

inline PickPlaceRun run_pick_place_once(const KinematicModel& m, const PickPlaceConfig& cfg, int objects,
                                        double grasp_fail_p, std::uint64_t seed, double time_cap = 1800.0,
                                        const ControllerGains& gains = {}) {
  Blackboard bb = make_pick_place_blackboard(m, cfg, objects, grasp_fail_p, seed, gains);
  auto tree = build_pick_place_tree(cfg);
  PickPlaceRun run;
  while (bb.world.time < time_cap) {
    const bt::TickStatus s = tick_once(*tree, bb);
    run.statuses.push_back(s);
    if (s == bt::TickStatus::failure) break;
    if (bb.metrics.placements >= objects && !bb.world.held_object) break;
  }
  bb.metrics.complete = bb.metrics.placements >= objects;
  bb.metrics.unrecovered_errors = (bb.world.arm_error ? 1 : 0) +
                                  (!run.statuses.empty() && run.statuses.back() == bt::TickStatus::failure ? 1 : 0);
  bb.metrics.sim_time = bb.world.time;
  run.metrics = bb.metrics;
  return run;
}

struct PickPlaceSummary {
  std::vector<PickPlaceMetrics> runs;
  int placements = 0;
  int attempts = 0;
  int unrecovered_errors = 0;
  int incomplete = 0;
  double max_idle_gap = 0.0;
  double mean_grasp_time = 0.0;
  double mean_cycle_time = 0.0;
};

inline PickPlaceSummary run_pick_place(const KinematicModel& m, std::uint64_t seed, int n_runs = 10,
                                       int objects_per_run = 10, double grasp_fail_p = 0.115,
                                       const PickPlaceConfig& cfg = PickPlaceConfig::standard(),
                                       const ControllerGains& gains = {}) {
  PickPlaceSummary s;
  s.runs = parallel_map(n_runs, [&](int r) {
    return run_pick_place_once(m, cfg, objects_per_run, grasp_fail_p,
                               seed * 1000003ULL + static_cast<std::uint64_t>(r), 1800.0, gains)
        .metrics;
  });
  double gt = 0.0, ct = 0.0;
  std::size_t ng = 0, nc = 0;
  for (const auto& r : s.runs) {
    s.placements += r.placements;
    s.attempts += r.attempts;
    s.unrecovered_errors += r.unrecovered_errors;
    s.incomplete += r.complete ? 0 : 1;
    s.max_idle_gap = std::max(s.max_idle_gap, r.max_idle_gap);
    for (double x : r.grasp_times) gt += x;
    for (double x : r.cycle_times) ct += x;
    ng += r.grasp_times.size();
    nc += r.cycle_times.size();
  }
  s.mean_grasp_time = ng ? gt / static_cast<double>(ng) : 0.0;
  s.mean_cycle_time = nc ? ct / static_cast<double>(nc) : 0.0;
  return s;
}

}  // namespace holistic
