#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "holistic/model_io.hpp"
#include "holistic/pick_place.hpp"
#include "holistic/sim.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace holistic;

namespace {

struct RunConfig {
  std::string model_path = HOLISTIC_DATA_DIR "/frankie.model";
  std::string experiment;
  std::string controller = "holistic";
  std::uint64_t seed = 0;
  std::string out = "out";
  std::string jm = "arm_only";
  int trials = -1;  // experiment default when negative
  double budget = 30.0;
  int objects = 10;
  double grasp_fail_p = 0.115;
  ControllerGains gains;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

ManipVariant parse_variant(const std::string& s) {
  if (s == "arm_only") return ManipVariant::arm_only;
  if (s == "whole") return ManipVariant::whole_platform;
  if (s == "zero") return ManipVariant::zero;
  throw ConfigError("unknown --jm '" + s + "'");
}

double percentile(std::vector<double> v, double p) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double idx = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(idx);
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (idx - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

json stats(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return json{{"n", v.size()},
              {"mean", v.empty() ? 0.0 : s / static_cast<double>(v.size())},
              {"p50", percentile(v, 0.5)},
              {"p90", percentile(v, 0.9)},
              {"max", v.empty() ? 0.0 : *std::max_element(v.begin(), v.end())}};
}

json run_stats(const std::vector<TrajectoryMetrics>& runs) {
  std::vector<double> t, th, mn;
  for (const auto& r : runs) {
    if (!r.success) continue;
    t.push_back(r.completion_time);
    th.push_back(std::abs(rad2deg(r.final_theta_eps)));
    mn.push_back(r.final_manip);
  }
  return json{{"time_s", stats(t)}, {"final_theta_eps_deg", stats(th)}, {"final_manip", stats(mn)}};
}

json metrics_json(const TrajectoryMetrics& r) {
  return json{{"success", r.success},
              {"time_s", r.completion_time},
              {"final_theta_eps_deg", rad2deg(r.final_theta_eps)},
              {"final_manip", r.final_manip},
              {"cum_jerk", r.cumulative_jerk},
              {"failure_reason", r.failure_reason ? to_string(*r.failure_reason) : ""},
              {"damper_violations", r.damper_violations}};
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream f(p);
  if (!f) throw ConfigError("cannot write " + p.string());
  return f;
}

void verdict(const std::string& name, bool ok, const std::string& detail) {
  std::cout << name << ": " << (ok ? "OK" : "TREND FAILED") << " (" << detail << ")\n";
}

ScenarioOptions scenario_options(const RunConfig& c) {
  ScenarioOptions o;
  o.budget = c.budget;
  return o;
}

bool run_exp1(const KinematicModel& m, const RunConfig& c, Exp1 which, json& summary) {
  const std::string name = c.experiment;
  const Pose3 goal = exp1_goal(m, which);
  const WorldState start = make_world(m);
  ScenarioOptions opt = scenario_options(c);
  opt.record = true;

  std::vector<std::pair<std::string, ControllerKind>> kinds;
  if (c.controller != "sequential") kinds.emplace_back("holistic", ControllerKind::holistic);
  if (c.controller != "holistic") kinds.emplace_back("sequential", ControllerKind::sequential);

  std::map<std::string, TrajectoryMetrics> res;
  std::ofstream runs = open_out(fs::path(c.out) / (name + "_runs.csv"));
  bool header = true;
  for (const auto& [label, kind] : kinds) {
    const auto r = run_goal_scenario(m, start, goal, c.gains, parse_variant(c.jm), kind, opt);
    res[label] = r.metrics;
    std::ofstream traj = open_out(fs::path(c.out) / (name + "_" + label + "_trajectory.csv"));
    write_trajectory_csv(traj, r.trajectory);
    write_runs_csv(runs, name + "_" + label, c.seed, {r.metrics}, header);
    header = false;
    summary[label] = metrics_json(r.metrics);
  }

  bool ok = true;
  std::ostringstream d;
  for (const auto& [label, r] : res) {
    ok = ok && r.success;
    d << label << " " << (r.success ? fmt(r.completion_time) + " s" : "failed") << "; ";
  }
  if (res.count("holistic")) {
    const auto& h = res["holistic"];
    ok = ok && h.completion_time >= 2.5 && h.completion_time <= 12.0;
  }
  if (res.size() == 2) {
    const auto& h = res["holistic"];
    const auto& s = res["sequential"];
    const double ratio = s.completion_time / h.completion_time;
    summary["time_ratio"] = ratio;
    ok = ok && ratio >= 1.7 && h.cumulative_jerk < s.cumulative_jerk;
    d << "ratio " << fmt(ratio) << "; jerk " << fmt(h.cumulative_jerk) << " vs " << fmt(s.cumulative_jerk);
  }
  summary["trend_ok"] = ok;
  verdict(name, ok, d.str());
  return ok;
}

std::vector<GoalSample> sweep_goals(const KinematicModel& m, const RunConfig& c) {
  return sample_goals(c.seed, c.trials < 0 ? 1000 : c.trials, m);
}

void write_sweep(const RunConfig& c, const std::string& param, const std::vector<SweepCell>& cells,
                 json& summary) {
  std::ofstream t = open_out(fs::path(c.out) / (c.experiment + ".csv"));
  write_sweep_csv(t, param, cells);
  std::ofstream runs = open_out(fs::path(c.out) / (c.experiment + "_runs.csv"));
  bool header = true;
  json jc = json::array();
  for (const auto& cell : cells) {
    write_runs_csv(runs, c.experiment + "_" + cell.label, c.seed, cell.runs, header);
    header = false;
    jc.push_back(json{{param, cell.label},
                      {"trials", cell.trials},
                      {"failures", cell.failures},
                      {"mean_final_theta_eps_deg", cell.mean_final_theta_eps_deg},
                      {"mean_final_manip", cell.mean_final_manip},
                      {"damper_violations", cell.damper_violations},
                      {"successful", run_stats(cell.runs)}});
  }
  summary["cells"] = jc;
}

bool run_sweep_keps(const KinematicModel& m, const RunConfig& c, json& summary) {
  const auto goals = sweep_goals(m, c);
  std::vector<SweepCell> cells;
  for (const double k : {0.0, 0.1, 0.5, 1.0}) {
    ControllerGains g = c.gains;
    g.k_eps = k;
    cells.push_back(run_sweep_cell(m, goals, g, parse_variant(c.jm), fmt(k), scenario_options(c)));
  }
  write_sweep(c, "k_eps", cells, summary);
  bool dec = true;
  for (std::size_t i = 1; i < cells.size(); ++i)
    dec = dec && cells[i].mean_final_theta_eps_deg < cells[i - 1].mean_final_theta_eps_deg;
  const bool fail_order = cells[3].failures > cells[1].failures;
  const bool at_half = cells[2].mean_final_theta_eps_deg < 10.0;
  const bool ok = dec && fail_order && at_half;
  summary["trend_ok"] = ok;
  std::ostringstream d;
  for (const auto& cell : cells)
    d << "k=" << cell.label << " fail " << cell.failures << " theta " << fmt(cell.mean_final_theta_eps_deg)
      << "; ";
  verdict(c.experiment, ok, d.str());
  return ok;
}

bool run_sweep_jm(const KinematicModel& m, const RunConfig& c, json& summary) {
  const auto goals = sweep_goals(m, c);
  std::vector<SweepCell> cells;
  const std::vector<std::pair<std::string, ManipVariant>> variants = {
      {"zero", ManipVariant::zero},
      {"whole_platform", ManipVariant::whole_platform},
      {"arm_only", ManipVariant::arm_only}};
  for (const auto& [label, v] : variants)
    cells.push_back(run_sweep_cell(m, goals, c.gains, v, label, scenario_options(c)));
  write_sweep(c, "jm_variant", cells, summary);
  const auto& z = cells[0];
  const auto& w = cells[1];
  const auto& a = cells[2];
  const bool ok = a.failures < z.failures && a.failures < w.failures &&
                  a.mean_final_manip > z.mean_final_manip && a.mean_final_manip > w.mean_final_manip &&
                  a.mean_final_manip >= 2.0 * z.mean_final_manip;
  summary["trend_ok"] = ok;
  std::ostringstream d;
  for (const auto& cell : cells)
    d << cell.label << " fail " << cell.failures << " m " << fmt(cell.mean_final_manip) << "; ";
  verdict(c.experiment, ok, d.str());
  return ok;
}

bool run_pickplace(const KinematicModel& m, const RunConfig& c, json& summary) {
  const int n_runs = c.trials < 0 ? 10 : c.trials;
  const auto s = run_pick_place(m, c.seed, n_runs, c.objects, c.grasp_fail_p, PickPlaceConfig::standard(),
                                c.gains);
  std::ofstream f = open_out(fs::path(c.out) / "pickplace_runs.csv");
  f << "run,placements,attempts,failed_grasps,recovered_errors,unrecovered_errors,complete,sim_time_s,"
       "max_idle_gap_s,mean_grasp_time_s,mean_cycle_time_s\n";
  std::vector<double> grasp, cycle;
  for (std::size_t i = 0; i < s.runs.size(); ++i) {
    const auto& r = s.runs[i];
    f << i << ',' << r.placements << ',' << r.attempts << ',' << r.failed_grasps << ',' << r.recovered_errors
      << ',' << r.unrecovered_errors << ',' << (r.complete ? 1 : 0) << ',' << fmt(r.sim_time) << ','
      << fmt(r.max_idle_gap) << ',' << fmt(r.mean_grasp_time()) << ',' << fmt(r.mean_cycle_time()) << '\n';
    grasp.insert(grasp.end(), r.grasp_times.begin(), r.grasp_times.end());
    cycle.insert(cycle.end(), r.cycle_times.begin(), r.cycle_times.end());
  }
  const int objects = n_runs * c.objects;
  summary["objects"] = objects;
  summary["placements"] = s.placements;
  summary["attempts"] = s.attempts;
  summary["unrecovered_errors"] = s.unrecovered_errors;
  summary["incomplete_runs"] = s.incomplete;
  summary["max_idle_gap_s"] = s.max_idle_gap;
  summary["grasp_time_s"] = stats(grasp);
  summary["cycle_time_s"] = stats(cycle);
  // Attempt band scales with the object count.
  const bool ok = s.placements == objects && s.attempts >= objects && s.attempts <= objects * 14 / 10 &&
                  s.unrecovered_errors == 0 && s.incomplete == 0 && s.max_idle_gap <= 0.1;
  summary["trend_ok"] = ok;
  std::ostringstream d;
  d << s.placements << "/" << objects << " placed, " << s.attempts << " attempts, max idle "
    << fmt(s.max_idle_gap) << " s";
  verdict(c.experiment, ok, d.str());
  return ok;
}

bool run_custom(const KinematicModel& m, const RunConfig& c, json& summary) {
  const auto goals = sample_goals(c.seed, c.trials < 0 ? 1 : c.trials, m);
  const WorldState start = make_world(m);
  const ControllerKind kind = c.controller == "sequential" ? ControllerKind::sequential : ControllerKind::holistic;
  if (c.controller == "both") throw ConfigError("custom runs one controller at a time");
  const auto runs = parallel_map(static_cast<int>(goals.size()), [&](int i) {
    return run_goal_scenario(m, start, goals[static_cast<std::size_t>(i)].goal, c.gains, parse_variant(c.jm),
                             kind, scenario_options(c))
        .metrics;
  });
  std::ofstream f = open_out(fs::path(c.out) / "custom_runs.csv");
  write_runs_csv(f, "custom", c.seed, runs);
  int ok_count = 0;
  for (const auto& r : runs) ok_count += r.success ? 1 : 0;
  summary["trials"] = runs.size();
  summary["successes"] = ok_count;
  summary["successful"] = run_stats(runs);
  const bool ok = ok_count == static_cast<int>(runs.size());
  summary["trend_ok"] = ok;
  verdict("custom", ok, std::to_string(ok_count) + "/" + std::to_string(runs.size()) + " reached");
  return ok;
}

int run(const RunConfig& c) {
  c.gains.validate();
  if (c.budget <= 0.0) throw ConfigError("--budget must be positive");
  if (c.objects <= 0) throw ConfigError("--objects must be positive");
  if (c.trials == 0) throw ConfigError("--trials must be positive");
  parse_variant(c.jm);

  KinematicModel m;
  try {
    m = load_model(c.model_path);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
  std::error_code ec;
  fs::create_directories(c.out, ec);
  if (ec) throw ConfigError("cannot create output dir " + c.out + ": " + ec.message());

  json summary;
  summary["experiment"] = c.experiment;
  summary["model"] = m.name;
  summary["seed"] = c.seed;
  summary["gains"] = json{{"k_eps", c.gains.k_eps},
                          {"beta", c.gains.beta},
                          {"eta", c.gains.eta},
                          {"rho_i_deg", rad2deg(c.gains.rho_i)},
                          {"rho_s_deg", rad2deg(c.gains.rho_s)},
                          {"lambda_arm", c.gains.lambda_arm},
                          {"jm", c.jm}};
  json result;
  bool ok = false;
  const std::string& e = c.experiment;
  if (e == "exp1a") ok = run_exp1(m, c, Exp1::a, result);
  else if (e == "exp1b") ok = run_exp1(m, c, Exp1::b, result);
  else if (e == "exp1c") ok = run_exp1(m, c, Exp1::c, result);
  else if (e == "sweep_keps") ok = run_sweep_keps(m, c, result);
  else if (e == "sweep_jm") ok = run_sweep_jm(m, c, result);
  else if (e == "pickplace") ok = run_pickplace(m, c, result);
  else if (e == "custom") ok = run_custom(m, c, result);
  else throw ConfigError("unknown experiment '" + e + "'");
  summary["result"] = result;
  std::ofstream js = open_out(fs::path(c.out) / "summary.json");
  js << summary.dump(2) << '\n';
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Holistic mobile manipulator controller: experiments and artefacts"};
  app.require_subcommand(1);
  RunConfig c;
  double rho_i_deg = rad2deg(c.gains.rho_i);
  double rho_s_deg = rad2deg(c.gains.rho_s);

  auto* run_cmd = app.add_subcommand("run", "Run one experiment and write CSV/JSON artefacts");
  run_cmd->add_option("--model", c.model_path, "Model file")->capture_default_str();
  run_cmd->add_option("--experiment", c.experiment, "Experiment to run")
      ->required()
      ->check(CLI::IsMember({"exp1a", "exp1b", "exp1c", "sweep_keps", "sweep_jm", "pickplace", "custom"}));
  run_cmd->add_option("--controller", c.controller, "Controller for goal scenarios")
      ->check(CLI::IsMember({"holistic", "sequential", "both"}))
      ->capture_default_str();
  run_cmd->add_option("--seed", c.seed, "Seed for goal sampling and grasp outcomes")->capture_default_str();
  run_cmd->add_option("--out", c.out, "Output directory")->capture_default_str();
  run_cmd->add_option("--keps", c.gains.k_eps, "Base orientation gain")->capture_default_str();
  run_cmd->add_option("--beta", c.gains.beta, "Servo gain")->capture_default_str();
  run_cmd->add_option("--eta", c.gains.eta, "Damper gain")->capture_default_str();
  run_cmd->add_option("--rho-i", rho_i_deg, "Damper influence distance (deg)")->capture_default_str();
  run_cmd->add_option("--rho-s", rho_s_deg, "Damper stopping distance (deg)")->capture_default_str();
  run_cmd->add_option("--jm", c.jm, "Manipulability Jacobian variant")
      ->check(CLI::IsMember({"arm_only", "whole", "zero"}))
      ->capture_default_str();
  run_cmd->add_option("--trials", c.trials, "Goals per sweep cell, goals for custom, or pick-place runs");
  run_cmd->add_option("--budget", c.budget, "Per-goal time budget (s)")->capture_default_str();
  run_cmd->add_option("--objects", c.objects, "Objects per pick-place run")->capture_default_str();
  run_cmd->add_option("--grasp-fail-p", c.grasp_fail_p, "Scripted grasp failure probability")
      ->check(CLI::Range(0.0, 0.99))
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  c.gains.rho_i = deg2rad(rho_i_deg);
  c.gains.rho_s = deg2rad(rho_s_deg);
  try {
    return run(c);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "experiment failed: " << e.what() << '\n';
    return 1;
  }
}
