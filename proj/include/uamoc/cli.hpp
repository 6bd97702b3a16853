#pragma once

// Command implementations behind tools/uamoc: to, mpc, montecarlo, validate.
// Exit codes: 0 success, 1 invalid input, 2 solver or plant failure,
// 3 campaign with fewer than 90% completed runs.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>

#include "uamoc/mission_io.hpp"

namespace uamoc::cli {

enum ExitCode { kOk = 0, kInvalidInput = 1, kSolverFailure = 2, kCampaignFailure = 3 };

enum class LogLevel { Error = 0, Warn = 1, Info = 2, Debug = 3 };

class Logger {
 public:
  Logger(std::ostream& os, LogLevel level) : os_(os), level_(level) {}

  /// Level from UAMOC_LOG_LEVEL (error, warn, info, debug); info by default.
  static LogLevel level_from_env() {
    const char* v = std::getenv("UAMOC_LOG_LEVEL");
    if (!v) return LogLevel::Info;
    const std::string s(v);
    if (s == "error") return LogLevel::Error;
    if (s == "warn") return LogLevel::Warn;
    if (s == "debug") return LogLevel::Debug;
    return LogLevel::Info;
  }

  void error(const std::string& m) const { log(LogLevel::Error, "error", m); }
  void warn(const std::string& m) const { log(LogLevel::Warn, "warning", m); }
  void info(const std::string& m) const { log(LogLevel::Info, "info", m); }
  void debug(const std::string& m) const { log(LogLevel::Debug, "debug", m); }

 private:
  void log(LogLevel l, const char* tag, const std::string& m) const {
    if (int(l) <= int(level_)) os_ << tag << ": " << m << "\n";
  }
  std::ostream& os_;
  LogLevel level_;
};

struct Options {
  std::string mission;
  std::string model;
  std::string controller;
  std::string reference;
  std::string out;
  bool generate = false;
  std::optional<unsigned long long> seed;
  std::optional<std::size_t> runs;
  std::optional<double> dt_override;
  std::vector<std::string> paths;
};

// ---------------------------------------------------------------------------
// Trajectory files

struct Trajectory {
  std::vector<UamState> X;
  std::vector<VectorX> U;
  double dt = 0.0;
};

/// Reads a file written by write_trajectory_csv.
inline Trajectory read_trajectory_csv(std::istream& is, const RobotModel& model, const std::string& source) {
  const std::size_t nx = state_columns(model).size();
  const std::size_t cols = 1 + nx + std::size_t(model.nu());
  std::string line;
  if (!std::getline(is, line)) throw ParseError(source + ": empty trajectory file");
  if (std::size_t(std::count(line.begin(), line.end(), ',')) + 1 != cols) {
    throw ParseError(source + ":1: expected " + std::to_string(cols) + " columns for model '" + model.name + "'");
  }
  Trajectory tr;
  std::vector<double> times;
  std::size_t lineno = 1;
  const Eigen::Index nj = model.n_joints();
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<double> v;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        v.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw ParseError(source + ":" + std::to_string(lineno) + ": not a number '" + cell + "'");
      }
    }
    if (v.size() != cols) throw ParseError(source + ":" + std::to_string(lineno) + ": wrong column count");
    times.push_back(v[0]);
    UamState x = model.neutral_state();
    const Quaternion q(v[4], v[5], v[6], v[7]);
    x.pose = Pose(q.normalized(), Vector3(v[1], v[2], v[3]));
    for (Eigen::Index j = 0; j < nj; ++j) x.joints(j) = v[std::size_t(8 + j)];
    for (Eigen::Index j = 0; j < model.nv(); ++j) x.velocity(j) = v[std::size_t(8 + nj + j)];
    tr.X.push_back(x);
    VectorX u(model.nu());
    for (Eigen::Index j = 0; j < model.nu(); ++j) u(j) = v[1 + nx + std::size_t(j)];
    tr.U.push_back(u);
  }
  if (tr.X.size() < 2) throw ParseError(source + ": trajectory needs at least two rows");
  tr.U.pop_back();
  tr.dt = times[1] - times[0];
  for (std::size_t k = 1; k < times.size(); ++k) {
    if (std::abs(times[k] - times[k - 1] - tr.dt) > 1e-9) throw ParseError(source + ": rows are not evenly spaced");
  }
  return tr;
}

// ---------------------------------------------------------------------------
// Offline solve

struct OfflineSolve {
  OcpProblem problem;
  SolverResult<UamState> result;
};

/// Cold-started trajectory optimization of a document's mission at node period dt.
inline OfflineSolve solve_offline(const MissionDocument& doc, double dt) {
  Mission mission = doc.mission;
  mission.dt = dt;
  OfflineSolve out;
  out.problem = build_problem(mission, doc.models, doc.initial_state);
  const auto [X, U] = hover_guess(out.problem);
  UamOcp ocp(out.problem);
  out.result = solve_or_throw(ocp, X, U, doc.solver);
  return out;
}

/// Reference period used by --generate: an explicit override, the document
/// node period when finer than the controller's, else half the controller's.
inline double reference_period(const MissionDocument& doc, const MpcConfig& cfg, std::optional<double> override_dt) {
  if (override_dt) return *override_dt;
  if (doc.mission.dt < cfg.dt - 1e-12) return doc.mission.dt;
  return 0.5 * cfg.dt;
}

inline std::filesystem::path sibling(const std::filesystem::path& out, const std::string& suffix) {
  std::filesystem::path p = out;
  p.replace_extension();
  return p.string() + suffix;
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ValidationError(path.string() + ": cannot write");
  f << content;
}

// ---------------------------------------------------------------------------
// Commands

inline int cmd_to(const Options& opt, const Logger& log, std::ostream& out) {
  const MissionDocument doc = load_mission_file(opt.mission, opt.model);
  const double dt = opt.dt_override.value_or(doc.mission.dt);
  const auto t0 = std::chrono::steady_clock::now();
  const OfflineSolve s = solve_offline(doc, dt);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const auto& r = s.result;
  std::ostringstream csv;
  write_trajectory_csv(csv, r.X, r.U, dt, doc.model());
  const std::string path = opt.out.empty() ? doc.mission.name + ".csv" : opt.out;
  write_file(path, csv.str());

  const std::size_t N = s.problem.n_nodes();
  const double per_iter = r.iterations > 0 ? secs / r.iterations : 0.0;
  nlohmann::ordered_json rep;
  rep["mission"] = doc.mission.name;
  rep["nodes"] = N;
  rep["dt"] = dt;
  rep["duration"] = doc.mission.total_duration();
  rep["integrator"] = doc.mission.integrator == Integrator::Rk4 ? "rk4" : "euler";
  rep["iterations"] = r.iterations;
  rep["converged"] = r.converged;
  rep["stop_reason"] = r.stop_reason;
  rep["cost"] = r.cost;
  rep["gap_inf_norm"] = r.gap_inf_norm;
  rep["grad_inf_norm"] = r.grad_inf_norm;
  rep["solve_seconds"] = secs;
  rep["ms_per_iteration"] = 1e3 * per_iter;
  rep["us_per_node"] = 1e6 * per_iter / double(N);
  rep["ns_per_control_cubed"] = 1e9 * per_iter / double(N) / std::pow(double(doc.model().nu()), 3);
  write_file(sibling(path, ".report.json"), rep.dump(2) + "\n");
  out << "mission " << doc.mission.name << ": N = " << N << ", iterations = " << r.iterations
      << ", cost = " << r.cost << ", converged = " << (r.converged ? "yes" : "no") << ", time = " << secs << " s\n";
  if (!r.converged) log.warn("solver stopped before convergence: " + r.stop_reason);
  return kOk;
}

struct MpcSetup {
  MissionDocument doc;
  MpcConfig cfg;
  SimConfig sim;
  std::optional<ReferenceTrajectory> reference;
};

inline MpcSetup prepare_mpc(const Options& opt, const Logger& log) {
  MpcSetup s{load_mission_file(opt.mission, opt.model), {}, {}, {}};
  s.cfg = s.doc.controller.value_or(MpcConfig{});
  if (!opt.controller.empty()) s.cfg.controller = controller_from_string(opt.controller);
  if (s.doc.sim) {
    s.sim = *s.doc.sim;
  } else {
    s.sim.duration = s.doc.mission.total_duration() + 2.0;
  }
  if (opt.seed) s.sim.seed = *opt.seed;
  s.sim.validate(s.cfg.dt);
  if (s.cfg.controller == ControllerType::Weighted) {
    if (!opt.reference.empty() || opt.generate) log.warn("weighted MPC does not use a reference; ignoring it");
    return s;
  }
  if (!opt.reference.empty()) {
    std::ifstream f(opt.reference);
    if (!f) throw ParseError(opt.reference + ": cannot open file");
    Trajectory tr = read_trajectory_csv(f, s.doc.model(), opt.reference);
    if (tr.dt > s.cfg.dt + 1e-12) throw ValidationError("reference period must not exceed the controller dt");
    s.reference = make_reference(std::move(tr.X), std::move(tr.U), tr.dt);
  } else if (opt.generate) {
    const double dt = reference_period(s.doc, s.cfg, opt.dt_override);
    log.info("generating reference at dt = " + detail::num(dt) + " s");
    OfflineSolve r = solve_offline(s.doc, dt);
    s.reference = make_reference(std::move(r.result.X), std::move(r.result.U), dt);
  } else {
    throw ValidationError(std::string(to_string(s.cfg.controller)) + " MPC needs --reference or --generate");
  }
  return s;
}

inline std::string task_rows(const std::vector<TaskError>& tasks) {
  std::ostringstream o;
  o << "task,time,position_error,orientation_error\n";
  for (const auto& t : tasks) {
    o << t.task << ',';
    detail::write_number(o, t.time);
    o << ',';
    detail::write_number(o, t.position);
    o << ',';
    detail::write_number(o, t.orientation);
    o << '\n';
  }
  return o.str();
}

inline int cmd_mpc(const Options& opt, const Logger& log, std::ostream& out) {
  const MpcSetup s = prepare_mpc(opt, log);
  const SimLog sim = run_closed_loop(s.doc.model(), s.doc.mission, s.reference ? &*s.reference : nullptr, s.cfg,
                                     s.sim, s.doc.initial_state);
  std::ostringstream csv;
  write_csv(csv, sim, s.doc.model());
  const std::string path = opt.out.empty() ? s.doc.mission.name + "_" + to_string(s.cfg.controller) + ".csv" : opt.out;
  write_file(path, csv.str());
  if (sim.diverged) {
    log.error(sim.failure);
    return kSolverFailure;
  }
  write_file(sibling(path, ".tasks.csv"), task_rows(sim.tasks));
  out << task_rows(sim.tasks);
  std::vector<double> iters;
  for (const auto& r : sim.records) {
    if (r.iterations > 0) iters.push_back(r.iterations);
  }
  out << "mpc steps " << sim.mpc_steps << ", failures " << sim.solver_failures << ", wall solve mean "
      << sim.wall_solve_ms_total / std::max(1, sim.mpc_steps) << " ms, max " << sim.wall_solve_ms_max << " ms\n";
  if (sim.solver_failures > 0) log.warn(std::to_string(sim.solver_failures) + " horizon solves failed");
  return kOk;
}

// ---------------------------------------------------------------------------
// Campaigns
//
//   campaign: four-displacement-disturbances
//   mission: four-displacement.yaml
//   controllers: [rail, carrot]
//   runs: 50
//   seed: 1
//   sim_duration: 6.5            # optional; by default each window stops just after its task
//   sampling: {duration: {mean: 0.5, std: 0.25, min: 0.05}, force: {mean: 8, std: 2}, direction: [1, 1, 0]}
//   windows:
//     - {name: before, start: [3.0, 3.2], task: wp2}

struct CampaignWindow {
  std::string name;
  double start_min = 0.0, start_max = 0.0;
  std::string task;
};

struct Campaign {
  std::string name;
  std::filesystem::path mission_path;
  std::vector<ControllerType> controllers;
  std::size_t runs = 1;
  unsigned long long seed = 0;
  std::optional<double> sim_duration;
  DisturbanceSampling sampling;
  std::vector<CampaignWindow> windows;
};

inline Campaign load_campaign(const std::string& text, const std::string& source, const std::filesystem::path& base_dir) {
  const YAML::Node doc = yamlio::parse(text, source);
  const yamlio::Reader rd(source);
  detail::Violations v;
  Campaign c;
  v.check([&] { c.name = rd.get<std::string>(doc, "campaign", "campaign"); });
  v.check([&] { c.mission_path = detail::resolve(base_dir, rd.get<std::string>(doc, "mission", "campaign")); });
  v.check([&] {
    const YAML::Node cs = rd.require(doc, "controllers", "campaign");
    for (std::size_t i = 0; i < cs.size(); ++i) {
      try {
        c.controllers.push_back(controller_from_string(rd.as<std::string>(cs[i], "controllers")));
      } catch (const ValidationError& e) {
        throw ValidationError(rd.at(cs[i], "controllers[" + std::to_string(i) + "]") + ": " + e.what());
      }
    }
  });
  v.check([&] {
    const int runs = rd.get<int>(doc, "runs", "campaign");
    if (runs < 1) throw ValidationError(rd.at(doc["runs"], "runs") + ": must be >= 1");
    c.runs = std::size_t(runs);
  });
  v.check([&] { c.seed = rd.get_or<unsigned long long>(doc, "seed", "campaign", 0); });
  v.check([&] {
    if (doc["sim_duration"]) c.sim_duration = rd.get<double>(doc, "sim_duration", "campaign");
  });
  v.check([&] {
    const YAML::Node s = rd.require(doc, "sampling", "campaign");
    if (s["duration"]) {
      c.sampling.duration_mean = rd.get<double>(s["duration"], "mean", "sampling.duration");
      c.sampling.duration_std = rd.get<double>(s["duration"], "std", "sampling.duration");
      c.sampling.duration_min = rd.get_or<double>(s["duration"], "min", "sampling.duration", c.sampling.duration_min);
    }
    if (s["force"]) {
      c.sampling.force_mean = rd.get<double>(s["force"], "mean", "sampling.force");
      c.sampling.force_std = rd.get<double>(s["force"], "std", "sampling.force");
    }
    c.sampling.direction = rd.vec3_or(s, "direction", "sampling", c.sampling.direction);
    if (c.sampling.direction.norm() < 1e-12) throw ValidationError(rd.at(s, "sampling.direction") + ": zero vector");
    if (c.sampling.duration_std < 0.0 || c.sampling.force_std < 0.0) {
      throw ValidationError(rd.at(s, "sampling") + ": standard deviations must be >= 0");
    }
  });
  v.check([&] {
    const YAML::Node ws = rd.require(doc, "windows", "campaign");
    if (!ws.IsSequence() || ws.size() == 0) throw ValidationError(rd.at(ws, "windows") + ": expected a non-empty list");
    for (std::size_t i = 0; i < ws.size(); ++i) {
      const std::string p = "windows[" + std::to_string(i) + "]";
      CampaignWindow w;
      w.name = rd.get<std::string>(ws[i], "name", p);
      const VectorX st = rd.vec(rd.require(ws[i], "start", p), p + ".start", 2);
      w.start_min = st(0);
      w.start_max = st(1);
      if (w.start_max < w.start_min) throw ValidationError(rd.at(ws[i], p + ".start") + ": range is reversed");
      w.task = rd.get<std::string>(ws[i], "task", p);
      c.windows.push_back(w);
    }
  });
  v.raise(source + ": invalid campaign document");
  return c;
}

inline Campaign load_campaign_file(const std::filesystem::path& path) {
  return load_campaign(yamlio::read_file(path), path.string(), path.parent_path());
}

inline bool is_campaign(const std::filesystem::path& path) {
  const YAML::Node doc = yamlio::parse(yamlio::read_file(path), path.string());
  return doc.IsMap() && doc["campaign"];
}

struct CampaignOutcome {
  nlohmann::ordered_json summary;
  std::size_t total = 0;
  std::size_t completed = 0;
};

/// Runs every controller over every window. The reference is solved once at
/// the controllers' reference period; `run_logs` receives each run's CSV.
inline CampaignOutcome run_campaign(const Campaign& c, const Options& opt, const Logger& log,
                                    const std::function<void(const std::string&, const SimLog&)>& run_logs = {}) {
  const MissionDocument doc = load_mission_file(c.mission_path, opt.model);
  const RobotModel& model = doc.model();
  MpcConfig base_cfg = doc.controller.value_or(MpcConfig{});
  SimConfig sim = doc.sim.value_or(SimConfig{});
  if (c.sim_duration) sim.duration = *c.sim_duration;
  const std::size_t runs = opt.runs.value_or(c.runs);
  const unsigned long long seed = opt.seed.value_or(c.seed);

  std::optional<ReferenceTrajectory> ref;
  const bool needs_ref = std::any_of(c.controllers.begin(), c.controllers.end(),
                                     [](ControllerType t) { return t != ControllerType::Weighted; });
  if (needs_ref) {
    const double dt = reference_period(doc, base_cfg, opt.dt_override);
    log.info("generating reference at dt = " + detail::num(dt) + " s");
    OfflineSolve r = solve_offline(doc, dt);
    ref = make_reference(std::move(r.result.X), std::move(r.result.U), dt);
  }
  std::map<std::string, double> task_time;
  for (const auto& t : detail::mission_tasks(doc.mission)) task_time[doc.mission.phases[t.phase].name] = t.time;
  for (const auto& w : c.windows) {
    if (!task_time.count(w.task)) throw ValidationError("campaign window '" + w.name + "' names unknown task '" + w.task + "'");
  }

  CampaignOutcome out;
  auto& sm = out.summary;
  sm["campaign"] = c.name;
  sm["mission"] = doc.mission.name;
  sm["seed"] = seed;
  sm["runs_per_window"] = runs;
  nlohmann::ordered_json reference_errors = nlohmann::ordered_json::object();
  if (ref) {
    for (const auto& t : detail::mission_tasks(doc.mission)) {
      const auto [p, o] = task_pose_error(model, doc.mission.phases[t.phase].costs, reference_at(*ref, t.time).first);
      reference_errors[doc.mission.phases[t.phase].name] = {{"position", p}, {"orientation", o}};
    }
  }
  sm["reference_task_errors"] = reference_errors;
  sm["aggregates"] = nlohmann::ordered_json::array();
  sm["runs"] = nlohmann::ordered_json::array();

  for (ControllerType ct : c.controllers) {
    MpcConfig cfg = base_cfg;
    cfg.controller = ct;
    for (std::size_t wi = 0; wi < c.windows.size(); ++wi) {
      const CampaignWindow& w = c.windows[wi];
      DisturbanceSampling sampling = c.sampling;
      sampling.start_min = w.start_min;
      sampling.start_max = w.start_max;
      SimConfig window_sim = sim;
      if (!c.sim_duration) {
        window_sim.duration = sim.estimate_dt * std::ceil(task_time[w.task] / sim.estimate_dt - 1e-9) + sim.estimate_dt;
      }
      RunSpec spec{&model, &doc.mission, ct == ControllerType::Weighted ? nullptr : &*ref, cfg, window_sim,
                   doc.initial_state};
      std::vector<SimLog> logs;
      // windows draw from disjoint seed streams
      const unsigned long long window_seed = seed * 1000003ULL + wi;
      const auto summaries = monte_carlo(spec, runs, sampling, window_seed, &logs);
      std::vector<double> pos, ori;
      for (std::size_t r = 0; r < summaries.size(); ++r) {
        const RunSummary& s = summaries[r];
        ++out.total;
        nlohmann::ordered_json jr;
        jr["controller"] = to_string(ct);
        jr["window"] = w.name;
        jr["run"] = s.run;
        jr["disturbance"] = {{"start", s.disturbance.start},
                             {"duration", s.disturbance.duration},
                             {"force", {s.disturbance.force.x(), s.disturbance.force.y(), s.disturbance.force.z()}}};
        jr["ok"] = s.ok;
        if (!s.ok) jr["failure"] = s.failure;
        nlohmann::ordered_json tasks = nlohmann::ordered_json::object();
        for (const auto& t : s.tasks) {
          tasks[t.task] = {{"position", t.position}, {"orientation", t.orientation}};
          if (t.task == w.task) {
            pos.push_back(t.position);
            ori.push_back(t.orientation);
          }
        }
        jr["tasks"] = tasks;
        sm["runs"].push_back(jr);
        if (s.ok) ++out.completed;
        if (run_logs && r < logs.size()) {
          run_logs(std::string(to_string(ct)) + "_" + w.name + "_" + std::to_string(r), logs[r]);
        }
        if (!s.ok) log.warn(std::string(to_string(ct)) + " " + w.name + " run " + std::to_string(r) + ": " + s.failure);
      }
      nlohmann::ordered_json agg;
      agg["controller"] = to_string(ct);
      agg["window"] = w.name;
      agg["task"] = w.task;
      agg["completed"] = pos.size();
      if (!pos.empty()) {
        const Quartiles qp = quartiles(pos), qo = quartiles(ori);
        agg["position"] = {{"q1", qp.q1}, {"median", qp.median}, {"q3", qp.q3}};
        agg["orientation"] = {{"q1", qo.q1}, {"median", qo.median}, {"q3", qo.q3}};
      }
      sm["aggregates"].push_back(agg);
    }
  }
  return out;
}

inline int cmd_montecarlo(const Options& opt, const Logger& log, std::ostream& out) {
  const Campaign c = load_campaign_file(opt.mission);
  const std::filesystem::path dir = opt.out.empty() ? std::filesystem::path(c.name) : std::filesystem::path(opt.out);
  std::filesystem::create_directories(dir / "runs");
  const MissionDocument doc = load_mission_file(c.mission_path, opt.model);
  const CampaignOutcome o = run_campaign(c, opt, log, [&](const std::string& name, const SimLog& sim) {
    std::ostringstream csv;
    write_csv(csv, sim, doc.model());
    write_file(dir / "runs" / (name + ".csv"), csv.str());
  });
  write_file(dir / "summary.json", o.summary.dump(2) + "\n");
  for (const auto& a : o.summary["aggregates"]) {
    out << a["controller"].get<std::string>() << " " << a["window"].get<std::string>() << " ("
        << a["task"].get<std::string>() << "): " << a["completed"].get<std::size_t>() << " runs";
    if (a.contains("position")) {
      out << ", median position error " << a["position"]["median"].get<double>() << " m, median orientation error "
          << a["orientation"]["median"].get<double>() << " rad";
    }
    out << "\n";
  }
  out << o.completed << "/" << o.total << " runs completed\n";
  return double(o.completed) >= 0.9 * double(o.total) ? kOk : kCampaignFailure;
}

inline int cmd_validate(const Options& opt, const Logger& log, std::ostream& out) {
  int code = kOk;
  for (const auto& p : opt.paths) {
    try {
      if (is_campaign(p)) {
        const Campaign c = load_campaign_file(p);
        (void)load_mission_file(c.mission_path, opt.model);
      } else {
        const MissionDocument d = load_mission_file(p, opt.model);
        (void)node_count(d.mission);
      }
      out << p << ": ok\n";
    } catch (const Error& e) {
      log.error(std::string(e.what()));
      code = kInvalidInput;
    }
  }
  return code;
}

/// Parses arguments and dispatches. Errors map onto the documented exit codes.
inline int run(int argc, char** argv, std::ostream& out, std::ostream& err) {
  Logger log(err, Logger::level_from_env());
  CLI::App app{"Optimal control and MPC for aerial manipulators", "uamoc"};
  app.require_subcommand(1);
  Options opt;
  double dt_override = 0.0;
  unsigned long long seed = 0;
  std::size_t runs = 0;

  auto common = [&](CLI::App* c) {
    c->add_option("--model", opt.model, "Model file replacing the mission's model");
    c->add_option("--out", opt.out, "Output file or directory");
  };
  auto* to = app.add_subcommand("to", "Solve a mission offline and write the trajectory");
  to->add_option("--mission", opt.mission, "Mission file")->required();
  to->add_option("--dt-override", dt_override, "Node period replacing the mission's dt");
  common(to);

  auto* mpc = app.add_subcommand("mpc", "Run a closed-loop MPC simulation");
  mpc->add_option("--mission", opt.mission, "Mission file")->required();
  mpc->add_option("--controller", opt.controller, "weighted, rail or carrot")
      ->check(CLI::IsMember({"weighted", "rail", "carrot"}));
  mpc->add_option("--reference", opt.reference, "Reference trajectory CSV written by 'to'");
  mpc->add_flag("--generate", opt.generate, "Solve the reference before running");
  mpc->add_option("--seed", seed, "Simulation seed");
  mpc->add_option("--dt-override", dt_override, "Reference period used by --generate");
  common(mpc);

  auto* mc = app.add_subcommand("montecarlo", "Run a disturbance campaign");
  mc->add_option("--mission", opt.mission, "Campaign file")->required();
  mc->add_option("--seed", seed, "Campaign seed");
  mc->add_option("--runs", runs, "Runs per controller and window");
  mc->add_option("--dt-override", dt_override, "Reference period");
  common(mc);

  auto* val = app.add_subcommand("validate", "Check mission or campaign files without solving");
  val->add_option("paths", opt.paths, "Files to check")->required();
  val->add_option("--model", opt.model, "Model file replacing the mission's model");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kInvalidInput;
  }
  auto given = [](CLI::App* c, const char* name) { return c->count(name) > 0; };
  for (CLI::App* c : {to, mpc, mc}) {
    if (!c->parsed()) continue;
    if (given(c, "--dt-override")) opt.dt_override = dt_override;
    if (c != to && given(c, "--seed")) opt.seed = seed;
    if (c == mc && given(c, "--runs")) opt.runs = runs;
  }
  try {
    if (opt.dt_override && !(*opt.dt_override > 0.0)) throw ValidationError("--dt-override must be > 0");
    if (opt.runs && *opt.runs < 1) throw ValidationError("--runs must be >= 1");
    if (to->parsed()) return cmd_to(opt, log, out);
    if (mpc->parsed()) return cmd_mpc(opt, log, out);
    if (mc->parsed()) return cmd_montecarlo(opt, log, out);
    return cmd_validate(opt, log, out);
  } catch (const NoProgress& e) {
    log.error(std::string("NoProgress: ") + e.what());
    return kSolverFailure;
  } catch (const SolverFailure& e) {
    log.error(std::string("SolverFailure: ") + e.what());
    return kSolverFailure;
  } catch (const NonFiniteRollout& e) {
    log.error(std::string("NonFiniteRollout: ") + e.what());
    return kSolverFailure;
  } catch (const Error& e) {
    log.error(e.kind() + ": " + e.what());
    return kInvalidInput;
  }
}

}  // namespace uamoc::cli
