#pragma once

// Deterministic closed-loop simulation: a fine-step RK4 plant, controller
// ticks at the estimate rate, step disturbances, CSV logs and Monte Carlo
// campaigns.

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "uamoc/mpc.hpp"

namespace uamoc {

struct DisturbanceSpec {
  double start = 0.0;
  double duration = 0.0;
  Vector3 force = Vector3::Zero();  // world frame, applied at the base COM

  bool active(double t) const { return t >= start - 1e-12 && t < start + duration - 1e-12; }
};

struct SimConfig {
  double plant_dt = 0.0005;
  double estimate_dt = 0.0025;
  double duration = 5.0;
  unsigned long long seed = 0;
  std::vector<DisturbanceSpec> disturbances;
  double estimate_noise = 0.0;  // σ of additive tangent-space noise on the estimate

  void validate(double controller_dt) const {
    if (!(duration > 0.0)) throw ValidationError("sim.duration must be > 0");
    if (!(plant_dt > 0.0) || plant_dt > estimate_dt + 1e-15 || estimate_dt > controller_dt + 1e-15) {
      throw ValidationError("sim needs plant_dt <= estimate_dt <= controller dt");
    }
    const double a = estimate_dt / plant_dt;
    const double b = controller_dt / estimate_dt;
    if (std::abs(a - std::round(a)) > 1e-9 || std::abs(b - std::round(b)) > 1e-9) {
      throw ValidationError("sim.estimate_dt must be a multiple of sim.plant_dt and divide the controller dt");
    }
    for (std::size_t i = 0; i < disturbances.size(); ++i) {
      if (!(disturbances[i].duration > 0.0)) {
        throw ValidationError("sim.disturbances[" + std::to_string(i) + "].duration must be > 0");
      }
    }
  }
};

struct SimRecord {
  double t = 0.0;
  UamState x;
  VectorX u;
  double solve_ms = 0.0;  // simulated controller compute time
  int iterations = 0;
  double task_err_pos = 0.0;
  double task_err_ori = 0.0;
  bool disturbed = false;
};

struct TaskError {
  std::string task;
  double time = 0.0;
  double position = 0.0;
  double orientation = 0.0;
};

struct SimLog {
  std::vector<SimRecord> records;
  std::vector<TaskError> tasks;
  double wall_solve_ms_total = 0.0;
  double wall_solve_ms_max = 0.0;
  int mpc_steps = 0;
  int solver_failures = 0;
  bool diverged = false;
  std::string failure;
};

// ---------------------------------------------------------------------------
// Task errors

/// Position and orientation error norms of a task's pose objective at x. The
/// objective is the task's first frame residual, or the base pose of its
/// state residual when it has no frame residual.
inline std::pair<double, double> task_pose_error(const RobotModel& model, const CostStack& task, const UamState& x) {
  for (const auto& r : task.residuals) {
    if (r.kind != ResidualKind::FramePose && r.kind != ResidualKind::FramePosition &&
        r.kind != ResidualKind::FrameOrientation) {
      continue;
    }
    const Pose M = frame_placement(model, x, r.frame);
    const double pos = r.kind == ResidualKind::FrameOrientation ? 0.0 : (r.pose_target.translation() - M.translation()).norm();
    const double ori = r.kind == ResidualKind::FramePosition
                           ? 0.0
                           : log_so3(M.quaternion().conjugate() * r.pose_target.quaternion()).norm();
    return {pos, ori};
  }
  for (const auto& r : task.residuals) {
    if (r.kind != ResidualKind::State) continue;
    const double pos = r.blocks.position ? (r.state_target.pose.translation() - x.pose.translation()).norm() : 0.0;
    const double ori =
        r.blocks.orientation ? log_so3(x.pose.quaternion().conjugate() * r.state_target.pose.quaternion()).norm() : 0.0;
    return {pos, ori};
  }
  return {0.0, 0.0};
}

/// Errors of every task phase at its mission time, from the log record
/// closest to that time. With `covered_only`, tasks past the log end are skipped.
inline std::vector<TaskError> task_error(const SimLog& log, const Mission& mission, const RobotModel& model,
                                         bool covered_only = false) {
  std::vector<TaskError> out;
  if (log.records.empty()) throw TaskOutsideLog("empty log");
  const double spacing = log.records.size() > 1 ? log.records[1].t - log.records[0].t : 0.0;
  for (const auto& t : task_instants(mission)) {
    if (mission.phases[t.phase].kind != PhaseKind::Task) continue;
    if (covered_only && t.time > log.records.back().t + 0.5 * spacing + 1e-9) continue;
    auto it = std::lower_bound(log.records.begin(), log.records.end(), t.time - 1e-9,
                               [](const SimRecord& r, double v) { return r.t < v; });
    if (it == log.records.end() || std::abs(it->t - t.time) > 0.5 * spacing + 1e-9) {
      throw TaskOutsideLog("task '" + mission.phases[t.phase].name + "' at t = " + std::to_string(t.time) +
                           " s is not covered by the log");
    }
    const auto [p, o] = task_pose_error(model, mission.phases[t.phase].costs, it->x);
    out.push_back({mission.phases[t.phase].name, t.time, p, o});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Closed loop

/// Runs the plant under the given controller. Every estimate tick the
/// controller returns a control: a fresh horizon solve on controller-dt
/// boundaries, the feedback policy in between. Controls are held between ticks.
inline SimLog run_closed_loop(const RobotModel& model, const Mission& mission, const ReferenceTrajectory* reference,
                              const MpcConfig& mpc, const SimConfig& sim, const UamState& x0) {
  sim.validate(mpc.dt);
  model.check_state(x0);
  MpcController ctrl(model, mpc, &mission, reference);
  const long plant_per_tick = std::lround(sim.estimate_dt / sim.plant_dt);
  const long ticks_per_mpc = std::lround(mpc.dt / sim.estimate_dt);
  const long n_ticks = std::lround(sim.duration / sim.estimate_dt);
  const auto tasks = detail::mission_tasks(mission);
  std::mt19937_64 noise_rng(sim.seed);
  std::normal_distribution<double> noise(0.0, 1.0);

  SimLog log;
  UamState x = x0;
  VectorX u = model.hover_control();
  double activation = -1.0;
  for (long i = 0; i <= n_ticks; ++i) {
    const double t = double(i) * sim.estimate_dt;
    UamState est = x;
    if (sim.estimate_noise > 0.0) {
      VectorX n(model.ndx());
      for (Eigen::Index j = 0; j < n.size(); ++j) n(j) = sim.estimate_noise * noise(noise_rng);
      est = state_oplus(x, n);
    }
    SimRecord rec;
    rec.t = t;
    if (i % ticks_per_mpc == 0) {
      const MpcOutput out = ctrl.mpc_step(est, t);
      ++log.mpc_steps;
      log.wall_solve_ms_total += out.diagnostics.solve_ms;
      log.wall_solve_ms_max = std::max(log.wall_solve_ms_max, out.diagnostics.solve_ms);
      if (out.diagnostics.failed) ++log.solver_failures;
      rec.iterations = out.diagnostics.iterations;
      rec.solve_ms = 1000.0 * mpc.compensation_time;
      if (mpc.compensation_time > 0.0 && !out.diagnostics.failed) {
        activation = t + mpc.compensation_time;
      } else {
        u = out.u;
      }
    } else if (ctrl.solution() && t >= activation - 1e-12) {
      try {
        u = ctrl.rate_feedback(est, t);
      } catch (const StaleSolution&) {
        // keep the held control
      }
    }
    const TaskInstant* next = nullptr;
    for (const auto& tk : tasks) {
      if (tk.time >= t - 1e-9) {
        next = &tk;
        break;
      }
    }
    if (!next && !tasks.empty()) next = &tasks.back();
    if (next) {
      const auto [p, o] = task_pose_error(model, mission.phases[next->phase].costs, x);
      rec.task_err_pos = p;
      rec.task_err_ori = o;
    }
    rec.x = x;
    rec.u = u;
    for (const auto& d : sim.disturbances) rec.disturbed = rec.disturbed || d.active(t);
    log.records.push_back(rec);
    if (i == n_ticks) break;

    for (long s = 0; s < plant_per_tick; ++s) {
      const double ts = t + double(s) * sim.plant_dt;
      Vector3 f = Vector3::Zero();
      for (const auto& d : sim.disturbances) {
        if (d.active(ts)) f += d.force;
      }
      try {
        x = step(model, x, u, sim.plant_dt, Integrator::Rk4, {}, f);
      } catch (const Error& e) {
        log.diverged = true;
        log.failure = std::string("PlantDiverged: ") + e.what();
        return log;
      }
      if (!state_finite(x)) {
        log.diverged = true;
        log.failure = "PlantDiverged: non-finite state at t = " + std::to_string(ts);
        return log;
      }
    }
  }
  log.tasks = task_error(log, mission, model, true);
  return log;
}

// ---------------------------------------------------------------------------
// CSV

/// Serialized state: position(3), quaternion w x y z, joints, base twist(6), joint rates.
inline std::vector<std::string> state_columns(const RobotModel& model) {
  std::vector<std::string> c = {"px", "py", "pz", "qw", "qx", "qy", "qz"};
  for (Eigen::Index j = 0; j < model.n_joints(); ++j) c.push_back("q" + std::to_string(j + 1));
  for (const char* n : {"vx", "vy", "vz", "wx", "wy", "wz"}) c.push_back(n);
  for (Eigen::Index j = 0; j < model.n_joints(); ++j) c.push_back("dq" + std::to_string(j + 1));
  return c;
}

inline std::vector<double> serialize_state(const UamState& x) {
  std::vector<double> v;
  const Vector3 p = x.pose.translation();
  const Quaternion q = x.pose.quaternion();
  v.insert(v.end(), {p.x(), p.y(), p.z(), q.w(), q.x(), q.y(), q.z()});
  for (Eigen::Index j = 0; j < x.joints.size(); ++j) v.push_back(x.joints(j));
  for (Eigen::Index j = 0; j < x.velocity.size(); ++j) v.push_back(x.velocity(j));
  return v;
}

namespace detail {

inline void write_number(std::ostream& os, double v) {
  // 17 significant digits round-trip doubles exactly
  std::ostringstream s;
  s << std::setprecision(17) << v;
  os << s.str();
}

}  // namespace detail

inline void write_csv(std::ostream& os, const SimLog& log, const RobotModel& model) {
  os << "t";
  for (const auto& c : state_columns(model)) os << ',' << c;
  for (Eigen::Index i = 0; i < model.nu(); ++i) os << ",u" << i;
  os << ",solve_ms,iters,task_err_pos,task_err_ori,disturbed\n";
  for (const auto& r : log.records) {
    detail::write_number(os, r.t);
    for (double v : serialize_state(r.x)) {
      os << ',';
      detail::write_number(os, v);
    }
    for (Eigen::Index i = 0; i < r.u.size(); ++i) {
      os << ',';
      detail::write_number(os, r.u(i));
    }
    os << ',';
    detail::write_number(os, r.solve_ms);
    os << ',' << r.iterations << ',';
    detail::write_number(os, r.task_err_pos);
    os << ',';
    detail::write_number(os, r.task_err_ori);
    os << ',' << (r.disturbed ? 1 : 0) << '\n';
  }
}

/// Trajectory CSV (t, state, control) of an optimized trajectory; the last
/// row repeats zeros for the control.
inline void write_trajectory_csv(std::ostream& os, const std::vector<UamState>& X, const std::vector<VectorX>& U,
                                 double dt, const RobotModel& model) {
  os << "t";
  for (const auto& c : state_columns(model)) os << ',' << c;
  for (Eigen::Index i = 0; i < model.nu(); ++i) os << ",u" << i;
  os << '\n';
  for (std::size_t k = 0; k < X.size(); ++k) {
    detail::write_number(os, double(k) * dt);
    for (double v : serialize_state(X[k])) {
      os << ',';
      detail::write_number(os, v);
    }
    for (Eigen::Index i = 0; i < model.nu(); ++i) {
      os << ',';
      detail::write_number(os, k < U.size() ? U[k](i) : 0.0);
    }
    os << '\n';
  }
}

// ---------------------------------------------------------------------------
// Statistics and Monte Carlo

struct Quartiles {
  double q1 = 0.0, median = 0.0, q3 = 0.0;
};

/// Median of the sample and medians of the lower and upper halves, the
/// middle element excluded from both halves for odd sizes.
inline Quartiles quartiles(std::vector<double> v) {
  if (v.empty()) throw ValidationError("quartiles of an empty sample");
  std::sort(v.begin(), v.end());
  auto median = [](const double* b, std::size_t n) { return n % 2 ? b[n / 2] : 0.5 * (b[n / 2 - 1] + b[n / 2]); };
  const std::size_t n = v.size();
  Quartiles q;
  q.median = median(v.data(), n);
  if (n == 1) {
    q.q1 = q.q3 = v[0];
    return q;
  }
  const std::size_t h = n / 2;
  q.q1 = median(v.data(), h);
  q.q3 = median(v.data() + (n - h), h);
  return q;
}

struct DisturbanceSampling {
  double start_min = 0.0, start_max = 0.0;  // uniform
  double duration_mean = 0.5, duration_std = 0.25;
  double duration_min = 0.05;
  double force_mean = 8.0, force_std = 2.0;
  Vector3 direction = Vector3(1.0, 1.0, 0.0);
};

/// One run's draw. Each run has its own generator seeded with (seed, run).
inline DisturbanceSpec sample_disturbance(const DisturbanceSampling& s, unsigned long long seed, std::size_t run) {
  std::seed_seq seq{std::uint64_t(seed), std::uint64_t(run)};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> start(s.start_min, s.start_max);
  std::normal_distribution<double> duration(s.duration_mean, s.duration_std);
  std::normal_distribution<double> force(s.force_mean, s.force_std);
  DisturbanceSpec d;
  d.start = s.start_max > s.start_min ? start(rng) : s.start_min;
  const double dur = s.duration_std > 0.0 ? duration(rng) : s.duration_mean;
  const double mag = s.force_std > 0.0 ? force(rng) : s.force_mean;
  d.duration = std::max(dur, s.duration_min);
  d.force = mag * s.direction.normalized();
  return d;
}

struct RunSummary {
  std::size_t run = 0;
  DisturbanceSpec disturbance;
  std::vector<TaskError> tasks;
  bool ok = true;
  std::string failure;
};

struct RunSpec {
  const RobotModel* model = nullptr;
  const Mission* mission = nullptr;
  const ReferenceTrajectory* reference = nullptr;
  MpcConfig mpc;
  SimConfig sim;
  UamState x0;
};

/// Runs n_runs simulations, each with one sampled disturbance added to the
/// base spec's disturbances. Failed runs are kept with their failure message.
inline std::vector<RunSummary> monte_carlo(const RunSpec& base, std::size_t n_runs, const DisturbanceSampling& sampling,
                                           unsigned long long seed, std::vector<SimLog>* logs = nullptr) {
  if (n_runs < 1) throw ValidationError("monte carlo needs at least one run");
  std::vector<RunSummary> out;
  for (std::size_t r = 0; r < n_runs; ++r) {
    RunSummary s;
    s.run = r;
    s.disturbance = sample_disturbance(sampling, seed, r);
    SimConfig sim = base.sim;
    sim.seed = seed + r;
    sim.disturbances.push_back(s.disturbance);
    try {
      SimLog log = run_closed_loop(*base.model, *base.mission, base.reference, base.mpc, sim, base.x0);
      if (log.diverged) {
        s.ok = false;
        s.failure = log.failure;
      } else {
        s.tasks = log.tasks;
      }
      if (logs) logs->push_back(std::move(log));
    } catch (const Error& e) {
      s.ok = false;
      s.failure = std::string(e.kind()) + ": " + e.what();
      if (logs) logs->push_back({});
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace uamoc
