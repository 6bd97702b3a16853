#pragma once

// Receding-horizon controllers on top of the FDDP solver: reference handling,
// the Weighted / Rail / Carrot cost updates, delay compensation and the
// inter-step feedback policy.

#include <chrono>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "uamoc/ocp.hpp"

namespace uamoc {

enum class ControllerType { Weighted, Rail, Carrot };

inline const char* to_string(ControllerType c) {
  switch (c) {
    case ControllerType::Weighted: return "weighted";
    case ControllerType::Rail: return "rail";
    case ControllerType::Carrot: return "carrot";
  }
  return "?";
}

inline ControllerType controller_from_string(const std::string& s) {
  if (s == "weighted") return ControllerType::Weighted;
  if (s == "rail") return ControllerType::Rail;
  if (s == "carrot") return ControllerType::Carrot;
  throw ValidationError("unknown controller '" + s + "' (expected weighted, rail or carrot)");
}

struct MpcConfig {
  int N = 30;
  double dt = 0.03;
  int max_solver_iters = 4;
  ControllerType controller = ControllerType::Carrot;
  double alpha_task = 4.0;  // 1/s
  double state_weight = 1.0;
  double control_weight = 1e-3;
  VectorX uaw;  // rail/weighted W diagonal of the tracked state residual; empty = default_uaw
  double carrot_factor = 100.0;
  double compensation_time = 0.0;
  bool track_reference_controls = false;

  double horizon() const { return double(N - 1) * dt; }

  void validate() const {
    if (N < 2) throw ValidationError("controller.N must be >= 2");
    if (!(dt > 0.0)) throw ValidationError("controller.dt must be > 0");
    if (max_solver_iters < 1) throw ValidationError("controller.max_iters must be >= 1");
    if (compensation_time < 0.0) throw ValidationError("controller.compensation_time must be >= 0");
    if (!(carrot_factor > 0.0)) throw ValidationError("controller.carrot_factor must be > 0");
  }
};

/// Position and joint angles weigh 10x more than orientation and velocities.
/// Entries are W, so the emphasized coordinates get the smaller values.
inline VectorX default_uaw(const RobotModel& model) {
  const Eigen::Index nj = model.n_joints();
  VectorX W = VectorX::Ones(model.ndx());
  W.head<3>().setConstant(0.1);
  W.segment(6, nj).setConstant(0.1);
  return W;
}

// ---------------------------------------------------------------------------
// Reference trajectories

struct ReferenceTrajectory {
  std::vector<UamState> X;
  std::vector<VectorX> U;  // one per interval
  double dt = 0.0;
  double t0 = 0.0;
  UamState terminal;  // statically stable setpoint x_M

  double end_time() const { return t0 + dt * double(X.empty() ? 0 : X.size() - 1); }
};

/// Reference from a solved trajectory; the terminal setpoint is the last
/// state at rest.
inline ReferenceTrajectory make_reference(std::vector<UamState> X, std::vector<VectorX> U, double dt, double t0 = 0.0) {
  if (X.empty()) throw ValidationError("reference trajectory is empty");
  if (!(dt > 0.0)) throw ValidationError("reference dt must be > 0");
  ReferenceTrajectory ref;
  ref.terminal = X.back();
  ref.terminal.velocity.setZero();
  ref.X = std::move(X);
  ref.U = std::move(U);
  ref.dt = dt;
  ref.t0 = t0;
  return ref;
}

/// State and control at time t: tangent interpolation between samples,
/// terminal setpoint and zero control past the end.
inline std::pair<UamState, VectorX> reference_at(const ReferenceTrajectory& ref, double t) {
  const Eigen::Index nu = ref.U.empty() ? 0 : ref.U.front().size();
  const double tau = (t - ref.t0) / ref.dt;
  const double last = double(ref.X.size() - 1);
  if (tau > last + 1e-9 || ref.X.size() == 1) return {ref.terminal, VectorX::Zero(nu)};
  const double r = std::round(tau);
  if (std::abs(tau - r) <= 1e-9) {
    const std::size_t k = std::size_t(std::max(0.0, r));
    return {ref.X[k], k < ref.U.size() ? ref.U[k] : VectorX::Zero(nu)};
  }
  const std::size_t k = std::size_t(std::clamp(std::floor(tau), 0.0, last - 1.0));
  const double s = std::clamp(tau - double(k), 0.0, 1.0);
  return {interpolate(ref.X[k], ref.X[k + 1], s), k < ref.U.size() ? ref.U[k] : VectorX::Zero(nu)};
}

// ---------------------------------------------------------------------------
// Horizon problem and cost updates

inline double node_time(double t_now, const MpcConfig& cfg, int k) { return t_now + double(k) * cfg.dt; }

/// Horizon OCP with N nodes of free-flight dynamics and empty costs.
inline OcpProblem make_horizon_problem(const RobotModel& model, const MpcConfig& cfg, const UamState& x0,
                                       Integrator integrator = Integrator::SemiImplicitEuler) {
  cfg.validate();
  OcpProblem p;
  p.x0 = x0;
  p.nodes.resize(std::size_t(cfg.N));
  for (auto& n : p.nodes) {
    n.dynamics.model = &model;
    n.dynamics.integrator = integrator;
    n.dynamics.dt = cfg.dt;
    n.phase = "horizon";
  }
  return p;
}

namespace detail {

/// Index of the timed phase active at time t (the last one past the end).
inline std::size_t phase_at(const Mission& mission, double t) {
  double start = 0.0;
  std::size_t last = 0;
  for (std::size_t p = 0; p < mission.phases.size(); ++p) {
    const Phase& ph = mission.phases[p];
    if (ph.instantaneous()) continue;
    last = p;
    if (t < start + *ph.duration - 1e-9) return p;
    start += *ph.duration;
  }
  return last;
}

inline std::vector<TaskInstant> mission_tasks(const Mission& mission) {
  std::vector<TaskInstant> out;
  for (const auto& t : task_instants(mission)) {
    if (mission.phases[t.phase].kind == PhaseKind::Task) out.push_back(t);
  }
  return out;
}

inline CostStack scaled(const CostStack& s, double factor) {
  CostStack out = s;
  for (auto& r : out.residuals) r.weight *= factor;
  return out;
}

inline void append(CostStack& dst, const CostStack& src) {
  dst.residuals.insert(dst.residuals.end(), src.residuals.begin(), src.residuals.end());
}

inline void set_time(OcpProblem& p, double t_now, const MpcConfig& cfg) {
  for (std::size_t k = 0; k < p.nodes.size(); ++k) p.nodes[k].time = node_time(t_now, cfg, int(k));
}

inline const VectorX& uaw_or_default(const MpcConfig& cfg, const RobotModel& m, VectorX& storage) {
  if (cfg.uaw.size()) {
    if (cfg.uaw.size() != m.ndx()) throw ValidationError("controller.uaw needs " + std::to_string(m.ndx()) + " entries");
    return cfg.uaw;
  }
  storage = default_uaw(m);
  return storage;
}

/// Weight of the first state residual of a stack, or `fallback`.
inline double state_weight_of(const CostStack& s, double fallback) {
  for (const auto& r : s.residuals) {
    if (r.kind == ResidualKind::State) return r.weight;
  }
  return fallback;
}

}  // namespace detail

/// Exponentially growing task weights w·e^{α(t_k − t_task)} on the closest
/// upcoming task; the horizon node carries the full weight when the task lies
/// beyond the horizon. Once every task is past, all nodes hold the last task.
inline void weighted_update(OcpProblem& p, const Mission& mission, double t_now, const MpcConfig& cfg) {
  const auto tasks = detail::mission_tasks(mission);
  if (tasks.empty()) throw MissionValidationError("weighted MPC needs at least one task phase");
  detail::set_time(p, t_now, cfg);
  const int N = int(p.nodes.size());
  for (int k = 0; k < N; ++k) {
    const double tk = p.nodes[std::size_t(k)].time;
    CostStack stack = mission.phases[detail::phase_at(mission, tk)].costs;
    const TaskInstant* next = nullptr;
    for (const auto& t : tasks) {
      if (t.time >= tk - 1e-9) {
        next = &t;
        break;
      }
    }
    double factor = 1.0;
    const TaskInstant& task = next ? *next : tasks.back();
    if (next) {
      const bool beyond = task.time > node_time(t_now, cfg, N - 1) + 1e-9;
      factor = (k == N - 1 && beyond) ? 1.0 : std::exp(cfg.alpha_task * std::min(0.0, tk - task.time));
    }
    detail::append(stack, detail::scaled(mission.phases[task.phase].costs, factor));
    p.nodes[std::size_t(k)].costs = std::move(stack);
  }
}

/// Every node tracks the reference state with the UAW matrix and regularizes
/// the control towards zero (or the reference control when enabled).
inline void rail_update(OcpProblem& p, const ReferenceTrajectory& ref, double t_now, const MpcConfig& cfg) {
  detail::set_time(p, t_now, cfg);
  VectorX storage;
  const RobotModel& m = node_model(p.nodes.front());
  const VectorX& W = detail::uaw_or_default(cfg, m, storage);
  for (auto& node : p.nodes) {
    const auto [xr, ur] = reference_at(ref, node.time);
    node.costs.residuals.clear();
    node.costs.residuals.push_back(state_regularization(xr, cfg.state_weight, W));
    node.costs.residuals.push_back(
        control_regularization(cfg.control_weight, cfg.track_reference_controls ? ur : VectorX()));
  }
}

/// Interior nodes keep the mission's navigation regularization, tasks inside
/// the horizon keep their stacks, and the horizon node pursues the reference
/// state at t + T_H with an unscaled quadratic. Nodes past the mission end hold x_M.
inline void carrot_update(OcpProblem& p, const Mission& mission, const ReferenceTrajectory& ref, double t_now,
                          const MpcConfig& cfg) {
  detail::set_time(p, t_now, cfg);
  const int N = int(p.nodes.size());
  const double t_end = mission.total_duration();
  std::vector<bool> has_task(std::size_t(N), false);
  for (int k = 0; k < N; ++k) {
    const double tk = p.nodes[std::size_t(k)].time;
    p.nodes[std::size_t(k)].costs = mission.phases[detail::phase_at(mission, tk)].costs;
  }
  for (const auto& t : detail::mission_tasks(mission)) {
    const double rel = (t.time - t_now) / cfg.dt;
    if (rel < -1e-9 || rel > double(N - 1) + 1e-9) continue;
    const std::size_t k = std::size_t(std::lround(rel));
    detail::append(p.nodes[k].costs, mission.phases[t.phase].costs);
    has_task[k] = true;
  }
  for (int k = 0; k < N; ++k) {
    auto& node = p.nodes[std::size_t(k)];
    const bool past_end = node.time > t_end + 1e-9;
    if ((k == N - 1 && !has_task[std::size_t(k)]) || past_end) {
      const double w = cfg.carrot_factor * detail::state_weight_of(node.costs, cfg.state_weight);
      const UamState target = past_end ? ref.terminal : reference_at(ref, node.time).first;
      node.costs.residuals.push_back(state_regularization(target, w));
    }
  }
}

// ---------------------------------------------------------------------------
// Controller

struct MpcDiagnostics {
  int iterations = 0;
  double cost = 0.0;
  double solve_ms = 0.0;
  bool converged = false;
  bool failed = false;
  std::string message;
};

/// Immutable snapshot of the latest horizon solution.
struct MpcSolution {
  double t_request = 0.0;  // time mpc_step was called
  double t_start = 0.0;    // time of node 0 (request time + compensation)
  double dt = 0.0;
  std::vector<UamState> X;
  std::vector<VectorX> U, Z;
  std::vector<MatrixX> K;
  Squash squash;
};

struct MpcOutput {
  VectorX u;
  std::vector<MatrixX> gains;
  MpcDiagnostics diagnostics;
};

class MpcController {
 public:
  /// `mission` is required by weighted and carrot, `reference` by rail and
  /// carrot. Both must outlive the controller.
  MpcController(const RobotModel& model, MpcConfig cfg, const Mission* mission, const ReferenceTrajectory* reference)
      : model_(model), cfg_(std::move(cfg)), mission_(mission), ref_(reference) {
    cfg_.validate();
    if (cfg_.controller != ControllerType::Rail && !mission_) {
      throw ValidationError(std::string(to_string(cfg_.controller)) + " MPC needs a mission");
    }
    if (cfg_.controller != ControllerType::Weighted && !ref_) {
      throw ValidationError(std::string(to_string(cfg_.controller)) + " MPC needs a reference trajectory");
    }
    problem_ = make_horizon_problem(model_, cfg_, model_.neutral_state());
    settings_.max_iters = cfg_.max_solver_iters;
  }

  const MpcConfig& config() const { return cfg_; }
  const OcpProblem& problem() const { return problem_; }
  const std::optional<MpcSolution>& solution() const { return solution_; }
  SolverSettings& solver_settings() { return settings_; }

  /// Rebuilds the horizon costs for node 0 at time t.
  void update_costs(double t) {
    switch (cfg_.controller) {
      case ControllerType::Weighted: weighted_update(problem_, *mission_, t, cfg_); break;
      case ControllerType::Rail: rail_update(problem_, *ref_, t, cfg_); break;
      case ControllerType::Carrot: carrot_update(problem_, *mission_, *ref_, t, cfg_); break;
    }
  }

  /// Model prediction of the state at t_now + T_c under the pending controls.
  UamState predict(const UamState& x, double t_now) const {
    UamState xp = x;
    double t = t_now;
    const double t_end = t_now + cfg_.compensation_time;
    while (t < t_end - 1e-12) {
      const double h = std::min(cfg_.dt, t_end - t);
      const VectorX u = solution_ ? nominal_control(t) : model_.hover_control();
      xp = step(model_, xp, u, h, Integrator::SemiImplicitEuler);
      t += h;
    }
    return xp;
  }

  MpcOutput mpc_step(const UamState& x_estimate, double t_now) {
    MpcOutput out;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      model_.check_state(x_estimate);
      if (!state_finite(x_estimate)) throw SolverFailure("state estimate is not finite");
      const double t_start = t_now + cfg_.compensation_time;
      problem_.x0 = predict(x_estimate, t_now);
      update_costs(t_start);
      auto [X, U] = warm_start(t_start);
      UamOcp ocp(problem_);
      Fddp<UamOcp> solver(ocp, settings_);
      solver.set_candidate_decisions(X, U);
      const SolverResult<UamState> r = solver.solve();
      if (!std::isfinite(r.cost)) throw SolverFailure("horizon solve produced a non-finite cost");
      for (std::size_t k = 0; k < r.K.size(); ++k) {
        if (!r.K[k].allFinite() || !r.Z[k].allFinite() || !state_finite(r.X[k + 1])) {
          throw SolverFailure("horizon solve produced a non-finite iterate at node " + std::to_string(k));
        }
      }
      MpcSolution sol;
      sol.t_request = t_now;
      sol.t_start = t_start;
      sol.dt = cfg_.dt;
      sol.X = r.X;
      sol.U = r.U;
      sol.Z = r.Z;
      sol.K = r.K;
      sol.squash = solver.squash();
      solution_ = std::move(sol);
      out.u = r.U.front();
      out.gains = r.K;
      out.diagnostics.iterations = r.iterations;
      out.diagnostics.cost = r.cost;
      out.diagnostics.converged = r.converged;
      last_u_ = out.u;
    } catch (const Error& e) {
      out.u = last_u_.size() ? last_u_ : model_.hover_control();
      out.diagnostics.failed = true;
      out.diagnostics.message = std::string(e.kind()) + ": " + e.what();
    }
    out.diagnostics.solve_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return out;
  }

  /// u = s(z_k + K_k (x̂ ⊖ x_nominal(t_u))) from the latest solution.
  VectorX rate_feedback(const UamState& x_estimate, double t_u) const {
    if (!solution_) throw StaleSolution("no horizon solution yet");
    const MpcSolution& s = *solution_;
    const double age = t_u - s.t_request;
    if (age < -1e-12 || age >= cfg_.dt + cfg_.compensation_time - 1e-12) {
      throw StaleSolution("solution requested at t = " + std::to_string(s.t_request) + " is too old for t = " +
                          std::to_string(t_u));
    }
    const auto [k, xn] = nominal(t_u);
    const VectorX dx = state_ominus(x_estimate, xn);
    return s.squash(s.Z[k] + s.K[k] * dx);
  }

  /// Control of the latest solution at time t (zero-order per node).
  VectorX nominal_control(double t) const { return solution_->U[nominal(t).first]; }

  /// Previous solution shifted to the new start time with the last node
  /// repeated; first call: reference states (or the hold state) and z = 0.
  std::pair<std::vector<UamState>, std::vector<VectorX>> warm_start(double t_start) const {
    const std::size_t N = problem_.nodes.size();
    std::vector<UamState> X(N);
    std::vector<VectorX> Z(N - 1);
    if (solution_) {
      const MpcSolution& s = *solution_;
      const long shift = std::max(0L, std::lround((t_start - s.t_start) / cfg_.dt));
      for (std::size_t k = 0; k < N; ++k) X[k] = s.X[std::min(k + std::size_t(shift), N - 1)];
      for (std::size_t k = 0; k + 1 < N; ++k) Z[k] = s.Z[std::min(k + std::size_t(shift), N - 2)];
      X[0] = problem_.x0;
      return {X, Z};
    }
    for (std::size_t k = 0; k < N; ++k) {
      X[k] = ref_ ? reference_at(*ref_, node_time(t_start, cfg_, int(k))).first : problem_.x0;
    }
    X[0] = problem_.x0;
    for (auto& z : Z) z = VectorX::Zero(model_.nu());
    return {X, Z};
  }

 private:
  std::pair<std::size_t, UamState> nominal(double t) const {
    const MpcSolution& s = *solution_;
    const double tau = std::max(0.0, (t - s.t_start) / s.dt);
    const std::size_t last = s.U.size() - 1;
    const std::size_t k = std::min(std::size_t(std::floor(tau + 1e-9)), last);
    const double frac = std::clamp(tau - double(k), 0.0, 1.0);
    return {k, interpolate(s.X[k], s.X[k + 1], frac)};
  }

  const RobotModel& model_;
  MpcConfig cfg_;
  const Mission* mission_;
  const ReferenceTrajectory* ref_;
  OcpProblem problem_;
  SolverSettings settings_;
  std::optional<MpcSolution> solution_;
  VectorX last_u_;
};

}  // namespace uamoc
