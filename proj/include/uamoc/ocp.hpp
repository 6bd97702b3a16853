#pragma once

// Missions made of timed and instantaneous phases, their discretization into a
// node-wise optimal control problem, and the adapter the solver consumes.

#include <cmath>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "uamoc/costs.hpp"
#include "uamoc/model.hpp"
#include "uamoc/solver.hpp"

namespace uamoc {

enum class PhaseKind { Navigation, Task };

struct Phase {
  std::string name;
  PhaseKind kind = PhaseKind::Navigation;
  std::optional<double> duration;  // empty for an instantaneous phase
  CostStack costs;
  std::vector<ContactSpec> contacts;
  std::string model_variant;  // empty = base model

  bool instantaneous() const { return !duration.has_value(); }
};

struct Mission {
  std::string name;
  std::vector<Phase> phases;
  double dt = 0.01;
  Integrator integrator = Integrator::SemiImplicitEuler;
  BaumgarteGains baumgarte;

  double total_duration() const {
    double t = 0.0;
    for (const auto& p : phases) t += p.duration.value_or(0.0);
    return t;
  }
};

/// Named robot models; the empty name is the base model.
class ModelRegistry {
 public:
  ModelRegistry() = default;
  explicit ModelRegistry(RobotModel base) { add("", std::move(base)); }

  void add(const std::string& name, RobotModel model) {
    if (!model.finalized()) model.finalize();
    models_[name] = std::make_shared<const RobotModel>(std::move(model));
  }
  bool contains(const std::string& name) const { return models_.count(name) > 0; }
  const RobotModel& get(const std::string& name) const {
    auto it = models_.find(name);
    if (it == models_.end()) throw MissionValidationError("unknown model variant '" + name + "'");
    return *it->second;
  }
  const RobotModel& base() const { return get(""); }
  std::vector<std::string> names() const {
    std::vector<std::string> n;
    for (const auto& [k, v] : models_) n.push_back(k);
    return n;
  }

 private:
  std::map<std::string, std::shared_ptr<const RobotModel>> models_;
};

struct OcpNode {
  DynamicsSpec dynamics;  // unused at the terminal node apart from the model
  CostStack costs;
  double time = 0.0;
  std::string phase;
};

struct OcpProblem {
  UamState x0;
  std::vector<OcpNode> nodes;  // N nodes; the last one is terminal

  std::size_t n_nodes() const { return nodes.size(); }
  std::size_t horizon() const { return nodes.empty() ? 0 : nodes.size() - 1; }
  const OcpNode& terminal() const { return nodes.back(); }
};

// ---------------------------------------------------------------------------
// Phase arithmetic

inline constexpr double kDivisibilityTol = 1e-9;

/// Number of node intervals a timed phase spans; throws when the duration is
/// not a multiple of dt.
inline long phase_intervals(double duration, double dt, const std::string& phase) {
  if (!(dt > 0.0)) throw MissionValidationError("dt must be positive");
  if (duration < 0.0) throw MissionValidationError("phase '" + phase + "': negative duration");
  const double n = duration / dt;
  const double r = std::round(n);
  if (std::abs(n - r) > kDivisibilityTol * std::max(1.0, n)) {
    throw MissionValidationError("phase '" + phase + "': duration " + std::to_string(duration) +
                                 " s is not a multiple of dt = " + std::to_string(dt) + " s");
  }
  return long(r);
}

/// N = Σ T_ph/Δt + 1. Instantaneous phases sit on existing boundary nodes.
inline std::size_t node_count(const Mission& mission) {
  long n = 0;
  for (const auto& p : mission.phases) {
    if (!p.instantaneous()) n += phase_intervals(*p.duration, mission.dt, p.name);
  }
  return std::size_t(n + 1);
}

/// Node index of every phase start, plus the final node index at the end.
inline std::vector<std::size_t> phase_start_nodes(const Mission& mission) {
  std::vector<std::size_t> starts;
  long k = 0;
  for (const auto& p : mission.phases) {
    starts.push_back(std::size_t(k));
    if (!p.instantaneous()) k += phase_intervals(*p.duration, mission.dt, p.name);
  }
  starts.push_back(std::size_t(k));
  return starts;
}

/// Times of the instantaneous task phases, in mission order.
struct TaskInstant {
  std::size_t phase;
  std::size_t node;
  double time;
};

inline std::vector<TaskInstant> task_instants(const Mission& mission) {
  std::vector<TaskInstant> out;
  const auto starts = phase_start_nodes(mission);
  for (std::size_t p = 0; p < mission.phases.size(); ++p) {
    if (mission.phases[p].instantaneous()) out.push_back({p, starts[p], double(starts[p]) * mission.dt});
  }
  return out;
}

namespace detail {

inline void validate_stack(const CostStack& stack, const RobotModel& model, const std::vector<ContactSpec>& contacts,
                           const std::string& where) {
  for (std::size_t i = 0; i < stack.residuals.size(); ++i) {
    const auto& r = stack.residuals[i];
    const std::string path = where + ".costs[" + std::to_string(i) + "]";
    if (r.weight < 0.0) throw MissionValidationError(path + ": negative weight");
    for (Eigen::Index j = 0; j < r.weight_matrix.size(); ++j) {
      if (!(r.weight_matrix(j) > 0.0)) throw MissionValidationError(path + ": W entries must be > 0");
    }
    switch (r.kind) {
      case ResidualKind::State:
        if (r.state_target.joints.size() != model.n_joints() || r.state_target.velocity.size() != model.nv()) {
          throw MissionValidationError(path + ": state target does not match the model");
        }
        if (r.weight_matrix.size() && r.weight_matrix.size() != model.ndx()) {
          throw MissionValidationError(path + ": W needs " + std::to_string(model.ndx()) + " entries");
        }
        break;
      case ResidualKind::Control:
        if (r.control_target.size() && r.control_target.size() != model.nu()) {
          throw MissionValidationError(path + ": control target needs " + std::to_string(model.nu()) + " entries");
        }
        if (r.weight_matrix.size() && r.weight_matrix.size() != model.nu()) {
          throw MissionValidationError(path + ": W needs " + std::to_string(model.nu()) + " entries");
        }
        break;
      case ResidualKind::FrictionCone: {
        bool found = false;
        for (const auto& c : contacts) found = found || c.frame == r.frame;
        if (!found) throw MissionValidationError(path + ": friction cone on '" + r.frame + "' without a contact there");
        if (!(r.mu > 0.0)) throw MissionValidationError(path + ": mu must be > 0");
        if (r.weight_matrix.size() && r.weight_matrix.size() != 5) {
          throw MissionValidationError(path + ": W needs 5 entries");
        }
        break;
      }
      case ResidualKind::StateBounds:
        if (r.lower.size() != model.ndx() || r.upper.size() != model.ndx()) {
          throw MissionValidationError(path + ": bounds need " + std::to_string(model.ndx()) + " entries");
        }
        break;
      default: {
        if (!model.has_frame(r.frame)) throw MissionValidationError(path + ": unknown frame '" + r.frame + "'");
        const Eigen::Index dim = (r.kind == ResidualKind::FramePose || r.kind == ResidualKind::FrameVelocity) ? 6 : 3;
        if (r.weight_matrix.size() && r.weight_matrix.size() != dim) {
          throw MissionValidationError(path + ": W needs " + std::to_string(dim) + " entries");
        }
      }
    }
  }
}

}  // namespace detail

/// Checks everything build_problem relies on without building anything.
inline void validate_mission(const Mission& mission, const ModelRegistry& models) {
  if (!(mission.dt > 0.0)) throw MissionValidationError("dt must be positive");
  if (mission.phases.empty()) throw MissionValidationError("mission has no phases");
  const RobotModel& base = models.base();
  bool timed = false;
  for (std::size_t p = 0; p < mission.phases.size(); ++p) {
    const Phase& ph = mission.phases[p];
    const std::string where = "phases[" + std::to_string(p) + "]";
    if (!ph.instantaneous()) {
      phase_intervals(*ph.duration, mission.dt, ph.name);
      timed = timed || *ph.duration > 0.0;
    } else if (!ph.contacts.empty() || !ph.model_variant.empty()) {
      throw MissionValidationError(where + ": instantaneous phases cannot declare contacts or a model variant");
    }
    const RobotModel& m = models.get(ph.model_variant);
    if (m.nu() != base.nu() || m.n_joints() != base.n_joints()) {
      throw MissionValidationError(where + ": model variant changes the state or control dimension");
    }
    for (const auto& c : ph.contacts) {
      if (!m.has_frame(c.frame)) throw MissionValidationError(where + ": unknown contact frame '" + c.frame + "'");
      if (c.n_constraints() == 0) throw MissionValidationError(where + ": contact on '" + c.frame + "' has no axes");
    }
    detail::validate_stack(ph.costs, m, ph.contacts, where);
  }
  if (!timed) throw MissionValidationError("mission needs at least one timed phase with positive duration");
}

/// Discretizes the mission. Running node k uses the dynamics and costs of the
/// timed phase covering [t_k, t_k+1); instantaneous phases append their stack
/// to the node at their time; the terminal node takes the last timed phase's
/// stack (control terms drop out there).
inline OcpProblem build_problem(const Mission& mission, const ModelRegistry& models, const UamState& x0) {
  validate_mission(mission, models);
  models.base().check_state(x0);
  const std::size_t N = node_count(mission);
  const auto starts = phase_start_nodes(mission);
  OcpProblem prob;
  prob.x0 = x0;
  prob.nodes.resize(N);
  std::size_t last_timed = 0;
  for (std::size_t p = 0; p < mission.phases.size(); ++p) {
    const Phase& ph = mission.phases[p];
    if (ph.instantaneous() || starts[p + 1] == starts[p]) continue;
    last_timed = p;
    for (std::size_t k = starts[p]; k < starts[p + 1]; ++k) {
      OcpNode& node = prob.nodes[k];
      node.dynamics.model = &models.get(ph.model_variant);
      node.dynamics.contacts = ph.contacts;
      node.dynamics.integrator = mission.integrator;
      node.dynamics.dt = mission.dt;
      node.dynamics.baumgarte = mission.baumgarte;
      node.costs = ph.costs;
      node.phase = ph.name;
    }
  }
  {
    const Phase& ph = mission.phases[last_timed];
    OcpNode& node = prob.nodes[N - 1];
    node.dynamics.model = &models.get(ph.model_variant);
    node.dynamics.integrator = mission.integrator;
    node.dynamics.dt = mission.dt;
    node.costs = ph.costs;
    node.phase = ph.name;
  }
  for (std::size_t p = 0; p < mission.phases.size(); ++p) {
    const Phase& ph = mission.phases[p];
    if (!ph.instantaneous()) continue;
    OcpNode& node = prob.nodes[starts[p]];
    for (const auto& r : ph.costs.residuals) node.costs.residuals.push_back(r);
    node.phase = ph.name;
  }
  for (std::size_t k = 0; k < N; ++k) prob.nodes[k].time = double(k) * mission.dt;
  return prob;
}

// ---------------------------------------------------------------------------
// Evaluation

inline const RobotModel& node_model(const OcpNode& node) {
  if (!node.dynamics.model) throw ValidationError("OCP node without a model");
  return *node.dynamics.model;
}

/// Cost of running node k and the successor state.
inline double node_step(const OcpNode& node, const UamState& x, const VectorX& u, UamState& next) {
  const RobotModel& m = node_model(node);
  const DynamicsSpec& d = node.dynamics;
  const StepResult s = step_with_forces(m, x, u, d.dt, d.integrator, d.contacts, Vector3::Zero(), d.baumgarte);
  next = s.next;
  ContactForces forces;
  if (!d.contacts.empty()) {
    forces.contacts = &d.contacts;
    forces.lambda = s.lambda;
  }
  return cost_value(node.costs, m, x, &u, &forces);
}

inline std::vector<UamState> rollout(const OcpProblem& problem, const std::vector<VectorX>& U) {
  if (U.size() != problem.horizon()) {
    throw DimensionMismatch("rollout needs " + std::to_string(problem.horizon()) + " controls, got " +
                            std::to_string(U.size()));
  }
  std::vector<UamState> X{problem.x0};
  X.reserve(U.size() + 1);
  for (std::size_t k = 0; k < U.size(); ++k) {
    const DynamicsSpec& d = problem.nodes[k].dynamics;
    X.push_back(step(node_model(problem.nodes[k]), X.back(), U[k], d.dt, d.integrator, d.contacts, Vector3::Zero(),
                     d.baumgarte));
  }
  return X;
}

inline double problem_cost(const OcpProblem& problem, const std::vector<UamState>& X, const std::vector<VectorX>& U) {
  if (X.size() != problem.n_nodes() || U.size() != problem.horizon()) {
    throw DimensionMismatch("trajectory length does not match the problem");
  }
  double c = 0.0;
  for (std::size_t k = 0; k < U.size(); ++k) {
    UamState next;
    c += node_step(problem.nodes[k], X[k], U[k], next);
  }
  const OcpNode& t = problem.terminal();
  return c + cost_value(t.costs, node_model(t), X.back(), nullptr);
}

/// Adapter exposing an OcpProblem to the solver.
class UamOcp {
 public:
  using State = UamState;

  explicit UamOcp(const OcpProblem& problem) : p_(problem) {
    if (p_.nodes.size() < 2) throw ValidationError("an OCP needs at least two nodes");
    const RobotModel& m = node_model(p_.nodes.front());
    lower_ = m.control_lower();
    upper_ = m.control_upper();
    for (const auto& n : p_.nodes) {
      const RobotModel& mk = node_model(n);
      lower_ = lower_.cwiseMax(mk.control_lower());
      upper_ = upper_.cwiseMin(mk.control_upper());
    }
  }

  const OcpProblem& problem() const { return p_; }
  std::size_t horizon() const { return p_.horizon(); }
  const State& initial_state() const { return p_.x0; }
  Eigen::Index ndx() const { return node_model(p_.nodes.front()).ndx(); }
  Eigen::Index nu() const { return node_model(p_.nodes.front()).nu(); }
  State integrate(const State& x, const VectorX& dx) const { return state_oplus(x, dx); }
  VectorX difference(const State& x, const State& y) const { return state_ominus(y, x); }
  bool bounded() const { return true; }
  const VectorX& control_lower() const { return lower_; }
  const VectorX& control_upper() const { return upper_; }

  double running(std::size_t k, const State& x, const VectorX& u, State& next) const {
    return node_step(p_.nodes[k], x, u, next);
  }

  void running_derivatives(std::size_t k, const State& x, const VectorX& u, NodeDerivatives<State>& out) const {
    const OcpNode& node = p_.nodes[k];
    const RobotModel& m = node_model(node);
    const DynamicsSpec& d = node.dynamics;
    StepDerivatives sd = step_derivatives(m, x, u, d.dt, d.integrator, d.contacts, d.baumgarte);
    ContactForces forces;
    if (!d.contacts.empty()) {
      forces.contacts = &d.contacts;
      forces.lambda = std::move(sd.lambda);
      forces.lambda_x = std::move(sd.lambda_x);
      forces.lambda_u = std::move(sd.lambda_u);
    }
    CostDerivatives c = eval_cost(node.costs, m, x, &u, &forces);
    out.next = std::move(sd.next);
    out.fx = std::move(sd.fx);
    out.fu = std::move(sd.fu);
    out.cost = c.value;
    out.lx = std::move(c.lx);
    out.lu = std::move(c.lu);
    out.lxx = std::move(c.lxx);
    out.lux = std::move(c.lux);
    out.luu = std::move(c.luu);
  }

  double terminal(const State& x) const {
    const OcpNode& t = p_.terminal();
    return cost_value(t.costs, node_model(t), x, nullptr);
  }

  void terminal_derivatives(const State& x, NodeDerivatives<State>& out) const {
    const OcpNode& t = p_.terminal();
    CostDerivatives c = eval_cost(t.costs, node_model(t), x, nullptr);
    out.cost = c.value;
    out.lx = std::move(c.lx);
    out.lxx = std::move(c.lxx);
  }

 private:
  const OcpProblem& p_;
  VectorX lower_, upper_;
};

/// Solves an OcpProblem from (X_guess, U_guess).
inline SolverResult<UamState> solve_ocp(const OcpProblem& problem, const std::vector<UamState>& X_guess,
                                        const std::vector<VectorX>& U_guess, const SolverSettings& settings = {}) {
  UamOcp ocp(problem);
  return solve(ocp, X_guess, U_guess, settings);
}

/// Cold start: every state at x0, every control at the hover control clipped into the bounds.
inline std::pair<std::vector<UamState>, std::vector<VectorX>> hover_guess(const OcpProblem& problem) {
  std::vector<UamState> X(problem.n_nodes(), problem.x0);
  std::vector<VectorX> U;
  for (std::size_t k = 0; k < problem.horizon(); ++k) {
    const RobotModel& m = node_model(problem.nodes[k]);
    U.push_back(m.hover_control().cwiseMax(m.control_lower()).cwiseMin(m.control_upper()));
  }
  return {X, U};
}

}  // namespace uamoc
