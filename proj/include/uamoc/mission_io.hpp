#pragma once

// YAML mission documents.
//
//   name: four-displacement
//   model: ../models/hexacopter370_arm3.yaml   # relative to this file
//   thrust_limits: {min: 0, max: 4}            # optional override of the base model
//   variants:
//     - {name: with_box, payload: {mass: 1.0, com: [0, 0, -0.1], inertia: [..6]}}
//     - {name: other, model: ../models/other.yaml}
//   dt: 0.01
//   integrator: euler | rk4
//   baumgarte: {kp: 0, kd: 0}
//   initial_state: {position: [..], rpy: [..] | quaternion: [w, x, y, z], joints: [..], velocity: [..]}
//   phases:
//     - name: approach
//       kind: navigation | task
//       duration: 2.0                          # omitted for an instantaneous phase
//       model: with_box
//       contacts: [{frame: ee, anchor: [..], axes: [true, true, true], surface_rpy: [..] | surface_quaternion: [..]}]
//       costs:
//         - {kind: state, w: 1, W: [..] | {position: .., orientation: .., joints: ..,
//            linear_velocity: .., angular_velocity: .., joint_velocity: ..},
//            target: <state>, blocks: [position, orientation, joints, velocity]}
//         - {kind: control, w: 1e-3, target: hover | [..], W: [..]}
//         - {kind: frame_pose | frame_position | frame_orientation, frame: ee, w: 100,
//            position: [..], rpy: [..] | quaternion: [..], W: [..6 | ..3]}
//         - {kind: frame_velocity, frame: ee, w: 10, velocity: [..6], axes: [..6], W: [..6]}
//         - {kind: friction_cone, frame: ee, w: 10, mu: 0.7}
//         - {kind: state_bounds, w: 100, lower: [..], upper: [..]}
//   controller: {type: carrot, N: 30, dt: 0.03, max_iters: 4, alpha_task: 4, state_weight: 1,
//                control_weight: 1e-3, uaw: <W>, carrot_factor: 100, compensation_time: 0,
//                track_reference_controls: false}
//   solver: {max_iters: 300, grad_tol: 1e-5}    # offline solves
//   sim: {plant_dt: 0.0005, estimate_dt: 0.0025, duration: 10, seed: 0, estimate_noise: 0,
//         disturbances: [{start: 4.5, duration: 0.4, force: [..]}]}
//
// State targets take unspecified pose and joint fields from initial_state and
// default to zero velocity.

#include <filesystem>
#include <functional>
#include <iomanip>
#include <optional>
#include <sstream>

#include "uamoc/model_io.hpp"
#include "uamoc/sim.hpp"

namespace uamoc {

struct PayloadSpec {
  double mass = 0.0;
  Vector3 com = Vector3::Zero();
  Matrix3 inertia = Matrix3::Zero();
};

struct ThrustLimits {
  std::optional<double> min, max;
};

struct VariantSpec {
  std::string name;
  std::string model_path;  // empty = derived from the base model
  std::optional<PayloadSpec> payload;
  ThrustLimits thrust;
};

/// Parsed mission document together with the models it references.
struct MissionDocument {
  std::string source;
  std::filesystem::path base_dir;
  std::string model_path;
  ThrustLimits thrust;
  std::vector<VariantSpec> variants;
  ModelRegistry models;
  Mission mission;
  UamState initial_state;
  SolverSettings solver = default_offline_settings();
  std::optional<MpcConfig> controller;
  std::optional<SimConfig> sim;

  static SolverSettings default_offline_settings() {
    SolverSettings s;
    s.max_iters = 300;
    return s;
  }

  const RobotModel& model() const { return models.base(); }
};

namespace detail {

/// Collects violations instead of stopping at the first one.
class Violations {
 public:
  template <typename F>
  void check(F&& f) {
    try {
      f();
    } catch (const Error& e) {
      messages_.push_back(e.what());
    }
  }
  void add(std::string m) { messages_.push_back(std::move(m)); }
  bool empty() const { return messages_.empty(); }
  const std::vector<std::string>& messages() const { return messages_; }

  void raise(const std::string& header) const {
    if (messages_.empty()) return;
    std::string all = header;
    for (const auto& m : messages_) all += "\n  " + m;
    throw MissionValidationError(all);
  }

 private:
  std::vector<std::string> messages_;
};

inline Quaternion orientation_of(const yamlio::Reader& rd, const YAML::Node& n, const std::string& path,
                                 const Quaternion& fallback) {
  if (n["rpy"] && n["quaternion"]) throw ValidationError(rd.at(n, path) + ": give either rpy or quaternion");
  if (n["rpy"]) return Pose::from_rpy(rd.vec(n["rpy"], path + ".rpy", 3), Vector3::Zero()).quaternion();
  if (n["quaternion"]) {
    const VectorX q = rd.vec(n["quaternion"], path + ".quaternion", 4);
    if (q.norm() < 1e-12) throw ValidationError(rd.at(n["quaternion"], path + ".quaternion") + ": zero quaternion");
    return Quaternion(q(0), q(1), q(2), q(3)).normalized();
  }
  return fallback;
}

inline Pose pose_of(const yamlio::Reader& rd, const YAML::Node& n, const std::string& path, const Pose& fallback) {
  const Vector3 p = rd.vec3_or(n, "position", path, fallback.translation());
  return Pose(orientation_of(rd, n, path, fallback.quaternion()), p);
}

inline UamState state_of(const yamlio::Reader& rd, const YAML::Node& n, const std::string& path, const RobotModel& m,
                         const UamState& fallback) {
  if (!n.IsMap()) throw ValidationError(rd.at(n, path) + ": expected a mapping");
  for (const auto& kv : n) {
    const std::string key = kv.first.as<std::string>();
    if (key != "position" && key != "rpy" && key != "quaternion" && key != "joints" && key != "velocity") {
      throw ValidationError(rd.at(kv.first, path + "." + key) + ": unknown field");
    }
  }
  UamState x = fallback;
  x.pose = pose_of(rd, n, path, fallback.pose);
  if (n["joints"]) x.joints = rd.vec(n["joints"], path + ".joints", m.n_joints());
  x.velocity = n["velocity"] ? rd.vec(n["velocity"], path + ".velocity", m.nv()) : VectorX::Zero(m.nv());
  return x;
}

/// W diagonal from a list of ndx entries or a per-block mapping (missing blocks = 1).
inline VectorX state_weights_of(const yamlio::Reader& rd, const YAML::Node& n, const std::string& path,
                                const RobotModel& m) {
  if (n.IsSequence()) return rd.vec(n, path, m.ndx());
  if (!n.IsMap()) throw ValidationError(rd.at(n, path) + ": expected a list or a per-block mapping");
  const Eigen::Index nj = m.n_joints();
  VectorX W = VectorX::Ones(m.ndx());
  const std::vector<std::tuple<std::string, Eigen::Index, Eigen::Index>> blocks = {
      {"position", 0, 3},         {"orientation", 3, 3},           {"joints", 6, nj},
      {"linear_velocity", 6 + nj, 3}, {"angular_velocity", 9 + nj, 3}, {"joint_velocity", 12 + nj, nj}};
  for (const auto& kv : n) {
    const std::string key = kv.first.as<std::string>();
    bool known = false;
    for (const auto& [name, start, len] : blocks) {
      if (name != key) continue;
      known = true;
      const double v = rd.as<double>(kv.second, path + "." + key);
      if (!(v > 0.0)) throw ValidationError(rd.at(kv.second, path + "." + key) + ": must be > 0");
      W.segment(start, len).setConstant(v);
    }
    if (!known) throw ValidationError(rd.at(kv.first, path + "." + key) + ": unknown weight block");
  }
  return W;
}

inline ResidualKind residual_kind_of(const yamlio::Reader& rd, const YAML::Node& n, const std::string& path) {
  const std::string s = rd.as<std::string>(n, path);
  for (ResidualKind k : {ResidualKind::State, ResidualKind::Control, ResidualKind::FramePose,
                         ResidualKind::FramePosition, ResidualKind::FrameOrientation, ResidualKind::FrameVelocity,
                         ResidualKind::FrictionCone, ResidualKind::StateBounds}) {
    if (s == to_string(k)) return k;
  }
  throw ValidationError(rd.at(n, path) + ": unknown residual kind '" + s + "'");
}

inline ResidualSpec residual_of(const yamlio::Reader& rd, const YAML::Node& n, const std::string& path,
                                const RobotModel& m, const UamState& initial) {
  ResidualSpec s;
  s.kind = residual_kind_of(rd, rd.require(n, "kind", path), path + ".kind");
  s.weight = rd.get<double>(n, "w", path);
  if (s.weight < 0.0) throw ValidationError(rd.at(n["w"], path + ".w") + ": must be >= 0");
  if (n["frame"]) s.frame = rd.get<std::string>(n, "frame", path);
  switch (s.kind) {
    case ResidualKind::State: {
      if (n["W"]) s.weight_matrix = state_weights_of(rd, n["W"], path + ".W", m);
      s.state_target = n["target"] ? state_of(rd, n["target"], path + ".target", m, initial) : initial;
      if (!n["target"]) s.state_target.velocity.setZero();
      if (n["blocks"]) {
        s.blocks = StateBlocks{false, false, false, false};
        const YAML::Node b = n["blocks"];
        if (!b.IsSequence()) throw ValidationError(rd.at(b, path + ".blocks") + ": expected a list");
        for (std::size_t i = 0; i < b.size(); ++i) {
          const std::string name = rd.as<std::string>(b[i], path + ".blocks[" + std::to_string(i) + "]");
          if (name == "position") s.blocks.position = true;
          else if (name == "orientation") s.blocks.orientation = true;
          else if (name == "joints") s.blocks.joints = true;
          else if (name == "velocity") s.blocks.velocity = true;
          else throw ValidationError(rd.at(b[i], path + ".blocks[" + std::to_string(i) + "]") + ": unknown block '" + name + "'");
        }
      }
      break;
    }
    case ResidualKind::Control: {
      if (n["W"]) s.weight_matrix = rd.vec(n["W"], path + ".W", m.nu());
      if (n["target"]) {
        const YAML::Node t = n["target"];
        if (t.IsScalar() && t.as<std::string>() == "hover") {
          s.control_target = m.hover_control();
        } else {
          s.control_target = rd.vec(t, path + ".target", m.nu());
        }
      }
      break;
    }
    case ResidualKind::FramePose:
    case ResidualKind::FramePosition:
    case ResidualKind::FrameOrientation:
      rd.require(n, "frame", path);
      s.pose_target = pose_of(rd, n, path, Pose());
      if (n["W"]) s.weight_matrix = rd.vec(n["W"], path + ".W", s.kind == ResidualKind::FramePose ? 6 : 3);
      break;
    case ResidualKind::FrameVelocity: {
      rd.require(n, "frame", path);
      if (n["velocity"]) s.velocity_target = rd.vec(n["velocity"], path + ".velocity", 6);
      if (n["W"]) s.weight_matrix = rd.vec(n["W"], path + ".W", 6);
      if (n["axes"]) {
        const YAML::Node a = rd.require(n, "axes", path);
        if (!a.IsSequence() || a.size() != 6) throw ValidationError(rd.at(a, path + ".axes") + ": expected 6 booleans");
        for (std::size_t i = 0; i < 6; ++i) s.velocity_axes[i] = rd.as<bool>(a[i], path + ".axes[" + std::to_string(i) + "]");
      }
      break;
    }
    case ResidualKind::FrictionCone:
      rd.require(n, "frame", path);
      s.mu = rd.get_or<double>(n, "mu", path, s.mu);
      if (!(s.mu > 0.0)) throw ValidationError(rd.at(n["mu"], path + ".mu") + ": must be > 0");
      break;
    case ResidualKind::StateBounds:
      s.lower = rd.vec(rd.require(n, "lower", path), path + ".lower", m.ndx());
      s.upper = rd.vec(rd.require(n, "upper", path), path + ".upper", m.ndx());
      break;
  }
  if (!s.frame.empty()) {
    try {
      (void)m.frame_index(s.frame);
    } catch (const UnknownFrame&) {
      throw ValidationError(rd.at(n["frame"], path + ".frame") + ": unknown frame '" + s.frame + "'");
    }
  }
  return s;
}

inline ContactSpec contact_of(const yamlio::Reader& rd, const YAML::Node& n, const std::string& path,
                              const RobotModel& m) {
  ContactSpec c;
  c.frame = rd.get<std::string>(n, "frame", path);
  try {
    (void)m.frame_index(c.frame);
  } catch (const UnknownFrame&) {
    throw ValidationError(rd.at(n["frame"], path + ".frame") + ": unknown frame '" + c.frame + "'");
  }
  c.anchor = rd.vec3(n, "anchor", path);
  if (n["axes"]) {
    const YAML::Node a = n["axes"];
    if (!a.IsSequence() || a.size() != 3) throw ValidationError(rd.at(a, path + ".axes") + ": expected 3 booleans");
    for (std::size_t i = 0; i < 3; ++i) c.axes[i] = rd.as<bool>(a[i], path + ".axes[" + std::to_string(i) + "]");
  }
  if (n["surface_rpy"] || n["surface_quaternion"]) {
    YAML::Node o;
    if (n["surface_rpy"]) o["rpy"] = n["surface_rpy"];
    if (n["surface_quaternion"]) o["quaternion"] = n["surface_quaternion"];
    c.surface_rotation = orientation_of(rd, o, path + ".surface", Quaternion::Identity()).toRotationMatrix();
  }
  return c;
}

inline MpcConfig controller_of(const yamlio::Reader& rd, const YAML::Node& n, const std::string& path,
                               const RobotModel& m) {
  MpcConfig c;
  if (n["type"]) {
    try {
      c.controller = controller_from_string(rd.get<std::string>(n, "type", path));
    } catch (const ValidationError& e) {
      throw ValidationError(rd.at(n["type"], path + ".type") + ": " + e.what());
    }
  }
  c.N = rd.get_or<int>(n, "N", path, c.N);
  c.dt = rd.get_or<double>(n, "dt", path, c.dt);
  c.max_solver_iters = rd.get_or<int>(n, "max_iters", path, c.max_solver_iters);
  c.alpha_task = rd.get_or<double>(n, "alpha_task", path, c.alpha_task);
  c.state_weight = rd.get_or<double>(n, "state_weight", path, c.state_weight);
  c.control_weight = rd.get_or<double>(n, "control_weight", path, c.control_weight);
  if (n["uaw"]) c.uaw = state_weights_of(rd, n["uaw"], path + ".uaw", m);
  c.carrot_factor = rd.get_or<double>(n, "carrot_factor", path, c.carrot_factor);
  c.compensation_time = rd.get_or<double>(n, "compensation_time", path, c.compensation_time);
  c.track_reference_controls = rd.get_or<bool>(n, "track_reference_controls", path, c.track_reference_controls);
  try {
    c.validate();
  } catch (const ValidationError& e) {
    throw ValidationError(rd.at(n, path) + ": " + e.what());
  }
  return c;
}

inline SimConfig sim_of(const yamlio::Reader& rd, const YAML::Node& n, const std::string& path) {
  SimConfig s;
  s.plant_dt = rd.get_or<double>(n, "plant_dt", path, s.plant_dt);
  s.estimate_dt = rd.get_or<double>(n, "estimate_dt", path, s.estimate_dt);
  s.duration = rd.get_or<double>(n, "duration", path, s.duration);
  s.seed = rd.get_or<unsigned long long>(n, "seed", path, s.seed);
  s.estimate_noise = rd.get_or<double>(n, "estimate_noise", path, s.estimate_noise);
  if (n["disturbances"]) {
    const YAML::Node ds = n["disturbances"];
    if (!ds.IsSequence()) throw ValidationError(rd.at(ds, path + ".disturbances") + ": expected a list");
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const std::string p = path + ".disturbances[" + std::to_string(i) + "]";
      DisturbanceSpec d;
      d.start = rd.get<double>(ds[i], "start", p);
      d.duration = rd.get<double>(ds[i], "duration", p);
      d.force = rd.vec3(ds[i], "force", p);
      s.disturbances.push_back(d);
    }
  }
  return s;
}

inline ThrustLimits thrust_of(const yamlio::Reader& rd, const YAML::Node& n, const std::string& path) {
  ThrustLimits t;
  if (n["min"]) t.min = rd.get<double>(n, "min", path);
  if (n["max"]) t.max = rd.get<double>(n, "max", path);
  return t;
}

inline RobotModel apply_thrust(RobotModel m, const ThrustLimits& t) {
  if (!t.min && !t.max) return m;
  return with_thrust_limits(std::move(m), t.min, t.max);
}

inline std::filesystem::path resolve(const std::filesystem::path& base_dir, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : base_dir / path;
}

}  // namespace detail

/// Parses a mission document. `model_override` replaces the document's model
/// path. Every violation found is reported in one MissionValidationError.
inline MissionDocument load_mission(const std::string& text, const std::string& source,
                                    const std::filesystem::path& base_dir = ".",
                                    const std::string& model_override = "") {
  const YAML::Node doc = yamlio::parse(text, source);
  const yamlio::Reader rd(source);
  detail::Violations v;
  MissionDocument out;
  out.source = source;
  out.base_dir = base_dir;
  if (!doc.IsMap()) throw MissionValidationError(source + ": expected a mapping at the top level");

  for (const auto& kv : doc) {
    static const std::vector<std::string> known = {"name", "model", "thrust_limits", "variants", "dt", "integrator",
                                                   "baumgarte", "initial_state", "phases", "solver", "controller", "sim"};
    const std::string key = kv.first.as<std::string>();
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      v.add(rd.at(kv.first, key) + ": unknown field");
    }
  }

  v.check([&] { out.mission.name = rd.get<std::string>(doc, "name", "mission"); });
  std::optional<RobotModel> base;
  v.check([&] {
    out.model_path = model_override.empty() ? rd.get<std::string>(doc, "model", "mission") : model_override;
    if (doc["thrust_limits"]) out.thrust = detail::thrust_of(rd, doc["thrust_limits"], "thrust_limits");
    const auto path = model_override.empty() ? detail::resolve(base_dir, out.model_path)
                                             : std::filesystem::path(model_override);
    base = detail::apply_thrust(load_model_file(path), out.thrust);
  });
  if (!base) v.raise(source + ": invalid mission document");
  const RobotModel& m = *base;
  out.models.add("", m);

  if (doc["variants"]) {
    const YAML::Node vs = doc["variants"];
    for (std::size_t i = 0; i < vs.size(); ++i) {
      v.check([&] {
        const std::string p = "variants[" + std::to_string(i) + "]";
        VariantSpec spec;
        spec.name = rd.get<std::string>(vs[i], "name", p);
        if (spec.name.empty() || out.models.contains(spec.name)) {
          throw ValidationError(rd.at(vs[i], p + ".name") + ": empty or duplicate variant name");
        }
        RobotModel vm = m;
        if (vs[i]["model"]) {
          spec.model_path = rd.get<std::string>(vs[i], "model", p);
          vm = load_model_file(detail::resolve(base_dir, spec.model_path));
        }
        if (vs[i]["payload"]) {
          const YAML::Node pl = vs[i]["payload"];
          PayloadSpec ps;
          ps.mass = rd.get<double>(pl, "mass", p + ".payload");
          ps.com = rd.vec3_or(pl, "com", p + ".payload", Vector3::Zero());
          ps.inertia = pl["inertia"] ? rd.inertia(pl, "inertia", p + ".payload") : Matrix3::Zero();
          if (!(ps.mass > 0.0)) throw ValidationError(rd.at(pl, p + ".payload.mass") + ": must be > 0");
          vm = with_payload(std::move(vm), ps.mass, ps.com, ps.inertia);
          spec.payload = ps;
        }
        if (vs[i]["thrust_limits"]) {
          spec.thrust = detail::thrust_of(rd, vs[i]["thrust_limits"], p + ".thrust_limits");
          vm = detail::apply_thrust(std::move(vm), spec.thrust);
        }
        out.models.add(spec.name, std::move(vm));
        out.variants.push_back(spec);
      });
    }
  }

  v.check([&] { out.mission.dt = rd.get<double>(doc, "dt", "mission"); });
  v.check([&] {
    const std::string integ = rd.get_or<std::string>(doc, "integrator", "mission", "euler");
    if (integ == "euler") out.mission.integrator = Integrator::SemiImplicitEuler;
    else if (integ == "rk4") out.mission.integrator = Integrator::Rk4;
    else throw ValidationError(rd.at(doc["integrator"], "integrator") + ": expected euler or rk4");
  });
  v.check([&] {
    if (!doc["baumgarte"]) return;
    out.mission.baumgarte.kp = rd.get_or<double>(doc["baumgarte"], "kp", "baumgarte", 0.0);
    out.mission.baumgarte.kd = rd.get_or<double>(doc["baumgarte"], "kd", "baumgarte", 0.0);
  });
  out.initial_state = m.neutral_state();
  v.check([&] {
    if (doc["initial_state"]) {
      out.initial_state = detail::state_of(rd, doc["initial_state"], "initial_state", m, m.neutral_state());
    }
  });

  v.check([&] {
    const YAML::Node phases = rd.require(doc, "phases", "mission");
    if (!phases.IsSequence() || phases.size() == 0) {
      throw ValidationError(rd.at(phases, "phases") + ": expected a non-empty list");
    }
    for (std::size_t i = 0; i < phases.size(); ++i) {
      const YAML::Node pn = phases[i];
      const std::string p = "phases[" + std::to_string(i) + "]";
      Phase ph;
      v.check([&] { ph.name = rd.get<std::string>(pn, "name", p); });
      v.check([&] {
        const std::string k = rd.get_or<std::string>(pn, "kind", p, "navigation");
        if (k == "navigation") ph.kind = PhaseKind::Navigation;
        else if (k == "task") ph.kind = PhaseKind::Task;
        else throw ValidationError(rd.at(pn["kind"], p + ".kind") + ": expected navigation or task");
      });
      v.check([&] {
        if (!pn["duration"]) return;
        ph.duration = rd.get<double>(pn, "duration", p);
        phase_intervals(*ph.duration, out.mission.dt, ph.name);
      });
      const RobotModel* pm = &m;
      v.check([&] {
        if (!pn["model"]) return;
        ph.model_variant = rd.get<std::string>(pn, "model", p);
        if (!out.models.contains(ph.model_variant)) {
          throw ValidationError(rd.at(pn["model"], p + ".model") + ": unknown model variant '" + ph.model_variant + "'");
        }
        pm = &out.models.get(ph.model_variant);
      });
      if (pn["contacts"]) {
        for (std::size_t c = 0; c < pn["contacts"].size(); ++c) {
          v.check([&] {
            ph.contacts.push_back(
                detail::contact_of(rd, pn["contacts"][c], p + ".contacts[" + std::to_string(c) + "]", *pm));
          });
        }
      }
      if (pn["costs"]) {
        const YAML::Node cs = pn["costs"];
        for (std::size_t c = 0; c < cs.size(); ++c) {
          v.check([&] {
            ph.costs.residuals.push_back(
                detail::residual_of(rd, cs[c], p + ".costs[" + std::to_string(c) + "]", *pm, out.initial_state));
          });
        }
      }
      out.mission.phases.push_back(std::move(ph));
    }
  });

  v.check([&] {
    if (!doc["solver"]) return;
    out.solver.max_iters = rd.get_or<int>(doc["solver"], "max_iters", "solver", out.solver.max_iters);
    out.solver.grad_tol = rd.get_or<double>(doc["solver"], "grad_tol", "solver", out.solver.grad_tol);
    if (out.solver.max_iters < 1) throw ValidationError(rd.at(doc["solver"], "solver.max_iters") + ": must be >= 1");
  });
  v.check([&] {
    if (doc["controller"]) out.controller = detail::controller_of(rd, doc["controller"], "controller", m);
  });
  v.check([&] {
    if (doc["sim"]) out.sim = detail::sim_of(rd, doc["sim"], "sim");
  });
  v.check([&] {
    if (out.sim) out.sim->validate(out.controller ? out.controller->dt : MpcConfig().dt);
  });
  if (v.empty()) {
    v.check([&] { validate_mission(out.mission, out.models); });
  }
  v.raise(source + ": invalid mission document");
  return out;
}

inline MissionDocument load_mission_file(const std::filesystem::path& path, const std::string& model_override = "") {
  return load_mission(yamlio::read_file(path), path.string(), path.parent_path(), model_override);
}

// ---------------------------------------------------------------------------
// Emitter

namespace detail {

inline std::string num(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

inline std::string list(const VectorX& v) {
  std::string s = "[";
  for (Eigen::Index i = 0; i < v.size(); ++i) s += (i ? ", " : "") + num(v(i));
  return s + "]";
}

inline std::string quat(const Quaternion& q) { return list(Eigen::Vector4d(q.w(), q.x(), q.y(), q.z())); }

inline std::string state_text(const UamState& x) {
  return "{position: " + list(x.pose.translation()) + ", quaternion: " + quat(x.pose.quaternion()) +
         ", joints: " + list(x.joints) + ", velocity: " + list(x.velocity) + "}";
}

inline std::string bools(const bool* b, std::size_t n) {
  std::string s = "[";
  for (std::size_t i = 0; i < n; ++i) s += std::string(i ? ", " : "") + (b[i] ? "true" : "false");
  return s + "]";
}

inline std::string residual_text(const ResidualSpec& r) {
  std::string s = std::string("{kind: ") + to_string(r.kind) + ", w: " + num(r.weight);
  if (!r.frame.empty()) s += ", frame: " + r.frame;
  switch (r.kind) {
    case ResidualKind::State: {
      if (r.weight_matrix.size()) s += ", W: " + list(r.weight_matrix);
      s += ", target: " + state_text(r.state_target);
      std::vector<std::string> b;
      if (r.blocks.position) b.push_back("position");
      if (r.blocks.orientation) b.push_back("orientation");
      if (r.blocks.joints) b.push_back("joints");
      if (r.blocks.velocity) b.push_back("velocity");
      s += ", blocks: [";
      for (std::size_t i = 0; i < b.size(); ++i) s += (i ? ", " : "") + b[i];
      s += "]";
      break;
    }
    case ResidualKind::Control:
      if (r.weight_matrix.size()) s += ", W: " + list(r.weight_matrix);
      if (r.control_target.size()) s += ", target: " + list(r.control_target);
      break;
    case ResidualKind::FramePose:
    case ResidualKind::FramePosition:
    case ResidualKind::FrameOrientation:
      if (r.weight_matrix.size()) s += ", W: " + list(r.weight_matrix);
      s += ", position: " + list(r.pose_target.translation()) + ", quaternion: " + quat(r.pose_target.quaternion());
      break;
    case ResidualKind::FrameVelocity:
      if (r.weight_matrix.size()) s += ", W: " + list(r.weight_matrix);
      s += ", velocity: " + list(r.velocity_target) + ", axes: " + bools(r.velocity_axes.data(), 6);
      break;
    case ResidualKind::FrictionCone:
      s += ", mu: " + num(r.mu);
      break;
    case ResidualKind::StateBounds:
      s += ", lower: " + list(r.lower) + ", upper: " + list(r.upper);
      break;
  }
  return s + "}";
}

inline std::string thrust_text(const ThrustLimits& t) {
  std::string s = "{";
  if (t.min) s += "min: " + num(*t.min);
  if (t.max) s += std::string(t.min ? ", " : "") + "max: " + num(*t.max);
  return s + "}";
}

}  // namespace detail

/// Canonical YAML form of a parsed document; every value is explicit.
inline std::string emit_mission(const MissionDocument& d) {
  using namespace detail;
  std::ostringstream o;
  o << "name: " << d.mission.name << "\n";
  o << "model: " << d.model_path << "\n";
  if (d.thrust.min || d.thrust.max) o << "thrust_limits: " << thrust_text(d.thrust) << "\n";
  if (!d.variants.empty()) {
    o << "variants:\n";
    for (const auto& v : d.variants) {
      o << "  - {name: " << v.name;
      if (!v.model_path.empty()) o << ", model: " << v.model_path;
      if (v.payload) {
        const Matrix3& I = v.payload->inertia;
        o << ", payload: {mass: " << num(v.payload->mass) << ", com: " << list(v.payload->com)
          << ", inertia: " << list(Vector6(I(0, 0), I(0, 1), I(0, 2), I(1, 1), I(1, 2), I(2, 2))) << "}";
      }
      if (v.thrust.min || v.thrust.max) o << ", thrust_limits: " << thrust_text(v.thrust);
      o << "}\n";
    }
  }
  o << "dt: " << num(d.mission.dt) << "\n";
  o << "integrator: " << (d.mission.integrator == Integrator::Rk4 ? "rk4" : "euler") << "\n";
  o << "baumgarte: {kp: " << num(d.mission.baumgarte.kp) << ", kd: " << num(d.mission.baumgarte.kd) << "}\n";
  o << "initial_state: " << state_text(d.initial_state) << "\n";
  o << "phases:\n";
  for (const auto& p : d.mission.phases) {
    o << "  - name: " << p.name << "\n";
    o << "    kind: " << (p.kind == PhaseKind::Task ? "task" : "navigation") << "\n";
    if (p.duration) o << "    duration: " << num(*p.duration) << "\n";
    if (!p.model_variant.empty()) o << "    model: " << p.model_variant << "\n";
    if (!p.contacts.empty()) {
      o << "    contacts:\n";
      for (const auto& c : p.contacts) {
        o << "      - {frame: " << c.frame << ", anchor: " << list(c.anchor) << ", axes: " << bools(c.axes.data(), 3)
          << ", surface_quaternion: " << quat(Quaternion(c.surface_rotation)) << "}\n";
      }
    }
    o << "    costs:" << (p.costs.residuals.empty() ? " []" : "") << "\n";
    for (const auto& r : p.costs.residuals) o << "      - " << residual_text(r) << "\n";
  }
  o << "solver: {max_iters: " << d.solver.max_iters << ", grad_tol: " << num(d.solver.grad_tol) << "}\n";
  if (d.controller) {
    const MpcConfig& c = *d.controller;
    o << "controller: {type: " << to_string(c.controller) << ", N: " << c.N << ", dt: " << num(c.dt)
      << ", max_iters: " << c.max_solver_iters << ", alpha_task: " << num(c.alpha_task)
      << ", state_weight: " << num(c.state_weight) << ", control_weight: " << num(c.control_weight);
    if (c.uaw.size()) o << ", uaw: " << list(c.uaw);
    o << ", carrot_factor: " << num(c.carrot_factor) << ", compensation_time: " << num(c.compensation_time)
      << ", track_reference_controls: " << (c.track_reference_controls ? "true" : "false") << "}\n";
  }
  if (d.sim) {
    const SimConfig& s = *d.sim;
    o << "sim:\n  plant_dt: " << num(s.plant_dt) << "\n  estimate_dt: " << num(s.estimate_dt)
      << "\n  duration: " << num(s.duration) << "\n  seed: " << s.seed << "\n  estimate_noise: " << num(s.estimate_noise)
      << "\n  disturbances:";
    if (s.disturbances.empty()) o << " []";
    o << "\n";
    for (const auto& dist : s.disturbances) {
      o << "    - {start: " << num(dist.start) << ", duration: " << num(dist.duration)
        << ", force: " << list(dist.force) << "}\n";
    }
  }
  return o.str();
}

}  // namespace uamoc
