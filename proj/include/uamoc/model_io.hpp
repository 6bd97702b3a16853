#pragma once

// YAML model documents.
//
//   name: hexacopter370_arm3
//   gravity: [0, 0, -9.81]                      # optional
//   base:
//     mass: 2.0
//     inertia: [ixx, ixy, ixz, iyy, iyz, izz]
//     rotors:
//       - {position: [x, y, z], axis_rotation: [r, p, y], ccw: true, cm_over_cf: 0.016, max_thrust: 10}
//   arm:
//     joints:
//       - {name: link1, xyz: [..], rpy: [..], axis: [0, 0, 1], mass: 0.2, com: [..], inertia: [..], torque_limit: 5}
//   frames:
//     - {name: ee, parent: link3, xyz: [..], rpy: [..]}

#include <yaml-cpp/yaml.h>

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include "uamoc/model.hpp"

namespace uamoc {

namespace yamlio {

inline std::string where(const YAML::Node& node, const std::string& source) {
  const YAML::Mark m = node.Mark();
  if (m.is_null()) return source;
  return source + ":" + std::to_string(m.line + 1) + ":" + std::to_string(m.column + 1);
}

/// Field access with path-qualified error messages.
class Reader {
 public:
  Reader(std::string source) : source_(std::move(source)) {}

  const std::string& source() const { return source_; }

  YAML::Node require(const YAML::Node& parent, const std::string& key, const std::string& path) const {
    if (!parent.IsMap()) throw ValidationError(at(parent, path) + ": expected a mapping");
    const YAML::Node n = parent[key];
    if (!n) throw ValidationError(at(parent, path + "." + key) + ": missing required field");
    return n;
  }

  template <typename T>
  T as(const YAML::Node& n, const std::string& path) const {
    try {
      return n.as<T>();
    } catch (const YAML::Exception&) {
      throw ValidationError(at(n, path) + ": wrong type");
    }
  }

  template <typename T>
  T get(const YAML::Node& parent, const std::string& key, const std::string& path) const {
    return as<T>(require(parent, key, path), path + "." + key);
  }

  template <typename T>
  T get_or(const YAML::Node& parent, const std::string& key, const std::string& path, T fallback) const {
    if (!parent.IsMap() || !parent[key]) return fallback;
    return as<T>(parent[key], path + "." + key);
  }

  VectorX vec(const YAML::Node& n, const std::string& path, Eigen::Index expected = -1) const {
    if (!n.IsSequence()) throw ValidationError(at(n, path) + ": expected a list");
    if (expected >= 0 && Eigen::Index(n.size()) != expected) {
      throw ValidationError(at(n, path) + ": expected " + std::to_string(expected) + " entries, got " +
                            std::to_string(n.size()));
    }
    VectorX v(n.size());
    for (std::size_t i = 0; i < n.size(); ++i) v(Eigen::Index(i)) = as<double>(n[i], path + "[" + std::to_string(i) + "]");
    return v;
  }

  Vector3 vec3(const YAML::Node& parent, const std::string& key, const std::string& path) const {
    return vec(require(parent, key, path), path + "." + key, 3);
  }
  Vector3 vec3_or(const YAML::Node& parent, const std::string& key, const std::string& path,
                  const Vector3& fallback) const {
    if (!parent.IsMap() || !parent[key]) return fallback;
    return vec(parent[key], path + "." + key, 3);
  }

  /// Symmetric 3x3 matrix from its six upper-triangular entries.
  Matrix3 inertia(const YAML::Node& parent, const std::string& key, const std::string& path) const {
    const VectorX e = vec(require(parent, key, path), path + "." + key, 6);
    Matrix3 I;
    I << e(0), e(1), e(2), e(1), e(3), e(4), e(2), e(4), e(5);
    return I;
  }

  std::string at(const YAML::Node& n, const std::string& path) const { return where(n, source_) + ": " + path; }

 private:
  std::string source_;
};

inline YAML::Node parse(const std::string& text, const std::string& source) {
  try {
    return YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ParseError(source + ":" + std::to_string(e.mark.line + 1) + ":" + std::to_string(e.mark.column + 1) + ": " +
                     e.msg);
  }
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string() + ": cannot open file");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace yamlio

inline RobotModel model_from_node(const YAML::Node& doc, const std::string& source) {
  yamlio::Reader rd(source);
  if (!doc.IsMap()) throw ValidationError(source + ": model document must be a mapping");
  RobotModel m;
  m.name = rd.get_or<std::string>(doc, "name", "", "uam");
  m.gravity = rd.vec3_or(doc, "gravity", "", m.gravity);

  const YAML::Node base = rd.require(doc, "base", "");
  m.base_mass = rd.get<double>(base, "mass", "base");
  m.base_inertia = rd.inertia(base, "inertia", "base");
  const YAML::Node rotors = rd.require(base, "rotors", "base");
  if (!rotors.IsSequence()) throw ValidationError(rd.at(rotors, "base.rotors") + ": expected a list");
  for (std::size_t i = 0; i < rotors.size(); ++i) {
    const std::string path = "base.rotors[" + std::to_string(i) + "]";
    const YAML::Node r = rotors[i];
    RotorSpec spec;
    spec.position = rd.vec3(r, "position", path);
    spec.orientation = Pose::from_rpy(rd.vec3_or(r, "axis_rotation", path, Vector3::Zero()), Vector3::Zero()).rotation();
    spec.ccw = rd.get<bool>(r, "ccw", path);
    spec.cm_over_cf = rd.get<double>(r, "cm_over_cf", path);
    spec.max_thrust = rd.get<double>(r, "max_thrust", path);
    spec.min_thrust = rd.get_or<double>(r, "min_thrust", path, 0.0);
    m.rotors.push_back(spec);
  }

  if (doc["arm"]) {
    const YAML::Node joints = rd.require(doc["arm"], "joints", "arm");
    if (!joints.IsSequence()) throw ValidationError(rd.at(joints, "arm.joints") + ": expected a list");
    for (std::size_t j = 0; j < joints.size(); ++j) {
      const std::string path = "arm.joints[" + std::to_string(j) + "]";
      const YAML::Node n = joints[j];
      JointSpec spec;
      spec.name = rd.get_or<std::string>(n, "name", path, "link" + std::to_string(j + 1));
      spec.parent_transform = Pose::from_rpy(rd.vec3_or(n, "rpy", path, Vector3::Zero()), rd.vec3(n, "xyz", path));
      spec.axis = rd.vec3(n, "axis", path);
      spec.link_mass = rd.get<double>(n, "mass", path);
      spec.link_com = rd.vec3(n, "com", path);
      spec.link_inertia = rd.inertia(n, "inertia", path);
      spec.torque_limit = rd.get<double>(n, "torque_limit", path);
      m.joints.push_back(spec);
    }
  }

  if (doc["frames"]) {
    const YAML::Node frames = doc["frames"];
    if (!frames.IsSequence()) throw ValidationError(rd.at(frames, "frames") + ": expected a list");
    // Parents may be the base, a link or an earlier frame.
    std::vector<FrameSpec> known;
    known.push_back({"base", 0, Pose::identity()});
    for (std::size_t j = 0; j < m.joints.size(); ++j) known.push_back({m.joints[j].name, int(j) + 1, Pose::identity()});
    for (std::size_t i = 0; i < frames.size(); ++i) {
      const std::string path = "frames[" + std::to_string(i) + "]";
      const YAML::Node f = frames[i];
      FrameSpec spec;
      spec.name = rd.get<std::string>(f, "name", path);
      const std::string parent = rd.get<std::string>(f, "parent", path);
      const Pose offset = Pose::from_rpy(rd.vec3_or(f, "rpy", path, Vector3::Zero()), rd.vec3_or(f, "xyz", path, Vector3::Zero()));
      const FrameSpec* p = nullptr;
      for (const auto& k : known) {
        if (k.name == parent) p = &k;
      }
      if (!p) throw ValidationError(rd.at(f, path + ".parent") + ": unknown frame '" + parent + "'");
      spec.body = p->body;
      spec.offset = p->offset * offset;
      known.push_back(spec);
      m.frames.push_back(spec);
    }
  }

  try {
    m.finalize();
  } catch (const ValidationError& e) {
    throw ValidationError(source + ": " + e.what());
  }
  return m;
}

/// Parses and validates a model document.
inline RobotModel load_model(const std::string& text, const std::string& source = "<model>") {
  return model_from_node(yamlio::parse(text, source), source);
}

inline RobotModel load_model_file(const std::filesystem::path& path) {
  return load_model(yamlio::read_file(path), path.string());
}

/// Adds a rigidly attached payload to the last link (or the base for arm-less
/// models); `com` is expressed in that body's frame.
inline RobotModel with_payload(RobotModel model, double mass, const Vector3& com, const Matrix3& inertia) {
  if (model.joints.empty()) {
    // The base origin is its centre of mass, so a base payload must sit on it.
    if (com.norm() > 1e-12) throw ValidationError("payload on an arm-less model must be centred on the base COM");
    model.base_mass += mass;
    model.base_inertia += inertia;
  } else {
    JointSpec& link = model.joints.back();
    const double m0 = link.link_mass;
    const double mt = m0 + mass;
    const Vector3 c = (m0 * link.link_com + mass * com) / mt;
    auto shift = [](double m, const Vector3& d) { return m * (d.squaredNorm() * Matrix3::Identity() - d * d.transpose()); };
    link.link_inertia = link.link_inertia + shift(m0, link.link_com - c) + inertia + shift(mass, com - c);
    link.link_mass = mt;
    link.link_com = c;
  }
  model.finalize();
  return model;
}

inline RobotModel with_thrust_limits(RobotModel model, std::optional<double> min_thrust, std::optional<double> max_thrust) {
  for (auto& r : model.rotors) {
    if (min_thrust) r.min_thrust = *min_thrust;
    if (max_thrust) r.max_thrust = *max_thrust;
  }
  model.finalize();
  return model;
}

}  // namespace uamoc
