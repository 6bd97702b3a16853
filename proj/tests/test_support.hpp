#pragma once

#include <filesystem>
#include <random>

#include "uamoc/model_io.hpp"

namespace testing_support {

using namespace uamoc;

inline std::filesystem::path config_path(const std::string& relative) {
  return std::filesystem::path(UAMOC_CONFIG_DIR) / relative;
}

inline const RobotModel& hexacopter() {
  static const RobotModel m = load_model_file(config_path("models/hexacopter370.yaml"));
  return m;
}

inline const RobotModel& hexacopter_arm() {
  static const RobotModel m = load_model_file(config_path("models/hexacopter370_arm3.yaml"));
  return m;
}

inline const RobotModel& tilthex_arm() {
  static const RobotModel m = load_model_file(config_path("models/tilthex_arm5.yaml"));
  return m;
}

/// Rigid body driven by three body-fixed forces along x, y, z at its centre.
inline RobotModel point_mass(double mass) {
  RobotModel m;
  m.name = "point_mass";
  m.base_mass = mass;
  m.base_inertia = 0.01 * Matrix3::Identity();
  const Matrix3 to_x = Eigen::AngleAxisd(M_PI / 2, Vector3::UnitY()).toRotationMatrix();
  const Matrix3 to_y = Eigen::AngleAxisd(-M_PI / 2, Vector3::UnitX()).toRotationMatrix();
  for (const Matrix3& R : {to_x, to_y, Matrix3::Identity().eval()}) {
    RotorSpec r;
    r.orientation = R;
    r.max_thrust = 100.0;
    m.rotors.push_back(r);
  }
  m.finalize();
  return m;
}

inline UamState random_state(std::mt19937_64& rng, const RobotModel& model, double vel_scale = 1.0) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  UamState x = model.neutral_state();
  Vector6 t;
  for (int i = 0; i < 6; ++i) t(i) = u(rng);
  t.tail<3>() *= 1.5;
  x.pose = exp_se3(t);
  for (Eigen::Index i = 0; i < x.joints.size(); ++i) x.joints(i) = 1.5 * u(rng);
  for (Eigen::Index i = 0; i < x.velocity.size(); ++i) x.velocity(i) = vel_scale * u(rng);
  return x;
}

inline VectorX random_control(std::mt19937_64& rng, const RobotModel& model) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  VectorX c(model.nu());
  for (Eigen::Index i = 0; i < c.size(); ++i) {
    c(i) = model.control_lower()(i) + u(rng) * (model.control_upper()(i) - model.control_lower()(i));
  }
  return c;
}

inline VectorX random_unit(std::mt19937_64& rng, Eigen::Index n) {
  std::normal_distribution<double> g(0.0, 1.0);
  VectorX v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = g(rng);
  return v.normalized();
}

}  // namespace testing_support
