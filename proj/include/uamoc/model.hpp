#pragma once

// Multirotor-plus-serial-arm model: kinematics, free and contact-constrained
// forward dynamics, actuation mapping and discrete-time integration.
//
// Spatial vectors are ordered (linear, angular). Body 0 is the base, whose
// frame origin sits at the base centre of mass; body i (1..n_J) is the link
// moved by joint i. The generalized velocity is the base body twist followed
// by the joint rates.

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <array>
#include <string>
#include <vector>

#include "uamoc/errors.hpp"
#include "uamoc/liealg.hpp"

namespace uamoc {

struct RotorSpec {
  Vector3 position = Vector3::Zero();
  Matrix3 orientation = Matrix3::Identity();
  bool ccw = false;
  double cm_over_cf = 0.0;
  double min_thrust = 0.0;
  double max_thrust = 0.0;
};

struct JointSpec {
  std::string name;
  Pose parent_transform;
  Vector3 axis = Vector3::UnitZ();
  double link_mass = 0.0;
  Vector3 link_com = Vector3::Zero();
  Matrix3 link_inertia = Matrix3::Zero();
  double torque_limit = 0.0;
};

struct FrameSpec {
  std::string name;
  int body = 0;  // 0 = base, i = link of joint i
  Pose offset;
};

struct ContactSpec {
  std::string frame;
  Vector3 anchor = Vector3::Zero();
  std::array<bool, 3> axes{true, true, true};
  Matrix3 surface_rotation = Matrix3::Identity();

  int n_constraints() const { return int(axes[0]) + int(axes[1]) + int(axes[2]); }
};

enum class Integrator { SemiImplicitEuler, Rk4 };

inline Matrix6 spatial_inertia(double mass, const Vector3& com, const Matrix3& inertia_at_com) {
  const Matrix3 C = skew(com);
  Matrix6 I;
  I.topLeftCorner<3, 3>() = mass * Matrix3::Identity();
  I.topRightCorner<3, 3>() = -mass * C;
  I.bottomLeftCorner<3, 3>() = mass * C;
  I.bottomRightCorner<3, 3>() = inertia_at_com - mass * C * C;
  return I;
}

inline Vector6 motion_cross(const Vector6& v, const Vector6& m) {
  Vector6 out;
  out.head<3>() = v.tail<3>().cross(m.head<3>()) + v.head<3>().cross(m.tail<3>());
  out.tail<3>() = v.tail<3>().cross(m.tail<3>());
  return out;
}

inline Vector6 force_cross(const Vector6& v, const Vector6& f) {
  Vector6 out;
  out.head<3>() = v.tail<3>().cross(f.head<3>());
  out.tail<3>() = v.tail<3>().cross(f.tail<3>()) + v.head<3>().cross(f.head<3>());
  return out;
}

class RobotModel {
 public:
  std::string name = "uam";
  double base_mass = 0.0;
  Matrix3 base_inertia = Matrix3::Zero();
  std::vector<RotorSpec> rotors;
  std::vector<JointSpec> joints;
  std::vector<FrameSpec> frames;
  Vector3 gravity{0.0, 0.0, -9.81};

  /// Validates the invariants and precomputes the actuation matrix, control
  /// bounds and body inertias. Adds the automatic "base" and per-link frames
  /// when they are missing.
  void finalize() {
    auto fail = [](const std::string& path, const std::string& msg) { throw ValidationError(path + ": " + msg); };
    if (!(base_mass > 0.0)) fail("base.mass", "must be > 0");
    if ((base_inertia - base_inertia.transpose()).cwiseAbs().maxCoeff() > 1e-12) fail("base.inertia", "not symmetric");
    if (Eigen::SelfAdjointEigenSolver<Matrix3>(base_inertia).eigenvalues().minCoeff() <= 0.0) {
      fail("base.inertia", "not positive definite");
    }
    for (std::size_t i = 0; i < rotors.size(); ++i) {
      const auto& r = rotors[i];
      const std::string path = "base.rotors[" + std::to_string(i) + "]";
      if ((r.orientation.transpose() * r.orientation - Matrix3::Identity()).cwiseAbs().maxCoeff() > 1e-9 ||
          r.orientation.determinant() < 0.0) {
        fail(path + ".axis_rotation", "not a rotation");
      }
      if (r.min_thrust < 0.0) fail(path + ".min_thrust", "must be >= 0");
      if (!(r.max_thrust > r.min_thrust)) fail(path + ".max_thrust", "must exceed min_thrust");
    }
    for (std::size_t j = 0; j < joints.size(); ++j) {
      auto& jt = joints[j];
      const std::string path = "arm.joints[" + std::to_string(j) + "]";
      if (std::abs(jt.axis.norm() - 1.0) > 1e-9) fail(path + ".axis", "must be a unit vector");
      if (jt.link_mass < 0.0) fail(path + ".mass", "must be >= 0");
      if ((jt.link_inertia - jt.link_inertia.transpose()).cwiseAbs().maxCoeff() > 1e-12) {
        fail(path + ".inertia", "not symmetric");
      }
      if (Eigen::SelfAdjointEigenSolver<Matrix3>(jt.link_inertia).eigenvalues().minCoeff() < -1e-12) {
        fail(path + ".inertia", "not positive semidefinite");
      }
      if (!(jt.torque_limit > 0.0)) fail(path + ".torque_limit", "must be > 0");
      if (jt.name.empty()) jt.name = "link" + std::to_string(j + 1);
    }

    std::vector<FrameSpec> user = std::move(frames);
    frames.clear();
    frames.push_back({"base", 0, Pose::identity()});
    for (std::size_t j = 0; j < joints.size(); ++j) frames.push_back({joints[j].name, int(j) + 1, Pose::identity()});
    for (const auto& f : user) {
      if (f.body < 0 || f.body > n_joints()) fail("frames." + f.name, "parent body out of range");
      bool dup = false;
      for (const auto& g : frames) dup = dup || g.name == f.name;
      if (dup) {
        // auto frames may be listed explicitly; keep them only if identical placement
        const int idx = frame_index(f.name);
        if (frames[idx].body != f.body || !frames[idx].offset.is_approx(f.offset, 1e-12)) {
          fail("frames." + f.name, "duplicate frame name");
        }
        continue;
      }
      frames.push_back(f);
    }

    const Eigen::Index nr = n_rotors();
    const Eigen::Index nj = n_joints();
    actuation_ = MatrixX::Zero(6 + nj, nr + nj);
    for (Eigen::Index i = 0; i < nr; ++i) {
      const auto& r = rotors[i];
      const Vector3 axis = r.orientation * Vector3::UnitZ();
      const double spin = r.ccw ? -1.0 : 1.0;
      actuation_.block<3, 1>(0, i) = axis;
      actuation_.block<3, 1>(3, i) = r.position.cross(axis) + spin * r.cm_over_cf * axis;
    }
    actuation_.bottomRightCorner(nj, nj).setIdentity();

    lower_.resize(nr + nj);
    upper_.resize(nr + nj);
    for (Eigen::Index i = 0; i < nr; ++i) {
      lower_(i) = rotors[i].min_thrust;
      upper_(i) = rotors[i].max_thrust;
    }
    for (Eigen::Index j = 0; j < nj; ++j) {
      lower_(nr + j) = -joints[j].torque_limit;
      upper_(nr + j) = joints[j].torque_limit;
    }

    inertias_.assign(1 + nj, Matrix6::Zero());
    inertias_[0] = spatial_inertia(base_mass, Vector3::Zero(), base_inertia);
    for (Eigen::Index j = 0; j < nj; ++j) {
      inertias_[j + 1] = spatial_inertia(joints[j].link_mass, joints[j].link_com, joints[j].link_inertia);
    }
    finalized_ = true;
  }

  bool finalized() const { return finalized_; }
  Eigen::Index n_rotors() const { return Eigen::Index(rotors.size()); }
  Eigen::Index n_joints() const { return Eigen::Index(joints.size()); }
  Eigen::Index nu() const { return n_rotors() + n_joints(); }
  Eigen::Index nv() const { return 6 + n_joints(); }
  Eigen::Index ndx() const { return 2 * nv(); }

  double total_mass() const {
    double m = base_mass;
    for (const auto& j : joints) m += j.link_mass;
    return m;
  }

  const MatrixX& actuation_matrix() const { return actuation_; }
  const VectorX& control_lower() const { return lower_; }
  const VectorX& control_upper() const { return upper_; }
  const Matrix6& body_inertia(int body) const { return inertias_[body]; }

  int frame_index(const std::string& frame) const {
    for (std::size_t i = 0; i < frames.size(); ++i) {
      if (frames[i].name == frame) return int(i);
    }
    throw UnknownFrame("unknown frame '" + frame + "'");
  }
  bool has_frame(const std::string& frame) const {
    for (const auto& f : frames) {
      if (f.name == frame) return true;
    }
    return false;
  }

  UamState neutral_state() const { return UamState::zero(n_joints()); }

  void check_state(const UamState& x) const {
    if (x.joints.size() != n_joints() || x.velocity.size() != nv()) {
      throw DimensionMismatch("state does not match model '" + name + "' (n_J = " + std::to_string(n_joints()) + ")");
    }
  }
  void check_control(const VectorX& u) const {
    if (u.size() != nu()) {
      throw DimensionMismatch("control has " + std::to_string(u.size()) + " entries, model expects " +
                              std::to_string(nu()));
    }
  }

  /// Thrust per rotor that balances gravity at a level pose with zero joint torques,
  /// assuming all rotor axes point along base +z.
  VectorX hover_control() const {
    VectorX u = VectorX::Zero(nu());
    if (n_rotors() > 0) u.head(n_rotors()).setConstant(total_mass() * gravity.norm() / double(n_rotors()));
    return u;
  }

 private:
  MatrixX actuation_;
  VectorX lower_, upper_;
  std::vector<Matrix6> inertias_;
  bool finalized_ = false;
};

inline const MatrixX& actuation_matrix(const RobotModel& model) { return model.actuation_matrix(); }

// ---------------------------------------------------------------------------
// Kinematics

struct BodyKinematics {
  std::vector<Pose> placement;  // world placement of each body
  std::vector<Pose> local;      // placement relative to parent body
  std::vector<Vector6> velocity;  // body-frame spatial velocity
};

/// Rotation of angle q about a unit axis.
inline Pose joint_motion(const Vector3& axis, double q) {
  return Pose(Quaternion(Eigen::AngleAxisd(q, axis)), Vector3::Zero());
}

inline void compute_kinematics(const RobotModel& model, const Pose& pose, const VectorX& joints,
                               const VectorX* velocity, BodyKinematics& out) {
  const Eigen::Index nj = model.n_joints();
  out.placement.resize(1 + nj);
  out.local.resize(1 + nj);
  out.placement[0] = pose;
  out.local[0] = pose;
  if (velocity) {
    out.velocity.resize(1 + nj);
    out.velocity[0] = velocity->head<6>();
  }
  for (Eigen::Index j = 0; j < nj; ++j) {
    const auto& jt = model.joints[j];
    out.local[j + 1] = jt.parent_transform * joint_motion(jt.axis, joints(j));
    out.placement[j + 1] = out.placement[j] * out.local[j + 1];
    if (velocity) {
      Vector6 v = out.local[j + 1].act_inv_motion(out.velocity[j]);
      v.tail<3>() += jt.axis * (*velocity)(6 + j);
      out.velocity[j + 1] = v;
    }
  }
}

struct FrameState {
  Pose placement;
  Twist velocity;  // world-aligned: linear velocity of the frame origin, angular velocity, both in world axes
};

inline FrameState frame_state(const RobotModel& model, const BodyKinematics& kin, int frame) {
  const FrameSpec& f = model.frames[frame];
  FrameState out;
  out.placement = kin.placement[f.body] * f.offset;
  const Vector6 local = f.offset.act_inv_motion(kin.velocity[f.body]);
  const Matrix3 R = out.placement.rotation();
  out.velocity.linear = R * local.head<3>();
  out.velocity.angular = R * local.tail<3>();
  return out;
}

/// World placement and world-aligned velocity of every frame.
inline std::vector<std::pair<std::string, FrameState>> forward_kinematics(const RobotModel& model, const UamState& x) {
  model.check_state(x);
  BodyKinematics kin;
  compute_kinematics(model, x.pose, x.joints, &x.velocity, kin);
  std::vector<std::pair<std::string, FrameState>> out;
  out.reserve(model.frames.size());
  for (std::size_t i = 0; i < model.frames.size(); ++i) out.emplace_back(model.frames[i].name, frame_state(model, kin, int(i)));
  return out;
}

inline FrameState frame_state(const RobotModel& model, const UamState& x, const std::string& frame) {
  model.check_state(x);
  const int idx = model.frame_index(frame);
  BodyKinematics kin;
  compute_kinematics(model, x.pose, x.joints, &x.velocity, kin);
  return frame_state(model, kin, idx);
}

inline Pose frame_placement(const RobotModel& model, const UamState& x, const std::string& frame) {
  model.check_state(x);
  const int idx = model.frame_index(frame);
  BodyKinematics kin;
  compute_kinematics(model, x.pose, x.joints, nullptr, kin);
  return kin.placement[model.frames[idx].body] * model.frames[idx].offset;
}

/// Body-frame Jacobian: maps generalized velocity to the frame's spatial
/// velocity expressed in the frame itself.
inline MatrixX frame_jacobian_local(const RobotModel& model, const BodyKinematics& kin, int frame) {
  const FrameSpec& f = model.frames[frame];
  const Pose oMf = kin.placement[f.body] * f.offset;
  MatrixX J = MatrixX::Zero(6, model.nv());
  J.leftCols<6>() = (kin.placement[0].inverse() * oMf).inverse_action();
  for (int j = 1; j <= f.body; ++j) {
    const Pose jMf = kin.placement[j].inverse() * oMf;
    Vector6 S;
    S << Vector3::Zero(), model.joints[j - 1].axis;
    J.col(6 + j - 1) = jMf.act_inv_motion(S);
  }
  return J;
}

/// World-aligned Jacobian: rows give the frame origin's linear velocity and the
/// frame angular velocity, both in world axes.
inline MatrixX frame_jacobian_world(const RobotModel& model, const BodyKinematics& kin, int frame) {
  const FrameSpec& f = model.frames[frame];
  const Matrix3 R = (kin.placement[f.body] * f.offset).rotation();
  MatrixX J = frame_jacobian_local(model, kin, frame);
  J.topRows<3>() = R * J.topRows<3>();
  J.bottomRows<3>() = R * J.bottomRows<3>();
  return J;
}

inline MatrixX frame_jacobian(const RobotModel& model, const UamState& x, const std::string& frame) {
  model.check_state(x);
  const int idx = model.frame_index(frame);
  BodyKinematics kin;
  compute_kinematics(model, x.pose, x.joints, nullptr, kin);
  return frame_jacobian_local(model, kin, idx);
}

inline MatrixX frame_jacobian_world(const RobotModel& model, const UamState& x, const std::string& frame) {
  model.check_state(x);
  const int idx = model.frame_index(frame);
  BodyKinematics kin;
  compute_kinematics(model, x.pose, x.joints, nullptr, kin);
  return frame_jacobian_world(model, kin, idx);
}

/// Derivative of the world-aligned frame velocity with respect to a right
/// perturbation of the configuration (base twist block, then joint angles).
/// Returns a 6 x nv matrix; the velocity derivative is the Jacobian itself.
inline MatrixX frame_velocity_config_derivative(const RobotModel& model, const BodyKinematics& kin,
                                                const VectorX& velocity, int frame) {
  const FrameSpec& f = model.frames[frame];
  const Eigen::Index nv = model.nv();
  const Pose& oMb = kin.placement[0];
  const Matrix3 RB = oMb.rotation();
  const Pose bMf = oMb.inverse() * kin.placement[f.body] * f.offset;
  const Vector3 pF = bMf.translation();

  // Joint axes and origins in base coordinates for the ancestors of the frame.
  const int nb = f.body;
  std::vector<Vector3> z(nb), p(nb);
  for (int j = 1; j <= nb; ++j) {
    const Pose bMj = oMb.inverse() * kin.placement[j];
    z[j - 1] = bMj.rotation() * model.joints[j - 1].axis;
    p[j - 1] = bMj.translation();
  }
  const Vector3 vB = velocity.head<3>();
  const Vector3 wB = velocity.segment<3>(3);
  Vector3 a_lin = vB + wB.cross(pF);
  Vector3 a_ang = wB;
  for (int j = 0; j < nb; ++j) {
    const double qd = velocity(6 + j);
    a_lin += z[j].cross(pF - p[j]) * qd;
    a_ang += z[j] * qd;
  }

  MatrixX D = MatrixX::Zero(6, nv);
  D.block<3, 3>(0, 3) = -RB * skew(a_lin);
  D.block<3, 3>(3, 3) = -RB * skew(a_ang);
  for (int i = 0; i < nb; ++i) {
    const Vector3 dpF = z[i].cross(pF - p[i]);
    Vector3 dlin = wB.cross(dpF);
    Vector3 dang = Vector3::Zero();
    for (int j = 0; j < nb; ++j) {
      const double qd = velocity(6 + j);
      if (j <= i) {
        dlin += z[j].cross(dpF) * qd;
      } else {
        const Vector3 dz = z[i].cross(z[j]);
        dlin += (dz.cross(pF - p[j]) + z[j].cross(z[i].cross(pF - p[j]))) * qd;
        dang += dz * qd;
      }
    }
    D.block<3, 1>(0, 6 + i) = RB * dlin;
    D.block<3, 1>(3, 6 + i) = RB * dang;
  }
  return D;
}

// ---------------------------------------------------------------------------
// Dynamics

/// Recursive Newton-Euler inverse dynamics. `external_force` is a world-frame
/// force applied at the base centre of mass; it is subtracted from the result.
inline VectorX rnea(const RobotModel& model, const Pose& pose, const VectorX& joints, const VectorX& velocity,
                    const VectorX& acceleration, bool with_gravity = true,
                    const Vector3& external_force = Vector3::Zero()) {
  const Eigen::Index nj = model.n_joints();
  std::vector<Pose> local(1 + nj);
  std::vector<Vector6> v(1 + nj), a(1 + nj), f(1 + nj);
  v[0] = velocity.head<6>();
  a[0] = acceleration.head<6>();
  if (with_gravity) a[0].head<3>() -= pose.quaternion().conjugate() * model.gravity;
  for (Eigen::Index j = 0; j < nj; ++j) {
    const auto& jt = model.joints[j];
    local[j + 1] = jt.parent_transform * joint_motion(jt.axis, joints(j));
    Vector6 S;
    S << Vector3::Zero(), jt.axis;
    const Vector6 vj = S * velocity(6 + j);
    v[j + 1] = local[j + 1].act_inv_motion(v[j]) + vj;
    a[j + 1] = local[j + 1].act_inv_motion(a[j]) + S * acceleration(6 + j) + motion_cross(v[j + 1], vj);
  }
  for (Eigen::Index b = 0; b <= nj; ++b) {
    const Matrix6& I = model.body_inertia(int(b));
    f[b] = I * a[b] + force_cross(v[b], I * v[b]);
  }
  VectorX tau(6 + nj);
  for (Eigen::Index j = nj; j >= 1; --j) {
    tau(5 + j) = model.joints[j - 1].axis.dot(f[j].tail<3>());
    f[j - 1] += local[j].act_force(f[j]);
  }
  tau.head<6>() = f[0];
  tau.head<3>() -= pose.quaternion().conjugate() * external_force;
  return tau;
}

/// Composite-rigid-body joint-space inertia matrix.
inline MatrixX crba(const RobotModel& model, const VectorX& joints) {
  const Eigen::Index nj = model.n_joints();
  const Eigen::Index nv = 6 + nj;
  std::vector<Pose> local(1 + nj);
  std::vector<Matrix6> Ic(1 + nj);
  for (Eigen::Index j = 0; j < nj; ++j) {
    const auto& jt = model.joints[j];
    local[j + 1] = jt.parent_transform * joint_motion(jt.axis, joints(j));
  }
  for (Eigen::Index b = 0; b <= nj; ++b) Ic[b] = model.body_inertia(int(b));
  for (Eigen::Index b = nj; b >= 1; --b) {
    const Matrix6 X = local[b].inverse_action();  // parent motion -> child coordinates
    Ic[b - 1] += X.transpose() * Ic[b] * X;
  }
  MatrixX H = MatrixX::Zero(nv, nv);
  H.topLeftCorner<6, 6>() = Ic[0];
  for (Eigen::Index b = 1; b <= nj; ++b) {
    Vector6 S;
    S << Vector3::Zero(), model.joints[b - 1].axis;
    Vector6 F = Ic[b] * S;
    H(5 + b, 5 + b) = S.dot(F);
    for (Eigen::Index p = b; p >= 1; --p) {
      F = local[p].act_force(F);  // now in frame of body p-1
      if (p - 1 >= 1) {
        const double h = model.joints[p - 2].axis.dot(F.tail<3>());
        H(5 + p - 1, 5 + b) = h;
        H(5 + b, 5 + p - 1) = h;
      }
    }
    H.block<6, 1>(0, 5 + b) = F;
    H.block<1, 6>(5 + b, 0) = F.transpose();
  }
  return H;
}

inline MatrixX crba(const RobotModel& model, const UamState& x) { return crba(model, x.joints); }

/// Nonlinear effects C(q, q̇): Coriolis, centrifugal and gravity terms.
inline VectorX nonlinear_effects(const RobotModel& model, const UamState& x) {
  return rnea(model, x.pose, x.joints, x.velocity, VectorX::Zero(model.nv()), true);
}

struct ForwardDynamicsResult {
  VectorX qdd;
  VectorX lambda;  // 3 per contact, in the surface frame; zero on unconstrained axes
};

namespace detail {

inline Eigen::LLT<MatrixX> factor_inertia(const MatrixX& H) {
  Eigen::LLT<MatrixX> llt(H);
  if (llt.info() != Eigen::Success) throw SingularInertia("joint-space inertia matrix is not positive definite");
  return llt;
}

}  // namespace detail

inline VectorX fd_free(const RobotModel& model, const UamState& x, const VectorX& u,
                       const Vector3& external_force = Vector3::Zero()) {
  model.check_state(x);
  model.check_control(u);
  const MatrixX H = crba(model, x.joints);
  const VectorX rhs = model.actuation_matrix() * u -
                      rnea(model, x.pose, x.joints, x.velocity, VectorX::Zero(model.nv()), true, external_force);
  return detail::factor_inertia(H).solve(rhs);
}

struct BaumgarteGains {
  double kp = 0.0;
  double kd = 0.0;
};

/// Contact Jacobian rows and drift term J̇q̇ (plus optional stabilization) for
/// all contacts stacked in order.
struct ContactTerms {
  MatrixX J;
  VectorX drift;
  std::vector<int> rows_per_contact;
};

inline ContactTerms contact_terms(const RobotModel& model, const UamState& x, const std::vector<ContactSpec>& contacts,
                                  const BaumgarteGains& gains = {}) {
  int m = 0;
  for (const auto& c : contacts) {
    if (c.n_constraints() == 0) throw ValidationError("contact on frame '" + c.frame + "' constrains no axis");
    m += c.n_constraints();
  }
  ContactTerms out;
  out.J.resize(m, model.nv());
  out.drift.resize(m);
  BodyKinematics kin;
  compute_kinematics(model, x.pose, x.joints, &x.velocity, kin);

  // Bias accelerations (q̈ = 0, no gravity) of every body.
  const Eigen::Index nj = model.n_joints();
  std::vector<Vector6> bias(1 + nj);
  bias[0].setZero();
  for (Eigen::Index j = 0; j < nj; ++j) {
    Vector6 vj;
    vj << Vector3::Zero(), model.joints[j].axis * x.velocity(6 + j);
    bias[j + 1] = kin.local[j + 1].act_inv_motion(bias[j]) + motion_cross(kin.velocity[j + 1], vj);
  }

  int row = 0;
  for (const auto& c : contacts) {
    const int idx = model.frame_index(c.frame);
    const FrameSpec& f = model.frames[idx];
    const Pose oMf = kin.placement[f.body] * f.offset;
    const Matrix3 R = oMf.rotation();
    const MatrixX Jw = frame_jacobian_world(model, kin, idx);
    const Vector6 vloc = f.offset.act_inv_motion(kin.velocity[f.body]);
    const Vector6 aloc = f.offset.act_inv_motion(bias[f.body]);
    const Vector3 classical = R * (aloc.head<3>() + vloc.tail<3>().cross(vloc.head<3>()));
    const Vector3 pos_err = c.surface_rotation.transpose() * (oMf.translation() - c.anchor);
    const Vector3 vel = c.surface_rotation.transpose() * (R * vloc.head<3>());
    const Matrix3 Rs_t = c.surface_rotation.transpose();
    const MatrixX Js = Rs_t * Jw.topRows<3>();
    const Vector3 ds = Rs_t * classical + gains.kd * vel + gains.kp * pos_err;
    int n = 0;
    for (int a = 0; a < 3; ++a) {
      if (!c.axes[a]) continue;
      out.J.row(row + n) = Js.row(a);
      out.drift(row + n) = ds(a);
      ++n;
    }
    out.rows_per_contact.push_back(n);
    row += n;
  }
  return out;
}

inline ForwardDynamicsResult fd_contact(const RobotModel& model, const UamState& x, const VectorX& u,
                                        const std::vector<ContactSpec>& contacts,
                                        const Vector3& external_force = Vector3::Zero(),
                                        const BaumgarteGains& gains = {}) {
  model.check_state(x);
  model.check_control(u);
  const MatrixX H = crba(model, x.joints);
  const VectorX tau = model.actuation_matrix() * u -
                      rnea(model, x.pose, x.joints, x.velocity, VectorX::Zero(model.nv()), true, external_force);
  const auto llt = detail::factor_inertia(H);
  ForwardDynamicsResult out;
  out.qdd = llt.solve(tau);
  out.lambda = VectorX::Zero(3 * Eigen::Index(contacts.size()));
  if (contacts.empty()) return out;

  const ContactTerms ct = contact_terms(model, x, contacts, gains);
  const MatrixX HinvJt = llt.solve(ct.J.transpose());
  const MatrixX S = ct.J * HinvJt;
  Eigen::ColPivHouseholderQR<MatrixX> qr(S);
  qr.setThreshold(1e-10);
  if (qr.rank() < S.rows()) {
    throw RankDeficientContact("contact Jacobian has rank " + std::to_string(qr.rank()) + " < " +
                               std::to_string(S.rows()) + " constraints");
  }
  const VectorX lam = -Eigen::LLT<MatrixX>(S).solve(ct.drift + ct.J * out.qdd);
  out.qdd += HinvJt * lam;
  int row = 0;
  for (std::size_t c = 0; c < contacts.size(); ++c) {
    for (int a = 0; a < 3; ++a) {
      if (!contacts[c].axes[a]) continue;
      out.lambda(3 * Eigen::Index(c) + a) = lam(row++);
    }
  }
  return out;
}

struct DynamicsSpec {
  const RobotModel* model = nullptr;
  std::vector<ContactSpec> contacts;
  Integrator integrator = Integrator::SemiImplicitEuler;
  double dt = 0.01;
  BaumgarteGains baumgarte;
};

inline ForwardDynamicsResult forward_dynamics(const RobotModel& model, const UamState& x, const VectorX& u,
                                              const std::vector<ContactSpec>& contacts,
                                              const Vector3& external_force = Vector3::Zero(),
                                              const BaumgarteGains& gains = {}) {
  if (contacts.empty()) return {fd_free(model, x, u, external_force), VectorX()};
  return fd_contact(model, x, u, contacts, external_force, gains);
}

struct StepResult {
  UamState next;
  VectorX lambda;  // contact forces at the start of the step
};

inline StepResult step_with_forces(const RobotModel& model, const UamState& x, const VectorX& u, double dt,
                                   Integrator integrator, const std::vector<ContactSpec>& contacts = {},
                                   const Vector3& external_force = Vector3::Zero(),
                                   const BaumgarteGains& gains = {}) {
  if (!(dt > 0.0)) throw ValidationError("integration step must be positive");
  const Eigen::Index nv = model.nv();
  const ForwardDynamicsResult k1 = forward_dynamics(model, x, u, contacts, external_force, gains);
  StepResult out;
  out.lambda = k1.lambda;
  if (integrator == Integrator::SemiImplicitEuler) {
    out.next = x;
    out.next.velocity = x.velocity + dt * k1.qdd;
    integrate_configuration(out.next.pose, out.next.joints, dt * out.next.velocity);
    return out;
  }

  // Classical RK4 in local coordinates around x: the pose stage derivative is
  // the body twist mapped through the inverse right Jacobian of the offset.
  auto stage_state = [&](const VectorX& theta) { return state_oplus(x, theta); };
  auto derivative = [&](const VectorX& theta, const UamState& xs, const VectorX& qdd) {
    VectorX d(2 * nv);
    d.head<6>() = jr_se3_inv(theta.head<6>()) * xs.velocity.head<6>();
    d.segment(6, nv - 6) = xs.velocity.tail(nv - 6);
    d.tail(nv) = qdd;
    return d;
  };
  const VectorX zero = VectorX::Zero(2 * nv);
  const VectorX d1 = derivative(zero, x, k1.qdd);
  const VectorX t2 = 0.5 * dt * d1;
  const UamState x2 = stage_state(t2);
  const VectorX d2 = derivative(t2, x2, forward_dynamics(model, x2, u, contacts, external_force, gains).qdd);
  const VectorX t3 = 0.5 * dt * d2;
  const UamState x3 = stage_state(t3);
  const VectorX d3 = derivative(t3, x3, forward_dynamics(model, x3, u, contacts, external_force, gains).qdd);
  const VectorX t4 = dt * d3;
  const UamState x4 = stage_state(t4);
  const VectorX d4 = derivative(t4, x4, forward_dynamics(model, x4, u, contacts, external_force, gains).qdd);
  out.next = state_oplus(x, (dt / 6.0) * (d1 + 2.0 * d2 + 2.0 * d3 + d4));
  return out;
}

inline UamState step(const RobotModel& model, const UamState& x, const VectorX& u, double dt, Integrator integrator,
                     const std::vector<ContactSpec>& contacts = {}, const Vector3& external_force = Vector3::Zero(),
                     const BaumgarteGains& gains = {}) {
  return step_with_forces(model, x, u, dt, integrator, contacts, external_force, gains).next;
}

struct StepDerivatives {
  MatrixX fx;  // ndx x ndx
  MatrixX fu;  // ndx x nu
  UamState next;
  VectorX lambda;    // contact forces at (x, u); empty without contacts
  MatrixX lambda_x;  // d lambda / d x (tangent)
  MatrixX lambda_u;
};

inline constexpr double kFiniteDifferenceStep = 1e-6;

/// Central finite differences of `step` on tangent coordinates of x and plain
/// coordinates of u.
inline StepDerivatives step_derivatives(const RobotModel& model, const UamState& x, const VectorX& u, double dt,
                                        Integrator integrator, const std::vector<ContactSpec>& contacts = {},
                                        const BaumgarteGains& gains = {}) {
  const double h = kFiniteDifferenceStep;
  const Eigen::Index ndx = model.ndx();
  const Eigen::Index nu = model.nu();
  const bool with_contacts = !contacts.empty();
  StepDerivatives d;
  const StepResult y0 = step_with_forces(model, x, u, dt, integrator, contacts, Vector3::Zero(), gains);
  d.next = y0.next;
  d.lambda = y0.lambda;
  d.fx.resize(ndx, ndx);
  d.fu.resize(ndx, nu);
  if (with_contacts) {
    d.lambda_x.resize(d.lambda.size(), ndx);
    d.lambda_u.resize(d.lambda.size(), nu);
  }
  VectorX e = VectorX::Zero(ndx);
  for (Eigen::Index i = 0; i < ndx; ++i) {
    e(i) = h;
    const StepResult yp = step_with_forces(model, state_oplus(x, e), u, dt, integrator, contacts, Vector3::Zero(), gains);
    e(i) = -h;
    const StepResult ym = step_with_forces(model, state_oplus(x, e), u, dt, integrator, contacts, Vector3::Zero(), gains);
    e(i) = 0.0;
    d.fx.col(i) = (state_ominus(yp.next, y0.next) - state_ominus(ym.next, y0.next)) / (2.0 * h);
    if (with_contacts) d.lambda_x.col(i) = (yp.lambda - ym.lambda) / (2.0 * h);
  }
  VectorX up = u;
  for (Eigen::Index i = 0; i < nu; ++i) {
    up(i) = u(i) + h;
    const StepResult yp = step_with_forces(model, x, up, dt, integrator, contacts, Vector3::Zero(), gains);
    up(i) = u(i) - h;
    const StepResult ym = step_with_forces(model, x, up, dt, integrator, contacts, Vector3::Zero(), gains);
    up(i) = u(i);
    d.fu.col(i) = (state_ominus(yp.next, y0.next) - state_ominus(ym.next, y0.next)) / (2.0 * h);
    if (with_contacts) d.lambda_u.col(i) = (yp.lambda - ym.lambda) / (2.0 * h);
  }
  return d;
}

}  // namespace uamoc
