#pragma once

// SO(3)/SE(3) toolbox and the composite aerial-manipulator state manifold.
//
// Tangent vectors of SE(3) are ordered (linear, angular). All perturbations
// are right (body-frame) perturbations: P ⊕ v = P · exp(v).

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cmath>
#include <string>

#include "uamoc/errors.hpp"

namespace uamoc {

using Vector3 = Eigen::Vector3d;
using Vector6 = Eigen::Matrix<double, 6, 1>;
using Matrix3 = Eigen::Matrix3d;
using Matrix6 = Eigen::Matrix<double, 6, 6>;
using VectorX = Eigen::VectorXd;
using MatrixX = Eigen::MatrixXd;
using Quaternion = Eigen::Quaterniond;

inline constexpr double kSmallAngle = 1e-8;
inline constexpr double kNearPiMargin = 1e-6;

inline Matrix3 skew(const Vector3& v) {
  Matrix3 s;
  // clang-format off
  s <<    0.0, -v.z(),  v.y(),
        v.z(),    0.0, -v.x(),
       -v.y(),  v.x(),    0.0;
  // clang-format on
  return s;
}

namespace detail {

// Series-safe coefficients shared by the SO(3)/SE(3) Jacobians. Below the
// switch angle the closed forms lose most of their digits to cancellation.
inline constexpr double kSeriesSwitch = 1e-2;

inline double coeff_one_minus_cos(double t) {  // (1 - cos t) / t^2
  if (t < kSeriesSwitch) return 0.5 - t * t / 24.0 + t * t * t * t / 720.0;
  const double s = std::sin(0.5 * t);
  return 2.0 * s * s / (t * t);
}

inline double coeff_t_minus_sin(double t) {  // (t - sin t) / t^3
  if (t < kSeriesSwitch) return 1.0 / 6.0 - t * t / 120.0 + t * t * t * t / 5040.0;
  return (t - std::sin(t)) / (t * t * t);
}

inline double coeff_jl_inv(double t) {  // 1/t^2 - (1 + cos t) / (2 t sin t)
  if (t < kSeriesSwitch) return 1.0 / 12.0 + t * t / 720.0 + t * t * t * t / 30240.0;
  return 1.0 / (t * t) - (1.0 + std::cos(t)) / (2.0 * t * std::sin(t));
}

inline double coeff_q2(double t) {  // (t^2 + 2 cos t - 2) / (2 t^4)
  if (t < kSeriesSwitch) return 1.0 / 24.0 - t * t / 720.0 + t * t * t * t / 40320.0;
  return (t * t + 2.0 * std::cos(t) - 2.0) / (2.0 * t * t * t * t);
}

inline double coeff_q3(double t) {  // (2t - 3 sin t + t cos t) / (2 t^5)
  if (t < kSeriesSwitch) return 1.0 / 120.0 - t * t / 2520.0 + t * t * t * t / 120960.0;
  return (2.0 * t - 3.0 * std::sin(t) + t * std::cos(t)) / (2.0 * std::pow(t, 5));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// SO(3)

inline Quaternion exp_so3(const Vector3& w) {
  const double theta = w.norm();
  Quaternion q;
  if (theta < kSmallAngle) {
    q = Quaternion(1.0, 0.5 * w.x(), 0.5 * w.y(), 0.5 * w.z());
  } else {
    const double k = std::sin(0.5 * theta) / theta;
    q = Quaternion(std::cos(0.5 * theta), k * w.x(), k * w.y(), k * w.z());
  }
  q.normalize();
  return q;
}

/// Rotation angle of a unit quaternion, in [0, pi].
inline double rotation_angle(const Quaternion& q) {
  return 2.0 * std::atan2(q.vec().norm(), std::abs(q.w()));
}

/// Principal logarithm. Throws AngleNearPi within 1e-6 of a half turn.
inline Vector3 log_so3(const Quaternion& q_in) {
  Quaternion q = q_in;
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  const double s = q.vec().norm();
  const double theta = 2.0 * std::atan2(s, q.w());
  if (theta > M_PI - kNearPiMargin) {
    throw AngleNearPi("rotation angle " + std::to_string(theta) + " is within 1e-6 of pi");
  }
  if (theta < kSmallAngle) return (2.0 / q.w()) * q.vec();
  return (theta / s) * q.vec();
}

inline Matrix3 jl_so3(const Vector3& w) {
  const double t = w.norm();
  const Matrix3 W = skew(w);
  return Matrix3::Identity() + detail::coeff_one_minus_cos(t) * W + detail::coeff_t_minus_sin(t) * W * W;
}

inline Matrix3 jl_so3_inv(const Vector3& w) {
  const double t = w.norm();
  const Matrix3 W = skew(w);
  return Matrix3::Identity() - 0.5 * W + detail::coeff_jl_inv(t) * W * W;
}

inline Matrix3 jr_so3(const Vector3& w) { return jl_so3(-w); }
inline Matrix3 jr_so3_inv(const Vector3& w) { return jl_so3_inv(-w); }

// ---------------------------------------------------------------------------
// SE(3)

/// Rigid transform stored as unit quaternion + translation. Maps points of the
/// child frame into the parent frame: x_parent = R x_child + t.
class Pose {
 public:
  Pose() : rotation_(Quaternion::Identity()), translation_(Vector3::Zero()) {}
  Pose(const Quaternion& rotation, const Vector3& translation)
      : rotation_(rotation.normalized()), translation_(translation) {}
  Pose(const Matrix3& rotation, const Vector3& translation)
      : rotation_(Quaternion(rotation).normalized()), translation_(translation) {}

  static Pose identity() { return Pose(); }
  static Pose from_rpy(const Vector3& rpy, const Vector3& xyz) {
    const Quaternion q = Eigen::AngleAxisd(rpy.z(), Vector3::UnitZ()) *
                         Eigen::AngleAxisd(rpy.y(), Vector3::UnitY()) *
                         Eigen::AngleAxisd(rpy.x(), Vector3::UnitX());
    return Pose(q, xyz);
  }

  const Quaternion& quaternion() const { return rotation_; }
  Matrix3 rotation() const { return rotation_.toRotationMatrix(); }
  const Vector3& translation() const { return translation_; }

  Pose operator*(const Pose& other) const {
    return Pose(rotation_ * other.rotation_, translation_ + rotation_ * other.translation_);
  }
  Pose inverse() const {
    const Quaternion qi = rotation_.conjugate();
    return Pose(qi, -(qi * translation_));
  }
  Vector3 act(const Vector3& point) const { return rotation_ * point + translation_; }

  /// 6x6 matrix mapping a motion vector (v, w) given in the child frame to
  /// the parent frame.
  Matrix6 action() const {
    const Matrix3 R = rotation();
    Matrix6 A = Matrix6::Zero();
    A.topLeftCorner<3, 3>() = R;
    A.topRightCorner<3, 3>() = skew(translation_) * R;
    A.bottomRightCorner<3, 3>() = R;
    return A;
  }
  /// Inverse of action(): parent-frame motion into child-frame coordinates.
  Matrix6 inverse_action() const {
    const Matrix3 Rt = rotation().transpose();
    Matrix6 A = Matrix6::Zero();
    A.topLeftCorner<3, 3>() = Rt;
    A.topRightCorner<3, 3>() = -Rt * skew(translation_);
    A.bottomRightCorner<3, 3>() = Rt;
    return A;
  }

  Vector6 act_motion(const Vector6& m) const {
    Vector6 out;
    out.tail<3>() = rotation_ * m.tail<3>();
    out.head<3>() = rotation_ * m.head<3>() + translation_.cross(out.tail<3>());
    return out;
  }
  Vector6 act_inv_motion(const Vector6& m) const {
    const Quaternion qi = rotation_.conjugate();
    Vector6 out;
    out.head<3>() = qi * (m.head<3>() - translation_.cross(m.tail<3>()));
    out.tail<3>() = qi * m.tail<3>();
    return out;
  }
  Vector6 act_force(const Vector6& f) const {
    Vector6 out;
    out.head<3>() = rotation_ * f.head<3>();
    out.tail<3>() = rotation_ * f.tail<3>() + translation_.cross(out.head<3>());
    return out;
  }

  bool is_approx(const Pose& other, double tol) const {
    const double dq = std::min((rotation_.coeffs() - other.rotation_.coeffs()).cwiseAbs().maxCoeff(),
                               (rotation_.coeffs() + other.rotation_.coeffs()).cwiseAbs().maxCoeff());
    return dq <= tol && (translation_ - other.translation_).cwiseAbs().maxCoeff() <= tol;
  }

 private:
  Quaternion rotation_;
  Vector3 translation_;
};

struct Twist {
  Vector3 linear = Vector3::Zero();
  Vector3 angular = Vector3::Zero();

  Vector6 vector() const {
    Vector6 v;
    v << linear, angular;
    return v;
  }
  static Twist from_vector(const Vector6& v) { return {v.head<3>(), v.tail<3>()}; }
};

inline Pose exp_se3(const Vector6& v) {
  const Vector3 rho = v.head<3>();
  const Vector3 phi = v.tail<3>();
  const double theta = phi.norm();
  Vector3 t;
  if (theta < kSmallAngle) {
    const Matrix3 P = skew(phi);
    t = rho + 0.5 * P * rho + P * P * rho / 6.0;
  } else {
    t = jl_so3(phi) * rho;
  }
  return Pose(exp_so3(phi), t);
}

inline Vector6 log_se3(const Pose& pose) {
  const Vector3 phi = log_so3(pose.quaternion());
  Vector6 out;
  out.tail<3>() = phi;
  if (phi.norm() < kSmallAngle) {
    const Matrix3 P = skew(phi);
    out.head<3>() = pose.translation() - 0.5 * P * pose.translation() + P * P * pose.translation() / 12.0;
  } else {
    out.head<3>() = jl_so3_inv(phi) * pose.translation();
  }
  return out;
}

namespace detail {

// Coupling block of the SE(3) left Jacobian, (linear, angular) ordering.
inline Matrix3 se3_q_block(const Vector3& rho, const Vector3& phi) {
  const double t = phi.norm();
  const Matrix3 P = skew(phi);
  const Matrix3 R = skew(rho);
  const Matrix3 PR = P * R;
  const Matrix3 RP = R * P;
  const Matrix3 PRP = P * R * P;
  return 0.5 * R + coeff_t_minus_sin(t) * (PR + RP + PRP) +
         coeff_q2(t) * (P * PR + RP * P - 3.0 * PRP) + coeff_q3(t) * (PRP * P + P * PRP);
}

}  // namespace detail

inline Matrix6 jl_se3(const Vector6& v) {
  const Matrix3 J = jl_so3(v.tail<3>());
  Matrix6 out = Matrix6::Zero();
  out.topLeftCorner<3, 3>() = J;
  out.bottomRightCorner<3, 3>() = J;
  out.topRightCorner<3, 3>() = detail::se3_q_block(v.head<3>(), v.tail<3>());
  return out;
}

inline Matrix6 jl_se3_inv(const Vector6& v) {
  const Matrix3 Ji = jl_so3_inv(v.tail<3>());
  Matrix6 out = Matrix6::Zero();
  out.topLeftCorner<3, 3>() = Ji;
  out.bottomRightCorner<3, 3>() = Ji;
  out.topRightCorner<3, 3>() = -Ji * detail::se3_q_block(v.head<3>(), v.tail<3>()) * Ji;
  return out;
}

inline Matrix6 jr_se3(const Vector6& v) { return jl_se3(-v); }
inline Matrix6 jr_se3_inv(const Vector6& v) { return jl_se3_inv(-v); }

// ---------------------------------------------------------------------------
// Composite state: base pose on SE(3), joint angles, generalized velocity.

struct UamState {
  Pose pose;
  VectorX joints;
  VectorX velocity;  // base body twist (v, w) followed by joint rates

  UamState() = default;
  UamState(Pose p, VectorX q, VectorX v) : pose(std::move(p)), joints(std::move(q)), velocity(std::move(v)) {
    if (velocity.size() != 6 + joints.size()) {
      throw DimensionMismatch("velocity must have 6 + n_J entries");
    }
  }
  static UamState zero(Eigen::Index n_joints) {
    return UamState(Pose::identity(), VectorX::Zero(n_joints), VectorX::Zero(6 + n_joints));
  }

  Eigen::Index n_joints() const { return joints.size(); }
  Eigen::Index nv() const { return 6 + joints.size(); }
  Eigen::Index ndx() const { return 2 * nv(); }
};

/// Configuration update q ⊕ dq with dq = (base twist, joint increments).
inline void integrate_configuration(Pose& pose, VectorX& joints, const VectorX& dq) {
  pose = pose * exp_se3(dq.head<6>());
  joints += dq.tail(joints.size());
}

inline UamState state_oplus(const UamState& x, const VectorX& dx) {
  const Eigen::Index nv = x.nv();
  if (dx.size() != 2 * nv) {
    throw DimensionMismatch("tangent vector has " + std::to_string(dx.size()) + " entries, expected " +
                            std::to_string(2 * nv));
  }
  UamState y = x;
  integrate_configuration(y.pose, y.joints, dx.head(nv));
  y.velocity += dx.tail(nv);
  return y;
}

/// y ⊖ x: tangent at x pointing to y.
inline bool state_finite(const UamState& x) {
  return x.pose.translation().allFinite() && x.pose.quaternion().coeffs().allFinite() && x.joints.allFinite() &&
         x.velocity.allFinite();
}

inline VectorX state_ominus(const UamState& y, const UamState& x) {
  if (y.joints.size() != x.joints.size() || y.velocity.size() != x.velocity.size()) {
    throw DimensionMismatch("states belong to different model dimensions");
  }
  const Eigen::Index nv = x.nv();
  VectorX d(2 * nv);
  d.head<6>() = log_se3(x.pose.inverse() * y.pose);
  d.segment(6, x.n_joints()) = y.joints - x.joints;
  d.tail(nv) = y.velocity - x.velocity;
  return d;
}

inline UamState interpolate(const UamState& xa, const UamState& xb, double s) {
  if (!(s >= 0.0 && s <= 1.0)) throw SOutOfRange("interpolation factor " + std::to_string(s) + " outside [0, 1]");
  if (s == 0.0) return xa;
  if (s == 1.0) return xb;
  return state_oplus(xa, s * state_ominus(xb, xa));
}

}  // namespace uamoc
