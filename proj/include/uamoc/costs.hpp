#pragma once

// Residual library and weighted-sum costs with Gauss-Newton derivatives.
//
// A node cost is Σ wᵢ rᵢᵀ Wᵢ⁻¹ rᵢ. All residual Jacobians are taken with
// respect to right tangent perturbations of x and plain perturbations of u.

#include <array>
#include <limits>
#include <string>
#include <vector>

#include "uamoc/model.hpp"

namespace uamoc {

enum class ResidualKind {
  State,
  Control,
  FramePose,
  FramePosition,
  FrameOrientation,
  FrameVelocity,
  FrictionCone,
  StateBounds,
};

inline const char* to_string(ResidualKind k) {
  switch (k) {
    case ResidualKind::State: return "state";
    case ResidualKind::Control: return "control";
    case ResidualKind::FramePose: return "frame_pose";
    case ResidualKind::FramePosition: return "frame_position";
    case ResidualKind::FrameOrientation: return "frame_orientation";
    case ResidualKind::FrameVelocity: return "frame_velocity";
    case ResidualKind::FrictionCone: return "friction_cone";
    case ResidualKind::StateBounds: return "state_bounds";
  }
  return "?";
}

/// Which blocks of the state residual are active.
struct StateBlocks {
  bool position = true;
  bool orientation = true;
  bool joints = true;
  bool velocity = true;
};

struct ResidualSpec {
  ResidualKind kind = ResidualKind::State;
  std::string frame;
  double weight = 1.0;
  VectorX weight_matrix;  // diagonal of W; empty means identity

  UamState state_target;       // State
  StateBlocks blocks;          // State
  VectorX control_target;      // Control; empty means zero
  Pose pose_target;            // FramePose, FramePosition, FrameOrientation
  Vector6 velocity_target = Vector6::Zero();  // FrameVelocity, world-aligned (linear, angular)
  std::array<bool, 6> velocity_axes{true, true, true, true, true, true};
  double mu = 0.7;             // FrictionCone, applied to the contact on `frame`
  VectorX lower, upper;        // StateBounds, one entry per tangent coordinate
};

struct CostStack {
  std::vector<ResidualSpec> residuals;
  bool empty() const { return residuals.empty(); }
};

/// Contact forces of a node and their sensitivities, as produced by
/// step_derivatives. Forces are 3 per contact in the contact surface frame.
struct ContactForces {
  const std::vector<ContactSpec>* contacts = nullptr;
  VectorX lambda;
  MatrixX lambda_x, lambda_u;
};

struct Residual {
  VectorX r;
  MatrixX rx;  // dim × ndx
  MatrixX ru;  // dim × nu (empty when the residual does not depend on u)
};

// ---------------------------------------------------------------------------
// Individual residuals

/// x_ref ⊖ x restricted to the active blocks. Position-only and
/// orientation-only variants use the world position difference and the SO(3)
/// log respectively, so they ignore the other components entirely.
inline Residual r_state(const UamState& x, const UamState& x_ref, const StateBlocks& blocks = {}, bool derivatives = true) {
  const Eigen::Index nv = x.nv();
  const Eigen::Index nj = x.n_joints();
  if (x_ref.joints.size() != nj) throw DimensionMismatch("state target does not match the model");
  Residual out;
  out.r = VectorX::Zero(2 * nv);
  if (derivatives) out.rx = MatrixX::Zero(2 * nv, 2 * nv);
  if (blocks.position && blocks.orientation) {
    const Vector6 e = log_se3(x.pose.inverse() * x_ref.pose);
    out.r.head<6>() = e;
    if (derivatives) out.rx.topLeftCorner<6, 6>() = -jl_se3_inv(e);
  } else if (blocks.position) {
    out.r.head<3>() = x_ref.pose.translation() - x.pose.translation();
    if (derivatives) out.rx.topLeftCorner<3, 3>() = -x.pose.rotation();
  } else if (blocks.orientation) {
    const Vector3 e = log_so3(x.pose.quaternion().conjugate() * x_ref.pose.quaternion());
    out.r.segment<3>(3) = e;
    if (derivatives) out.rx.block<3, 3>(3, 3) = -jl_so3_inv(e);
  }
  if (blocks.joints) {
    out.r.segment(6, nj) = x_ref.joints - x.joints;
    if (derivatives) out.rx.block(6, 6, nj, nj) = -MatrixX::Identity(nj, nj);
  }
  if (blocks.velocity) {
    out.r.tail(nv) = x_ref.velocity - x.velocity;
    if (derivatives) out.rx.bottomRightCorner(nv, nv) = -MatrixX::Identity(nv, nv);
  }
  return out;
}

inline Residual r_control(const VectorX& u, const VectorX& u_ref) {
  Residual out;
  out.r = (u_ref.size() == 0 ? VectorX::Zero(u.size()) : u_ref) - u;
  out.ru = -MatrixX::Identity(u.size(), u.size());
  return out;
}

/// Five-row square-pyramid friction cone on a surface-frame force: the
/// positive part of A f with rows (±1, 0, −μ), (0, ±1, −μ), (0, 0, −1).
inline Eigen::Matrix<double, 5, 3> friction_cone_matrix(double mu) {
  Eigen::Matrix<double, 5, 3> A;
  A << 1, 0, -mu, -1, 0, -mu, 0, 1, -mu, 0, -1, -mu, 0, 0, -1;
  return A;
}

inline Eigen::Matrix<double, 5, 1> r_friction_cone(const Vector3& force, double mu) {
  return (friction_cone_matrix(mu) * force).cwiseMax(0.0);
}

inline VectorX r_state_bounds(const UamState& x, const VectorX& lower, const VectorX& upper) {
  const Eigen::Index nv = x.nv();
  if (lower.size() != 2 * nv || upper.size() != 2 * nv) {
    throw DimensionMismatch("state bounds need one entry per tangent coordinate (" + std::to_string(2 * nv) + ")");
  }
  VectorX c = VectorX::Zero(2 * nv);
  c.segment(6, x.n_joints()) = x.joints;
  c.tail(nv) = x.velocity;
  return (c - upper).cwiseMax(0.0) + (c - lower).cwiseMin(0.0);
}

namespace detail {

struct EvalContext {
  const RobotModel& model;
  const UamState& x;
  const VectorX* u;
  const ContactForces* forces;
  BodyKinematics kin;
  bool have_kin = false;

  const BodyKinematics& kinematics() {
    if (!have_kin) {
      compute_kinematics(model, x.pose, x.joints, &x.velocity, kin);
      have_kin = true;
    }
    return kin;
  }
};

inline Residual frame_residual(const ResidualSpec& spec, EvalContext& ctx, bool derivatives) {
  const RobotModel& model = ctx.model;
  const int idx = model.frame_index(spec.frame);
  const BodyKinematics& kin = ctx.kinematics();
  const FrameSpec& f = model.frames[idx];
  const Pose oMf = kin.placement[f.body] * f.offset;
  const Eigen::Index nv = model.nv();
  Residual out;
  switch (spec.kind) {
    case ResidualKind::FramePose: {
      const Vector6 e = log_se3(oMf.inverse() * spec.pose_target);
      out.r = e;
      if (derivatives) {
        out.rx = MatrixX::Zero(6, 2 * nv);
        out.rx.leftCols(nv) = -jl_se3_inv(e) * frame_jacobian_local(model, kin, idx);
      }
      break;
    }
    case ResidualKind::FramePosition: {
      out.r = spec.pose_target.translation() - oMf.translation();
      if (derivatives) {
        out.rx = MatrixX::Zero(3, 2 * nv);
        out.rx.leftCols(nv) = -frame_jacobian_world(model, kin, idx).topRows<3>();
      }
      break;
    }
    case ResidualKind::FrameOrientation: {
      const Vector3 e = log_so3(oMf.quaternion().conjugate() * spec.pose_target.quaternion());
      out.r = e;
      if (derivatives) {
        out.rx = MatrixX::Zero(3, 2 * nv);
        out.rx.leftCols(nv) = -jl_so3_inv(e) * frame_jacobian_local(model, kin, idx).bottomRows<3>();
      }
      break;
    }
    case ResidualKind::FrameVelocity: {
      const FrameState fs = frame_state(model, kin, idx);
      Vector6 v;
      v << fs.velocity.linear, fs.velocity.angular;
      out.r = spec.velocity_target - v;
      if (derivatives) {
        out.rx = MatrixX::Zero(6, 2 * nv);
        out.rx.leftCols(nv) = -frame_velocity_config_derivative(model, kin, ctx.x.velocity, idx);
        out.rx.rightCols(nv) = -frame_jacobian_world(model, kin, idx);
      }
      for (int a = 0; a < 6; ++a) {
        if (spec.velocity_axes[a]) continue;
        out.r(a) = 0.0;
        if (derivatives) out.rx.row(a).setZero();
      }
      break;
    }
    default:
      break;
  }
  return out;
}

}  // namespace detail

/// Residual of one spec at (x, u). `u` may be null at terminal nodes; control
/// and friction-cone residuals are then skipped (empty residual).
inline Residual compute_residual(const ResidualSpec& spec, detail::EvalContext& ctx, bool derivatives) {
  const RobotModel& model = ctx.model;
  switch (spec.kind) {
    case ResidualKind::State:
      return r_state(ctx.x, spec.state_target, spec.blocks, derivatives);
    case ResidualKind::Control: {
      if (!ctx.u) return {};
      Residual r = r_control(*ctx.u, spec.control_target);
      if (derivatives) r.rx = MatrixX::Zero(r.r.size(), model.ndx());
      return r;
    }
    case ResidualKind::FramePose:
    case ResidualKind::FramePosition:
    case ResidualKind::FrameOrientation:
    case ResidualKind::FrameVelocity:
      return detail::frame_residual(spec, ctx, derivatives);
    case ResidualKind::FrictionCone: {
      if (!ctx.u || !ctx.forces || !ctx.forces->contacts) return {};
      const auto& contacts = *ctx.forces->contacts;
      int c = -1;
      for (std::size_t i = 0; i < contacts.size(); ++i) {
        if (contacts[i].frame == spec.frame) c = int(i);
      }
      if (c < 0) throw ValidationError("friction cone on frame '" + spec.frame + "' without an active contact");
      const auto A = friction_cone_matrix(spec.mu);
      const Vector3 f = ctx.forces->lambda.segment<3>(3 * c);
      const Eigen::Matrix<double, 5, 1> s = A * f;
      Residual r;
      r.r = s.cwiseMax(0.0);
      if (derivatives) {
        r.rx = MatrixX::Zero(5, model.ndx());
        r.ru = MatrixX::Zero(5, model.nu());
        for (int i = 0; i < 5; ++i) {
          if (s(i) <= 0.0) continue;
          r.rx.row(i) = A.row(i) * ctx.forces->lambda_x.middleRows<3>(3 * c);
          r.ru.row(i) = A.row(i) * ctx.forces->lambda_u.middleRows<3>(3 * c);
        }
      }
      return r;
    }
    case ResidualKind::StateBounds: {
      Residual r;
      r.r = r_state_bounds(ctx.x, spec.lower, spec.upper);
      if (derivatives) {
        r.rx = MatrixX::Zero(r.r.size(), model.ndx());
        for (Eigen::Index i = 6; i < r.r.size(); ++i) {
          if (r.r(i) != 0.0) r.rx(i, i) = 1.0;
        }
      }
      return r;
    }
  }
  return {};
}

struct CostDerivatives {
  double value = 0.0;
  VectorX lx, lu;
  MatrixX lxx, lux, luu;
};

inline void check_weights(const ResidualSpec& spec, Eigen::Index dim) {
  if (spec.weight < 0.0) throw ValidationError(std::string(to_string(spec.kind)) + ": negative weight");
  if (spec.weight_matrix.size() != 0 && spec.weight_matrix.size() != dim) {
    throw DimensionMismatch(std::string(to_string(spec.kind)) + ": weight_matrix has " +
                            std::to_string(spec.weight_matrix.size()) + " entries, residual has " + std::to_string(dim));
  }
}

/// Value Σ wᵢ rᵢᵀ Wᵢ⁻¹ rᵢ with analytic gradients and Gauss-Newton Hessians.
inline CostDerivatives eval_cost(const CostStack& stack, const RobotModel& model, const UamState& x, const VectorX* u,
                                 const ContactForces* forces = nullptr, bool derivatives = true) {
  const Eigen::Index ndx = model.ndx();
  const Eigen::Index nu = model.nu();
  CostDerivatives out;
  if (derivatives) {
    out.lx = VectorX::Zero(ndx);
    out.lu = VectorX::Zero(nu);
    out.lxx = MatrixX::Zero(ndx, ndx);
    out.lux = MatrixX::Zero(nu, ndx);
    out.luu = MatrixX::Zero(nu, nu);
  }
  detail::EvalContext ctx{model, x, u, forces, {}, false};
  for (const auto& spec : stack.residuals) {
    if (spec.weight == 0.0) continue;
    const Residual r = compute_residual(spec, ctx, derivatives);
    if (r.r.size() == 0) continue;
    check_weights(spec, r.r.size());
    const VectorX winv = spec.weight_matrix.size() ? VectorX(spec.weight_matrix.cwiseInverse()) : VectorX::Ones(r.r.size());
    const VectorX wr = winv.cwiseProduct(r.r);
    out.value += spec.weight * r.r.dot(wr);
    if (!derivatives) continue;
    const double w2 = 2.0 * spec.weight;
    if (r.rx.size()) {
      const MatrixX WJx = winv.asDiagonal() * r.rx;
      out.lx.noalias() += w2 * r.rx.transpose() * wr;
      out.lxx.noalias() += w2 * r.rx.transpose() * WJx;
      if (r.ru.size()) out.lux.noalias() += w2 * r.ru.transpose() * WJx;
    }
    if (r.ru.size()) {
      out.lu.noalias() += w2 * r.ru.transpose() * wr;
      out.luu.noalias() += w2 * r.ru.transpose() * winv.asDiagonal() * r.ru;
    }
  }
  return out;
}

inline double cost_value(const CostStack& stack, const RobotModel& model, const UamState& x, const VectorX* u,
                         const ContactForces* forces = nullptr) {
  return eval_cost(stack, model, x, u, forces, false).value;
}

/// Helpers for the most common residuals.
inline ResidualSpec state_regularization(const UamState& target, double weight, VectorX weight_matrix = {}) {
  ResidualSpec s;
  s.kind = ResidualKind::State;
  s.state_target = target;
  s.weight = weight;
  s.weight_matrix = std::move(weight_matrix);
  return s;
}

inline ResidualSpec control_regularization(double weight, VectorX target = {}, VectorX weight_matrix = {}) {
  ResidualSpec s;
  s.kind = ResidualKind::Control;
  s.weight = weight;
  s.control_target = std::move(target);
  s.weight_matrix = std::move(weight_matrix);
  return s;
}

inline ResidualSpec frame_target(ResidualKind kind, const std::string& frame, const Pose& target, double weight) {
  ResidualSpec s;
  s.kind = kind;
  s.frame = frame;
  s.pose_target = target;
  s.weight = weight;
  return s;
}

}  // namespace uamoc
