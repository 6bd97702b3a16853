#pragma once

// World-frame Newton-Euler inverse dynamics written directly from point
// accelerations and Euler's equations, without spatial algebra. Used to probe
// H and C column by column.

#include <vector>

#include "uamoc/model.hpp"

namespace oracle {

using namespace uamoc;

inline VectorX inverse_dynamics_world(const RobotModel& model, const UamState& x, const VectorX& qdd,
                                      bool with_gravity = true) {
  const int nj = int(model.n_joints());
  const Vector3 g = with_gravity ? model.gravity : Vector3::Zero();
  const Matrix3 RB = x.pose.rotation();

  // Per body: rotation, origin, angular velocity/acceleration, origin acceleration (all world).
  std::vector<Matrix3> R(nj + 1);
  std::vector<Vector3> o(nj + 1), w(nj + 1), dw(nj + 1), ao(nj + 1), z(nj + 1);
  R[0] = RB;
  o[0] = x.pose.translation();
  w[0] = RB * x.velocity.segment<3>(3);
  const Vector3 vB = RB * x.velocity.head<3>();
  dw[0] = RB * qdd.segment<3>(3);
  // body-coordinate derivative to world: a = R (v̇ + ω × v)
  ao[0] = RB * (qdd.head<3>() + x.velocity.segment<3>(3).cross(x.velocity.head<3>()));
  (void)vB;

  for (int j = 1; j <= nj; ++j) {
    const auto& jt = model.joints[j - 1];
    const Matrix3 Rp = R[j - 1];
    const Vector3 r = Rp * jt.parent_transform.translation();  // parent origin -> joint origin
    o[j] = o[j - 1] + r;
    ao[j] = ao[j - 1] + dw[j - 1].cross(r) + w[j - 1].cross(w[j - 1].cross(r));
    const Matrix3 Rj0 = Rp * jt.parent_transform.rotation();
    z[j] = Rj0 * jt.axis;
    R[j] = Rj0 * Eigen::AngleAxisd(x.joints(j - 1), jt.axis).toRotationMatrix();
    const double qd = x.velocity(6 + j - 1);
    w[j] = w[j - 1] + z[j] * qd;
    dw[j] = dw[j - 1] + z[j] * qdd(6 + j - 1) + w[j - 1].cross(z[j] * qd);
  }

  std::vector<double> mass(nj + 1);
  std::vector<Vector3> com(nj + 1);
  std::vector<Matrix3> Ic(nj + 1);
  mass[0] = model.base_mass;
  com[0] = o[0];
  Ic[0] = RB * model.base_inertia * RB.transpose();
  for (int j = 1; j <= nj; ++j) {
    const auto& jt = model.joints[j - 1];
    mass[j] = jt.link_mass;
    com[j] = o[j] + R[j] * jt.link_com;
    Ic[j] = R[j] * jt.link_inertia * R[j].transpose();
  }

  VectorX tau(6 + nj);
  Vector3 F_child = Vector3::Zero(), N_child = Vector3::Zero();  // wrench exerted by child on this body, about the child's joint origin
  for (int j = nj; j >= 0; --j) {
    const Vector3 rc = com[j] - o[j];
    const Vector3 ac = ao[j] + dw[j].cross(rc) + w[j].cross(w[j].cross(rc));
    // Force and moment (about o[j]) that the parent must supply.
    Vector3 F = mass[j] * (ac - g) + F_child;
    Vector3 N = Ic[j] * dw[j] + w[j].cross(Ic[j] * w[j]) + rc.cross(mass[j] * (ac - g)) + N_child;
    if (j + 1 <= nj) N += (o[j + 1] - o[j]).cross(F_child);
    if (j >= 1) {
      tau(6 + j - 1) = z[j].dot(N);
    } else {
      tau.head<3>() = RB.transpose() * F;
      tau.segment<3>(3) = RB.transpose() * N;
    }
    F_child = F;
    N_child = N;
  }
  return tau;
}

/// H and C from unit-acceleration probing of the inverse dynamics above.
inline std::pair<MatrixX, VectorX> probe_mass_matrix(const RobotModel& model, const UamState& x) {
  const Eigen::Index nv = model.nv();
  const VectorX C = inverse_dynamics_world(model, x, VectorX::Zero(nv));
  MatrixX H(nv, nv);
  UamState still = x;
  still.velocity.setZero();
  const VectorX c0 = inverse_dynamics_world(model, still, VectorX::Zero(nv), false);
  for (Eigen::Index k = 0; k < nv; ++k) {
    H.col(k) = inverse_dynamics_world(model, still, VectorX::Unit(nv, k), false) - c0;
  }
  return {H, C};
}

}  // namespace oracle
