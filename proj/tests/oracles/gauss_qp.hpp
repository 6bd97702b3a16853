#pragma once

// Dense equality-constrained QP:  min ½ (a - a_free)ᵀ H (a - a_free)  s.t.  J a = b,
// solved through its full KKT matrix with a pivoted LU. Returns the minimizer and
// the multiplier with the sign convention a = a_free + H⁻¹ Jᵀ λ.

#include <Eigen/LU>

namespace oracle {

struct QpSolution {
  Eigen::VectorXd a;
  Eigen::VectorXd lambda;
};

inline QpSolution gauss_qp(const Eigen::MatrixXd& H, const Eigen::VectorXd& a_free, const Eigen::MatrixXd& J,
                           const Eigen::VectorXd& b) {
  const Eigen::Index n = H.rows();
  const Eigen::Index m = J.rows();
  Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n + m, n + m);
  K.topLeftCorner(n, n) = H;
  K.topRightCorner(n, m) = J.transpose();
  K.bottomLeftCorner(m, n) = J;
  Eigen::VectorXd rhs(n + m);
  rhs << H * a_free, b;
  const Eigen::VectorXd sol = K.fullPivLu().solve(rhs);
  return {sol.head(n), -sol.tail(m)};
}

}  // namespace oracle
