#pragma once

// Textbook discrete-time Riccati recursion for the affine LQ problem
//   x' = A x + B u + c,  l = ½xᵀQx + uᵀNx + ½uᵀRu + qᵀx + rᵀu,  L = ½xᵀQf x + qfᵀx.
// The optimal policy is u = K x + kff with the value V(x) = ½xᵀPx + pᵀx + const.

#include <Eigen/Dense>
#include <vector>

namespace oracle {

struct RiccatiSolution {
  std::vector<Eigen::MatrixXd> K;
  std::vector<Eigen::VectorXd> kff;
  std::vector<Eigen::VectorXd> X, U;
  double cost = 0.0;
};

template <class Lq>
RiccatiSolution riccati(const Lq& lq) {
  const std::size_t T = lq.T;
  RiccatiSolution s;
  s.K.resize(T);
  s.kff.resize(T);
  Eigen::MatrixXd P = lq.Qf;
  Eigen::VectorXd p = lq.qf;
  for (std::size_t i = T; i-- > 0;) {
    const Eigen::MatrixXd& A = lq.A[i];
    const Eigen::MatrixXd& B = lq.B[i];
    const Eigen::VectorXd Pc_p = P * lq.c[i] + p;
    const Eigen::MatrixXd Hxx = lq.Q[i] + A.transpose() * P * A;
    const Eigen::MatrixXd Huu = lq.R[i] + B.transpose() * P * B;
    const Eigen::MatrixXd Hux = lq.N[i] + B.transpose() * P * A;
    const Eigen::VectorXd hx = lq.q[i] + A.transpose() * Pc_p;
    const Eigen::VectorXd hu = lq.r[i] + B.transpose() * Pc_p;
    const Eigen::MatrixXd Huu_inv = Huu.inverse();
    s.K[i] = -Huu_inv * Hux;
    s.kff[i] = -Huu_inv * hu;
    P = Hxx - Hux.transpose() * Huu_inv * Hux;
    P = 0.5 * (P + P.transpose()).eval();
    p = hx - Hux.transpose() * Huu_inv * hu;
  }
  s.X.push_back(lq.x0);
  for (std::size_t i = 0; i < T; ++i) {
    const Eigen::VectorXd& x = s.X.back();
    const Eigen::VectorXd u = s.K[i] * x + s.kff[i];
    s.cost += 0.5 * x.dot(lq.Q[i] * x) + u.dot(lq.N[i] * x) + 0.5 * u.dot(lq.R[i] * u) + lq.q[i].dot(x) +
              lq.r[i].dot(u);
    s.U.push_back(u);
    s.X.push_back(lq.A[i] * x + lq.B[i] * u + lq.c[i]);
  }
  s.cost += 0.5 * s.X.back().dot(lq.Qf * s.X.back()) + lq.qf.dot(s.X.back());
  return s;
}

}  // namespace oracle
