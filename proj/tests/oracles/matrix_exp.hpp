#pragma once

// Matrix exponential of a twist by truncated power series of its 4x4
// homogeneous generator. Independent of the closed forms under test.

#include <Eigen/Core>

namespace oracle {

inline Eigen::Matrix4d twist_hat(const Eigen::Matrix<double, 6, 1>& v) {
  Eigen::Matrix4d X = Eigen::Matrix4d::Zero();
  X(0, 1) = -v(5);
  X(0, 2) = v(4);
  X(1, 0) = v(5);
  X(1, 2) = -v(3);
  X(2, 0) = -v(4);
  X(2, 1) = v(3);
  X.block<3, 1>(0, 3) = v.head<3>();
  return X;
}

inline Eigen::Matrix4d expm_series(const Eigen::Matrix4d& X, int terms = 30) {
  Eigen::Matrix4d out = Eigen::Matrix4d::Identity();
  Eigen::Matrix4d term = Eigen::Matrix4d::Identity();
  for (int k = 1; k < terms; ++k) {
    term = term * X / static_cast<double>(k);
    out += term;
  }
  return out;
}

}  // namespace oracle
