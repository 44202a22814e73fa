#pragma once

#include <Eigen/Core>
#include <Eigen/Sparse>

namespace cipush {

using Vec  = Eigen::VectorXd;
using Mat  = Eigen::MatrixXd;
using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using SpMat = Eigen::SparseMatrix<double>;

/// 2-D rotation matrix for angle theta.
inline Mat2 rot2(double theta) {
  const double c = std::cos(theta), s = std::sin(theta);
  Mat2 R;
  R << c, -s, s, c;
  return R;
}

/// 90-degree rotation (the planar "cross product" operator).
inline Mat2 perp2() {
  Mat2 S;
  S << 0.0, -1.0, 1.0, 0.0;
  return S;
}

}  // namespace cipush
