#pragma once

#include <cmath>

#include <Eigen/Dense>
#include <Eigen/Geometry>

namespace tcc {

using Eigen::Matrix3d;
using Eigen::MatrixXd;
using Eigen::Quaterniond;
using Eigen::Vector3d;
using Eigen::VectorXd;

/// Rigid transform as position + unit quaternion.
struct Pose {
  Vector3d position = Vector3d::Zero();
  Quaterniond orientation = Quaterniond::Identity();

  static Pose identity() { return Pose{}; }

  Matrix3d rotation() const { return orientation.toRotationMatrix(); }

  Vector3d apply(const Vector3d& p) const {
    return position + orientation * p;
  }

  Pose compose(const Pose& other) const {
    Pose out;
    out.position = position + orientation * other.position;
    out.orientation = (orientation * other.orientation).normalized();
    return out;
  }

  Pose inverse() const {
    Pose out;
    out.orientation = orientation.conjugate();
    out.position = -(out.orientation * position);
    return out;
  }
};

inline Matrix3d hat(const Vector3d& w) {
  Matrix3d m;
  // clang-format off
  m <<      0, -w.z(),  w.y(),
        w.z(),      0, -w.x(),
       -w.y(),  w.x(),      0;
  // clang-format on
  return m;
}

/// exp: so(3) -> SO(3).
inline Matrix3d exp_so3(const Vector3d& w) {
  const double theta = w.norm();
  if (theta < 1e-12) {
    return Matrix3d::Identity() + hat(w);
  }
  const Vector3d axis = w / theta;
  return Eigen::AngleAxisd(theta, axis).toRotationMatrix();
}

/// log: SO(3) -> so(3). Valid for rotation angles < pi.
inline Vector3d log_so3(const Matrix3d& R) {
  Eigen::AngleAxisd aa(R);
  return aa.angle() * aa.axis();
}

/// Left Jacobian of SO(3): d(exp(w + dw)) = exp(hat(Jl(w) dw)) exp(w).
inline Matrix3d left_jacobian_so3(const Vector3d& w) {
  const double theta = w.norm();
  const Matrix3d W = hat(w);
  if (theta < 1e-6) {
    return Matrix3d::Identity() + 0.5 * W + (1.0 / 6.0) * W * W;
  }
  const double t2 = theta * theta;
  const double a = (1.0 - std::cos(theta)) / t2;
  const double b = (theta - std::sin(theta)) / (t2 * theta);
  return Matrix3d::Identity() + a * W + b * W * W;
}

/// Inverse of the left Jacobian; series expansion near zero.
inline Matrix3d left_jacobian_inv_so3(const Vector3d& w) {
  const double theta = w.norm();
  const Matrix3d W = hat(w);
  if (theta < 1e-6) {
    return Matrix3d::Identity() - 0.5 * W + (1.0 / 12.0) * W * W;
  }
  const double half = 0.5 * theta;
  const double cot = half / std::tan(half);
  return Matrix3d::Identity() - 0.5 * W +
         ((1.0 - cot) / (theta * theta)) * W * W;
}

/// Pose from 6 coordinates: 3 position + 3 exponential-map rotation.
inline Pose pose_from_coords(const Eigen::Ref<const VectorXd>& c) {
  Pose p;
  p.position = c.head<3>();
  p.orientation = Quaterniond(exp_so3(c.segment<3>(3))).normalized();
  return p;
}

inline Eigen::Matrix<double, 6, 1> coords_from_pose(const Pose& p) {
  Eigen::Matrix<double, 6, 1> c;
  c.head<3>() = p.position;
  c.tail<3>() = log_so3(p.rotation());
  return c;
}

}  // namespace tcc
