#include "retarget/rotmath.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace retarget {

Mat3 hat(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return m;
}

RotationMatrix exp_map(const RotationVector& v) {
  if (!v.allFinite()) {
    throw std::invalid_argument("exp_map: non-finite rotation vector");
  }
  const double theta2 = v.squaredNorm();
  const double theta = std::sqrt(theta2);
  const Mat3 K = hat(v);
  double a, b;
  if (theta < kSmallAngle) {
    a = 1.0 - theta2 / 6.0;
    b = 0.5 - theta2 / 24.0;
  } else {
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / theta2;
  }
  return Mat3::Identity() + a * K + b * K * K;
}

bool is_rotation(const Mat3& R, double tol) {
  if (!R.allFinite()) return false;
  const double ortho = (R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff();
  return ortho <= tol && std::abs(R.determinant() - 1.0) <= tol;
}

RotationVector log_map(const RotationMatrix& R) {
  // Products of valid rotations drift by a few ulps per multiply; accept a
  // slack well below anything that matters for the losses.
  if (!is_rotation(R, 1e3 * kOrthoTolerance)) {
    throw std::invalid_argument("log_map: matrix is not a rotation");
  }
  const Vec3 w(0.5 * (R(2, 1) - R(1, 2)), 0.5 * (R(0, 2) - R(2, 0)),
               0.5 * (R(1, 0) - R(0, 1)));
  const double c = std::clamp(0.5 * (R.trace() - 1.0), -1.0, 1.0);
  const double s = w.norm();
  const double theta = std::atan2(s, c);

  if (theta < kSmallAngle) {
    return w * (1.0 + theta * theta / 6.0);
  }
  if (c > -0.9) {
    return w * (theta / s);
  }
  // Near pi the skew part vanishes; recover the axis from the symmetric part,
  // R + R^T = 2 cos(theta) I + 2 (1 - cos(theta)) a a^T.
  const Mat3 S = 0.5 * (R + R.transpose()) - c * Mat3::Identity();
  int k = 0;
  S.diagonal().maxCoeff(&k);
  Vec3 axis = S.col(k) / std::sqrt(std::max(S(k, k), 0.0) * (1.0 - c));
  axis.normalize();
  if (axis.dot(w) < 0.0) axis = -axis;
  return axis * theta;
}

RotationVector geodesic_error(const RotationMatrix& R_a, const RotationMatrix& R_b) {
  return log_map(R_a.transpose() * R_b);
}

Mat3 right_jacobian(const RotationVector& v) {
  const double theta2 = v.squaredNorm();
  const double theta = std::sqrt(theta2);
  const Mat3 K = hat(v);
  if (theta < 1e-5) {
    return Mat3::Identity() - 0.5 * K + K * K / 6.0;
  }
  return Mat3::Identity() - (1.0 - std::cos(theta)) / theta2 * K +
         (theta - std::sin(theta)) / (theta2 * theta) * K * K;
}

Mat3 right_jacobian_inverse(const RotationVector& v) {
  const double theta2 = v.squaredNorm();
  const double theta = std::sqrt(theta2);
  const Mat3 K = hat(v);
  if (theta < 1e-5) {
    return Mat3::Identity() + 0.5 * K + K * K / 12.0;
  }
  const double coef =
      1.0 / theta2 - (1.0 + std::cos(theta)) / (2.0 * theta * std::sin(theta));
  return Mat3::Identity() + 0.5 * K + coef * K * K;
}

SwingTwist swing_twist(const RotationMatrix& R, const Vec3& axis) {
  if (std::abs(axis.norm() - 1.0) > 1e-9) {
    throw std::invalid_argument("swing_twist: axis must be unit length");
  }
  const Eigen::Quaterniond q(R);
  const Vec3 proj = q.vec().dot(axis) * axis;
  const double n = std::sqrt(q.w() * q.w() + proj.squaredNorm());
  SwingTwist out;
  if (n < 1e-12) {
    out.swing = R;
    out.twist = Mat3::Identity();
    out.degenerate = true;
    return out;
  }
  const Eigen::Quaterniond twist(q.w() / n, proj.x() / n, proj.y() / n, proj.z() / n);
  out.twist = twist.toRotationMatrix();
  out.swing = R * out.twist.transpose();
  return out;
}

RotationMatrix yaw_rotation(double yaw) {
  return Eigen::AngleAxisd(yaw, Vec3::UnitZ()).toRotationMatrix();
}

}  // namespace retarget
