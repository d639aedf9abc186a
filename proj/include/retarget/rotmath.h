#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace retarget {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Rotation vector: axis * angle, radians. log_map always returns ||v|| <= pi.
using RotationVector = Vec3;
using RotationMatrix = Mat3;

inline constexpr double kSmallAngle = 1e-8;
inline constexpr double kOrthoTolerance = 1e-9;

Mat3 hat(const Vec3& v);

// Rodrigues formula; throws std::invalid_argument on non-finite input.
RotationMatrix exp_map(const RotationVector& v);

// Inverse of exp_map. Throws std::invalid_argument if R is not a rotation
// within kOrthoTolerance (scaled by a small slack for accumulated roundoff).
RotationVector log_map(const RotationMatrix& R);

// Log(R_a^T R_b).
RotationVector geodesic_error(const RotationMatrix& R_a, const RotationMatrix& R_b);

/// Right Jacobian of SO(3): Exp(v + dv) ~= Exp(v) Exp(Jr(v) dv).
Mat3 right_jacobian(const RotationVector& v);

/// Inverse right Jacobian: Log(Exp(v) Exp(dv)) ~= v + Jr^{-1}(v) dv.
Mat3 right_jacobian_inverse(const RotationVector& v);

bool is_rotation(const Mat3& R, double tol = 1e-6);

struct SwingTwist {
  RotationMatrix swing;
  RotationMatrix twist;
  bool degenerate = false;
};

// R = swing * twist, twist about `axis` (unit). When R is a half-turn about
// an axis perpendicular to `axis` the twist is ambiguous; twist = I and the
// degenerate flag is set.
SwingTwist swing_twist(const RotationMatrix& R, const Vec3& axis);

// Rotation about +z by `yaw`.
RotationMatrix yaw_rotation(double yaw);

}  // namespace retarget
