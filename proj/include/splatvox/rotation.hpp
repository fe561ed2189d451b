#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

namespace splatvox {

// Quaternions are stored scalar-first as (w, x, y, z) in an Eigen::Vector4d.
using Quat = Eigen::Vector4d;

inline Quat identity_quat() { return Quat(1.0, 0.0, 0.0, 0.0); }

/// Flips the sign so that w >= 0 (first non-zero component positive on ties).
inline Quat canonical_sign(const Quat& q) {
  for (int i = 0; i < 4; ++i) {
    if (q[i] > 0) return q;
    if (q[i] < 0) return -q;
  }
  return q;
}

/// Rotation matrix of the normalized quaternion.
inline Eigen::Matrix3d quat_to_rotmat(const Quat& raw) {
  const double n = raw.norm();
  if (!(n > 1e-12)) return Eigen::Matrix3d::Identity();
  const Quat q = raw / n;
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Eigen::Matrix3d r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

/// Gradient w.r.t. the raw (unnormalized) quaternion given dL/dR.
inline Quat quat_to_rotmat_backward(const Quat& raw, const Eigen::Matrix3d& g) {
  const double n = raw.norm();
  if (!(n > 1e-12)) return Quat::Zero();
  const Quat q = raw / n;
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Quat gq;
  gq[0] = 2 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
  gq[1] = 2 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2 * x * g(1, 1) - w * g(1, 2) +
               z * g(2, 0) + w * g(2, 1) - 2 * x * g(2, 2));
  gq[2] = 2 * (-2 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) -
               w * g(2, 0) + z * g(2, 1) - 2 * y * g(2, 2));
  gq[3] = 2 * (-2 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2 * z * g(1, 1) +
               y * g(1, 2) + x * g(2, 0) + y * g(2, 1));
  return (gq - q * q.dot(gq)) / n;
}

inline Quat rotmat_to_quat(const Eigen::Matrix3d& r) {
  Eigen::Quaterniond e(r);
  return canonical_sign(Quat(e.w(), e.x(), e.y(), e.z()).normalized());
}

inline Quat quat_multiply(const Quat& a, const Quat& b) {
  return Quat(a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
              a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
              a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
              a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]);
}

/// Angle in radians of a rotation matrix, robust near 0 and pi.
inline double rotation_angle(const Eigen::Matrix3d& r) {
  const double c = std::clamp((r.trace() - 1.0) * 0.5, -1.0, 1.0);
  const Eigen::Vector3d s(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  return std::atan2(0.5 * s.norm(), c);
}

}  // namespace splatvox
