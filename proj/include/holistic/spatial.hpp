#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Dense>

namespace holistic {

using Vector6d = Eigen::Matrix<double, 6, 1>;
using Matrix6Xd = Eigen::Matrix<double, 6, Eigen::Dynamic>;

inline Eigen::Matrix3d rot_x(double a) {
  return Eigen::AngleAxisd(a, Eigen::Vector3d::UnitX()).toRotationMatrix();
}
inline Eigen::Matrix3d rot_y(double a) {
  return Eigen::AngleAxisd(a, Eigen::Vector3d::UnitY()).toRotationMatrix();
}
inline Eigen::Matrix3d rot_z(double a) {
  return Eigen::AngleAxisd(a, Eigen::Vector3d::UnitZ()).toRotationMatrix();
}

// Rigid transform stored as (R, t). Acts on points as R * p + t.
struct Pose3 {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static Pose3 identity() { return {}; }

  static Pose3 from_translation(double x, double y, double z) {
    Pose3 p;
    p.translation = {x, y, z};
    return p;
  }

  static Pose3 from_rotation(const Eigen::Matrix3d& r) {
    Pose3 p;
    p.rotation = r;
    return p;
  }

  // Translation followed by roll-pitch-yaw rotation R = Rz(yaw) Ry(pitch) Rx(roll).
  static Pose3 from_xyz_rpy(double x, double y, double z, double roll, double pitch,
                            double yaw) {
    Pose3 p;
    p.translation = {x, y, z};
    p.rotation = rot_z(yaw) * rot_y(pitch) * rot_x(roll);
    return p;
  }

  // Planar pose (x, y, theta) lifted to SE(3).
  static Pose3 planar(double x, double y, double theta) {
    Pose3 p;
    p.translation = {x, y, 0.0};
    p.rotation = rot_z(theta);
    return p;
  }

  Eigen::Matrix4d matrix() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = rotation;
    m.topRightCorner<3, 1>() = translation;
    return m;
  }

  static Pose3 from_matrix(const Eigen::Matrix4d& m) {
    Pose3 p;
    p.rotation = m.topLeftCorner<3, 3>();
    p.translation = m.topRightCorner<3, 1>();
    return p;
  }

  Eigen::Vector3d operator*(const Eigen::Vector3d& point) const {
    return rotation * point + translation;
  }
};

inline Pose3 compose(const Pose3& a, const Pose3& b) {
  Pose3 out;
  out.rotation = a.rotation * b.rotation;
  out.translation = a.rotation * b.translation + a.translation;
  return out;
}

inline Pose3 operator*(const Pose3& a, const Pose3& b) { return compose(a, b); }

inline Pose3 inverse(const Pose3& a) {
  Pose3 out;
  out.rotation = a.rotation.transpose();
  out.translation = -(out.rotation * a.translation);
  return out;
}

// Deviation of R from orthonormality, max |R^T R - I|.
inline double orthonormality_error(const Eigen::Matrix3d& r) {
  return (r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
}

// Nearest rotation matrix via polar decomposition (SVD).
inline Eigen::Matrix3d nearest_rotation(const Eigen::Matrix3d& r) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d u = svd.matrixU();
  const Eigen::Matrix3d v = svd.matrixV();
  if ((u * v.transpose()).determinant() < 0.0) u.col(2) *= -1.0;
  return u * v.transpose();
}

inline constexpr double kRenormaliseThreshold = 1e-7;

// Re-orthonormalise when accumulated drift exceeds kRenormaliseThreshold.
inline void renormalise(Pose3& p) {
  if (orthonormality_error(p.rotation) > kRenormaliseThreshold)
    p.rotation = nearest_rotation(p.rotation);
}

// Ordered (vx, vy, vz, wx, wy, wz).
struct Twist {
  Eigen::Vector3d linear = Eigen::Vector3d::Zero();
  Eigen::Vector3d angular = Eigen::Vector3d::Zero();

  Vector6d vector() const {
    Vector6d v;
    v << linear, angular;
    return v;
  }

  static Twist from_vector(const Vector6d& v) {
    return {v.head<3>(), v.tail<3>()};
  }

  double norm() const { return vector().norm(); }
};

inline Twist operator*(double s, const Twist& t) { return {s * t.linear, s * t.angular}; }

inline Eigen::Matrix3d skew(const Eigen::Vector3d& w) {
  Eigen::Matrix3d s;
  s << 0.0, -w.z(), w.y(), w.z(), 0.0, -w.x(), -w.y(), w.x(), 0.0;
  return s;
}

// Rotation logarithm as angle * axis, angle in [0, pi]. At angle pi the axis
// sign is fixed so that its largest-magnitude component is positive.
inline Eigen::Vector3d rotation_log(const Eigen::Matrix3d& r) {
  const Eigen::Vector3d vee(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  const double cos_angle = std::clamp((r.trace() - 1.0) * 0.5, -1.0, 1.0);
  const double angle = std::atan2(0.5 * vee.norm(), cos_angle);

  if (angle < 1e-6) {
    // first-order series: log(R) ~ (R - R^T)/2
    return 0.5 * vee;
  }
  if (std::numbers::pi - angle > 1e-6) {
    return angle / (2.0 * std::sin(angle)) * vee;
  }

  // Near pi: axis from the symmetric part, R + I = 2 a a^T (at exactly pi).
  const Eigen::Matrix3d b = 0.5 * (r + Eigen::Matrix3d::Identity());
  Eigen::Index k = 0;
  b.diagonal().maxCoeff(&k);
  Eigen::Vector3d axis = b.col(k) / std::sqrt(std::max(b(k, k), 1e-300));
  axis.normalize();
  // Resolve the sign from the antisymmetric part when it carries information.
  if (vee.norm() > 1e-12 && axis.dot(vee) < 0.0) axis = -axis;
  if (vee.norm() <= 1e-12) {
    Eigen::Index big = 0;
    axis.cwiseAbs().maxCoeff(&big);
    if (axis(big) < 0.0) axis = -axis;
  }
  return angle * axis;
}

inline Eigen::Matrix3d rotation_exp(const Eigen::Vector3d& w) {
  const double angle = w.norm();
  if (angle < 1e-12) return Eigen::Matrix3d::Identity() + skew(w);
  return Eigen::AngleAxisd(angle, w / angle).toRotationMatrix();
}

// Spatial displacement of a transform: (translation, angle-axis of rotation).
inline Twist psi(const Pose3& t) { return {t.translation, rotation_log(t.rotation)}; }

inline double rotation_angle(const Eigen::Matrix3d& r) { return rotation_log(r).norm(); }

inline double wrap_angle(double a) {
  a = std::remainder(a, 2.0 * std::numbers::pi);
  if (a <= -std::numbers::pi) a += 2.0 * std::numbers::pi;
  return a;
}

inline constexpr double deg2rad(double d) { return d * std::numbers::pi / 180.0; }
inline constexpr double rad2deg(double r) { return r * 180.0 / std::numbers::pi; }

}  // namespace holistic
