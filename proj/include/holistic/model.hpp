#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "holistic/spatial.hpp"

namespace holistic {

enum class JointKind { revolute, prismatic, virtual_rotation, virtual_translation };

inline bool is_rotational(JointKind k) {
  return k == JointKind::revolute || k == JointKind::virtual_rotation;
}

struct JointDesc {
  JointKind kind = JointKind::revolute;
  Eigen::Vector3d axis = Eigen::Vector3d::UnitZ();
  double q_min = -std::numeric_limits<double>::infinity();
  double q_max = std::numeric_limits<double>::infinity();
  double qd_max = std::numeric_limits<double>::infinity();
};

enum class BaseKind { nonholonomic, omnidirectional };

// An arm joint preceded by the fixed transform from the previous joint frame.
struct ArmLink {
  Pose3 offset;
  JointDesc joint;
};

struct PlanarPose {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;

  Pose3 pose() const { return Pose3::planar(x, y, theta); }
};

struct Configuration {
  PlanarPose base;
  Eigen::VectorXd q_arm;
};

class ModelError : public std::runtime_error {
 public:
  explicit ModelError(const std::string& what, int line = 0)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

// Mobile manipulator: planar base with virtual joints, a fixed mount, and a
// serial arm. Immutable once validated.
struct KinematicModel {
  std::string name = "robot";
  BaseKind base_kind = BaseKind::nonholonomic;
  Pose3 base_to_arm;
  std::vector<ArmLink> links;
  Pose3 tool;
  double wheel_radius = 0.1;
  double wheel_separation = 0.5;
  std::map<std::string, Eigen::VectorXd> configs;

  int n_base() const { return base_kind == BaseKind::nonholonomic ? 2 : 3; }
  int n_arm() const { return static_cast<int>(links.size()); }
  int n() const { return n_base() + n_arm(); }

  // Index of the virtual base-rotation joint among all joints.
  int base_rotation_index() const { return base_kind == BaseKind::nonholonomic ? 0 : 2; }

  std::vector<JointDesc> base_joints() const {
    JointDesc rz{JointKind::virtual_rotation, Eigen::Vector3d::UnitZ()};
    JointDesc tx{JointKind::virtual_translation, Eigen::Vector3d::UnitX()};
    if (base_kind == BaseKind::nonholonomic) return {rz, tx};
    JointDesc ty{JointKind::virtual_translation, Eigen::Vector3d::UnitY()};
    return {tx, ty, rz};
  }

  std::vector<JointDesc> joints() const {
    auto all = base_joints();
    for (const auto& l : links) all.push_back(l.joint);
    return all;
  }

  Eigen::VectorXd config(const std::string& key) const {
    auto it = configs.find(key);
    if (it == configs.end()) throw ModelError("unknown configuration '" + key + "'");
    return it->second;
  }

  void validate() const {
    if (links.empty()) throw ModelError("model has no arm joints");
    if (base_kind == BaseKind::nonholonomic && !(wheel_radius > 0.0 && wheel_separation > 0.0))
      throw ModelError("wheel radius and separation must be positive");
    for (std::size_t i = 0; i < links.size(); ++i) {
      const auto& j = links[i].joint;
      const std::string tag = "joint " + std::to_string(i) + ": ";
      if (!(j.q_min < j.q_max)) throw ModelError(tag + "qmin must be less than qmax");
      if (!(j.qd_max > 0.0)) throw ModelError(tag + "qdmax must be positive");
      if (std::abs(j.axis.norm() - 1.0) > 1e-12) throw ModelError(tag + "axis must be unit");
    }
    for (const auto& [key, q] : configs) {
      if (q.size() != n_arm())
        throw ModelError("configuration '" + key + "' has wrong length");
    }
  }
};

inline Pose3 joint_motion(const JointDesc& j, double q) {
  if (is_rotational(j.kind))
    return Pose3::from_rotation(Eigen::AngleAxisd(q, j.axis).toRotationMatrix());
  Pose3 p;
  p.translation = q * j.axis;
  return p;
}

// Joint frames (world) of a chain evaluated at q_full = (virtual, arm).
struct ChainFrames {
  std::vector<Eigen::Vector3d> axes;     // joint axis in the reference frame
  std::vector<Eigen::Vector3d> origins;  // joint origin in the reference frame
  std::vector<JointKind> kinds;
  Pose3 ee;
};

// Forward pass through base pose, virtual joints, mount, arm, and tool.
// `q_virtual` may be empty (treated as zero).
inline ChainFrames chain_frames(const KinematicModel& m, const Pose3& world_base,
                                const Eigen::VectorXd& q_virtual, const Eigen::VectorXd& q_arm,
                                bool include_virtual = true) {
  if (q_arm.size() != m.n_arm()) throw ModelError("arm configuration has wrong dimension");
  ChainFrames f;
  Pose3 t = world_base;
  if (include_virtual) {
    const auto vj = m.base_joints();
    for (std::size_t i = 0; i < vj.size(); ++i) {
      f.axes.push_back(t.rotation * vj[i].axis);
      f.origins.push_back(t.translation);
      f.kinds.push_back(vj[i].kind);
      const double q = q_virtual.size() > 0 ? q_virtual(static_cast<Eigen::Index>(i)) : 0.0;
      t = t * joint_motion(vj[i], q);
    }
  }
  t = t * m.base_to_arm;
  for (int i = 0; i < m.n_arm(); ++i) {
    const auto& link = m.links[static_cast<std::size_t>(i)];
    t = t * link.offset;
    f.axes.push_back(t.rotation * link.joint.axis);
    f.origins.push_back(t.translation);
    f.kinds.push_back(link.joint.kind);
    t = t * joint_motion(link.joint, q_arm(i));
  }
  f.ee = t * m.tool;
  return f;
}

// Geometric Jacobian of a chain, expressed in the chain's reference frame.
inline Matrix6Xd geometric_jacobian(const ChainFrames& f) {
  const auto n = static_cast<Eigen::Index>(f.axes.size());
  Matrix6Xd j(6, n);
  const Eigen::Vector3d& pe = f.ee.translation;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& z = f.axes[static_cast<std::size_t>(i)];
    if (is_rotational(f.kinds[static_cast<std::size_t>(i)])) {
      j.col(i) << z.cross(pe - f.origins[static_cast<std::size_t>(i)]), z;
    } else {
      j.col(i) << z, Eigen::Vector3d::Zero();
    }
  }
  return j;
}

inline Pose3 fkine(const KinematicModel& m, const Configuration& cfg) {
  return chain_frames(m, cfg.base.pose(), {}, cfg.q_arm, false).ee;
}

// End-effector pose in the base frame, bT_e.
inline Pose3 fkine_base(const KinematicModel& m, const Eigen::VectorXd& q_arm) {
  return chain_frames(m, Pose3::identity(), {}, q_arm, false).ee;
}

enum class Frame { world, base, end_effector };

inline Matrix6Xd rotate_jacobian(const Matrix6Xd& j, const Eigen::Matrix3d& r) {
  Matrix6Xd out(6, j.cols());
  out.topRows<3>() = r * j.topRows<3>();
  out.bottomRows<3>() = r * j.bottomRows<3>();
  return out;
}

// 6 x n Jacobian of the augmented chain (virtual joints at zero), columns
// ordered base virtual joints first, then arm joints.
inline Matrix6Xd jacobian(const KinematicModel& m, const Configuration& cfg, Frame frame) {
  // Base-frame chain; world and end-effector frames are rotations of it.
  const auto f = chain_frames(m, Pose3::identity(), {}, cfg.q_arm, true);
  const Matrix6Xd jb = geometric_jacobian(f);
  switch (frame) {
    case Frame::base:
      return jb;
    case Frame::world:
      return rotate_jacobian(jb, cfg.base.pose().rotation);
    case Frame::end_effector:
      return rotate_jacobian(jb, f.ee.rotation.transpose());
  }
  return jb;
}

// Arm-only Jacobian in the arm's mount frame.
inline Matrix6Xd arm_jacobian(const KinematicModel& m, const Eigen::VectorXd& q_arm) {
  const auto f = chain_frames(m, Pose3::identity(), {}, q_arm, false);
  return geometric_jacobian(f);
}

// d J / d q_i for every i, from the Jacobian alone (geometric chain identity).
inline std::vector<Matrix6Xd> jacobian_hessian(const Matrix6Xd& j) {
  const auto n = j.cols();
  std::vector<Matrix6Xd> h(static_cast<std::size_t>(n), Matrix6Xd::Zero(6, n));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index k = 0; k < n; ++k) {
      const Eigen::Index a = std::min(i, k);
      const Eigen::Index b = std::max(i, k);
      const Eigen::Vector3d wa = j.col(a).tail<3>();
      auto& hi = h[static_cast<std::size_t>(i)];
      hi.col(k).head<3>() = wa.cross(j.col(b).head<3>());
      if (i < k) hi.col(k).tail<3>() = j.col(i).tail<3>().cross(j.col(k).tail<3>());
    }
  }
  return h;
}

// Yoshikawa measure sqrt(det(J J^T)); round-off negatives clamp to zero.
inline double manipulability(const Matrix6Xd& j) {
  const double d = (j * j.transpose()).determinant();
  return d > 0.0 ? std::sqrt(d) : 0.0;
}

// Gradient of the manipulability of `j` with respect to its joint coordinates.
inline Eigen::VectorXd manipulability_gradient(const Matrix6Xd& j) {
  const auto n = j.cols();
  Eigen::VectorXd g = Eigen::VectorXd::Zero(n);
  const double mval = manipulability(j);
  if (mval <= 0.0) return g;
  const Eigen::Matrix<double, 6, 6> jjt_inv = (j * j.transpose()).inverse();
  const Eigen::MatrixXd b = j.transpose() * jjt_inv;  // n x 6
  const auto h = jacobian_hessian(j);
  for (Eigen::Index i = 0; i < n; ++i)
    g(i) = mval * (b.transpose().cwiseProduct(h[static_cast<std::size_t>(i)])).sum();
  return g;
}

enum class ManipVariant { arm_only, whole_platform, zero };

// Linear-cost manipulability Jacobian over all n joints.
inline Eigen::VectorXd manipulability_jacobian(const KinematicModel& m, const Configuration& cfg,
                                               ManipVariant variant = ManipVariant::arm_only) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(m.n());
  switch (variant) {
    case ManipVariant::zero:
      break;
    case ManipVariant::arm_only:
      out.tail(m.n_arm()) = manipulability_gradient(arm_jacobian(m, cfg.q_arm));
      break;
    case ManipVariant::whole_platform:
      out = manipulability_gradient(jacobian(m, cfg, Frame::base));
      break;
  }
  return out;
}

inline double arm_manipulability(const KinematicModel& m, const Eigen::VectorXd& q_arm) {
  return manipulability(arm_jacobian(m, q_arm));
}

// Differential-drive wheel relations.
struct WheelSpeeds {
  double left = 0.0;
  double right = 0.0;
};

struct BaseRates {
  double theta_dot = 0.0;
  double d_dot = 0.0;
};

inline BaseRates inverse_wheel_map(const WheelSpeeds& w, double radius, double separation) {
  return {radius / separation * (w.right - w.left), radius / 2.0 * (w.right + w.left)};
}

inline WheelSpeeds wheel_map(const BaseRates& b, double radius, double separation) {
  // right - left = W/R * theta_dot ; right + left = 2/R * d_dot
  const double diff = separation / radius * b.theta_dot;
  const double sum = 2.0 / radius * b.d_dot;
  return {0.5 * (sum - diff), 0.5 * (sum + diff)};
}

}  // namespace holistic
