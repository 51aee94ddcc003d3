#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace ctreg {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Angles below this use the second-order series in exp/log and the SO(3) Jacobians.
inline constexpr double kSmallAngle = 1e-6;

/**
 * @brief Unit quaternion rotation, canonicalized to w >= 0.
 *
 * Every constructor normalizes and flips the sign so that a given rotation
 * has exactly one stored representation.
 */
class Rotation {
public:
  Rotation() : q_(Eigen::Quaterniond::Identity()) {}
  explicit Rotation(const Eigen::Quaterniond& q);
  Rotation(double w, double x, double y, double z) : Rotation(Eigen::Quaterniond(w, x, y, z)) {}

  static Rotation identity() { return Rotation(); }
  static Rotation from_matrix(const Mat3& m);

  const Eigen::Quaterniond& quaternion() const { return q_; }
  double w() const { return q_.w(); }
  double x() const { return q_.x(); }
  double y() const { return q_.y(); }
  double z() const { return q_.z(); }

  Mat3 matrix() const { return q_.toRotationMatrix(); }
  Rotation inverse() const { return Rotation(q_.conjugate()); }
  Vec3 operator*(const Vec3& v) const { return q_ * v; }
  Rotation operator*(const Rotation& other) const { return Rotation(q_ * other.q_); }

private:
  Eigen::Quaterniond q_;
};

struct Pose {
  Rotation rotation;
  Vec3 position = Vec3::Zero();

  static Pose identity() { return Pose{}; }
};

Mat3 skew(const Vec3& v);

/// Exponential map so(3) -> SO(3). Throws std::invalid_argument on non-finite input.
Rotation rot_exp(const Vec3& omega);

/// Principal logarithm, |result| in [0, pi].
Vec3 rot_log(const Rotation& r);

/// Right Jacobian of SO(3): Exp(phi + d) ~= Exp(phi) Exp(Jr(phi) d).
Mat3 right_jacobian(const Vec3& phi);
Mat3 right_jacobian_inverse(const Vec3& phi);

Pose pose_compose(const Pose& a, const Pose& b);
Pose pose_inverse(const Pose& a);
Vec3 pose_apply(const Pose& a, const Vec3& x);

/// Angle of the relative rotation a^-1 b, radians.
double rotation_angle_between(const Rotation& a, const Rotation& b);

}  // namespace ctreg
