#include <ctreg/geometry.hpp>
#include <ctreg/errors.hpp>

#include <cmath>
#include <stdexcept>

namespace ctreg {

FileFormatError::FileFormatError(std::string path, int line, std::string reason)
    : std::runtime_error(path + ":" + std::to_string(line) + ": " + reason),
      path_(std::move(path)),
      line_(line),
      reason_(std::move(reason)) {}

Rotation::Rotation(const Eigen::Quaterniond& q) : q_(q) {
  const double n = q_.norm();
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw std::invalid_argument("Rotation: quaternion must be finite and nonzero");
  }
  q_.coeffs() /= n;
  if (q_.w() < 0.0) {
    q_.coeffs() = -q_.coeffs();
  }
}

Rotation Rotation::from_matrix(const Mat3& m) {
  return Rotation(Eigen::Quaterniond(m));
}

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),  //
      v.z(), 0.0, -v.x(),   //
      -v.y(), v.x(), 0.0;
  return m;
}

Rotation rot_exp(const Vec3& omega) {
  if (!omega.allFinite()) {
    throw std::invalid_argument("rot_exp: non-finite rotation vector");
  }
  const double theta_sq = omega.squaredNorm();
  const double theta = std::sqrt(theta_sq);
  double real;
  double imag_scale;
  if (theta < kSmallAngle) {
    real = 1.0 - theta_sq / 8.0;
    imag_scale = 0.5 - theta_sq / 48.0;
  } else {
    real = std::cos(0.5 * theta);
    imag_scale = std::sin(0.5 * theta) / theta;
  }
  const Vec3 imag = imag_scale * omega;
  return Rotation(real, imag.x(), imag.y(), imag.z());
}

Vec3 rot_log(const Rotation& r) {
  const Eigen::Quaterniond& q = r.quaternion();
  const Vec3 imag = q.vec();
  const double imag_norm = imag.norm();
  const double w = q.w();  // >= 0 by canonicalization

  if (imag_norm < kSmallAngle * 0.5) {
    // theta = 2 atan(|v| / w) ~= 2 |v| / w (1 - |v|^2 / (3 w^2))
    const double scale = 2.0 / w - 2.0 * imag_norm * imag_norm / (3.0 * w * w * w);
    return scale * imag;
  }
  const double theta = 2.0 * std::atan2(imag_norm, w);
  return (theta / imag_norm) * imag;
}

Mat3 right_jacobian(const Vec3& phi) {
  const double theta_sq = phi.squaredNorm();
  const double theta = std::sqrt(theta_sq);
  const Mat3 k = skew(phi);
  double a;
  double b;
  if (theta < kSmallAngle) {
    a = 0.5 - theta_sq / 24.0;
    b = 1.0 / 6.0 - theta_sq / 120.0;
  } else {
    a = (1.0 - std::cos(theta)) / theta_sq;
    b = (theta - std::sin(theta)) / (theta_sq * theta);
  }
  return Mat3::Identity() - a * k + b * k * k;
}

Mat3 right_jacobian_inverse(const Vec3& phi) {
  const double theta_sq = phi.squaredNorm();
  const double theta = std::sqrt(theta_sq);
  const Mat3 k = skew(phi);
  double c;
  if (theta < kSmallAngle) {
    c = 1.0 / 12.0 + theta_sq / 720.0;
  } else {
    // cot(theta/2) form stays finite at theta = pi
    const double half = 0.5 * theta;
    c = 1.0 / theta_sq - std::cos(half) / (2.0 * theta * std::sin(half));
  }
  return Mat3::Identity() + 0.5 * k + c * k * k;
}

Pose pose_compose(const Pose& a, const Pose& b) {
  return Pose{a.rotation * b.rotation, a.rotation * b.position + a.position};
}

Pose pose_inverse(const Pose& a) {
  const Rotation inv = a.rotation.inverse();
  return Pose{inv, -(inv * a.position)};
}

Vec3 pose_apply(const Pose& a, const Vec3& x) {
  return a.rotation * x + a.position;
}

double rotation_angle_between(const Rotation& a, const Rotation& b) {
  return rot_log(a.inverse() * b).norm();
}

}  // namespace ctreg
