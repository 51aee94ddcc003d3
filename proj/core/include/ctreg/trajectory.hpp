#pragma once

#include <array>
#include <span>
#include <vector>

#include <Eigen/Core>

#include <ctreg/geometry.hpp>

namespace ctreg {

inline constexpr int kMinSplineOrder = 2;
inline constexpr int kMaxSplineOrder = 6;
inline constexpr int kDefaultSplineOrder = 4;
inline constexpr double kDefaultKnotInterval = 0.1;

struct StampedPose {
  double t = 0.0;
  Pose pose;
};

using TrajectorySamples = std::vector<StampedPose>;

/**
 * @brief Blending coefficients of a uniform B-spline of order k in cumulative form.
 *
 * Row j of the matrix gives the polynomial coefficients (in u, ascending powers)
 * of the cumulative basis function sum_{s >= j} B_s(u), u in [0, 1).
 */
class CumulativeBasis {
public:
  using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxSplineOrder, kMaxSplineOrder>;

  explicit CumulativeBasis(int order);

  int order() const { return order_; }
  const Matrix& matrix() const { return cumulative_; }

  /// Cumulative values and their first two derivatives w.r.t. u.
  void evaluate(double u, std::span<double> value, std::span<double> d1, std::span<double> d2) const;

private:
  int order_;
  Matrix cumulative_;
};

/// Per-time evaluation of the rotation spline with derivatives w.r.t. the k active knots.
struct RotationEvaluation {
  int first_knot = 0;
  int order = 0;
  Rotation rotation;
  Vec3 omega_body = Vec3::Zero();
  // d(theta)/d(eps_m) with R -> R Exp(theta), knot m -> R_m Exp(eps_m)
  std::array<Mat3, kMaxSplineOrder> d_rotation;
  std::array<Mat3, kMaxSplineOrder> d_omega_body;
};

/// Per-time evaluation of the position spline; weights are d p / d p_m and time derivatives.
struct PositionEvaluation {
  int first_knot = 0;
  int order = 0;
  Vec3 position = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();
  Vec3 acceleration = Vec3::Zero();
  std::array<double, kMaxSplineOrder> weight{};
  std::array<double, kMaxSplineOrder> weight_d1{};
  std::array<double, kMaxSplineOrder> weight_d2{};
};

/**
 * @brief Uniform cumulative B-spline trajectory over SO(3) x R^3.
 *
 * Rotation and position share knot timing. Segment i covers
 * [t0 + i dt, t0 + (i + 1) dt) and is controlled by knots i .. i + k - 1, so the
 * valid evaluation interval is [t0, t0 + (N - k + 1) dt).
 *
 * Angular velocity follows R' = [w_W]x R, i.e. w_W = R w_B.
 */
class SplineTrajectory {
public:
  SplineTrajectory(double t0, double dt, int order, std::vector<Rotation> rot_knots, std::vector<Vec3> pos_knots);

  static SplineTrajectory constant(double t0, double dt, int order, int num_knots, const Pose& pose);

  double t0() const { return t0_; }
  double dt() const { return dt_; }
  int order() const { return basis_.order(); }
  int num_knots() const { return static_cast<int>(rot_knots_.size()); }
  const CumulativeBasis& basis() const { return basis_; }

  double begin_time() const { return t0_; }
  double end_time() const { return t0_ + (num_knots() - order() + 1) * dt_; }
  bool contains(double t) const;

  /// Time at which knot j has its peak influence.
  double knot_time(int j) const { return t0_ + (j - 0.5 * (order() - 2)) * dt_; }

  const std::vector<Rotation>& rot_knots() const { return rot_knots_; }
  const std::vector<Vec3>& pos_knots() const { return pos_knots_; }
  Rotation& rot_knot(int j) { return rot_knots_.at(j); }
  Vec3& pos_knot(int j) { return pos_knots_.at(j); }

  Pose pose_at(double t) const;
  Vec3 angular_velocity_world(double t) const;
  Vec3 angular_velocity_body(double t) const;
  Vec3 velocity_world(double t) const;
  Vec3 acceleration_world(double t) const;

  RotationEvaluation evaluate_rotation(double t, bool with_jacobians) const;
  PositionEvaluation evaluate_position(double t) const;

  /// One pose per requested time, order preserved. Throws DomainError naming the first bad stamp.
  TrajectorySamples sample(std::span<const double> times) const;

private:
  struct Segment {
    int first_knot;
    double u;
  };
  Segment locate(double t) const;

  double t0_;
  double dt_;
  CumulativeBasis basis_;
  std::vector<Rotation> rot_knots_;
  std::vector<Vec3> pos_knots_;
};

/**
 * @brief Least-squares knot fit to timestamped poses.
 *
 * Knots are weakly pulled toward the piecewise-linear (slerp) interpolation of
 * the inputs at each knot's time, continued linearly past both ends, which
 * settles knots the poses do not determine. Throws std::invalid_argument for fewer than two poses or
 * non-increasing stamps.
 */
SplineTrajectory fit_from_poses(std::span<const StampedPose> poses, double dt, int order = kDefaultSplineOrder);

/// Piecewise-linear position / slerp rotation interpolation, clamped at both ends.
Pose interpolate_linear(std::span<const StampedPose> poses, double t);

}  // namespace ctreg
