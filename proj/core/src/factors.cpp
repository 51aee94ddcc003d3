#include <ctreg/estimation.hpp>
#include <ctreg/errors.hpp>

#include <cmath>
#include <stdexcept>
#include <string>

namespace ctreg {

void FactorWeights::validate() const {
  auto positive = [](double v) { return std::isfinite(v) && v > 0.0; };
  for (int i = 0; i < 3; ++i) {
    if (!positive(pose_rot(i)) || !positive(pose_pos(i))) {
      throw std::invalid_argument("factor weights: pose std-devs must be > 0");
    }
  }
  if (!positive(lidar) || !positive(gyro) || !positive(accel)) {
    throw std::invalid_argument("factor weights: lidar/gyro/accel std-devs must be > 0");
  }
}

std::size_t MeasurementSet::num_points() const {
  std::size_t n = 0;
  for (const auto& scan : scans) {
    n += scan.size();
  }
  return n;
}

std::string to_string(Termination t) {
  switch (t) {
    case Termination::kCostTolerance: return "cost_tolerance";
    case Termination::kStepTolerance: return "step_tolerance";
    case Termination::kZeroCost: return "zero_cost";
    case Termination::kMaxIterations: return "max_iterations";
    case Termination::kNoDecrease: return "no_decrease";
    case Termination::kNoFactors: return "no_factors";
  }
  return "unknown";
}

std::optional<Vec6> residual_pose(const SplineTrajectory& traj, const PosePrior& prior, const FactorWeights& w) {
  if (!traj.contains(prior.t)) {
    return std::nullopt;
  }
  const Pose est = traj.pose_at(prior.t);
  Vec6 r;
  r.head<3>() = rot_log(prior.pose.rotation.inverse() * est.rotation).cwiseQuotient(w.pose_rot);
  r.tail<3>() = (est.position - prior.pose.position).cwiseQuotient(w.pose_pos);
  return r;
}

std::optional<double> residual_lidar(const SplineTrajectory& traj, const LidarPoint& pt, const VoxelPlane& plane,
                                     const FactorWeights& w) {
  if (!traj.contains(pt.t)) {
    return std::nullopt;
  }
  const Pose pose = traj.pose_at(pt.t);
  return plane.signed_distance(pose_apply(pose, pt.f)) / w.lidar;
}

std::optional<Vec3> residual_gyro(const SplineTrajectory& traj, const ImuBias& bias, const ImuSample& s,
                                  const FactorWeights& w) {
  if (!traj.contains(s.t)) {
    return std::nullopt;
  }
  // R^-1 w_W is the body rate the spline produces directly
  return (traj.angular_velocity_body(s.t) + bias.gyro - s.gyro) / w.gyro;
}

std::optional<Vec3> residual_acce(const SplineTrajectory& traj, const ImuBias& bias, const ImuSample& s,
                                  const FactorWeights& w, const WorldConstants& c) {
  if (!traj.contains(s.t)) {
    return std::nullopt;
  }
  const Rotation r = traj.evaluate_rotation(s.t, false).rotation;
  const Vec3 a = traj.acceleration_world(s.t);
  return (r.inverse() * (a + c.gravity) + bias.accel - s.accel) / w.accel;
}

std::optional<LinearizedFactor<6>> linearize_pose(const SplineTrajectory& traj, const PosePrior& prior,
                                                  const FactorWeights& w) {
  if (!traj.contains(prior.t)) {
    return std::nullopt;
  }
  const RotationEvaluation rot = traj.evaluate_rotation(prior.t, true);
  const PositionEvaluation pos = traj.evaluate_position(prior.t);

  LinearizedFactor<6> f;
  f.first_knot = rot.first_knot;
  f.order = rot.order;
  const Vec3 r_rot = rot_log(prior.pose.rotation.inverse() * rot.rotation);
  const Vec3 inv_rot = w.pose_rot.cwiseInverse();
  const Vec3 inv_pos = w.pose_pos.cwiseInverse();
  f.residual.head<3>() = r_rot.cwiseProduct(inv_rot);
  f.residual.tail<3>() = (pos.position - prior.pose.position).cwiseProduct(inv_pos);

  const Mat3 jr_inv = right_jacobian_inverse(r_rot);
  for (int m = 0; m < f.order; ++m) {
    auto& block = f.d_knot[m];
    block.setZero();
    block.block<3, 3>(0, 0) = inv_rot.asDiagonal() * (jr_inv * rot.d_rotation[m]);
    block.block<3, 3>(3, 3) = (pos.weight[m] * inv_pos).asDiagonal();
  }
  return f;
}

std::optional<LinearizedFactor<1>> linearize_lidar(const SplineTrajectory& traj, const LidarPoint& pt,
                                                   const VoxelPlane& plane, const FactorWeights& w) {
  if (!traj.contains(pt.t)) {
    return std::nullopt;
  }
  const RotationEvaluation rot = traj.evaluate_rotation(pt.t, true);
  const PositionEvaluation pos = traj.evaluate_position(pt.t);
  const double inv = 1.0 / w.lidar;

  LinearizedFactor<1> f;
  f.first_knot = rot.first_knot;
  f.order = rot.order;
  const Vec3 x = rot.rotation * pt.f + pos.position;
  f.residual(0) = plane.signed_distance(x) * inv;

  // d(R f)/d(theta) = -R [f]x
  const Eigen::RowVector3d d_theta = -(plane.normal.transpose() * rot.rotation.matrix() * skew(pt.f)) * inv;
  for (int m = 0; m < f.order; ++m) {
    auto& block = f.d_knot[m];
    block.leftCols<3>() = d_theta * rot.d_rotation[m];
    block.rightCols<3>() = (pos.weight[m] * inv) * plane.normal.transpose();
  }
  return f;
}

std::optional<LinearizedFactor<3>> linearize_gyro(const SplineTrajectory& traj, const ImuBias& bias,
                                                  const ImuSample& s, const FactorWeights& w) {
  if (!traj.contains(s.t)) {
    return std::nullopt;
  }
  const RotationEvaluation rot = traj.evaluate_rotation(s.t, true);
  const double inv = 1.0 / w.gyro;

  LinearizedFactor<3> f;
  f.first_knot = rot.first_knot;
  f.order = rot.order;
  f.uses_bias = true;
  f.residual = (rot.omega_body + bias.gyro - s.gyro) * inv;
  for (int m = 0; m < f.order; ++m) {
    auto& block = f.d_knot[m];
    block.leftCols<3>() = rot.d_omega_body[m] * inv;
    block.rightCols<3>().setZero();
  }
  f.d_bias.leftCols<3>() = Mat3::Identity() * inv;
  return f;
}

std::optional<LinearizedFactor<3>> linearize_acce(const SplineTrajectory& traj, const ImuBias& bias,
                                                  const ImuSample& s, const FactorWeights& w,
                                                  const WorldConstants& c) {
  if (!traj.contains(s.t)) {
    return std::nullopt;
  }
  const RotationEvaluation rot = traj.evaluate_rotation(s.t, true);
  const PositionEvaluation pos = traj.evaluate_position(s.t);
  const double inv = 1.0 / w.accel;

  LinearizedFactor<3> f;
  f.first_knot = rot.first_knot;
  f.order = rot.order;
  f.uses_bias = true;
  const Mat3 rt = rot.rotation.matrix().transpose();
  const Vec3 body = rt * (pos.acceleration + c.gravity);
  f.residual = (body + bias.accel - s.accel) * inv;

  // Exp(-theta) y ~= y + [y]x theta
  const Mat3 d_theta = skew(body) * inv;
  for (int m = 0; m < f.order; ++m) {
    auto& block = f.d_knot[m];
    block.leftCols<3>() = d_theta * rot.d_rotation[m];
    block.rightCols<3>() = rt * (pos.weight_d2[m] * inv);
  }
  f.d_bias.rightCols<3>() = Mat3::Identity() * inv;
  return f;
}

std::vector<Vec3> deskew_scan(const SplineTrajectory& traj, std::span<const LidarPoint> scan, double ref_time) {
  std::size_t outside = 0;
  double first_bad = 0.0;
  for (const auto& pt : scan) {
    if (!traj.contains(pt.t)) {
      if (outside == 0) {
        first_bad = pt.t;
      }
      ++outside;
    }
  }
  if (!traj.contains(ref_time)) {
    throw DomainError("deskew: reference time " + std::to_string(ref_time) + " outside spline domain", ref_time,
                      traj.begin_time(), traj.end_time());
  }
  if (outside > 0) {
    throw DomainError("deskew: " + std::to_string(outside) + " point(s) outside spline domain", first_bad,
                      traj.begin_time(), traj.end_time());
  }
  const Pose ref_inv = pose_inverse(traj.pose_at(ref_time));
  std::vector<Vec3> out;
  out.reserve(scan.size());
  for (const auto& pt : scan) {
    out.push_back(pose_apply(ref_inv, pose_apply(traj.pose_at(pt.t), pt.f)));
  }
  return out;
}

std::vector<LidarMatch> associate_scan(const SplineTrajectory& traj, std::span<const LidarPoint> scan,
                                       const VoxelMap& map, const FactorWeights& w, double gate,
                                       std::size_t scan_index) {
  std::vector<LidarMatch> out;
  for (std::size_t i = 0; i < scan.size(); ++i) {
    const LidarPoint& pt = scan[i];
    if (!traj.contains(pt.t)) {
      continue;
    }
    const Vec3 x = pose_apply(traj.pose_at(pt.t), pt.f);
    const VoxelIndex home = map.index_of(x);
    // nearest gated plane in the 3x3x3 block; the home voxel wins ties
    VoxelIndex best_index = home;
    const VoxelPlane* best = nullptr;
    double best_r = 0.0;
    auto consider = [&](const VoxelIndex& idx) {
      const VoxelPlane* plane = map.find(idx);
      if (plane == nullptr) return;
      const double r = std::abs(plane->signed_distance(x) / w.lidar);
      if (r <= gate && (best == nullptr || r < best_r)) {
        best = plane;
        best_r = r;
        best_index = idx;
      }
    };
    consider(home);
    for (std::int64_t dx = -1; dx <= 1; ++dx) {
      for (std::int64_t dy = -1; dy <= 1; ++dy) {
        for (std::int64_t dz = -1; dz <= 1; ++dz) {
          if (dx != 0 || dy != 0 || dz != 0) consider({home.x + dx, home.y + dy, home.z + dz});
        }
      }
    }
    if (best == nullptr) {
      continue;
    }
    out.push_back(LidarMatch{scan_index, i, pt, best_index, *best});
  }
  return out;
}

double huber_cost(double r, double delta) {
  const double a = std::abs(r);
  return a <= delta ? r * r : 2.0 * delta * a - delta * delta;
}

CostBreakdown evaluate_cost(const SplineTrajectory& traj, const ImuBias& bias, const MeasurementSet& ms,
                            std::span<const LidarMatch> associations, const FactorWeights& w,
                            const WorldConstants& c, double huber_delta) {
  CostBreakdown cost;
  for (const auto& prior : ms.priors) {
    if (const auto r = residual_pose(traj, prior, w)) {
      cost.pose.cost += r->squaredNorm();
      ++cost.pose.count;
    }
  }
  for (const auto& match : associations) {
    if (const auto r = residual_lidar(traj, match.measurement, match.plane, w)) {
      cost.lidar.cost += huber_cost(*r, huber_delta);
      ++cost.lidar.count;
    }
  }
  for (const auto& s : ms.imu) {
    if (const auto r = residual_gyro(traj, bias, s, w)) {
      cost.gyro.cost += r->squaredNorm();
      ++cost.gyro.count;
    }
    if (const auto r = residual_acce(traj, bias, s, w, c)) {
      cost.accel.cost += r->squaredNorm();
      ++cost.accel.count;
    }
  }
  return cost;
}

}  // namespace ctreg
