#include <ctreg/trajectory.hpp>
#include <ctreg/errors.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

namespace ctreg {

namespace {

double binomial(int n, int r) {
  if (r < 0 || r > n) {
    return 0.0;
  }
  double result = 1.0;
  for (int i = 1; i <= r; ++i) {
    result = result * (n - r + i) / i;
  }
  return result;
}

double factorial(int n) {
  double result = 1.0;
  for (int i = 2; i <= n; ++i) {
    result *= i;
  }
  return result;
}

constexpr double kFitRegularization = 1e-9;

}  // namespace

CumulativeBasis::CumulativeBasis(int order) : order_(order) {
  if (order < kMinSplineOrder || order > kMaxSplineOrder) {
    throw std::invalid_argument("spline order must be in [" + std::to_string(kMinSplineOrder) + ", " +
                                std::to_string(kMaxSplineOrder) + "]");
  }
  const int k = order;
  Matrix blend = Matrix::Zero(k, k);
  for (int s = 0; s < k; ++s) {
    for (int n = 0; n < k; ++n) {
      double sum = 0.0;
      for (int l = s; l < k; ++l) {
        const double sign = ((l - s) % 2 == 0) ? 1.0 : -1.0;
        sum += sign * binomial(k, l - s) * std::pow(static_cast<double>(k - 1 - l), k - 1 - n);
      }
      blend(s, n) = binomial(k - 1, n) / factorial(k - 1) * sum;
    }
  }
  cumulative_ = Matrix::Zero(k, k);
  for (int j = 0; j < k; ++j) {
    for (int s = j; s < k; ++s) {
      cumulative_.row(j) += blend.row(s);
    }
  }
}

void CumulativeBasis::evaluate(double u, std::span<double> value, std::span<double> d1, std::span<double> d2) const {
  const int k = order_;
  std::array<double, kMaxSplineOrder> powers{};
  powers[0] = 1.0;
  for (int n = 1; n < k; ++n) {
    powers[n] = powers[n - 1] * u;
  }
  for (int j = 0; j < k; ++j) {
    double v = 0.0;
    double dv = 0.0;
    double ddv = 0.0;
    for (int n = 0; n < k; ++n) {
      const double c = cumulative_(j, n);
      v += c * powers[n];
      if (n >= 1) {
        dv += c * n * powers[n - 1];
      }
      if (n >= 2) {
        ddv += c * n * (n - 1) * powers[n - 2];
      }
    }
    value[j] = v;
    d1[j] = dv;
    d2[j] = ddv;
  }
}

SplineTrajectory::SplineTrajectory(double t0, double dt, int order, std::vector<Rotation> rot_knots,
                                   std::vector<Vec3> pos_knots)
    : t0_(t0), dt_(dt), basis_(order), rot_knots_(std::move(rot_knots)), pos_knots_(std::move(pos_knots)) {
  if (!(dt > 0.0) || !std::isfinite(dt) || !std::isfinite(t0)) {
    throw std::invalid_argument("spline knot interval must be finite and > 0");
  }
  if (rot_knots_.size() != pos_knots_.size()) {
    throw std::invalid_argument("rotation and position knot counts differ");
  }
  if (static_cast<int>(rot_knots_.size()) < order) {
    throw std::invalid_argument("spline needs at least `order` knots");
  }
  for (const auto& p : pos_knots_) {
    if (!p.allFinite()) {
      throw std::invalid_argument("non-finite position knot");
    }
  }
}

SplineTrajectory SplineTrajectory::constant(double t0, double dt, int order, int num_knots, const Pose& pose) {
  return SplineTrajectory(t0, dt, order, std::vector<Rotation>(num_knots, pose.rotation),
                          std::vector<Vec3>(num_knots, pose.position));
}

bool SplineTrajectory::contains(double t) const {
  return t >= begin_time() && t < end_time();
}

SplineTrajectory::Segment SplineTrajectory::locate(double t) const {
  if (!contains(t)) {
    std::ostringstream msg;
    msg.precision(17);
    msg << "time " << t << " outside spline domain [" << begin_time() << ", " << end_time() << ")";
    throw DomainError(msg.str(), t, begin_time(), end_time());
  }
  const double s = (t - t0_) / dt_;
  const int last_segment = num_knots() - order();
  int i = static_cast<int>(std::floor(s));
  i = std::clamp(i, 0, last_segment);
  const double u = std::clamp(s - i, 0.0, 1.0);
  return Segment{i, u};
}

RotationEvaluation SplineTrajectory::evaluate_rotation(double t, bool with_jacobians) const {
  const Segment seg = locate(t);
  const int k = order();

  std::array<double, kMaxSplineOrder> b{};
  std::array<double, kMaxSplineOrder> db{};
  std::array<double, kMaxSplineOrder> ddb{};
  basis_.evaluate(seg.u, b, db, ddb);
  for (int j = 0; j < k; ++j) {
    db[j] /= dt_;
  }

  std::array<Vec3, kMaxSplineOrder> d;        // knot increments
  std::array<Mat3, kMaxSplineOrder> a;        // Exp(b_j d_j)
  std::array<Mat3, kMaxSplineOrder> rel;      // R_{j-1}^T R_j
  std::array<Vec3, kMaxSplineOrder + 1> w;    // angular velocity recursion
  w[1] = Vec3::Zero();

  RotationEvaluation out;
  out.first_knot = seg.first_knot;
  out.order = k;

  Rotation r = rot_knots_[seg.first_knot];
  for (int j = 1; j < k; ++j) {
    const Rotation rel_rot = rot_knots_[seg.first_knot + j - 1].inverse() * rot_knots_[seg.first_knot + j];
    d[j] = rot_log(rel_rot);
    rel[j] = rel_rot.matrix();
    const Rotation step = rot_exp(b[j] * d[j]);
    a[j] = step.matrix();
    r = r * step;
    w[j + 1] = a[j].transpose() * w[j] + db[j] * d[j];
  }
  out.rotation = r;
  out.omega_body = w[k];

  if (!with_jacobians) {
    return out;
  }

  // tail products P_j = A_{j+1} ... A_{k-1}
  std::array<Mat3, kMaxSplineOrder> tail;
  tail[k - 1] = Mat3::Identity();
  for (int j = k - 2; j >= 0; --j) {
    tail[j] = a[j + 1] * tail[j + 1];
  }

  std::array<Mat3, kMaxSplineOrder> d_rot_d_inc;
  std::array<Mat3, kMaxSplineOrder> d_omega_d_inc;
  std::array<Mat3, kMaxSplineOrder> jr_inv;
  for (int j = 1; j < k; ++j) {
    const Mat3 jr = right_jacobian(b[j] * d[j]);
    d_rot_d_inc[j] = tail[j].transpose() * jr * b[j];
    d_omega_d_inc[j] =
        tail[j].transpose() * (skew(a[j].transpose() * w[j]) * jr * b[j] + db[j] * Mat3::Identity());
    jr_inv[j] = right_jacobian_inverse(d[j]);
  }

  for (int m = 0; m < k; ++m) {
    Mat3 j_rot = Mat3::Zero();
    Mat3 j_omega = Mat3::Zero();
    if (m == 0) {
      j_rot += tail[0].transpose();
    } else {
      j_rot += d_rot_d_inc[m] * jr_inv[m];
      j_omega += d_omega_d_inc[m] * jr_inv[m];
    }
    if (m + 1 < k) {
      const Mat3 back = jr_inv[m + 1] * rel[m + 1].transpose();
      j_rot -= d_rot_d_inc[m + 1] * back;
      j_omega -= d_omega_d_inc[m + 1] * back;
    }
    out.d_rotation[m] = j_rot;
    out.d_omega_body[m] = j_omega;
  }
  return out;
}

PositionEvaluation SplineTrajectory::evaluate_position(double t) const {
  const Segment seg = locate(t);
  const int k = order();

  std::array<double, kMaxSplineOrder> b{};
  std::array<double, kMaxSplineOrder> db{};
  std::array<double, kMaxSplineOrder> ddb{};
  basis_.evaluate(seg.u, b, db, ddb);

  PositionEvaluation out;
  out.first_knot = seg.first_knot;
  out.order = k;

  const double inv_dt = 1.0 / dt_;
  const double inv_dt2 = inv_dt * inv_dt;
  out.position = pos_knots_[seg.first_knot];
  for (int j = 1; j < k; ++j) {
    const Vec3 diff = pos_knots_[seg.first_knot + j] - pos_knots_[seg.first_knot + j - 1];
    out.position += b[j] * diff;
    out.velocity += (db[j] * inv_dt) * diff;
    out.acceleration += (ddb[j] * inv_dt2) * diff;
  }
  for (int m = 0; m < k; ++m) {
    const double next = (m + 1 < k) ? b[m + 1] : 0.0;
    const double next_d1 = (m + 1 < k) ? db[m + 1] : 0.0;
    const double next_d2 = (m + 1 < k) ? ddb[m + 1] : 0.0;
    out.weight[m] = b[m] - next;
    out.weight_d1[m] = (db[m] - next_d1) * inv_dt;
    out.weight_d2[m] = (ddb[m] - next_d2) * inv_dt2;
  }
  return out;
}

Pose SplineTrajectory::pose_at(double t) const {
  return Pose{evaluate_rotation(t, false).rotation, evaluate_position(t).position};
}

Vec3 SplineTrajectory::angular_velocity_body(double t) const {
  return evaluate_rotation(t, false).omega_body;
}

Vec3 SplineTrajectory::angular_velocity_world(double t) const {
  const RotationEvaluation ev = evaluate_rotation(t, false);
  return ev.rotation * ev.omega_body;
}

Vec3 SplineTrajectory::velocity_world(double t) const {
  return evaluate_position(t).velocity;
}

Vec3 SplineTrajectory::acceleration_world(double t) const {
  return evaluate_position(t).acceleration;
}

TrajectorySamples SplineTrajectory::sample(std::span<const double> times) const {
  TrajectorySamples out;
  out.reserve(times.size());
  for (const double t : times) {
    out.push_back(StampedPose{t, pose_at(t)});
  }
  return out;
}

Pose interpolate_linear(std::span<const StampedPose> poses, double t) {
  if (poses.empty()) {
    throw std::invalid_argument("interpolate_linear: no poses");
  }
  if (t <= poses.front().t) {
    return poses.front().pose;
  }
  if (t >= poses.back().t) {
    return poses.back().pose;
  }
  const auto upper =
      std::upper_bound(poses.begin(), poses.end(), t, [](double value, const StampedPose& p) { return value < p.t; });
  const StampedPose& hi = *upper;
  const StampedPose& lo = *(upper - 1);
  const double s = (t - lo.t) / (hi.t - lo.t);
  const Vec3 inc = rot_log(lo.pose.rotation.inverse() * hi.pose.rotation);
  return Pose{lo.pose.rotation * rot_exp(s * inc), (1.0 - s) * lo.pose.position + s * hi.pose.position};
}

namespace {

/// Like interpolate_linear, but continues the first/last interval linearly past the ends.
Pose extrapolate_linear(std::span<const StampedPose> poses, double t) {
  if (t > poses.front().t && t < poses.back().t) {
    return interpolate_linear(poses, t);
  }
  const bool before = t <= poses.front().t;
  const StampedPose& lo = before ? poses[0] : poses[poses.size() - 2];
  const StampedPose& hi = before ? poses[1] : poses.back();
  const double s = (t - lo.t) / (hi.t - lo.t);
  const Vec3 inc = rot_log(lo.pose.rotation.inverse() * hi.pose.rotation);
  return Pose{lo.pose.rotation * rot_exp(s * inc), lo.pose.position + s * (hi.pose.position - lo.pose.position)};
}

}  // namespace

SplineTrajectory fit_from_poses(std::span<const StampedPose> poses, double dt, int order) {
  if (poses.size() < 2) {
    throw std::invalid_argument("fit_from_poses: need at least two poses");
  }
  for (size_t i = 1; i < poses.size(); ++i) {
    if (!(poses[i].t > poses[i - 1].t)) {
      std::ostringstream msg;
      msg.precision(17);
      msg << "fit_from_poses: timestamps not strictly increasing at index " << i << " (t = " << poses[i].t << ")";
      throw std::invalid_argument(msg.str());
    }
  }
  if (!(dt > 0.0)) {
    throw std::invalid_argument("fit_from_poses: dt must be > 0");
  }

  const double t0 = poses.front().t;
  const int segments = static_cast<int>(std::floor((poses.back().t - t0) / dt)) + 1;
  const int num_knots = segments + order - 1;

  SplineTrajectory traj = SplineTrajectory::constant(t0, dt, order, num_knots, poses.front().pose);
  std::vector<Pose> targets(num_knots);
  for (int j = 0; j < num_knots; ++j) {
    targets[j] = extrapolate_linear(poses, traj.knot_time(j));
    traj.rot_knot(j) = targets[j].rotation;
    traj.pos_knot(j) = targets[j].position;
  }

  using SpMat = Eigen::SparseMatrix<double>;
  using Triplet = Eigen::Triplet<double>;

  // Positions: linear least squares for the offsets from the targets, shared by all three axes.
  {
    std::vector<Triplet> triplets;
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(num_knots, 3);
    for (const auto& sp : poses) {
      const PositionEvaluation ev = traj.evaluate_position(sp.t);
      const Vec3 r = sp.pose.position - ev.position;
      for (int a = 0; a < order; ++a) {
        rhs.row(ev.first_knot + a) += ev.weight[a] * r.transpose();
        for (int b = 0; b < order; ++b) {
          triplets.emplace_back(ev.first_knot + a, ev.first_knot + b, ev.weight[a] * ev.weight[b]);
        }
      }
    }
    for (int j = 0; j < num_knots; ++j) {
      triplets.emplace_back(j, j, kFitRegularization);
    }
    SpMat h(num_knots, num_knots);
    h.setFromTriplets(triplets.begin(), triplets.end());
    Eigen::SimplicialLDLT<SpMat> solver(h);
    if (solver.info() != Eigen::Success) {
      throw std::runtime_error("fit_from_poses: position normal equations not positive definite");
    }
    const Eigen::MatrixXd x = solver.solve(rhs);
    for (int j = 0; j < num_knots; ++j) {
      traj.pos_knot(j) += x.row(j).transpose();
    }
  }

  // Rotations: Gauss-Newton on Log(R_i^-1 R(t_i)) with the same weak pull toward targets.
  const double reg_sqrt = std::sqrt(kFitRegularization);
  auto rotation_cost = [&](const SplineTrajectory& candidate) {
    double cost = 0.0;
    for (const auto& sp : poses) {
      cost += rot_log(sp.pose.rotation.inverse() * candidate.evaluate_rotation(sp.t, false).rotation).squaredNorm();
    }
    for (int j = 0; j < num_knots; ++j) {
      cost += kFitRegularization * rot_log(targets[j].rotation.inverse() * candidate.rot_knots()[j]).squaredNorm();
    }
    return cost;
  };

  const int dim = 3 * num_knots;
  double cost = rotation_cost(traj);
  for (int iter = 0; iter < 30; ++iter) {
    std::vector<Triplet> triplets;
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(dim);
    for (const auto& sp : poses) {
      const RotationEvaluation ev = traj.evaluate_rotation(sp.t, true);
      const Vec3 r = rot_log(sp.pose.rotation.inverse() * ev.rotation);
      const Mat3 jr_inv = right_jacobian_inverse(r);
      std::array<Mat3, kMaxSplineOrder> jac;
      for (int a = 0; a < order; ++a) {
        jac[a] = jr_inv * ev.d_rotation[a];
      }
      for (int a = 0; a < order; ++a) {
        const int row = 3 * (ev.first_knot + a);
        grad.segment<3>(row) += jac[a].transpose() * r;
        for (int b = 0; b < order; ++b) {
          const int col = 3 * (ev.first_knot + b);
          const Mat3 block = jac[a].transpose() * jac[b];
          for (int x = 0; x < 3; ++x) {
            for (int y = 0; y < 3; ++y) {
              triplets.emplace_back(row + x, col + y, block(x, y));
            }
          }
        }
      }
    }
    for (int j = 0; j < num_knots; ++j) {
      const Vec3 r = reg_sqrt * rot_log(targets[j].rotation.inverse() * traj.rot_knots()[j]);
      const Mat3 jac = reg_sqrt * right_jacobian_inverse(r / reg_sqrt);
      const Mat3 block = jac.transpose() * jac;
      grad.segment<3>(3 * j) += jac.transpose() * r;
      for (int x = 0; x < 3; ++x) {
        for (int y = 0; y < 3; ++y) {
          triplets.emplace_back(3 * j + x, 3 * j + y, block(x, y));
        }
      }
    }
    SpMat h(dim, dim);
    h.setFromTriplets(triplets.begin(), triplets.end());
    Eigen::SimplicialLDLT<SpMat> solver(h);
    if (solver.info() != Eigen::Success) {
      break;
    }
    const Eigen::VectorXd step = -solver.solve(grad);

    // backtracking keeps the fit monotone if the linearization is poor
    double scale = 1.0;
    bool accepted = false;
    for (int tries = 0; tries < 10; ++tries) {
      SplineTrajectory candidate = traj;
      for (int j = 0; j < num_knots; ++j) {
        candidate.rot_knot(j) = traj.rot_knots()[j] * rot_exp(scale * step.segment<3>(3 * j));
      }
      const double candidate_cost = rotation_cost(candidate);
      if (candidate_cost <= cost) {
        traj = std::move(candidate);
        cost = candidate_cost;
        accepted = true;
        break;
      }
      scale *= 0.5;
    }
    if (!accepted || step.lpNorm<Eigen::Infinity>() < 1e-13) {
      break;
    }
  }
  return traj;
}

}  // namespace ctreg
