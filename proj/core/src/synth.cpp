#include <ctreg/synth.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace ctreg {

namespace {

enum Stream : std::uint64_t {
  kStreamMap = 1,
  kStreamLidar = 2,
  kStreamLidarNoise = 3,
  kStreamGyro = 4,
  kStreamAccel = 5,
  kStreamPriorRot = 6,
  kStreamPriorPos = 7,
};

std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Rotation rot_z(double a) { return rot_exp(Vec3(0.0, 0.0, a)); }
Rotation rot_y(double a) { return rot_exp(Vec3(0.0, a, 0.0)); }
Rotation rot_x(double a) { return rot_exp(Vec3(a, 0.0, 0.0)); }

Pose style_pose(const ScenarioSpec& spec, double t) {
  const Vec3 size = spec.world_max - spec.world_min;
  const Vec3 center = 0.5 * (spec.world_min + spec.world_max);
  const double height = spec.world_min.z() + std::min(1.5, 0.4 * size.z());

  switch (spec.style) {
    case TrajectoryStyle::kStationary:
      return Pose{rot_z(0.3), Vec3(center.x(), center.y(), height)};
    case TrajectoryStyle::kConstantVelocity: {
      const Vec3 start(center.x() - 0.5 * spec.speed * spec.duration, center.y(), height);
      return Pose{Rotation::identity(), start + Vec3(spec.speed * t, 0.0, 0.0)};
    }
    case TrajectoryStyle::kFigureEight: {
      const double w = 2.0 * std::numbers::pi / spec.figure_eight_period;
      const double a = 0.3 * size.x();
      const double b = 0.25 * size.y();
      const Vec3 p(center.x() + a * std::sin(w * t), center.y() + b * std::sin(2.0 * w * t),
                   height + 0.1 * size.z() * std::sin(1.5 * w * t));
      const double yaw = std::atan2(2.0 * b * w * std::cos(2.0 * w * t), a * w * std::cos(w * t));
      const double pitch = 0.1 * std::sin(2.1 * w * t);
      const double roll = 0.15 * std::sin(1.3 * w * t);
      return Pose{rot_z(yaw) * rot_y(pitch) * rot_x(roll), p};
    }
  }
  return Pose{};
}

bool inside_box(const Vec3& p, const ScenarioSpec& spec) {
  return (p.array() >= spec.world_min.array()).all() && (p.array() <= spec.world_max.array()).all();
}

}  // namespace

TrajectoryStyle parse_trajectory_style(const std::string& s) {
  if (s == "stationary") return TrajectoryStyle::kStationary;
  if (s == "constant-velocity") return TrajectoryStyle::kConstantVelocity;
  if (s == "figure-eight") return TrajectoryStyle::kFigureEight;
  throw std::invalid_argument("unknown trajectory style '" + s + "' (expected stationary|constant-velocity|figure-eight)");
}

std::string to_string(TrajectoryStyle style) {
  switch (style) {
    case TrajectoryStyle::kStationary: return "stationary";
    case TrajectoryStyle::kConstantVelocity: return "constant-velocity";
    case TrajectoryStyle::kFigureEight: return "figure-eight";
  }
  return "stationary";
}

void ScenarioSpec::validate() const {
  auto positive = [](double v) { return std::isfinite(v) && v > 0.0; };
  auto non_negative = [](double v) { return std::isfinite(v) && v >= 0.0; };
  if (!positive(duration)) throw std::invalid_argument("scenario: duration must be > 0");
  if (!positive(imu_rate) || !positive(lidar_rate) || !positive(scan_rate) || !positive(prior_rate)) {
    throw std::invalid_argument("scenario: rates must be > 0");
  }
  if (!non_negative(lidar_noise) || !non_negative(gyro_noise) || !non_negative(accel_noise) ||
      !non_negative(prior_position_perturbation) || !non_negative(prior_rotation_perturbation)) {
    throw std::invalid_argument("scenario: noise levels must be >= 0");
  }
  if (!positive(knot_interval) || !positive(map_density) || !positive(figure_eight_period)) {
    throw std::invalid_argument("scenario: knot interval, map density and period must be > 0");
  }
  if (!((world_max - world_min).array() > 0.0).all()) {
    throw std::invalid_argument("scenario: world_max must exceed world_min on every axis");
  }
  if (!(range_min >= 0.0 && range_max > range_min)) {
    throw std::invalid_argument("scenario: invalid lidar range gate");
  }
}

double CounterRng::uniform(std::uint64_t stream, std::uint64_t index, std::uint64_t slot) const {
  std::uint64_t h = splitmix64(seed_);
  h = splitmix64(h ^ stream);
  h = splitmix64(h ^ index);
  h = splitmix64(h ^ slot);
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double CounterRng::normal(std::uint64_t stream, std::uint64_t index, std::uint64_t slot) const {
  const double u1 = 1.0 - uniform(stream, index, 2 * slot);  // (0, 1]
  const double u2 = uniform(stream, index, 2 * slot + 1);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Vec3 CounterRng::unit_vector(std::uint64_t stream, std::uint64_t index) const {
  for (std::uint64_t attempt = 0;; ++attempt) {
    const Vec3 v(normal(stream, index, 3 * attempt), normal(stream, index, 3 * attempt + 1),
                 normal(stream, index, 3 * attempt + 2));
    const double n = v.norm();
    if (n > 1e-12) {
      return v / n;
    }
  }
}

std::vector<PlaneSpec> world_planes(const ScenarioSpec& spec) {
  std::vector<PlaneSpec> planes;
  if (spec.box_walls) {
    const Vec3& lo = spec.world_min;
    const Vec3& hi = spec.world_max;
    const Vec3 size = hi - lo;
    const Vec3 x = Vec3::UnitX();
    const Vec3 y = Vec3::UnitY();
    const Vec3 z = Vec3::UnitZ();
    // normals point into the box
    planes.push_back({lo, x, y, size.x(), size.y()});                               // floor
    planes.push_back({Vec3(lo.x(), lo.y(), hi.z()), y, x, size.y(), size.x()});     // ceiling
    planes.push_back({lo, y, z, size.y(), size.z()});                               // x = min
    planes.push_back({Vec3(hi.x(), lo.y(), lo.z()), z, y, size.z(), size.y()});     // x = max
    planes.push_back({lo, z, x, size.z(), size.x()});                               // y = min
    planes.push_back({Vec3(lo.x(), hi.y(), lo.z()), x, z, size.x(), size.z()});     // y = max
  }
  planes.insert(planes.end(), spec.extra_planes.begin(), spec.extra_planes.end());
  return planes;
}

std::vector<Vec3> make_world(const ScenarioSpec& spec) {
  const std::vector<PlaneSpec> planes = world_planes(spec);
  if (planes.empty()) {
    throw std::invalid_argument("make_world: scenario has no planes");
  }
  const CounterRng rng(spec.seed);
  std::vector<Vec3> cloud;
  for (std::size_t p = 0; p < planes.size(); ++p) {
    const PlaneSpec& plane = planes[p];
    if (!(plane.area() > 0.0)) {
      throw std::invalid_argument("make_world: plane " + std::to_string(p) + " has zero area");
    }
    const auto count = std::max<long long>(1, std::llround(plane.area() * spec.map_density));
    const std::uint64_t stream = (static_cast<std::uint64_t>(p) << 8) | kStreamMap;
    for (long long i = 0; i < count; ++i) {
      const double a = rng.uniform(stream, i, 0) * plane.extent_u;
      const double b = rng.uniform(stream, i, 1) * plane.extent_v;
      cloud.push_back(plane.origin + a * plane.axis_u + b * plane.axis_v);
    }
  }
  return cloud;
}

SplineTrajectory make_trajectory(const ScenarioSpec& spec) {
  spec.validate();
  const int order = spec.spline_order;
  const double dt = spec.knot_interval;
  const int num_knots = static_cast<int>(std::ceil(spec.duration / dt)) + order;
  SplineTrajectory traj = SplineTrajectory::constant(0.0, dt, order, num_knots, Pose{});
  for (int j = 0; j < num_knots; ++j) {
    const Pose pose = style_pose(spec, traj.knot_time(j));
    traj.rot_knot(j) = pose.rotation;
    traj.pos_knot(j) = pose.position;
  }
  return traj;
}

MeasurementSet simulate_measurements(const SplineTrajectory& truth, const ScenarioSpec& spec,
                                     std::vector<std::string>* warnings) {
  spec.validate();
  if (truth.begin_time() > 0.0 || truth.end_time() <= spec.duration) {
    throw std::invalid_argument("simulate_measurements: trajectory domain does not cover [0, duration]");
  }
  const CounterRng rng(spec.seed);
  MeasurementSet ms;
  bool left_world = false;

  const auto num_imu = static_cast<std::size_t>(std::ceil(spec.duration * spec.imu_rate));
  for (std::size_t i = 0; i < num_imu; ++i) {
    const double t = static_cast<double>(i) / spec.imu_rate;
    if (t >= spec.duration) break;
    const RotationEvaluation rot = truth.evaluate_rotation(t, false);
    const PositionEvaluation pos = truth.evaluate_position(t);
    left_world = left_world || !inside_box(pos.position, spec);

    ImuSample s;
    s.t = t;
    s.gyro = rot.omega_body + spec.bias.gyro;
    s.accel = rot.rotation.inverse() * (pos.acceleration + spec.gravity) + spec.bias.accel;
    for (int a = 0; a < 3; ++a) {
      s.gyro(a) += spec.gyro_noise * rng.normal(kStreamGyro, i, a);
      s.accel(a) += spec.accel_noise * rng.normal(kStreamAccel, i, a);
    }
    ms.imu.push_back(s);
  }

  const std::vector<PlaneSpec> planes = world_planes(spec);
  if (planes.empty()) {
    throw std::invalid_argument("simulate_measurements: scenario has no planes");
  }
  std::vector<double> cumulative_area;
  double total_area = 0.0;
  for (const auto& plane : planes) {
    total_area += plane.area();
    cumulative_area.push_back(total_area);
  }

  const auto num_points = static_cast<std::size_t>(std::llround(spec.lidar_rate * spec.duration));
  const auto num_scans = static_cast<std::size_t>(std::ceil(spec.duration * spec.scan_rate));
  ms.scans.assign(num_scans, {});
  for (std::size_t i = 0; i < num_points; ++i) {
    const double t = (static_cast<double>(i) + 0.5) * spec.duration / static_cast<double>(num_points);
    const Pose pose = truth.pose_at(t);
    const Rotation inv = pose.rotation.inverse();

    Vec3 f = Vec3::Zero();
    bool found = false;
    for (std::uint64_t attempt = 0; attempt < 64 && !found; ++attempt) {
      const double pick = rng.uniform(kStreamLidar, i, 3 * attempt) * total_area;
      const auto it = std::upper_bound(cumulative_area.begin(), cumulative_area.end(), pick);
      const PlaneSpec& plane = planes[std::min<std::size_t>(it - cumulative_area.begin(), planes.size() - 1)];
      const Vec3 x = plane.origin + rng.uniform(kStreamLidar, i, 3 * attempt + 1) * plane.extent_u * plane.axis_u +
                     rng.uniform(kStreamLidar, i, 3 * attempt + 2) * plane.extent_v * plane.axis_v;
      f = inv * (x - pose.position);
      const double range = f.norm();
      found = range > spec.range_min && range < spec.range_max;
    }
    if (!found) {
      continue;
    }
    f += spec.lidar_noise * rng.normal(kStreamLidarNoise, i, 0) * f.normalized();
    const std::size_t scan = std::min(static_cast<std::size_t>(t * spec.scan_rate), num_scans - 1);
    ms.scans[scan].push_back(LidarPoint{t, f});
  }

  for (std::size_t i = 0;; ++i) {
    const double t = static_cast<double>(i) / spec.prior_rate;
    if (t > spec.duration) break;
    const Pose pose = truth.pose_at(t);
    const Vec3 axis = rng.unit_vector(kStreamPriorRot, i);
    const Vec3 dir = rng.unit_vector(kStreamPriorPos, i);
    ms.priors.push_back(PosePrior{
        t, Pose{pose.rotation * rot_exp(spec.prior_rotation_perturbation * axis),
                pose.position + spec.prior_position_perturbation * dir}});
  }

  if (left_world && warnings != nullptr) {
    warnings->push_back("trajectory leaves the world bounding box");
  }
  return ms;
}

}  // namespace ctreg
