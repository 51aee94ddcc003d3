#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <ctreg/estimation.hpp>
#include <ctreg/geometry.hpp>
#include <ctreg/trajectory.hpp>

namespace ctreg {

enum class TrajectoryStyle { kStationary, kConstantVelocity, kFigureEight };

TrajectoryStyle parse_trajectory_style(const std::string& s);
std::string to_string(TrajectoryStyle style);

/// Rectangle origin + a u + b v with a in [0, extent_u], b in [0, extent_v]; u and v orthonormal.
struct PlaneSpec {
  Vec3 origin = Vec3::Zero();
  Vec3 axis_u = Vec3::UnitX();
  Vec3 axis_v = Vec3::UnitY();
  double extent_u = 1.0;
  double extent_v = 1.0;

  Vec3 normal() const { return axis_u.cross(axis_v).normalized(); }
  double area() const { return extent_u * extent_v; }
};

struct ScenarioSpec {
  double duration = 30.0;  // s
  Vec3 world_min = Vec3(-12.0, -8.0, 0.0);
  Vec3 world_max = Vec3(12.0, 8.0, 6.0);
  bool box_walls = true;  // floor, ceiling and four walls of the world box
  std::vector<PlaneSpec> extra_planes;
  double map_density = 100.0;  // prior-map points per m^2

  TrajectoryStyle style = TrajectoryStyle::kFigureEight;
  double speed = 2.0;            // m/s, constant-velocity style
  double figure_eight_period = 20.0;
  double knot_interval = kDefaultKnotInterval;
  int spline_order = kDefaultSplineOrder;

  double lidar_noise = 0.0;  // m, along the ray
  double gyro_noise = 0.0;   // rad/s
  double accel_noise = 0.0;  // m/s^2
  ImuBias bias;

  double imu_rate = 200.0;         // Hz
  double lidar_rate = 10000.0 / 30.0;  // points/s
  double scan_rate = 10.0;         // scans/s
  double prior_rate = 1.0;         // Hz
  double prior_position_perturbation = 0.1;  // m, fixed magnitude, random direction
  double prior_rotation_perturbation = 2.0 * 3.14159265358979323846 / 180.0;  // rad
  double range_min = 0.5;
  double range_max = 120.0;

  Vec3 gravity = Vec3(0.0, 0.0, 9.81);
  std::uint64_t seed = 1;

  /// Throws std::invalid_argument on non-positive duration/rates or negative noise.
  void validate() const;
};

/**
 * Counter-based generator: every draw is a pure function of
 * (seed, stream, index, slot), so output is independent of generation order.
 */
class CounterRng {
public:
  explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

  double uniform(std::uint64_t stream, std::uint64_t index, std::uint64_t slot) const;  // [0, 1)
  double normal(std::uint64_t stream, std::uint64_t index, std::uint64_t slot) const;
  Vec3 unit_vector(std::uint64_t stream, std::uint64_t index) const;

private:
  std::uint64_t seed_;
};

std::vector<PlaneSpec> world_planes(const ScenarioSpec& spec);

/// Uniform surface sampling of every plane. Throws std::invalid_argument on zero-area planes or no planes.
std::vector<Vec3> make_world(const ScenarioSpec& spec);

SplineTrajectory make_trajectory(const ScenarioSpec& spec);

/**
 * Measurements generated by inverting the residual models at `truth`:
 *   gyro  = R^T w_W + b_g + n
 *   accel = R^T (a_W + g) + b_a + n
 *   lidar = R^T (x - p) + n * ray, x drawn on a world plane
 * plus pose priors at prior_rate perturbed by the configured magnitudes.
 */
MeasurementSet simulate_measurements(const SplineTrajectory& truth, const ScenarioSpec& spec,
                                     std::vector<std::string>* warnings = nullptr);

}  // namespace ctreg
