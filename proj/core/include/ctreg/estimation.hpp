#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <ctreg/geometry.hpp>
#include <ctreg/priormap.hpp>
#include <ctreg/trajectory.hpp>

namespace ctreg {

using Vec6 = Eigen::Matrix<double, 6, 1>;

struct ImuSample {
  double t = 0.0;
  Vec3 gyro = Vec3::Zero();   // body frame, rad/s
  Vec3 accel = Vec3::Zero();  // body frame, m/s^2 (specific force)
};

/// One lidar return in the body frame at its own acquisition time.
struct LidarPoint {
  double t = 0.0;
  Vec3 f = Vec3::Zero();
};

using LidarScan = std::vector<LidarPoint>;

struct PosePrior {
  double t = 0.0;
  Pose pose;
};

/// Constant IMU bias over the optimization window.
struct ImuBias {
  Vec3 gyro = Vec3::Zero();
  Vec3 accel = Vec3::Zero();
};

/// Measurement standard deviations used to whiten each residual family.
struct FactorWeights {
  Vec3 pose_rot = Vec3::Constant(0.01);  // rad
  Vec3 pose_pos = Vec3::Constant(0.1);   // m
  double lidar = 0.05;                   // m
  double gyro = 0.01;                    // rad/s
  double accel = 0.1;                    // m/s^2

  /// Throws std::invalid_argument unless every std-dev is finite and > 0.
  void validate() const;
};

struct WorldConstants {
  Vec3 gravity = Vec3(0.0, 0.0, 9.81);
};

struct MeasurementSet {
  std::vector<LidarScan> scans;
  std::vector<ImuSample> imu;
  std::vector<PosePrior> priors;

  std::size_t num_points() const;
};

// ---------------------------------------------------------------------------
// Residuals. Each returns nullopt when the measurement time lies outside the
// trajectory domain; callers drop such measurements.

std::optional<Vec6> residual_pose(const SplineTrajectory& traj, const PosePrior& prior, const FactorWeights& w);
std::optional<double> residual_lidar(const SplineTrajectory& traj, const LidarPoint& pt, const VoxelPlane& plane,
                                     const FactorWeights& w);
std::optional<Vec3> residual_gyro(const SplineTrajectory& traj, const ImuBias& bias, const ImuSample& s,
                                  const FactorWeights& w);
std::optional<Vec3> residual_acce(const SplineTrajectory& traj, const ImuBias& bias, const ImuSample& s,
                                  const FactorWeights& w, const WorldConstants& c);

/**
 * @brief Whitened residual with Jacobians w.r.t. the active knots and the bias.
 *
 * Knot perturbation is [rot(3), pos(3)] with R_m -> R_m Exp(d_rot) and
 * p_m -> p_m + d_pos; the bias perturbation is [gyro(3), accel(3)].
 */
template <int Dim>
struct LinearizedFactor {
  using Residual = Eigen::Matrix<double, Dim, 1>;
  using Block = Eigen::Matrix<double, Dim, 6>;

  int first_knot = 0;
  int order = 0;
  Residual residual = Residual::Zero();
  std::array<Block, kMaxSplineOrder> d_knot;
  Block d_bias = Block::Zero();
  bool uses_bias = false;
};

std::optional<LinearizedFactor<6>> linearize_pose(const SplineTrajectory& traj, const PosePrior& prior,
                                                  const FactorWeights& w);
std::optional<LinearizedFactor<1>> linearize_lidar(const SplineTrajectory& traj, const LidarPoint& pt,
                                                   const VoxelPlane& plane, const FactorWeights& w);
std::optional<LinearizedFactor<3>> linearize_gyro(const SplineTrajectory& traj, const ImuBias& bias,
                                                  const ImuSample& s, const FactorWeights& w);
std::optional<LinearizedFactor<3>> linearize_acce(const SplineTrajectory& traj, const ImuBias& bias,
                                                  const ImuSample& s, const FactorWeights& w,
                                                  const WorldConstants& c);

// ---------------------------------------------------------------------------
// Deskew and association

/// Maps each point into the body frame at ref_time: T(ref)^-1 T(t_i) f. Throws DomainError listing the bad count.
std::vector<Vec3> deskew_scan(const SplineTrajectory& traj, std::span<const LidarPoint> scan, double ref_time);

struct LidarMatch {
  std::size_t scan = 0;
  std::size_t point = 0;
  LidarPoint measurement;
  VoxelIndex voxel;
  VoxelPlane plane;
};

/**
 * Point-to-plane association under the current trajectory, input order preserved.
 * Each point takes the plane with the smallest gated residual among its own
 * voxel and the 26 neighbours; the own voxel wins ties.
 */
std::vector<LidarMatch> associate_scan(const SplineTrajectory& traj, std::span<const LidarPoint> scan,
                                       const VoxelMap& map, const FactorWeights& w, double gate = 5.0,
                                       std::size_t scan_index = 0);

// ---------------------------------------------------------------------------
// Solver

struct SolverConfig {
  double lambda_init = 1e-4;
  double lambda_factor = 10.0;
  double lambda_max = 1e16;
  int max_inner_iterations = 50;
  double cost_tolerance = 1e-9;  // relative
  double step_tolerance = 1e-12;
  double huber_delta = 1.0;      // whitened units, lidar only
  double association_gate = 5.0;
  int max_outer_loops = 5;
  double stable_association_fraction = 0.99;
  bool prealign = true;          // priors + IMU solve before the first association
  int dense_knot_limit = 200;
  int threads = 1;
};

enum class Termination { kCostTolerance, kStepTolerance, kZeroCost, kMaxIterations, kNoDecrease, kNoFactors };

std::string to_string(Termination t);

struct FamilyCost {
  double cost = 0.0;
  std::size_t count = 0;
};

struct CostBreakdown {
  FamilyCost pose;
  FamilyCost lidar;
  FamilyCost gyro;
  FamilyCost accel;

  double total() const { return pose.cost + lidar.cost + gyro.cost + accel.cost; }
  std::size_t residual_dims() const { return 6 * pose.count + lidar.count + 3 * gyro.count + 3 * accel.count; }
};

struct StageReport {
  std::string name;  // "prealign" or "outer-N"
  std::size_t matched_points = 0;
  double unchanged_fraction = 0.0;
  int iterations = 0;
  CostBreakdown before;
  CostBreakdown after;
  Termination termination = Termination::kNoFactors;
};

struct SolveReport {
  CostBreakdown initial;
  CostBreakdown final;
  int iterations = 0;
  int outer_loops = 0;
  Termination termination = Termination::kNoFactors;
  bool converged = false;
  double whitened_rms = 0.0;
  std::size_t dropped_priors = 0;
  std::size_t dropped_imu = 0;
  std::size_t dropped_points = 0;
  std::vector<StageReport> stages;
};

struct SolveResult {
  SplineTrajectory trajectory;
  ImuBias bias;
  SolveReport report;
  std::vector<LidarMatch> associations;
};

/// Huber cost of a whitened scalar residual: r^2 inside delta, 2 delta |r| - delta^2 outside.
double huber_cost(double r, double delta);

/// Cost of every family at the given state and association, Huber on lidar.
CostBreakdown evaluate_cost(const SplineTrajectory& traj, const ImuBias& bias, const MeasurementSet& ms,
                            std::span<const LidarMatch> associations, const FactorWeights& w,
                            const WorldConstants& c, double huber_delta);

/**
 * @brief Minimizes the pose-prior + lidar + gyro + accel cost over all knots and a constant bias.
 *
 * Outer loops re-associate lidar points and run Levenberg-Marquardt to
 * convergence on the fixed association. Throws std::invalid_argument when no
 * measurement overlaps the initial trajectory domain. A run that cannot
 * decrease the cost returns its best iterate with `converged == false`.
 */
SolveResult solve_registration(const MeasurementSet& ms, const VoxelMap& map, const SplineTrajectory& init,
                               const FactorWeights& w, const WorldConstants& c, const SolverConfig& cfg,
                               const ImuBias& initial_bias = {});

}  // namespace ctreg
