#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <ctreg/errors.hpp>
#include <ctreg/estimation.hpp>
#include <ctreg/priormap.hpp>
#include <ctreg/trajectory.hpp>

namespace ctreg::io {

// All readers skip blank lines and lines starting with '#', and throw
// FileFormatError (path, line, reason) on malformed content. A file that
// cannot be opened raises FileFormatError with line 0.

/// `t tx ty tz qx qy qz qw`; quaternions renormalized, rejected if |q| deviates > 1e-3.
TrajectorySamples read_trajectory_tum(const std::string& path);
void write_trajectory_tum(const std::string& path, const TrajectorySamples& samples);

/// Header `t,wx,wy,wz,ax,ay,az`; strictly increasing t.
std::vector<ImuSample> read_imu_csv(const std::string& path);
void write_imu_csv(const std::string& path, const std::vector<ImuSample>& samples);

struct ScanReadResult {
  LidarScan points;
  std::size_t gated_out = 0;  // outside (range_min, range_max)
};

/// Header `t,x,y,z`; non-decreasing t.
ScanReadResult read_scan_csv(const std::string& path, double range_min = 0.5, double range_max = 120.0);
void write_scan_csv(const std::string& path, const LidarScan& scan);
/// Same layout for already-deskewed points sharing one stamp per row.
void write_points_csv(const std::string& path, const std::vector<double>& stamps, const std::vector<Vec3>& points);

/// `x y z` per line.
std::vector<Vec3> read_xyz(const std::string& path);
void write_xyz(const std::string& path, const std::vector<Vec3>& points);

/// `ctspline v1` / `t0 dt order n_knots` / n_knots x `qw qx qy qz px py pz`.
SplineTrajectory read_spline(const std::string& path);
void write_spline(const std::string& path, const SplineTrajectory& traj);

/// `voxmap v1` / `voxel_size n_voxels` / `ix iy iz nx ny nz mu planarity count`.
VoxelMap read_voxmap(const std::string& path);
void write_voxmap(const std::string& path, const VoxelMap& map);

/// One timestamp per line.
std::vector<double> read_times(const std::string& path);

/// First non-comment line, trimmed; empty if the file is empty or unreadable.
std::string first_content_line(const std::string& path);

/// 17 significant digits, the round-trip precision for doubles.
std::string format_double(double v);

}  // namespace ctreg::io
