#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <tuple>
#include <vector>

#include <ctreg/geometry.hpp>

namespace ctreg {

struct PlaneFitParams {
  int min_points = 6;
  double min_planarity = 0.9;
  double max_rms = 0.05;  // meters
};

/// Plane n . x = offset fitted to the points of one voxel; offset >= 0 by sign convention.
struct VoxelPlane {
  Vec3 normal = Vec3::UnitZ();
  double offset = 0.0;
  double planarity = 0.0;
  int point_count = 0;

  double signed_distance(const Vec3& x) const { return normal.dot(x) - offset; }
};

/// Integer voxel coordinate; voxel i spans [i s, (i + 1) s) on each axis.
struct VoxelIndex {
  std::int64_t x = 0;
  std::int64_t y = 0;
  std::int64_t z = 0;

  friend auto operator<=>(const VoxelIndex&, const VoxelIndex&) = default;
};

enum class PlaneRejection { kTooFewPoints, kDegenerate, kLowPlanarity, kHighResidual };

struct PlaneFitResult {
  std::optional<VoxelPlane> plane;
  PlaneRejection rejection = PlaneRejection::kTooFewPoints;  // meaningful only without a plane
  double rms = 0.0;
};

/// Total-least-squares plane via the covariance eigen-decomposition. Besides the
/// planarity and RMS thresholds, every point must lie within 3 max_rms of the plane.
PlaneFitResult fit_plane(std::span<const Vec3> points, const PlaneFitParams& params = {});

struct MapBuildStats {
  std::size_t input_points = 0;
  std::size_t occupied_voxels = 0;
  std::size_t accepted_voxels = 0;
  std::size_t rejected_too_few = 0;
  std::size_t rejected_degenerate = 0;
  std::size_t rejected_planarity = 0;
  std::size_t rejected_residual = 0;
};

class VoxelMap {
public:
  using Container = std::map<VoxelIndex, VoxelPlane>;

  explicit VoxelMap(double voxel_size);

  double voxel_size() const { return voxel_size_; }
  std::size_t size() const { return voxels_.size(); }
  bool empty() const { return voxels_.empty(); }
  const Container& voxels() const { return voxels_; }

  VoxelIndex index_of(const Vec3& x) const;
  std::optional<VoxelPlane> query(const Vec3& x) const;
  const VoxelPlane* find(const VoxelIndex& index) const;

  void insert(const VoxelIndex& index, const VoxelPlane& plane);

private:
  double voxel_size_;
  Container voxels_;
};

/**
 * Buckets the cloud by voxel and keeps every bucket that passes fit_plane.
 * Output is independent of input order and of `threads`. Throws
 * std::invalid_argument on an empty cloud or non-positive voxel size.
 */
VoxelMap build_map(std::span<const Vec3> cloud, double voxel_size, const PlaneFitParams& params = {},
                   int threads = 1, MapBuildStats* stats = nullptr);

}  // namespace ctreg
