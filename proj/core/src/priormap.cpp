#include <ctreg/priormap.hpp>
#include <ctreg/parallel.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <Eigen/Eigenvalues>

namespace ctreg {

namespace {

bool lexicographic_less(const Vec3& a, const Vec3& b) {
  if (a.x() != b.x()) return a.x() < b.x();
  if (a.y() != b.y()) return a.y() < b.y();
  return a.z() < b.z();
}

constexpr double kMaxPointDistanceFactor = 3.0;

}  // namespace

PlaneFitResult fit_plane(std::span<const Vec3> points, const PlaneFitParams& params) {
  PlaneFitResult result;
  const int n = static_cast<int>(points.size());
  if (n < params.min_points || n < 3) {
    result.rejection = PlaneRejection::kTooFewPoints;
    return result;
  }

  Vec3 centroid = Vec3::Zero();
  for (const auto& p : points) {
    centroid += p;
  }
  centroid /= n;

  Mat3 cov = Mat3::Zero();
  for (const auto& p : points) {
    const Vec3 d = p - centroid;
    cov += d * d.transpose();
  }
  cov /= n;

  Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
  const Vec3 lambda = eig.eigenvalues();  // ascending
  const double scale = std::max(lambda(2), 0.0);
  if (!(scale > 0.0) || lambda(1) <= 1e-12 * scale) {
    result.rejection = PlaneRejection::kDegenerate;
    return result;
  }

  const double lambda_min = std::max(lambda(0), 0.0);
  const double planarity = std::clamp(1.0 - lambda_min / lambda(1), 0.0, 1.0);
  result.rms = std::sqrt(lambda_min);

  if (planarity < params.min_planarity) {
    result.rejection = PlaneRejection::kLowPlanarity;
    return result;
  }
  if (result.rms > params.max_rms) {
    result.rejection = PlaneRejection::kHighResidual;
    return result;
  }
  // a second surface clipping the voxel can hide under an acceptable RMS
  const Vec3 normal_dir = eig.eigenvectors().col(0);
  for (const auto& p : points) {
    if (std::abs(normal_dir.dot(p - centroid)) > kMaxPointDistanceFactor * params.max_rms) {
      result.rejection = PlaneRejection::kHighResidual;
      return result;
    }
  }

  Vec3 normal = eig.eigenvectors().col(0).normalized();
  double offset = normal.dot(centroid);
  bool flip = offset < 0.0;
  if (std::abs(offset) < 1e-12) {
    // plane through the origin: orient by the dominant normal component
    Eigen::Index dominant = 0;
    normal.cwiseAbs().maxCoeff(&dominant);
    flip = normal(dominant) < 0.0;
  }
  if (flip) {
    normal = -normal;
    offset = -offset;
  }

  result.plane = VoxelPlane{normal, offset, planarity, n};
  return result;
}

VoxelMap::VoxelMap(double voxel_size) : voxel_size_(voxel_size) {
  if (!(voxel_size > 0.0) || !std::isfinite(voxel_size)) {
    throw std::invalid_argument("voxel size must be finite and > 0");
  }
}

VoxelIndex VoxelMap::index_of(const Vec3& x) const {
  return VoxelIndex{static_cast<std::int64_t>(std::floor(x.x() / voxel_size_)),
                    static_cast<std::int64_t>(std::floor(x.y() / voxel_size_)),
                    static_cast<std::int64_t>(std::floor(x.z() / voxel_size_))};
}

std::optional<VoxelPlane> VoxelMap::query(const Vec3& x) const {
  if (!x.allFinite()) {
    return std::nullopt;
  }
  const VoxelPlane* plane = find(index_of(x));
  if (plane == nullptr) {
    return std::nullopt;
  }
  return *plane;
}

const VoxelPlane* VoxelMap::find(const VoxelIndex& index) const {
  const auto it = voxels_.find(index);
  return it == voxels_.end() ? nullptr : &it->second;
}

void VoxelMap::insert(const VoxelIndex& index, const VoxelPlane& plane) {
  voxels_[index] = plane;
}

VoxelMap build_map(std::span<const Vec3> cloud, double voxel_size, const PlaneFitParams& params, int threads,
                   MapBuildStats* stats) {
  if (cloud.empty()) {
    throw std::invalid_argument("build_map: empty cloud");
  }
  VoxelMap map(voxel_size);

  struct Entry {
    VoxelIndex index;
    Vec3 point;
  };
  std::vector<Entry> entries;
  entries.reserve(cloud.size());
  for (const auto& p : cloud) {
    if (!p.allFinite()) {
      throw std::invalid_argument("build_map: non-finite point");
    }
    entries.push_back(Entry{map.index_of(p), p});
  }
  // total order on (voxel, point) so the fit sees the same sequence for any input permutation
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.index != b.index) return a.index < b.index;
    return lexicographic_less(a.point, b.point);
  });

  struct Bucket {
    VoxelIndex index;
    std::size_t begin;
    std::size_t end;
  };
  std::vector<Bucket> buckets;
  for (std::size_t i = 0; i < entries.size();) {
    std::size_t j = i;
    while (j < entries.size() && entries[j].index == entries[i].index) {
      ++j;
    }
    buckets.push_back(Bucket{entries[i].index, i, j});
    i = j;
  }

  std::vector<PlaneFitResult> fits(buckets.size());
  parallel_for(buckets.size(), threads, [&](std::size_t b) {
    std::vector<Vec3> pts;
    pts.reserve(buckets[b].end - buckets[b].begin);
    for (std::size_t i = buckets[b].begin; i < buckets[b].end; ++i) {
      pts.push_back(entries[i].point);
    }
    fits[b] = fit_plane(pts, params);
  });

  MapBuildStats local;
  local.input_points = cloud.size();
  local.occupied_voxels = buckets.size();
  for (std::size_t b = 0; b < buckets.size(); ++b) {
    if (fits[b].plane) {
      map.insert(buckets[b].index, *fits[b].plane);
      ++local.accepted_voxels;
      continue;
    }
    switch (fits[b].rejection) {
      case PlaneRejection::kTooFewPoints: ++local.rejected_too_few; break;
      case PlaneRejection::kDegenerate: ++local.rejected_degenerate; break;
      case PlaneRejection::kLowPlanarity: ++local.rejected_planarity; break;
      case PlaneRejection::kHighResidual: ++local.rejected_residual; break;
    }
  }
  if (stats != nullptr) {
    *stats = local;
  }
  return map;
}

}  // namespace ctreg
