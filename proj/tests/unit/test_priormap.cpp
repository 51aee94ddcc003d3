#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <ctreg/priormap.hpp>

#include "../oracles/tls_plane.hpp"
#include "../support/random_fixtures.hpp"

namespace ctreg {
namespace {

using testing::Rand;

std::vector<Vec3> plane_points(Rand& rng, const Vec3& n, double mu, int count, double extent, double noise,
                               const Vec3& center_hint = Vec3::Zero()) {
  const Vec3 u = n.unitOrthogonal();
  const Vec3 v = n.cross(u);
  std::normal_distribution<double> gauss(0.0, noise > 0 ? noise : 1.0);
  const Vec3 base = center_hint - n * (n.dot(center_hint) - mu);
  std::vector<Vec3> out;
  for (int i = 0; i < count; ++i) {
    Vec3 p = base + rng.uniform(-extent, extent) * u + rng.uniform(-extent, extent) * v;
    if (noise > 0) p += gauss(rng.engine()) * n;
    out.push_back(p);
  }
  return out;
}

TEST(FitPlane, ExactGridOnHorizontalPlane) {
  std::vector<Vec3> pts;
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 2; ++j) pts.emplace_back(0.1 * i, 0.1 * j, 2.0);
  }
  const auto r = fit_plane(pts);
  ASSERT_TRUE(r.plane.has_value());
  EXPECT_NEAR(std::abs(r.plane->normal.z()), 1.0, 1e-9);
  EXPECT_NEAR(r.plane->normal.norm(), 1.0, 1e-9);
  EXPECT_NEAR(r.plane->offset, 2.0, 1e-9);
  EXPECT_GT(r.plane->normal.z(), 0.0);  // offset >= 0 fixes the sign
  EXPECT_NEAR(r.plane->planarity, 1.0, 1e-9);
  EXPECT_EQ(r.plane->point_count, 8);
}

TEST(FitPlane, NegativeOffsetIsFlipped) {
  std::vector<Vec3> pts;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) pts.emplace_back(-3.0, 0.1 * i, 0.1 * j);
  }
  const auto r = fit_plane(pts);
  ASSERT_TRUE(r.plane.has_value());
  EXPECT_NEAR(r.plane->offset, 3.0, 1e-9);
  EXPECT_NEAR(r.plane->normal.x(), -1.0, 1e-9);
}

TEST(FitPlane, CollinearRejected) {
  std::vector<Vec3> pts;
  for (int i = 0; i < 6; ++i) pts.emplace_back(0.1 * i, 0.2 * i, 0.3 * i);
  const auto r = fit_plane(pts);
  EXPECT_FALSE(r.plane.has_value());
  EXPECT_EQ(r.rejection, PlaneRejection::kDegenerate);
}

TEST(FitPlane, CoincidentPointsRejected) {
  const std::vector<Vec3> pts(10, Vec3(1, 2, 3));
  EXPECT_EQ(fit_plane(pts).rejection, PlaneRejection::kDegenerate);
}

TEST(FitPlane, TooFewPointsRejected) {
  const std::vector<Vec3> pts{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {1, 1, 0}, {0.5, 0.5, 0}};
  const auto r = fit_plane(pts);
  EXPECT_FALSE(r.plane.has_value());
  EXPECT_EQ(r.rejection, PlaneRejection::kTooFewPoints);
  PlaneFitParams loose;
  loose.min_points = 5;
  EXPECT_TRUE(fit_plane(pts, loose).plane.has_value());
}

TEST(FitPlane, VolumetricCloudRejectedByPlanarity) {
  Rand rng(1);
  std::vector<Vec3> pts;
  for (int i = 0; i < 200; ++i) pts.push_back(rng.vec(0.2));
  const auto r = fit_plane(pts);
  EXPECT_FALSE(r.plane.has_value());
  EXPECT_EQ(r.rejection, PlaneRejection::kLowPlanarity);
}

TEST(FitPlane, ThickSlabRejectedByResidual) {
  Rand rng(2);
  const auto pts = plane_points(rng, Vec3::UnitZ(), 1.0, 400, 2.0, 0.08);
  const auto r = fit_plane(pts);
  EXPECT_FALSE(r.plane.has_value());
  EXPECT_EQ(r.rejection, PlaneRejection::kHighResidual);
  EXPECT_GT(r.rms, 0.05);
}

TEST(FitPlane, NoisyPlaneMatchesTotalLeastSquaresOracle) {
  Rand rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const Vec3 n = rng.unit();
    const auto pts = plane_points(rng, n, rng.uniform(0.0, 5.0), 50, 0.2, 0.005, rng.vec(3.0));
    const auto r = fit_plane(pts);
    ASSERT_TRUE(r.plane.has_value());
    const auto ref = oracle::tls_plane(pts);
    const double angle = std::acos(std::min(1.0, std::abs(r.plane->normal.dot(ref.normal)))) * 180.0 / std::numbers::pi;
    EXPECT_LT(angle, 1.0);
    EXPECT_LT(angle, 1e-6);  // same estimator, different factorization
    EXPECT_NEAR(r.plane->offset, ref.offset, 1e-9);
    EXPECT_NEAR(r.plane->normal.norm(), 1.0, 1e-9);
    EXPECT_GE(r.plane->planarity, 0.0);
    EXPECT_LE(r.plane->planarity, 1.0);
  }
}

TEST(VoxelMap, IndexUsesFloor) {
  const VoxelMap map(0.5);
  EXPECT_EQ(map.index_of(Vec3(0.2, -0.2, 1.7)), (VoxelIndex{0, -1, 3}));
  EXPECT_EQ(map.index_of(Vec3(1.0, -1.0, 0.0)), (VoxelIndex{2, -2, 0}));  // boundary: floor(x / s)
  EXPECT_THROW(VoxelMap(0.0), std::invalid_argument);
}

TEST(BuildMap, SinglePlaneEveryVoxelSamePlane) {
  Rand rng(4);
  const Vec3 n = Vec3(0.3, -0.2, 1.0).normalized();
  const auto cloud = plane_points(rng, n, 1.5, 20000, 5.0, 0.0);
  MapBuildStats stats;
  const auto map = build_map(cloud, 1.0, {}, 1, &stats);
  ASSERT_GT(map.size(), 20u);
  for (const auto& [idx, plane] : map.voxels()) {
    EXPECT_LT((plane.normal - n).norm(), 1e-6);
    EXPECT_NEAR(plane.offset, 1.5, 1e-6);
    EXPECT_GE(plane.point_count, 6);
  }
  EXPECT_EQ(stats.input_points, cloud.size());
  EXPECT_EQ(stats.accepted_voxels, map.size());
  EXPECT_EQ(stats.occupied_voxels, stats.accepted_voxels + stats.rejected_too_few + stats.rejected_degenerate +
                                       stats.rejected_planarity + stats.rejected_residual);
}

TEST(BuildMap, PerpendicularWallsAndCornerRejection) {
  Rand rng(5);
  // walls x = 0.5 and y = 0.5, voxel size 1: the corner voxel mixes both
  std::vector<Vec3> cloud;
  for (int i = 0; i < 6000; ++i) {
    cloud.emplace_back(0.5, rng.uniform(0.5, 4.0), rng.uniform(0.0, 3.0));
    cloud.emplace_back(rng.uniform(0.5, 4.0), 0.5, rng.uniform(0.0, 3.0));
  }
  const auto map = build_map(cloud, 1.0);
  for (const auto& [idx, plane] : map.voxels()) {
    if (idx.x == 0 && idx.y == 0) {
      ADD_FAILURE() << "corner voxel accepted";
    } else if (idx.x == 0) {
      EXPECT_NEAR(std::abs(plane.normal.x()), 1.0, 1e-9);
    } else if (idx.y == 0) {
      EXPECT_NEAR(std::abs(plane.normal.y()), 1.0, 1e-9);
    }
  }
  EXPECT_EQ(map.find({0, 0, 0}), nullptr);
  EXPECT_NE(map.find({0, 2, 1}), nullptr);
  EXPECT_NE(map.find({2, 0, 1}), nullptr);
}

TEST(BuildMap, SinglePointGivesEmptyMap) {
  const std::vector<Vec3> cloud{Vec3(1, 2, 3)};
  EXPECT_TRUE(build_map(cloud, 0.4).empty());
}

TEST(BuildMap, EmptyCloudThrows) {
  EXPECT_THROW(build_map(std::vector<Vec3>{}, 0.4), std::invalid_argument);
  EXPECT_THROW(build_map(std::vector<Vec3>{Vec3::Zero()}, -1.0), std::invalid_argument);
}

TEST(BuildMap, PermutationAndThreadInvariant) {
  Rand rng(6);
  std::vector<Vec3> cloud;
  for (int k = 0; k < 4; ++k) {
    const auto part = plane_points(rng, rng.unit(), rng.uniform(0, 3), 3000, 3.0, 0.01);
    cloud.insert(cloud.end(), part.begin(), part.end());
  }
  const auto reference = build_map(cloud, 0.5, {}, 1);
  auto shuffled = cloud;
  std::shuffle(shuffled.begin(), shuffled.end(), rng.engine());
  for (int threads : {1, 3, 4}) {
    const auto other = build_map(shuffled, 0.5, {}, threads);
    ASSERT_EQ(other.size(), reference.size());
    auto a = reference.voxels().begin();
    auto b = other.voxels().begin();
    for (; a != reference.voxels().end(); ++a, ++b) {
      ASSERT_EQ(a->first, b->first);
      EXPECT_LT((a->second.normal - b->second.normal).norm(), 1e-12);
      EXPECT_NEAR(a->second.offset, b->second.offset, 1e-12);
      EXPECT_EQ(a->second.point_count, b->second.point_count);
    }
  }
}

TEST(BuildMap, QueryReturnsPlaneNearCloudPoints) {
  Rand rng(7);
  std::vector<Vec3> cloud;
  for (int k = 0; k < 3; ++k) {
    const auto part = plane_points(rng, rng.unit(), rng.uniform(0, 3), 4000, 2.0, 0.01);
    cloud.insert(cloud.end(), part.begin(), part.end());
  }
  const PlaneFitParams params;
  const auto map = build_map(cloud, 0.4, params);
  std::size_t checked = 0;
  for (const auto& p : cloud) {
    const auto plane = map.query(p);
    if (!plane) continue;
    ++checked;
    EXPECT_LE(std::abs(plane->signed_distance(p)), 3.0 * params.max_rms);
    EXPECT_GE(plane->planarity, params.min_planarity);
  }
  EXPECT_GT(checked, cloud.size() / 2);
}

TEST(VoxelMap, QueryPopulatedEmptyAndBoundary) {
  VoxelMap map(1.0);
  VoxelPlane p;
  p.offset = 0.5;
  map.insert({0, 0, 0}, p);
  EXPECT_TRUE(map.query(Vec3(0.5, 0.5, 0.5)).has_value());
  EXPECT_FALSE(map.query(Vec3(5.0, 0.5, 0.5)).has_value());
  EXPECT_TRUE(map.query(Vec3(0.0, 0.0, 0.0)).has_value());   // lower face belongs to voxel 0
  EXPECT_FALSE(map.query(Vec3(1.0, 0.5, 0.5)).has_value());  // upper face belongs to voxel 1
}

}  // namespace
}  // namespace ctreg
