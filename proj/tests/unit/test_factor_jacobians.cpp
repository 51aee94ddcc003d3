#include <gtest/gtest.h>

#include <ctreg/estimation.hpp>

#include "../oracles/finite_difference.hpp"
#include "../support/random_fixtures.hpp"

namespace ctreg {
namespace {

using testing::Rand;

constexpr int kConfigurations = 120;
constexpr double kTolerance = 1e-5;

/// Copy of `traj` with knots first..first+k-1 and the bias moved by delta = [knot blocks (rot, pos)..., gyro, accel].
SplineTrajectory perturbed(const SplineTrajectory& traj, int first, int k, const Eigen::VectorXd& delta) {
  SplineTrajectory out = traj;
  for (int m = 0; m < k; ++m) {
    out.rot_knot(first + m) = out.rot_knot(first + m) * rot_exp(delta.segment<3>(6 * m));
    out.pos_knot(first + m) += delta.segment<3>(6 * m + 3);
  }
  return out;
}

ImuBias perturbed(const ImuBias& b, int k, const Eigen::VectorXd& delta) {
  ImuBias out = b;
  out.gyro += delta.segment<3>(6 * k);
  out.accel += delta.segment<3>(6 * k + 3);
  return out;
}

template <int Dim>
Eigen::MatrixXd stacked(const LinearizedFactor<Dim>& f) {
  Eigen::MatrixXd J(Dim, 6 * f.order + 6);
  for (int m = 0; m < f.order; ++m) J.middleCols(6 * m, 6) = f.d_knot[m];
  J.rightCols(6) = f.d_bias;
  return J;
}

struct Case {
  SplineTrajectory traj;
  ImuBias bias;
  double t;
  int first;
  int order;
};

Case random_case(Rand& rng) {
  const int order = rng.integer(kMinSplineOrder, kMaxSplineOrder);
  auto traj = testing::random_spline(rng, order, order + 4, rng.uniform(0.05, 0.5));
  const double t = testing::random_time(rng, traj);
  const int first = traj.evaluate_rotation(t, false).first_knot;
  return Case{traj, ImuBias{rng.vec(0.1), rng.vec(0.5)}, t, first, order};
}

FactorWeights random_weights(Rand& rng) {
  FactorWeights w;
  w.pose_rot = Vec3(rng.uniform(0.005, 0.1), rng.uniform(0.005, 0.1), rng.uniform(0.005, 0.1));
  w.pose_pos = Vec3(rng.uniform(0.01, 1.0), rng.uniform(0.01, 1.0), rng.uniform(0.01, 1.0));
  w.lidar = rng.uniform(0.01, 0.2);
  w.gyro = rng.uniform(0.005, 0.05);
  w.accel = rng.uniform(0.05, 0.5);
  return w;
}

TEST(FactorJacobians, PosePriorMatchesCentralDifferences) {
  Rand rng(11);
  for (int i = 0; i < kConfigurations; ++i) {
    const auto c = random_case(rng);
    const auto w = random_weights(rng);
    const Pose truth = c.traj.pose_at(c.t);
    const PosePrior prior{c.t, {truth.rotation * rot_exp(rng.vec(0.5)), truth.position + rng.vec(1.0)}};
    const auto lin = linearize_pose(c.traj, prior, w);
    ASSERT_TRUE(lin.has_value());
    ASSERT_EQ(lin->first_knot, c.first);
    const auto numeric = oracle::numeric_jacobian(
        [&](const Eigen::VectorXd& d) -> Eigen::VectorXd {
          return *residual_pose(perturbed(c.traj, c.first, c.order, d), prior, w);
        },
        6 * c.order + 6);
    EXPECT_LT(oracle::relative_error(stacked(*lin), numeric), kTolerance) << "config " << i << " order " << c.order;
    EXPECT_LT((lin->residual - *residual_pose(c.traj, prior, w)).norm(), 1e-12);
  }
}

TEST(FactorJacobians, LidarMatchesCentralDifferences) {
  Rand rng(12);
  for (int i = 0; i < kConfigurations; ++i) {
    const auto c = random_case(rng);
    const auto w = random_weights(rng);
    const VoxelPlane plane{rng.unit(), rng.uniform(0.0, 5.0), 1.0, 10};
    const LidarPoint pt{c.t, rng.vec(10.0)};
    const auto lin = linearize_lidar(c.traj, pt, plane, w);
    ASSERT_TRUE(lin.has_value());
    const auto numeric = oracle::numeric_jacobian(
        [&](const Eigen::VectorXd& d) -> Eigen::VectorXd {
          return Eigen::VectorXd::Constant(1, *residual_lidar(perturbed(c.traj, c.first, c.order, d), pt, plane, w));
        },
        6 * c.order + 6);
    EXPECT_LT(oracle::relative_error(stacked(*lin), numeric), kTolerance) << "config " << i << " order " << c.order;
  }
}

TEST(FactorJacobians, GyroMatchesCentralDifferences) {
  Rand rng(13);
  for (int i = 0; i < kConfigurations; ++i) {
    const auto c = random_case(rng);
    const auto w = random_weights(rng);
    const ImuSample s{c.t, rng.vec(1.0), rng.vec(10.0)};
    const auto lin = linearize_gyro(c.traj, c.bias, s, w);
    ASSERT_TRUE(lin.has_value());
    const auto numeric = oracle::numeric_jacobian(
        [&](const Eigen::VectorXd& d) -> Eigen::VectorXd {
          return *residual_gyro(perturbed(c.traj, c.first, c.order, d), perturbed(c.bias, c.order, d), s, w);
        },
        6 * c.order + 6);
    EXPECT_LT(oracle::relative_error(stacked(*lin), numeric), kTolerance) << "config " << i << " order " << c.order;
  }
}

TEST(FactorJacobians, AccelMatchesCentralDifferences) {
  Rand rng(14);
  const WorldConstants world;
  for (int i = 0; i < kConfigurations; ++i) {
    const auto c = random_case(rng);
    const auto w = random_weights(rng);
    const ImuSample s{c.t, rng.vec(1.0), rng.vec(10.0)};
    const auto lin = linearize_acce(c.traj, c.bias, s, w, world);
    ASSERT_TRUE(lin.has_value());
    const auto numeric = oracle::numeric_jacobian(
        [&](const Eigen::VectorXd& d) -> Eigen::VectorXd {
          return *residual_acce(perturbed(c.traj, c.first, c.order, d), perturbed(c.bias, c.order, d), s, w, world);
        },
        6 * c.order + 6);
    EXPECT_LT(oracle::relative_error(stacked(*lin), numeric), kTolerance) << "config " << i << " order " << c.order;
  }
}

TEST(FactorJacobians, OutOfDomainYieldsNothing) {
  Rand rng(15);
  const auto traj = testing::random_spline(rng, 4, 8);
  const FactorWeights w;
  const ImuSample s{traj.end_time() + 1.0, Vec3::Zero(), Vec3::Zero()};
  EXPECT_FALSE(linearize_gyro(traj, {}, s, w).has_value());
  EXPECT_FALSE(residual_acce(traj, {}, s, w, {}).has_value());
  EXPECT_FALSE(linearize_pose(traj, PosePrior{traj.begin_time() - 1.0, {}}, w).has_value());
}

}  // namespace
}  // namespace ctreg
