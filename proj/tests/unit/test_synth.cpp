#include <gtest/gtest.h>

#include <ctreg/eval.hpp>
#include <ctreg/synth.hpp>

#include <algorithm>
#include <cmath>

namespace ctreg {
namespace {

ScenarioSpec small_scenario(TrajectoryStyle style) {
  ScenarioSpec spec;
  spec.style = style;
  spec.duration = 6.0;
  spec.map_density = 20.0;
  spec.lidar_rate = 500.0;
  return spec;
}

double distance_to_nearest_plane(const std::vector<PlaneSpec>& planes, const Vec3& x) {
  double best = 1e300;
  for (const auto& p : planes) {
    best = std::min(best, std::abs(p.normal().dot(x - p.origin)));
  }
  return best;
}

TEST(Synth, WorldPointsLieOnPlanes) {
  const ScenarioSpec spec = small_scenario(TrajectoryStyle::kFigureEight);
  const auto planes = world_planes(spec);
  ASSERT_EQ(planes.size(), 6u);
  const auto cloud = make_world(spec);
  ASSERT_FALSE(cloud.empty());
  for (const auto& x : cloud) {
    EXPECT_LT(distance_to_nearest_plane(planes, x), 1e-12);
    EXPECT_TRUE(((x - spec.world_min).array() >= -1e-12).all());
    EXPECT_TRUE(((spec.world_max - x).array() >= -1e-12).all());
  }
}

TEST(Synth, SinglePlaneAtZeroHeight) {
  ScenarioSpec spec;
  spec.box_walls = false;
  spec.extra_planes.push_back(PlaneSpec{Vec3(-2.0, -3.0, 0.0), Vec3::UnitX(), Vec3::UnitY(), 4.0, 6.0});
  spec.map_density = 50.0;
  const auto cloud = make_world(spec);
  EXPECT_EQ(cloud.size(), 1200u);
  for (const auto& x : cloud) {
    EXPECT_EQ(x.z(), 0.0);
  }
}

TEST(Synth, ZeroAreaPlaneThrows) {
  ScenarioSpec spec;
  spec.box_walls = false;
  spec.extra_planes.push_back(PlaneSpec{Vec3::Zero(), Vec3::UnitX(), Vec3::UnitY(), 0.0, 2.0});
  EXPECT_THROW(make_world(spec), std::invalid_argument);
}

TEST(Synth, NoPlanesThrows) {
  ScenarioSpec spec;
  spec.box_walls = false;
  EXPECT_THROW(make_world(spec), std::invalid_argument);
}

TEST(Synth, DeterministicForSeed) {
  ScenarioSpec spec = small_scenario(TrajectoryStyle::kFigureEight);
  spec.lidar_noise = 0.02;
  spec.gyro_noise = 0.01;
  const auto truth = make_trajectory(spec);
  const auto a = simulate_measurements(truth, spec);
  const auto b = simulate_measurements(truth, spec);
  ASSERT_EQ(a.imu.size(), b.imu.size());
  for (std::size_t i = 0; i < a.imu.size(); ++i) {
    EXPECT_EQ(a.imu[i].gyro, b.imu[i].gyro);
    EXPECT_EQ(a.imu[i].accel, b.imu[i].accel);
  }
  ASSERT_EQ(a.scans.size(), b.scans.size());
  for (std::size_t s = 0; s < a.scans.size(); ++s) {
    ASSERT_EQ(a.scans[s].size(), b.scans[s].size());
    for (std::size_t i = 0; i < a.scans[s].size(); ++i) {
      EXPECT_EQ(a.scans[s][i].f, b.scans[s][i].f);
    }
  }
  EXPECT_EQ(make_world(spec), make_world(spec));

  spec.seed = 2;
  const auto c = simulate_measurements(truth, spec);
  EXPECT_NE(a.imu[5].gyro, c.imu[5].gyro);
}

TEST(Synth, CounterRngIsOrderIndependent) {
  const CounterRng rng(7);
  const double later = rng.uniform(3, 100, 1);
  const double earlier = rng.uniform(3, 1, 0);
  EXPECT_EQ(rng.uniform(3, 100, 1), later);
  EXPECT_EQ(rng.uniform(3, 1, 0), earlier);
  EXPECT_NEAR(rng.unit_vector(1, 2).norm(), 1.0, 1e-15);
}

TEST(Synth, StationaryImuReadsGravityOnly) {
  ScenarioSpec spec = small_scenario(TrajectoryStyle::kStationary);
  const auto truth = make_trajectory(spec);
  const auto ms = simulate_measurements(truth, spec);
  ASSERT_FALSE(ms.imu.empty());
  for (const auto& s : ms.imu) {
    EXPECT_LT(s.gyro.norm(), 1e-12);
    EXPECT_LT((s.accel - Vec3(0.0, 0.0, 9.81)).norm(), 1e-12);
  }
  const Pose p0 = truth.pose_at(0.0);
  const Pose p1 = truth.pose_at(5.0);
  EXPECT_LT((p0.position - p1.position).norm(), 1e-12);
  EXPECT_LT(rotation_angle_between(p0.rotation, p1.rotation), 1e-12);
}

TEST(Synth, ConstantVelocitySpeed) {
  ScenarioSpec spec = small_scenario(TrajectoryStyle::kConstantVelocity);
  spec.speed = 2.0;
  const auto truth = make_trajectory(spec);
  const VelocityStats stats = velocity_stats(truth, 100.0);
  EXPECT_NEAR(stats.median_kmh, 7.2, 1e-9);
  EXPECT_NEAR(stats.max_kmh, 7.2, 1e-9);
}

TEST(Synth, FigureEightAngularVelocityMatchesFiniteDifference) {
  const ScenarioSpec spec = small_scenario(TrajectoryStyle::kFigureEight);
  const auto truth = make_trajectory(spec);
  const double h = 1e-5;
  for (double t : {0.37, 1.21, 2.5, 3.93, 5.05}) {
    const Rotation before = truth.pose_at(t - h).rotation;
    const Rotation after = truth.pose_at(t + h).rotation;
    const Vec3 numeric = rot_log(before.inverse() * after) / (2.0 * h);
    const Vec3 analytic = truth.angular_velocity_body(t);
    EXPECT_LT((numeric - analytic).norm(), 1e-6 * std::max(1.0, analytic.norm())) << "t=" << t;
  }
}

TEST(Synth, ResidualsVanishAtTruth) {
  ScenarioSpec spec = small_scenario(TrajectoryStyle::kFigureEight);
  spec.bias.gyro = Vec3(0.02, -0.01, 0.005);
  spec.bias.accel = Vec3(0.1, 0.05, -0.2);
  const auto truth = make_trajectory(spec);
  const auto ms = simulate_measurements(truth, spec);
  const FactorWeights w;
  const WorldConstants c;
  for (const auto& s : ms.imu) {
    const auto rg = residual_gyro(truth, spec.bias, s, w);
    const auto ra = residual_acce(truth, spec.bias, s, w, c);
    ASSERT_TRUE(rg && ra);
    EXPECT_LT(rg->norm() * w.gyro, 1e-7);
    EXPECT_LT(ra->norm() * w.accel, 1e-7);
  }
  const auto planes = world_planes(spec);
  std::size_t points = 0;
  for (const auto& scan : ms.scans) {
    for (const auto& pt : scan) {
      const Vec3 x = pose_apply(truth.pose_at(pt.t), pt.f);
      EXPECT_LT(distance_to_nearest_plane(planes, x), 1e-9);
      ++points;
    }
  }
  EXPECT_GT(points, 2000u);
}

TEST(Synth, ScanTimestampsIncrease) {
  const ScenarioSpec spec = small_scenario(TrajectoryStyle::kFigureEight);
  const auto truth = make_trajectory(spec);
  const auto ms = simulate_measurements(truth, spec);
  double last = -1.0;
  for (const auto& scan : ms.scans) {
    for (const auto& pt : scan) {
      EXPECT_GT(pt.t, last);
      last = pt.t;
      const double r = pt.f.norm();
      EXPECT_GT(r, spec.range_min);
      EXPECT_LT(r, spec.range_max);
    }
  }
  for (std::size_t i = 1; i < ms.imu.size(); ++i) {
    EXPECT_GT(ms.imu[i].t, ms.imu[i - 1].t);
  }
}

TEST(Synth, PriorPerturbationMagnitudes) {
  ScenarioSpec spec = small_scenario(TrajectoryStyle::kFigureEight);
  spec.prior_position_perturbation = 0.1;
  spec.prior_rotation_perturbation = 0.02;
  const auto truth = make_trajectory(spec);
  const auto ms = simulate_measurements(truth, spec);
  ASSERT_EQ(ms.priors.size(), 7u);
  for (const auto& prior : ms.priors) {
    const Pose p = truth.pose_at(prior.t);
    EXPECT_NEAR((prior.pose.position - p.position).norm(), 0.1, 1e-12);
    EXPECT_NEAR(rotation_angle_between(prior.pose.rotation, p.rotation), 0.02, 1e-9);
  }
}

TEST(Synth, WarnsWhenLeavingTheBox) {
  ScenarioSpec spec = small_scenario(TrajectoryStyle::kConstantVelocity);
  spec.speed = 10.0;  // 60 m of travel in a 24 m box
  const auto truth = make_trajectory(spec);
  std::vector<std::string> warnings;
  simulate_measurements(truth, spec, &warnings);
  EXPECT_EQ(warnings.size(), 1u);

  warnings.clear();
  spec.style = TrajectoryStyle::kFigureEight;
  simulate_measurements(make_trajectory(spec), spec, &warnings);
  EXPECT_TRUE(warnings.empty());
}

TEST(Synth, InvalidScenarioRejected) {
  ScenarioSpec spec;
  spec.duration = 0.0;
  EXPECT_THROW(spec.validate(), std::invalid_argument);
  spec = ScenarioSpec{};
  spec.gyro_noise = -1.0;
  EXPECT_THROW(spec.validate(), std::invalid_argument);
  spec = ScenarioSpec{};
  spec.world_max.x() = spec.world_min.x();
  EXPECT_THROW(spec.validate(), std::invalid_argument);
}

TEST(Synth, StyleNamesRoundTrip) {
  for (auto s : {TrajectoryStyle::kStationary, TrajectoryStyle::kConstantVelocity, TrajectoryStyle::kFigureEight}) {
    EXPECT_EQ(parse_trajectory_style(to_string(s)), s);
  }
  EXPECT_THROW(parse_trajectory_style("zigzag"), std::invalid_argument);
}

}  // namespace
}  // namespace ctreg
