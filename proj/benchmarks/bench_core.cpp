#include <benchmark/benchmark.h>

#include <ctreg/estimation.hpp>
#include <ctreg/priormap.hpp>
#include <ctreg/synth.hpp>

namespace {

using namespace ctreg;

ScenarioSpec bench_spec(double duration) {
  ScenarioSpec spec;
  spec.duration = duration;
  spec.lidar_noise = 0.02;
  spec.gyro_noise = 0.01;
  spec.accel_noise = 0.1;
  return spec;
}

void BM_SplinePose(benchmark::State& state) {
  ScenarioSpec spec = bench_spec(10.0);
  spec.spline_order = static_cast<int>(state.range(0));
  const auto traj = make_trajectory(spec);
  double t = 0.0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(traj.pose_at(t));
    t = t + 0.0137 < 9.9 ? t + 0.0137 : 0.0;
  }
}
BENCHMARK(BM_SplinePose)->DenseRange(2, 6);

void BM_RotationWithJacobians(benchmark::State& state) {
  ScenarioSpec spec = bench_spec(10.0);
  spec.spline_order = static_cast<int>(state.range(0));
  const auto traj = make_trajectory(spec);
  double t = 0.0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(traj.evaluate_rotation(t, true));
    t = t + 0.0137 < 9.9 ? t + 0.0137 : 0.0;
  }
}
BENCHMARK(BM_RotationWithJacobians)->DenseRange(2, 6);

void BM_LinearizeLidar(benchmark::State& state) {
  const auto traj = make_trajectory(bench_spec(10.0));
  const VoxelPlane plane{Vec3(0.0, 0.6, 0.8), 2.0, 1.0, 20};
  const FactorWeights w;
  LidarPoint pt{0.0, Vec3(4.0, -1.0, 2.0)};
  for (auto _ : state) {
    benchmark::DoNotOptimize(linearize_lidar(traj, pt, plane, w));
    pt.t = pt.t + 0.0137 < 9.9 ? pt.t + 0.0137 : 0.0;
  }
}
BENCHMARK(BM_LinearizeLidar);

void BM_LinearizeAccel(benchmark::State& state) {
  const auto traj = make_trajectory(bench_spec(10.0));
  const FactorWeights w;
  const WorldConstants c;
  ImuSample s{0.0, Vec3::Zero(), Vec3(0.0, 0.0, 9.81)};
  for (auto _ : state) {
    benchmark::DoNotOptimize(linearize_acce(traj, ImuBias{}, s, w, c));
    s.t = s.t + 0.0137 < 9.9 ? s.t + 0.0137 : 0.0;
  }
}
BENCHMARK(BM_LinearizeAccel);

void BM_BuildMap(benchmark::State& state) {
  ScenarioSpec spec = bench_spec(10.0);
  spec.map_density = static_cast<double>(state.range(0));
  const auto cloud = make_world(spec);
  for (auto _ : state) {
    benchmark::DoNotOptimize(build_map(cloud, 0.4));
  }
  state.SetItemsProcessed(static_cast<int64_t>(state.iterations() * cloud.size()));
}
BENCHMARK(BM_BuildMap)->Arg(50)->Arg(100)->Unit(benchmark::kMillisecond);

void BM_SolveRegistration(benchmark::State& state) {
  const ScenarioSpec spec = bench_spec(static_cast<double>(state.range(0)));
  const auto truth = make_trajectory(spec);
  const auto ms = simulate_measurements(truth, spec);
  const auto map = build_map(make_world(spec), 0.4);
  std::vector<StampedPose> poses;
  for (const auto& p : ms.priors) poses.push_back({p.t, p.pose});
  const auto init = fit_from_poses(poses, spec.knot_interval);
  FactorWeights w;
  w.lidar = spec.lidar_noise;
  for (auto _ : state) {
    benchmark::DoNotOptimize(solve_registration(ms, map, init, w, WorldConstants{}, SolverConfig{}));
  }
}
BENCHMARK(BM_SolveRegistration)->Arg(5)->Arg(10)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
