#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include <ctreg/config.hpp>
#include <ctreg/errors.hpp>
#include <ctreg/estimation.hpp>
#include <ctreg/eval.hpp>
#include <ctreg/io.hpp>
#include <ctreg/priormap.hpp>
#include <ctreg/synth.hpp>
#include <ctreg/trajectory.hpp>

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitDomain = 1;
constexpr int kExitUsage = 2;

/// Raised for flag combinations CLI11 cannot express; maps to exit 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

json to_json(const ctreg::Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

json to_json(const ctreg::CostBreakdown& c) {
  auto family = [](const ctreg::FamilyCost& f) { return json{{"cost", f.cost}, {"count", f.count}}; };
  return json{{"pose", family(c.pose)},
              {"lidar", family(c.lidar)},
              {"gyro", family(c.gyro)},
              {"accel", family(c.accel)},
              {"total", c.total()}};
}

void write_json(const std::string& path, const json& doc) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot open '" + path + "' for writing");
  }
  out << doc.dump(2) << "\n";
  if (!out.flush()) {
    throw std::runtime_error("write to '" + path + "' failed");
  }
}

bool is_spline_file(const std::string& path) { return ctreg::io::first_content_line(path) == "ctspline v1"; }
bool is_voxmap_file(const std::string& path) { return ctreg::io::first_content_line(path) == "voxmap v1"; }

std::vector<std::string> scan_files(const std::string& path) {
  if (!fs::is_directory(path)) {
    return {path};
  }
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(path)) {
    if (entry.is_regular_file() && entry.path().extension() == ".csv") {
      files.push_back(entry.path().string());
    }
  }
  std::sort(files.begin(), files.end());
  return files;
}

// ---------------------------------------------------------------------------

struct BuildMapArgs {
  std::string cloud;
  std::string out;
  std::string config;
  double voxel_size = 0.0;
  int min_points = 0;
};

int cmd_build_map(const BuildMapArgs& a, int threads) {
  ctreg::PipelineConfig cfg;
  if (!a.config.empty()) cfg = ctreg::load_pipeline_config(a.config);
  if (a.voxel_size > 0.0) cfg.voxel_size = a.voxel_size;
  if (a.min_points > 0) cfg.plane.min_points = a.min_points;

  const auto cloud = ctreg::io::read_xyz(a.cloud);
  ctreg::MapBuildStats stats;
  const auto map = ctreg::build_map(cloud, cfg.voxel_size, cfg.plane, threads, &stats);
  ctreg::io::write_voxmap(a.out, map);
  std::cout << "points " << stats.input_points << "\n"
            << "occupied voxels " << stats.occupied_voxels << "\n"
            << "accepted voxels " << stats.accepted_voxels << "\n"
            << "rejected too-few-points " << stats.rejected_too_few << "\n"
            << "rejected degenerate " << stats.rejected_degenerate << "\n"
            << "rejected low-planarity " << stats.rejected_planarity << "\n"
            << "rejected high-residual " << stats.rejected_residual << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct RegisterArgs {
  std::string map;
  std::string scans;
  std::string imu;
  std::string priors;
  std::string config;
  std::string out_spline;
  std::string report;
  double knot_interval = 0.0;
  int spline_order = 0;
  int max_outer = 0;
  bool no_prealign = false;
};

int cmd_register(const RegisterArgs& a, int threads) {
  ctreg::PipelineConfig cfg;
  if (!a.config.empty()) cfg = ctreg::load_pipeline_config(a.config);
  if (a.knot_interval > 0.0) cfg.knot_interval = a.knot_interval;
  if (a.spline_order > 0) cfg.spline_order = a.spline_order;
  if (a.max_outer > 0) cfg.solver.max_outer_loops = a.max_outer;
  if (a.no_prealign) cfg.solver.prealign = false;
  cfg.solver.threads = threads;
  if (!a.scans.empty() && a.map.empty()) {
    throw UsageError("--scans requires --map");
  }

  ctreg::MeasurementSet ms;
  const auto prior_samples = ctreg::io::read_trajectory_tum(a.priors);
  for (const auto& s : prior_samples) ms.priors.push_back({s.t, s.pose});
  if (!a.imu.empty()) ms.imu = ctreg::io::read_imu_csv(a.imu);

  std::size_t gated = 0;
  if (!a.scans.empty()) {
    for (const auto& file : scan_files(a.scans)) {
      auto scan = ctreg::io::read_scan_csv(file, cfg.range_min, cfg.range_max);
      gated += scan.gated_out;
      ms.scans.push_back(std::move(scan.points));
    }
  }

  ctreg::VoxelMap map(cfg.voxel_size);
  if (!a.map.empty()) {
    if (is_voxmap_file(a.map)) {
      map = ctreg::io::read_voxmap(a.map);
    } else {
      const auto cloud = ctreg::io::read_xyz(a.map);
      map = ctreg::build_map(cloud, cfg.voxel_size, cfg.plane, threads);
    }
  }

  const auto init = ctreg::fit_from_poses(prior_samples, cfg.knot_interval, cfg.spline_order);
  const auto result = ctreg::solve_registration(ms, map, init, cfg.weights, cfg.world, cfg.solver);
  const auto& r = result.report;

  ctreg::io::write_spline(a.out_spline, result.trajectory);

  if (!a.report.empty()) {
    json stages = json::array();
    for (const auto& s : r.stages) {
      stages.push_back(json{{"name", s.name},
                            {"matched_points", s.matched_points},
                            {"unchanged_fraction", s.unchanged_fraction},
                            {"iterations", s.iterations},
                            {"termination", ctreg::to_string(s.termination)},
                            {"cost_before", s.before.total()},
                            {"cost_after", s.after.total()}});
    }
    const json doc{
        {"converged", r.converged},
        {"termination", ctreg::to_string(r.termination)},
        {"iterations", r.iterations},
        {"outer_loops", r.outer_loops},
        {"initial_cost", to_json(r.initial)},
        {"final_cost", to_json(r.final)},
        {"whitened_rms", r.whitened_rms},
        {"bias", json{{"gyro", to_json(result.bias.gyro)}, {"accel", to_json(result.bias.accel)}}},
        {"inputs",
         json{{"priors", ms.priors.size()},
              {"imu", ms.imu.size()},
              {"scans", ms.scans.size()},
              {"points", ms.num_points()},
              {"gated_points", gated},
              {"map_voxels", map.size()}}},
        {"dropped", json{{"priors", r.dropped_priors}, {"imu", r.dropped_imu}, {"points", r.dropped_points}}},
        {"associations", result.associations.size()},
        {"trajectory",
         json{{"t0", result.trajectory.t0()},
              {"dt", result.trajectory.dt()},
              {"order", result.trajectory.order()},
              {"knots", result.trajectory.num_knots()}}},
        {"stages", stages}};
    write_json(a.report, doc);
  }

  std::cout << "termination " << ctreg::to_string(r.termination) << "\n"
            << "iterations " << r.iterations << "\n"
            << "cost " << r.initial.total() << " -> " << r.final.total() << "\n"
            << "whitened rms " << r.whitened_rms << "\n";
  if (!r.converged) {
    std::cerr << "registration did not converge; best iterate written\n";
    return kExitDomain;
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct SampleArgs {
  std::string spline;
  double rate = 0.0;
  std::string times;
  std::string out;
};

int cmd_sample(const SampleArgs& a) {
  const auto traj = ctreg::io::read_spline(a.spline);
  const auto stamps = a.times.empty() ? ctreg::uniform_times(traj, a.rate) : ctreg::io::read_times(a.times);
  ctreg::io::write_trajectory_tum(a.out, traj.sample(stamps));
  std::cout << "poses " << stamps.size() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct DeskewArgs {
  std::string spline;
  std::string scan;
  std::string out;
  double ref_time = std::numeric_limits<double>::quiet_NaN();
  double range_min = 0.5;
  double range_max = 120.0;
};

int cmd_deskew(const DeskewArgs& a) {
  const auto traj = ctreg::io::read_spline(a.spline);
  const auto scan = ctreg::io::read_scan_csv(a.scan, a.range_min, a.range_max);
  if (scan.points.empty()) {
    throw std::invalid_argument("scan '" + a.scan + "' has no points inside the range gate");
  }
  const double ref = std::isnan(a.ref_time) ? scan.points.front().t : a.ref_time;
  const auto points = ctreg::deskew_scan(traj, scan.points, ref);
  ctreg::io::write_points_csv(a.out, std::vector<double>(points.size(), ref), points);
  std::cout << "points " << points.size() << "\n"
            << "gated " << scan.gated_out << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct EvaluateArgs {
  std::string est;
  std::string gt;
  std::string align = "se3";
  std::string out;
  double window = ctreg::kDefaultMatchWindow;
  bool verbose = false;
};

int cmd_evaluate(const EvaluateArgs& a) {
  const auto est = ctreg::io::read_trajectory_tum(a.est);
  const auto mode = ctreg::parse_align_mode(a.align);

  ctreg::AteReport rep;
  if (is_spline_file(a.gt)) {
    const auto gt = ctreg::io::read_spline(a.gt);
    rep = ctreg::compute_ate(est, &gt, mode, a.window);
  } else {
    const auto gt = ctreg::io::read_trajectory_tum(a.gt);
    rep = ctreg::compute_ate(est, &gt, mode, a.window);
  }

  if (!a.out.empty()) {
    const auto& T = rep.alignment.transform;
    json doc{{"align", ctreg::to_string(rep.align)},
             {"matched_pairs", rep.matched_pairs},
             {"rmse", rep.rmse},
             {"mean", rep.mean},
             {"median", rep.median},
             {"max", rep.max},
             {"rotation_rmse_deg", rep.rotation_rmse_deg},
             {"rotation_max_deg", rep.rotation_max_deg},
             {"alignment",
              json{{"rotation_wxyz", json::array({T.rotation.w(), T.rotation.x(), T.rotation.y(), T.rotation.z()})},
                   {"translation", to_json(T.position)},
                   {"scale", rep.alignment.scale}}}};
    if (a.verbose) {
      json pairs = json::array();
      for (const auto& p : rep.pairs) {
        pairs.push_back(json{{"t", p.t}, {"position_error", p.position_error}, {"rotation_error", p.rotation_error}});
      }
      doc["pairs"] = pairs;
    }
    write_json(a.out, doc);
  }
  std::cout << "pairs " << rep.matched_pairs << "\n"
            << "ate rmse " << rep.rmse << " m\n"
            << "ate max " << rep.max << " m\n"
            << "rotation max " << rep.rotation_max_deg << " deg\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct VelocityArgs {
  std::string spline;
  double rate = 100.0;
  double bin_width = 0.5;
  std::string histogram;
};

int cmd_velocity_stats(const VelocityArgs& a) {
  const auto traj = ctreg::io::read_spline(a.spline);
  const auto stats = ctreg::velocity_stats(traj, a.rate, a.bin_width);
  std::cout << "samples " << stats.samples << "\n"
            << "max_kmh " << ctreg::io::format_double(stats.max_kmh) << "\n"
            << "median_kmh " << ctreg::io::format_double(stats.median_kmh) << "\n";
  if (!a.histogram.empty()) {
    std::ofstream out(a.histogram, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw std::runtime_error("cannot open '" + a.histogram + "' for writing");
    }
    out << "bin_lo_kmh,bin_hi_kmh,count\n";
    for (std::size_t i = 0; i < stats.histogram.size(); ++i) {
      out << ctreg::io::format_double(i * stats.bin_width_kmh) << ","
          << ctreg::io::format_double((i + 1) * stats.bin_width_kmh) << "," << stats.histogram[i] << "\n";
    }
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct SimulateArgs {
  std::string config;
  std::string out_dir;
  std::int64_t seed = -1;
};

/// Registration weights matched to the simulated noise levels.
ctreg::PipelineConfig register_config_for(const ctreg::ScenarioSpec& spec) {
  ctreg::PipelineConfig cfg;
  if (spec.lidar_noise > 0.0) cfg.weights.lidar = spec.lidar_noise;
  if (spec.gyro_noise > 0.0) cfg.weights.gyro = spec.gyro_noise;
  if (spec.accel_noise > 0.0) cfg.weights.accel = spec.accel_noise;
  if (spec.prior_position_perturbation > 0.0) {
    cfg.weights.pose_pos = ctreg::Vec3::Constant(spec.prior_position_perturbation);
  }
  if (spec.prior_rotation_perturbation > 0.0) {
    cfg.weights.pose_rot = ctreg::Vec3::Constant(spec.prior_rotation_perturbation);
  }
  cfg.world.gravity = spec.gravity;
  cfg.knot_interval = spec.knot_interval;
  cfg.spline_order = spec.spline_order;
  cfg.range_min = spec.range_min;
  cfg.range_max = spec.range_max;
  return cfg;
}

int cmd_simulate(const SimulateArgs& a) {
  ctreg::ScenarioSpec spec;
  if (!a.config.empty()) spec = ctreg::load_scenario(a.config);
  if (a.seed >= 0) spec.seed = static_cast<std::uint64_t>(a.seed);
  spec.validate();

  const fs::path dir(a.out_dir);
  fs::create_directories(dir / "scans");
  for (const auto& entry : fs::directory_iterator(dir / "scans")) {
    if (entry.path().extension() == ".csv") fs::remove(entry.path());
  }

  const auto world = ctreg::make_world(spec);
  const auto truth = ctreg::make_trajectory(spec);
  std::vector<std::string> warnings;
  const auto ms = ctreg::simulate_measurements(truth, spec, &warnings);

  ctreg::io::write_xyz((dir / "map.xyz").string(), world);
  ctreg::io::write_spline((dir / "truth.spline").string(), truth);
  ctreg::io::write_imu_csv((dir / "imu.csv").string(), ms.imu);
  ctreg::TrajectorySamples priors;
  for (const auto& p : ms.priors) priors.push_back({p.t, p.pose});
  ctreg::io::write_trajectory_tum((dir / "priors.tum").string(), priors);
  for (std::size_t i = 0; i < ms.scans.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "scan_%06zu.csv", i);
    ctreg::io::write_scan_csv((dir / "scans" / name).string(), ms.scans[i]);
  }
  ctreg::write_scenario((dir / "scenario.ini").string(), spec);
  ctreg::write_pipeline_config((dir / "register.ini").string(), register_config_for(spec));

  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
  std::cout << "map points " << world.size() << "\n"
            << "scans " << ms.scans.size() << "\n"
            << "lidar points " << ms.num_points() << "\n"
            << "imu samples " << ms.imu.size() << "\n"
            << "priors " << ms.priors.size() << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continuous-time lidar-inertial registration against a prior map"};
  app.require_subcommand(1);
  app.fallthrough();
  int threads = 1;
  app.add_option("--threads", threads, "Worker thread cap; results do not depend on it")
      ->check(CLI::PositiveNumber);

  BuildMapArgs bm;
  auto* build_map = app.add_subcommand("build-map", "Fit per-voxel planes to a point cloud");
  build_map->add_option("--cloud", bm.cloud, "Input cloud, one 'x y z' per line")->required()->check(CLI::ExistingFile);
  build_map->add_option("--out", bm.out, "Output voxmap file")->required();
  build_map->add_option("--voxel-size", bm.voxel_size, "Voxel edge length in meters (default 0.4)")
      ->check(CLI::PositiveNumber);
  build_map->add_option("--min-points", bm.min_points, "Minimum points per voxel plane (default 6)")
      ->check(CLI::PositiveNumber);
  build_map->add_option("--config", bm.config, "Pipeline config file")->check(CLI::ExistingFile);

  RegisterArgs rg;
  auto* reg = app.add_subcommand("register", "Estimate a spline trajectory from priors, lidar and IMU");
  reg->add_option("--priors", rg.priors, "Pose priors, TUM format")->required()->check(CLI::ExistingFile);
  reg->add_option("--map", rg.map, "Prior map: voxmap file or 'x y z' cloud")->check(CLI::ExistingFile);
  reg->add_option("--scans", rg.scans, "Scan CSV file or directory of scan CSVs")->check(CLI::ExistingPath);
  reg->add_option("--imu", rg.imu, "IMU CSV")->check(CLI::ExistingFile);
  reg->add_option("--config", rg.config, "Pipeline config file")->check(CLI::ExistingFile);
  reg->add_option("--out-spline", rg.out_spline, "Output spline file")->required();
  reg->add_option("--report", rg.report, "Output JSON report");
  reg->add_option("--knot-interval", rg.knot_interval, "Knot spacing in seconds (default 0.1)")
      ->check(CLI::PositiveNumber);
  reg->add_option("--spline-order", rg.spline_order, "Spline order 2..6 (default 4)")->check(CLI::Range(2, 6));
  reg->add_option("--max-outer", rg.max_outer, "Association/solve loops (default 5)")->check(CLI::PositiveNumber);
  reg->add_flag("--no-prealign", rg.no_prealign, "Skip the priors+IMU stage before association");

  SampleArgs sa;
  auto* sample = app.add_subcommand("sample", "Sample a spline into a TUM trajectory");
  sample->add_option("--spline", sa.spline, "Input spline file")->required()->check(CLI::ExistingFile);
  auto* rate = sample->add_option("--rate", sa.rate, "Uniform sampling rate in Hz")->check(CLI::PositiveNumber);
  auto* times = sample->add_option("--times", sa.times, "File with one timestamp per line")->check(CLI::ExistingFile);
  rate->excludes(times);
  sample->add_option("--out", sa.out, "Output TUM file")->required();

  DeskewArgs dk;
  auto* deskew = app.add_subcommand("deskew", "Undistort a scan into the body frame at one reference time");
  deskew->add_option("--spline", dk.spline, "Trajectory spline file")->required()->check(CLI::ExistingFile);
  deskew->add_option("--scan", dk.scan, "Scan CSV")->required()->check(CLI::ExistingFile);
  deskew->add_option("--out", dk.out, "Output CSV")->required();
  deskew->add_option("--ref-time", dk.ref_time, "Reference time (default: first point time)");
  deskew->add_option("--range-min", dk.range_min, "Range gate lower bound in meters")->capture_default_str();
  deskew->add_option("--range-max", dk.range_max, "Range gate upper bound in meters")->capture_default_str();

  EvaluateArgs ev;
  auto* evaluate = app.add_subcommand("evaluate", "Absolute trajectory error against ground truth");
  evaluate->add_option("--est", ev.est, "Estimate, TUM format")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--gt", ev.gt, "Ground truth: spline file or TUM")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--align", ev.align, "Alignment: none, se3 or sim3")
      ->check(CLI::IsMember({"none", "se3", "sim3"}))
      ->capture_default_str();
  evaluate->add_option("--window", ev.window, "Time match window for TUM ground truth, seconds")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  evaluate->add_option("--out", ev.out, "Output JSON report");
  evaluate->add_flag("--verbose", ev.verbose, "Include per-pair errors in the report");

  VelocityArgs vs;
  auto* velocity = app.add_subcommand("velocity-stats", "Speed statistics of a spline");
  velocity->add_option("--spline", vs.spline, "Input spline file")->required()->check(CLI::ExistingFile);
  velocity->add_option("--rate", vs.rate, "Sampling rate in Hz")->check(CLI::PositiveNumber)->capture_default_str();
  velocity->add_option("--bin-width", vs.bin_width, "Histogram bin width in km/h")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  velocity->add_option("--histogram", vs.histogram, "Output histogram CSV");

  SimulateArgs sm;
  auto* simulate = app.add_subcommand("simulate", "Generate a synthetic scenario directory");
  simulate->add_option("--config", sm.config, "Scenario file")->check(CLI::ExistingFile);
  simulate->add_option("--out-dir", sm.out_dir, "Output directory")->required();
  simulate->add_option("--seed", sm.seed, "Override the scenario seed")->check(CLI::NonNegativeNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*build_map) return cmd_build_map(bm, threads);
    if (*reg) return cmd_register(rg, threads);
    if (*sample) {
      if (sa.times.empty() && !(sa.rate > 0.0)) throw UsageError("sample needs --rate or --times");
      return cmd_sample(sa);
    }
    if (*deskew) return cmd_deskew(dk);
    if (*evaluate) return cmd_evaluate(ev);
    if (*velocity) return cmd_velocity_stats(vs);
    if (*simulate) return cmd_simulate(sm);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ctreg::FileFormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDomain;
  } catch (const ctreg::DomainError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDomain;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDomain;
  }
  return kExitUsage;
}
