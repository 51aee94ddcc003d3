#include <gtest/gtest.h>

#include <ctreg/config.hpp>
#include <ctreg/io.hpp>
#include <ctreg/synth.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "../support/cli_runner.hpp"

namespace ctreg {
namespace {

namespace fs = std::filesystem;
using testing::output_value;

class CliTest : public ::testing::Test {
protected:
  void SetUp() override {
    dir_ = fs::path(::testing::TempDir()) /
           ("ctreg_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  testing::CliResult run(const std::string& args) {
    return testing::run_cli(CTREG_CLI_PATH, args, dir_ / ("out" + std::to_string(calls_++) + ".txt"));
  }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  std::string write(const std::string& name, const std::string& content) const {
    std::ofstream(path(name)) << content;
    return path(name);
  }

  std::string straight_spline(double speed, double duration) const {
    std::vector<Rotation> rots;
    std::vector<Vec3> pos;
    const int knots = static_cast<int>(std::round(duration / 0.1)) + 3;
    for (int j = 0; j < knots; ++j) {
      rots.emplace_back();
      pos.emplace_back(speed * 0.1 * (j - 1), 0.0, 1.0);
    }
    io::write_spline(path("line.spline"), SplineTrajectory(0.0, 0.1, 4, rots, pos));
    return path("line.spline");
  }

  static std::size_t count_poses(const std::string& tum) {
    return io::read_trajectory_tum(tum).size();
  }

  fs::path dir_;
  int calls_ = 0;
};

const char* const kSubcommands[] = {"build-map", "register", "sample", "deskew", "evaluate", "velocity-stats",
                                    "simulate"};

TEST_F(CliTest, HelpExitsZero) {
  EXPECT_EQ(run("--help").exit_code, 0);
  for (const char* sub : kSubcommands) {
    const auto r = run(std::string(sub) + " --help");
    EXPECT_EQ(r.exit_code, 0) << sub;
    EXPECT_NE(r.out.find("--"), std::string::npos) << sub;
  }
}

TEST_F(CliTest, UnknownFlagExitsTwo) {
  for (const char* sub : kSubcommands) {
    EXPECT_EQ(run(std::string(sub) + " --definitely-not-a-flag").exit_code, 2) << sub;
  }
  EXPECT_EQ(run("").exit_code, 2);
  EXPECT_EQ(run("frobnicate").exit_code, 2);
}

TEST_F(CliTest, MissingInputFileExitsTwo) {
  const auto priors = write("p.tum", "0 0 0 0 0 0 0 1\n1 0 0 0 0 0 0 1\n");
  EXPECT_EQ(run("register --priors " + priors + " --imu " + path("nope.csv") + " --out-spline " + path("o.spline"))
                .exit_code,
            2);
  EXPECT_EQ(run("register --imu " + priors + " --out-spline " + path("o.spline")).exit_code, 2);
}

TEST_F(CliTest, EmptyCloudExitsOne) {
  const auto cloud = write("empty.xyz", "# nothing\n");
  EXPECT_EQ(run("build-map --cloud " + cloud + " --out " + path("m.voxmap")).exit_code, 1);
}

TEST_F(CliTest, MalformedInputExitsOne) {
  const auto cloud = write("bad.xyz", "1 2 3\n4 5\n");
  const auto r = run("build-map --cloud " + cloud + " --out " + path("m.voxmap"));
  EXPECT_EQ(r.exit_code, 1);
  std::ifstream err(dir_ / "out0.txt.err");
  std::string msg((std::istreambuf_iterator<char>(err)), std::istreambuf_iterator<char>());
  EXPECT_NE(msg.find("bad.xyz:2"), std::string::npos) << msg;
}

TEST_F(CliTest, SampleAtRate) {
  const auto spline = straight_spline(1.0, 10.0);
  const auto r = run("sample --spline " + spline + " --rate 400 --out " + path("s.tum"));
  ASSERT_EQ(r.exit_code, 0);
  EXPECT_NEAR(static_cast<double>(count_poses(path("s.tum"))), 4000.0, 1.0);
}

TEST_F(CliTest, SampleAtGivenTimes) {
  const auto spline = straight_spline(1.0, 10.0);
  const auto times = write("t.txt", "0.5\n2.25\n9.0\n");
  ASSERT_EQ(run("sample --spline " + spline + " --times " + times + " --out " + path("s.tum")).exit_code, 0);
  const auto poses = io::read_trajectory_tum(path("s.tum"));
  ASSERT_EQ(poses.size(), 3u);
  EXPECT_NEAR(poses[1].pose.position.x(), 2.25, 1e-12);

  EXPECT_EQ(run("sample --spline " + spline + " --times " + times + " --rate 10 --out " + path("s.tum")).exit_code, 2);
  EXPECT_EQ(run("sample --spline " + spline + " --out " + path("s.tum")).exit_code, 2);
  const auto outside = write("late.txt", "0.5\n50\n");
  EXPECT_EQ(run("sample --spline " + spline + " --times " + outside + " --out " + path("s.tum")).exit_code, 1);
}

TEST_F(CliTest, EvaluateAgainstItself) {
  ScenarioSpec spec;
  spec.duration = 5.0;
  io::write_spline(path("fig8.spline"), make_trajectory(spec));
  const auto spline = path("fig8.spline");
  ASSERT_EQ(run("sample --spline " + spline + " --rate 50 --out " + path("s.tum")).exit_code, 0);
  for (const char* align : {"none", "se3", "sim3"}) {
    const auto r = run("evaluate --est " + path("s.tum") + " --gt " + spline + " --align " + align + " --out " +
                       path("ate.json"));
    ASSERT_EQ(r.exit_code, 0) << align;
    std::ifstream in(path("ate.json"));
    const auto doc = nlohmann::json::parse(in);
    EXPECT_LT(doc["rmse"].get<double>(), 1e-9) << align;
    EXPECT_EQ(doc["matched_pairs"].get<std::size_t>(), count_poses(path("s.tum")));
  }
  const auto tum_gt = run("evaluate --est " + path("s.tum") + " --gt " + path("s.tum") + " --verbose --out " +
                          path("ate.json"));
  ASSERT_EQ(tum_gt.exit_code, 0);
  EXPECT_LT(output_value(tum_gt.out, "ate rmse"), 1e-9);
  std::ifstream in(path("ate.json"));
  EXPECT_EQ(nlohmann::json::parse(in)["pairs"].size(), count_poses(path("s.tum")));
  EXPECT_EQ(run("evaluate --est " + path("s.tum") + " --gt " + spline + " --align affine").exit_code, 2);

  // a straight line leaves the rotation about its axis undetermined
  const auto line = straight_spline(2.0, 5.0);
  ASSERT_EQ(run("sample --spline " + line + " --rate 50 --out " + path("l.tum")).exit_code, 0);
  EXPECT_EQ(run("evaluate --est " + path("l.tum") + " --gt " + line + " --align none").exit_code, 0);
  EXPECT_EQ(run("evaluate --est " + path("l.tum") + " --gt " + line + " --align se3").exit_code, 1);
}

TEST_F(CliTest, VelocityStats) {
  const auto spline = straight_spline(5.0, 10.0);
  const auto r = run("velocity-stats --spline " + spline + " --histogram " + path("h.csv"));
  ASSERT_EQ(r.exit_code, 0);
  EXPECT_NEAR(output_value(r.out, "max_kmh"), 18.0, 1e-9);
  EXPECT_NEAR(output_value(r.out, "median_kmh"), 18.0, 1e-9);
  EXPECT_TRUE(fs::exists(path("h.csv")));
}

TEST_F(CliTest, DeskewOutsideDomainExitsOne) {
  const auto spline = straight_spline(1.0, 2.0);
  const auto scan = write("scan.csv", "t,x,y,z\n0.5,5,0,0\n0.6,5,1,0\n");
  ASSERT_EQ(run("deskew --spline " + spline + " --scan " + scan + " --out " + path("d.csv")).exit_code, 0);
  const auto late = write("late.csv", "t,x,y,z\n0.5,5,0,0\n7.0,5,1,0\n");
  EXPECT_EQ(run("deskew --spline " + spline + " --scan " + late + " --out " + path("d.csv")).exit_code, 1);
}

TEST_F(CliTest, SimulateAndRegisterSmallScenario) {
  ScenarioSpec spec;
  spec.duration = 3.0;
  spec.lidar_rate = 600.0;
  spec.map_density = 40.0;
  write_scenario(path("scenario.ini"), spec);
  const std::string out = path("sim");
  ASSERT_EQ(run("simulate --config " + path("scenario.ini") + " --out-dir " + out).exit_code, 0);
  for (const char* f : {"map.xyz", "truth.spline", "imu.csv", "priors.tum", "scenario.ini", "register.ini"}) {
    EXPECT_TRUE(fs::exists(fs::path(out) / f)) << f;
  }
  ASSERT_EQ(run("build-map --cloud " + out + "/map.xyz --out " + path("m.voxmap")).exit_code, 0);
  const auto r = run("--threads 2 register --priors " + out + "/priors.tum --map " + path("m.voxmap") + " --scans " +
                     out + "/scans --imu " + out + "/imu.csv --config " + out + "/register.ini --out-spline " +
                     path("est.spline") + " --report " + path("report.json"));
  ASSERT_EQ(r.exit_code, 0) << r.out;
  std::ifstream in(path("report.json"));
  const auto doc = nlohmann::json::parse(in);
  EXPECT_TRUE(doc["converged"].get<bool>());
  EXPECT_GT(doc["associations"].get<int>(), 500);
  EXPECT_EQ(run("register --priors " + out + "/priors.tum --scans " + out + "/scans --out-spline " +
                path("x.spline"))
                .exit_code,
            2);
}

}  // namespace
}  // namespace ctreg
