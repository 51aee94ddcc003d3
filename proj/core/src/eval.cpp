#include <ctreg/eval.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include <Eigen/SVD>

namespace ctreg {

namespace {

constexpr double kMpsToKmh = 3.6;

double median_of(std::vector<double> values) {
  if (values.empty()) {
    return 0.0;
  }
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + mid, values.end());
  const double upper = values[mid];
  if (values.size() % 2 == 1) {
    return upper;
  }
  const double lower = *std::max_element(values.begin(), values.begin() + mid);
  return 0.5 * (lower + upper);
}

const StampedPose* nearest(const TrajectorySamples& samples, double t, double window) {
  const auto it = std::lower_bound(samples.begin(), samples.end(), t,
                                   [](const StampedPose& p, double value) { return p.t < value; });
  const StampedPose* best = nullptr;
  double best_dt = window;
  if (it != samples.end() && std::abs(it->t - t) <= best_dt) {
    best = &*it;
    best_dt = std::abs(it->t - t);
  }
  if (it != samples.begin()) {
    const auto prev = it - 1;
    if (std::abs(prev->t - t) <= best_dt) {
      best = &*prev;
    }
  }
  return best;
}

}  // namespace

AlignMode parse_align_mode(const std::string& s) {
  if (s == "none") return AlignMode::kNone;
  if (s == "se3") return AlignMode::kSe3;
  if (s == "sim3") return AlignMode::kSim3;
  throw std::invalid_argument("unknown alignment mode '" + s + "' (expected none|se3|sim3)");
}

std::string to_string(AlignMode mode) {
  switch (mode) {
    case AlignMode::kNone: return "none";
    case AlignMode::kSe3: return "se3";
    case AlignMode::kSim3: return "sim3";
  }
  return "none";
}

Alignment umeyama_align(std::span<const Vec3> est, std::span<const Vec3> ref, bool with_scale) {
  if (est.size() != ref.size()) {
    throw std::invalid_argument("umeyama_align: point sets differ in length");
  }
  if (est.size() < 3) {
    throw std::invalid_argument("umeyama_align: need at least 3 point pairs");
  }
  const double n = static_cast<double>(est.size());
  Vec3 mean_est = Vec3::Zero();
  Vec3 mean_ref = Vec3::Zero();
  for (std::size_t i = 0; i < est.size(); ++i) {
    mean_est += est[i];
    mean_ref += ref[i];
  }
  mean_est /= n;
  mean_ref /= n;

  Mat3 cross = Mat3::Zero();
  Mat3 cov_est = Mat3::Zero();
  double var_est = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    const Vec3 de = est[i] - mean_est;
    const Vec3 dr = ref[i] - mean_ref;
    cross += dr * de.transpose();
    cov_est += de * de.transpose();
    var_est += de.squaredNorm();
  }
  cross /= n;
  cov_est /= n;
  var_est /= n;

  const Eigen::JacobiSVD<Mat3> est_svd(cov_est);
  const Vec3 spread = est_svd.singularValues();
  if (!(spread(0) > 0.0) || spread(1) <= 1e-12 * spread(0)) {
    throw std::invalid_argument("umeyama_align: degenerate (collinear or coincident) configuration");
  }

  const Eigen::JacobiSVD<Mat3> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 s = Mat3::Identity();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) {
    s(2, 2) = -1.0;
  }
  const Mat3 rot = svd.matrixU() * s * svd.matrixV().transpose();

  Alignment out;
  out.scale = with_scale ? (svd.singularValues().asDiagonal() * s).trace() / var_est : 1.0;
  out.transform.rotation = Rotation::from_matrix(rot);
  out.transform.position = mean_ref - out.scale * (rot * mean_est);
  return out;
}

AteReport compute_ate(const TrajectorySamples& est, GroundTruth gt, AlignMode mode, double match_window) {
  std::vector<double> stamps;
  std::vector<Pose> est_poses;
  std::vector<Pose> gt_poses;
  for (const auto& sample : est) {
    if (const auto* spline = std::get_if<const SplineTrajectory*>(&gt)) {
      if (!(*spline)->contains(sample.t)) continue;
      gt_poses.push_back((*spline)->pose_at(sample.t));
    } else {
      const StampedPose* match = nearest(*std::get<const TrajectorySamples*>(gt), sample.t, match_window);
      if (match == nullptr) continue;
      gt_poses.push_back(match->pose);
    }
    stamps.push_back(sample.t);
    est_poses.push_back(sample.pose);
  }
  if (est_poses.size() < 3) {
    throw std::invalid_argument("compute_ate: fewer than 3 time-matched pose pairs (" +
                                std::to_string(est_poses.size()) + ")");
  }

  AteReport report;
  report.align = mode;
  report.matched_pairs = est_poses.size();
  if (mode != AlignMode::kNone) {
    std::vector<Vec3> a;
    std::vector<Vec3> b;
    a.reserve(est_poses.size());
    b.reserve(est_poses.size());
    for (std::size_t i = 0; i < est_poses.size(); ++i) {
      a.push_back(est_poses[i].position);
      b.push_back(gt_poses[i].position);
    }
    report.alignment = umeyama_align(a, b, mode == AlignMode::kSim3);
  }

  std::vector<double> errors;
  errors.reserve(est_poses.size());
  double sum = 0.0;
  double sum_sq = 0.0;
  double rot_sum_sq = 0.0;
  for (std::size_t i = 0; i < est_poses.size(); ++i) {
    const Vec3 aligned = report.alignment.apply(est_poses[i].position);
    const double e = (aligned - gt_poses[i].position).norm();
    const Rotation aligned_rot = report.alignment.transform.rotation * est_poses[i].rotation;
    const double re = rotation_angle_between(gt_poses[i].rotation, aligned_rot);
    errors.push_back(e);
    sum += e;
    sum_sq += e * e;
    rot_sum_sq += re * re;
    report.max = std::max(report.max, e);
    report.rotation_max_deg = std::max(report.rotation_max_deg, re * 180.0 / std::numbers::pi);
    report.pairs.push_back(MatchedPair{stamps[i], e, re});
  }
  const double n = static_cast<double>(errors.size());
  report.mean = sum / n;
  report.rmse = std::sqrt(sum_sq / n);
  report.rotation_rmse_deg = std::sqrt(rot_sum_sq / n) * 180.0 / std::numbers::pi;
  report.median = median_of(std::move(errors));
  return report;
}

std::vector<double> uniform_times(const SplineTrajectory& traj, double rate_hz) {
  if (!(rate_hz > 0.0) || !std::isfinite(rate_hz)) {
    throw std::invalid_argument("sampling rate must be > 0");
  }
  std::vector<double> times;
  for (std::size_t i = 0;; ++i) {
    const double t = traj.begin_time() + static_cast<double>(i) / rate_hz;
    if (!traj.contains(t)) break;
    times.push_back(t);
  }
  return times;
}

VelocityStats velocity_stats(const SplineTrajectory& traj, double rate_hz, double bin_width_kmh) {
  if (!(bin_width_kmh > 0.0)) {
    throw std::invalid_argument("histogram bin width must be > 0");
  }
  VelocityStats stats;
  stats.bin_width_kmh = bin_width_kmh;
  std::vector<double> speeds;
  for (const double t : uniform_times(traj, rate_hz)) {
    speeds.push_back(traj.velocity_world(t).norm() * kMpsToKmh);
  }
  stats.samples = speeds.size();
  if (speeds.empty()) {
    return stats;
  }
  stats.max_kmh = *std::max_element(speeds.begin(), speeds.end());
  stats.histogram.assign(static_cast<std::size_t>(std::floor(stats.max_kmh / bin_width_kmh)) + 1, 0);
  for (const double v : speeds) {
    const auto bin = std::min(static_cast<std::size_t>(std::floor(v / bin_width_kmh)), stats.histogram.size() - 1);
    ++stats.histogram[bin];
  }
  stats.median_kmh = median_of(std::move(speeds));
  return stats;
}

}  // namespace ctreg
