#pragma once

#include <span>
#include <string>
#include <variant>
#include <vector>

#include <ctreg/geometry.hpp>
#include <ctreg/trajectory.hpp>

namespace ctreg {

enum class AlignMode { kNone, kSe3, kSim3 };

AlignMode parse_align_mode(const std::string& s);
std::string to_string(AlignMode mode);

struct Alignment {
  Pose transform;
  double scale = 1.0;

  Vec3 apply(const Vec3& x) const { return scale * (transform.rotation * x) + transform.position; }
};

/**
 * Least-squares similarity (or rigid, without scale) transform minimizing
 * sum |s R est_i + p - ref_i|^2. Throws std::invalid_argument on length
 * mismatch, fewer than 3 points, or a collinear configuration.
 */
Alignment umeyama_align(std::span<const Vec3> est, std::span<const Vec3> ref, bool with_scale);

struct MatchedPair {
  double t = 0.0;
  double position_error = 0.0;  // m, after alignment
  double rotation_error = 0.0;  // rad, after alignment
};

struct AteReport {
  double rmse = 0.0;
  double mean = 0.0;
  double median = 0.0;
  double max = 0.0;
  double rotation_rmse_deg = 0.0;
  double rotation_max_deg = 0.0;
  std::size_t matched_pairs = 0;
  AlignMode align = AlignMode::kNone;
  Alignment alignment;
  std::vector<MatchedPair> pairs;
};

inline constexpr double kDefaultMatchWindow = 0.02;

/// Ground truth as a continuous spline (sampled exactly at estimate stamps) or discrete samples (nearest within window).
using GroundTruth = std::variant<const SplineTrajectory*, const TrajectorySamples*>;

/// Throws std::invalid_argument when fewer than 3 pairs overlap in time.
AteReport compute_ate(const TrajectorySamples& est, GroundTruth gt, AlignMode mode,
                      double match_window = kDefaultMatchWindow);

struct VelocityStats {
  double max_kmh = 0.0;
  double median_kmh = 0.0;
  double bin_width_kmh = 0.5;
  std::vector<std::size_t> histogram;  // bin i covers [i w, (i + 1) w)
  std::size_t samples = 0;
};

/// Speed |dp/dt| sampled at `rate_hz` over the whole domain.
VelocityStats velocity_stats(const SplineTrajectory& traj, double rate_hz, double bin_width_kmh = 0.5);

/// Stamps t0 + i / rate_hz strictly inside the spline domain.
std::vector<double> uniform_times(const SplineTrajectory& traj, double rate_hz);

}  // namespace ctreg
