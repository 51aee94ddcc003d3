#pragma once

#include <string>

#include <ctreg/estimation.hpp>
#include <ctreg/priormap.hpp>
#include <ctreg/synth.hpp>

namespace ctreg {

/// Every numeric default of the registration pipeline; CLI flags override.
struct PipelineConfig {
  FactorWeights weights;
  WorldConstants world;
  SolverConfig solver;
  double voxel_size = 0.4;
  PlaneFitParams plane;
  double knot_interval = kDefaultKnotInterval;
  int spline_order = kDefaultSplineOrder;
  double range_min = 0.5;
  double range_max = 120.0;
};

/**
 * INI-style key/value text, e.g.
 *
 *   [weights]
 *   pose_rot = 0.01          # one value or three
 *   lidar = 0.05
 *   [solver]
 *   lambda_init = 1e-4
 *
 * Sections: weights, map, spline, solver, world, lidar. Unknown sections or
 * keys are rejected so typos surface. Throws FileFormatError.
 */
PipelineConfig load_pipeline_config(const std::string& path);
void write_pipeline_config(const std::string& path, const PipelineConfig& cfg);

/// Sections: scenario, world, noise, rates, priors, lidar.
ScenarioSpec load_scenario(const std::string& path);
void write_scenario(const std::string& path, const ScenarioSpec& spec);

}  // namespace ctreg
