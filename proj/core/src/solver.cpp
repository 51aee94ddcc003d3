#include <ctreg/estimation.hpp>
#include <ctreg/parallel.hpp>

#include <cmath>
#include <stdexcept>

#include <Eigen/Cholesky>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

namespace ctreg {

namespace {

using Mat6 = Eigen::Matrix<double, 6, 6>;
using SpMat = Eigen::SparseMatrix<double>;

constexpr double kZeroCost = 1e-20;
constexpr double kMinLambda = 1e-15;
constexpr double kDampingFloor = 1e-9;

/// Block-banded Gauss-Newton system: knot blocks couple within `order` neighbors, the bias couples to all.
class NormalEquations {
public:
  NormalEquations(int num_knots, int order)
      : n_(num_knots), k_(order), band_(static_cast<std::size_t>(num_knots) * order), cross_(num_knots) {
    reset();
  }

  int dim() const { return 6 * n_ + 6; }
  int bias_offset() const { return 6 * n_; }
  const Eigen::VectorXd& gradient() const { return g_; }

  void reset() {
    for (auto& b : band_) b.setZero();
    for (auto& b : cross_) b.setZero();
    bias_.setZero();
    g_ = Eigen::VectorXd::Zero(dim());
  }

  template <int Dim>
  void add(const LinearizedFactor<Dim>& f, double weight) {
    for (int a = 0; a < f.order; ++a) {
      const int ka = f.first_knot + a;
      g_.segment<6>(6 * ka) += weight * f.d_knot[a].transpose() * f.residual;
      for (int b = a; b < f.order; ++b) {
        band_[static_cast<std::size_t>(ka) * k_ + (b - a)] += weight * f.d_knot[a].transpose() * f.d_knot[b];
      }
      if (f.uses_bias) {
        cross_[ka] += weight * f.d_bias.transpose() * f.d_knot[a];
      }
    }
    if (f.uses_bias) {
      bias_ += weight * f.d_bias.transpose() * f.d_bias;
      g_.segment<6>(bias_offset()) += weight * f.d_bias.transpose() * f.residual;
    }
  }

  /// x^T H x
  double quadratic_form(const Eigen::VectorXd& x) const {
    double q = 0.0;
    for (int i = 0; i < n_; ++i) {
      const auto xi = x.segment<6>(6 * i);
      for (int d = 0; d < k_ && i + d < n_; ++d) {
        const double term = xi.dot(band_[static_cast<std::size_t>(i) * k_ + d] * x.segment<6>(6 * (i + d)));
        q += (d == 0) ? term : 2.0 * term;
      }
      q += 2.0 * x.segment<6>(bias_offset()).dot(cross_[i] * xi);
    }
    q += x.segment<6>(bias_offset()).dot(bias_ * x.segment<6>(bias_offset()));
    return q;
  }

  /// Solves (H + lambda diag(H)) x = -g. Returns false if the factorization fails.
  bool solve(double lambda, bool dense, Eigen::VectorXd& x) {
    return dense ? solve_dense(lambda, x) : solve_sparse(lambda, x);
  }

private:
  double damped(double diag, double lambda) const { return diag + lambda * (diag + kDampingFloor); }

  bool solve_dense(double lambda, Eigen::VectorXd& x) const {
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(dim(), dim());
    for (int i = 0; i < n_; ++i) {
      for (int d = 0; d < k_ && i + d < n_; ++d) {
        const Mat6& blk = band_[static_cast<std::size_t>(i) * k_ + d];
        h.block<6, 6>(6 * i, 6 * (i + d)) = blk;
        h.block<6, 6>(6 * (i + d), 6 * i) = blk.transpose();
      }
      h.block<6, 6>(bias_offset(), 6 * i) = cross_[i];
      h.block<6, 6>(6 * i, bias_offset()) = cross_[i].transpose();
    }
    h.block<6, 6>(bias_offset(), bias_offset()) = bias_;
    for (int i = 0; i < dim(); ++i) {
      h(i, i) = damped(h(i, i), lambda);
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(h);
    if (ldlt.info() != Eigen::Success) {
      return false;
    }
    x = ldlt.solve(-g_);
    return x.allFinite();
  }

  bool solve_sparse(double lambda, Eigen::VectorXd& x) {
    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(static_cast<std::size_t>(n_) * (36 * k_ + 36) + 36);
    // lower triangle only
    for (int i = 0; i < n_; ++i) {
      for (int d = 0; d < k_ && i + d < n_; ++d) {
        const Mat6& blk = band_[static_cast<std::size_t>(i) * k_ + d];
        for (int r = 0; r < 6; ++r) {
          for (int c = 0; c < 6; ++c) {
            const int row = 6 * (i + d) + r;
            const int col = 6 * i + c;
            if (row < col) continue;
            double v = blk(c, r);
            if (row == col) v = damped(v, lambda);
            triplets.emplace_back(row, col, v);
          }
        }
      }
      for (int r = 0; r < 6; ++r) {
        for (int c = 0; c < 6; ++c) {
          triplets.emplace_back(bias_offset() + r, 6 * i + c, cross_[i](r, c));
        }
      }
    }
    for (int r = 0; r < 6; ++r) {
      for (int c = 0; c <= r; ++c) {
        double v = bias_(r, c);
        if (r == c) v = damped(v, lambda);
        triplets.emplace_back(bias_offset() + r, bias_offset() + c, v);
      }
    }
    SpMat h(dim(), dim());
    h.setFromTriplets(triplets.begin(), triplets.end());
    if (!pattern_ready_) {
      sparse_.analyzePattern(h);
      pattern_ready_ = true;
    }
    sparse_.factorize(h);
    if (sparse_.info() != Eigen::Success) {
      return false;
    }
    x = sparse_.solve(-g_);
    return x.allFinite();
  }

  int n_;
  int k_;
  std::vector<Mat6> band_;   // block (i, i + d) at i * k + d
  std::vector<Mat6> cross_;  // bias rows x knot i columns
  Mat6 bias_;
  Eigen::VectorXd g_;
  Eigen::SimplicialLDLT<SpMat, Eigen::Lower> sparse_;
  bool pattern_ready_ = false;
};

struct Problem {
  const MeasurementSet& ms;
  std::span<const LidarMatch> matches;
  bool use_lidar;
  const FactorWeights& w;
  const WorldConstants& c;
  const SolverConfig& cfg;
};

/// IRLS weight so that weight * r^2 has the Huber gradient.
double huber_weight(double r, double delta) {
  const double a = std::abs(r);
  return a <= delta ? 1.0 : delta / a;
}

CostBreakdown linearize(const Problem& p, const SplineTrajectory& traj, const ImuBias& bias, NormalEquations& ne) {
  const auto& ms = p.ms;
  std::vector<std::optional<LinearizedFactor<6>>> pose(ms.priors.size());
  std::vector<std::optional<LinearizedFactor<1>>> lidar(p.use_lidar ? p.matches.size() : 0);
  std::vector<std::optional<LinearizedFactor<3>>> gyro(ms.imu.size());
  std::vector<std::optional<LinearizedFactor<3>>> accel(ms.imu.size());

  const std::size_t total = pose.size() + lidar.size() + gyro.size();
  parallel_for(total, p.cfg.threads, [&](std::size_t i) {
    if (i < pose.size()) {
      pose[i] = linearize_pose(traj, ms.priors[i], p.w);
      return;
    }
    i -= pose.size();
    if (i < lidar.size()) {
      lidar[i] = linearize_lidar(traj, p.matches[i].measurement, p.matches[i].plane, p.w);
      return;
    }
    i -= lidar.size();
    gyro[i] = linearize_gyro(traj, bias, ms.imu[i], p.w);
    accel[i] = linearize_acce(traj, bias, ms.imu[i], p.w, p.c);
  });

  // fixed accumulation order keeps the result independent of the thread count
  ne.reset();
  CostBreakdown cost;
  for (const auto& f : pose) {
    if (!f) continue;
    cost.pose.cost += f->residual.squaredNorm();
    ++cost.pose.count;
    ne.add(*f, 1.0);
  }
  for (const auto& f : lidar) {
    if (!f) continue;
    const double r = f->residual(0);
    cost.lidar.cost += huber_cost(r, p.cfg.huber_delta);
    ++cost.lidar.count;
    ne.add(*f, huber_weight(r, p.cfg.huber_delta));
  }
  for (const auto& f : gyro) {
    if (!f) continue;
    cost.gyro.cost += f->residual.squaredNorm();
    ++cost.gyro.count;
    ne.add(*f, 1.0);
  }
  for (const auto& f : accel) {
    if (!f) continue;
    cost.accel.cost += f->residual.squaredNorm();
    ++cost.accel.count;
    ne.add(*f, 1.0);
  }
  return cost;
}

CostBreakdown cost_only(const Problem& p, const SplineTrajectory& traj, const ImuBias& bias) {
  const auto& ms = p.ms;
  std::vector<double> pose(ms.priors.size(), -1.0);
  std::vector<double> lidar(p.use_lidar ? p.matches.size() : 0, -1.0);
  std::vector<double> gyro(ms.imu.size(), -1.0);
  std::vector<double> accel(ms.imu.size(), -1.0);

  const std::size_t total = pose.size() + lidar.size() + gyro.size();
  parallel_for(total, p.cfg.threads, [&](std::size_t i) {
    if (i < pose.size()) {
      if (const auto r = residual_pose(traj, ms.priors[i], p.w)) pose[i] = r->squaredNorm();
      return;
    }
    i -= pose.size();
    if (i < lidar.size()) {
      if (const auto r = residual_lidar(traj, p.matches[i].measurement, p.matches[i].plane, p.w)) {
        lidar[i] = huber_cost(*r, p.cfg.huber_delta);
      }
      return;
    }
    i -= lidar.size();
    if (const auto r = residual_gyro(traj, bias, ms.imu[i], p.w)) gyro[i] = r->squaredNorm();
    if (const auto r = residual_acce(traj, bias, ms.imu[i], p.w, p.c)) accel[i] = r->squaredNorm();
  });

  CostBreakdown cost;
  auto sum = [](const std::vector<double>& v, FamilyCost& out) {
    for (const double x : v) {
      if (x < 0.0) continue;
      out.cost += x;
      ++out.count;
    }
  };
  sum(pose, cost.pose);
  sum(lidar, cost.lidar);
  sum(gyro, cost.gyro);
  sum(accel, cost.accel);
  return cost;
}

void apply_step(SplineTrajectory& traj, ImuBias& bias, const Eigen::VectorXd& step) {
  for (int j = 0; j < traj.num_knots(); ++j) {
    traj.rot_knot(j) = traj.rot_knots()[j] * rot_exp(step.segment<3>(6 * j));
    traj.pos_knot(j) += step.segment<3>(6 * j + 3);
  }
  const int b = 6 * traj.num_knots();
  bias.gyro += step.segment<3>(b);
  bias.accel += step.segment<3>(b + 3);
}

bool is_converged(Termination t) {
  return t == Termination::kCostTolerance || t == Termination::kStepTolerance || t == Termination::kZeroCost;
}

StageReport run_levenberg_marquardt(const Problem& p, SplineTrajectory& traj, ImuBias& bias) {
  const SolverConfig& cfg = p.cfg;
  StageReport stage;
  NormalEquations ne(traj.num_knots(), traj.order());
  const bool dense = traj.num_knots() < cfg.dense_knot_limit;

  CostBreakdown current = linearize(p, traj, bias, ne);
  stage.before = current;
  if (current.residual_dims() == 0) {
    stage.after = current;
    stage.termination = Termination::kNoFactors;
    return stage;
  }

  double cost = current.total();
  double lambda = cfg.lambda_init;
  stage.termination = Termination::kMaxIterations;
  Eigen::VectorXd step;
  while (stage.iterations < cfg.max_inner_iterations) {
    if (cost <= kZeroCost) {
      stage.termination = Termination::kZeroCost;
      break;
    }
    ++stage.iterations;
    if (!ne.solve(lambda, dense, step)) {
      lambda *= cfg.lambda_factor;
      if (lambda > cfg.lambda_max) {
        stage.termination = Termination::kNoDecrease;
        break;
      }
      continue;
    }
    if (step.lpNorm<Eigen::Infinity>() <= cfg.step_tolerance) {
      stage.termination = Termination::kStepTolerance;
      break;
    }
    // predicted decrease of the Gauss-Newton model; nothing left to gain below tolerance
    const double predicted = -(2.0 * ne.gradient().dot(step) + ne.quadratic_form(step));
    if (predicted <= cfg.cost_tolerance * cost) {
      stage.termination = Termination::kCostTolerance;
      break;
    }

    SplineTrajectory candidate = traj;
    ImuBias candidate_bias = bias;
    apply_step(candidate, candidate_bias, step);
    const double candidate_cost = cost_only(p, candidate, candidate_bias).total();

    if (candidate_cost < cost) {
      const double relative = (cost - candidate_cost) / cost;
      traj = std::move(candidate);
      bias = candidate_bias;
      lambda = std::max(lambda / cfg.lambda_factor, kMinLambda);
      current = linearize(p, traj, bias, ne);
      cost = current.total();
      if (relative <= cfg.cost_tolerance) {
        stage.termination = Termination::kCostTolerance;
        break;
      }
    } else {
      lambda *= cfg.lambda_factor;
      if (lambda > cfg.lambda_max) {
        stage.termination = Termination::kNoDecrease;
        break;
      }
    }
  }
  stage.after = current;
  return stage;
}

std::vector<LidarMatch> associate_all(const SplineTrajectory& traj, const MeasurementSet& ms, const VoxelMap& map,
                                      const FactorWeights& w, const SolverConfig& cfg) {
  std::vector<std::vector<LidarMatch>> per_scan(ms.scans.size());
  parallel_for(ms.scans.size(), cfg.threads, [&](std::size_t s) {
    per_scan[s] = associate_scan(traj, ms.scans[s], map, w, cfg.association_gate, s);
  });
  std::vector<LidarMatch> out;
  for (auto& scan : per_scan) {
    out.insert(out.end(), scan.begin(), scan.end());
  }
  return out;
}

/// Fraction of the union of associated points whose voxel did not change.
double unchanged_fraction(std::span<const LidarMatch> prev, std::span<const LidarMatch> cur) {
  std::size_t i = 0;
  std::size_t j = 0;
  std::size_t both = 0;
  std::size_t same = 0;
  auto key_less = [](const LidarMatch& a, const LidarMatch& b) {
    return a.scan != b.scan ? a.scan < b.scan : a.point < b.point;
  };
  while (i < prev.size() && j < cur.size()) {
    if (key_less(prev[i], cur[j])) {
      ++i;
    } else if (key_less(cur[j], prev[i])) {
      ++j;
    } else {
      ++both;
      if (prev[i].voxel == cur[j].voxel) ++same;
      ++i;
      ++j;
    }
  }
  const std::size_t uni = prev.size() + cur.size() - both;
  return uni == 0 ? 1.0 : static_cast<double>(same) / static_cast<double>(uni);
}

}  // namespace

SolveResult solve_registration(const MeasurementSet& ms, const VoxelMap& map, const SplineTrajectory& init,
                               const FactorWeights& w, const WorldConstants& c, const SolverConfig& cfg,
                               const ImuBias& initial_bias) {
  w.validate();

  SolveReport report;
  std::size_t inside = 0;
  for (const auto& prior : ms.priors) {
    init.contains(prior.t) ? ++inside : ++report.dropped_priors;
  }
  for (const auto& s : ms.imu) {
    init.contains(s.t) ? ++inside : ++report.dropped_imu;
  }
  for (const auto& scan : ms.scans) {
    for (const auto& pt : scan) {
      init.contains(pt.t) ? ++inside : ++report.dropped_points;
    }
  }
  if (inside == 0) {
    throw std::invalid_argument("solve_registration: no measurement overlaps the initial trajectory domain");
  }

  SplineTrajectory traj = init;
  ImuBias bias = initial_bias;
  const bool has_points = ms.num_points() > 0;

  std::vector<LidarMatch> matches = associate_all(traj, ms, map, w, cfg);
  report.initial = evaluate_cost(traj, bias, ms, matches, w, c, cfg.huber_delta);

  if (cfg.prealign && !ms.imu.empty() && has_points) {
    const Problem p{ms, {}, false, w, c, cfg};
    StageReport stage = run_levenberg_marquardt(p, traj, bias);
    stage.name = "prealign";
    report.iterations += stage.iterations;
    report.stages.push_back(std::move(stage));
    matches = associate_all(traj, ms, map, w, cfg);
  }

  std::vector<LidarMatch> previous;
  Termination last = Termination::kNoFactors;
  for (int loop = 1; loop <= cfg.max_outer_loops; ++loop) {
    if (loop > 1) {
      matches = associate_all(traj, ms, map, w, cfg);
    }
    const double unchanged = loop > 1 ? unchanged_fraction(previous, matches) : 0.0;

    const Problem p{ms, matches, true, w, c, cfg};
    StageReport stage = run_levenberg_marquardt(p, traj, bias);
    stage.name = "outer-" + std::to_string(loop);
    stage.matched_points = matches.size();
    stage.unchanged_fraction = unchanged;
    last = stage.termination;
    report.iterations += stage.iterations;
    report.outer_loops = loop;
    report.stages.push_back(std::move(stage));

    if (!has_points || (loop > 1 && unchanged >= cfg.stable_association_fraction)) {
      break;
    }
    previous = matches;
  }

  report.final = evaluate_cost(traj, bias, ms, matches, w, c, cfg.huber_delta);
  const std::size_t dims = report.final.residual_dims();
  report.whitened_rms = dims > 0 ? std::sqrt(report.final.total() / static_cast<double>(dims)) : 0.0;
  report.termination = last;
  report.converged = is_converged(last);

  return SolveResult{std::move(traj), bias, std::move(report), std::move(matches)};
}

}  // namespace ctreg
