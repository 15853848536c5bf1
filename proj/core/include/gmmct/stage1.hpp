#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "gmmct/modes.hpp"
#include "gmmct/optim.hpp"
#include "gmmct/rng.hpp"

namespace gmmct {

/// Multi-start trajectory recovery settings.
struct Stage1Config {
  int n_trials = 20;
  Eigen::VectorXd init_mean;   // velocity sampling mean
  Eigen::MatrixXd init_cov;    // velocity sampling covariance (SPD)
  Eigen::VectorXd known_mu;    // shared launch point
  Eigen::VectorXd known_accel; // shared acceleration
  TrajectoryVariables variables = TrajectoryVariables::kVelocity;
  /// Per-round quasi-Newton budget. Kept short so the matching is re-solved
  /// often; descending to convergence against the first (random) matching
  /// overcommits trials to bad fixed points.
  MinimizeSettings optimizer{.max_iterations = 25};
  int max_assignment_rounds = 60;
  NewtonRefineSettings refine;
  /// Matched modes whose residual exceeds max(outlier_median_factor * median,
  /// outlier_pitch_floor * pitch) are dropped before the final polish; peaks
  /// merged by occlusion sit about a pitch off their track and would bias the
  /// least-squares fit.
  double outlier_median_factor = 4.0;
  double outlier_pitch_floor = 0.1;
  PeakConfig peaks;
  std::uint64_t seed = 0;

  void validate(int d) const;
};

struct TrajectoryEstimate {
  std::vector<TrajectoryParams> etas;
  double loss = 0.0;
  /// assignment[time][particle] = observed mode index at that time, or -1.
  std::vector<std::vector<int>> assignment;
  int trial_index = -1;
  bool converged = false;
};

struct Stage1TraceRow {
  int trial = 0;
  int round = 0;
  int iteration = 0;  // -1 on round-summary rows
  double loss = 0.0;
  double grad_norm = 0.0;
  double hausdorff = 0.0;  // exact set distance, round-summary rows only
};
using Stage1Trace = std::vector<Stage1TraceRow>;

/// n i.i.d. velocity draws from N(init_mean, init_cov); deterministic for a
/// given generator state.
std::vector<Eigen::VectorXd> sample_initial_trajectories(
    const Stage1Config& cfg, int n, Rng& rng);

/// Min-cost matching between predicted and observed modes, summed over time.
/// Per time index the rectangular assignment under squared Euclidean cost is
/// solved; times with fewer observations than particles leave the extra
/// predictions unmatched at zero cost. Throws when no time has observations.
struct AssignmentLossResult {
  double loss = 0.0;
  std::vector<std::vector<int>> assignment;  // [time][particle]
};

AssignmentLossResult assignment_loss(const std::vector<TrajectoryParams>& etas,
                                     const ModeSet& observed,
                                     const AcquisitionGeometry& geom);

/// Exact symmetric Hausdorff distance between observed and predicted mode
/// sets, summed over times with observations. Diagnostic only.
double hausdorff_diagnostic(const std::vector<TrajectoryParams>& etas,
                            const ModeSet& observed,
                            const AcquisitionGeometry& geom);

/// Full stage-1 pipeline on a detected mode set: multi-start sampling,
/// alternating assignment / quasi-Newton descent on the matched cost, best
/// terminal loss wins, then per-particle Gauss-Newton refinement with the
/// winning assignment.
TrajectoryEstimate optimize_trajectories(const ModeSet& observed,
                                         const AcquisitionGeometry& geom,
                                         const Stage1Config& cfg,
                                         int n_particles,
                                         Stage1Trace* trace = nullptr);

/// Convenience overload that runs detect_modes(cfg.peaks) first.
TrajectoryEstimate optimize_trajectories(const Sinogram& data,
                                         const Stage1Config& cfg,
                                         int n_particles,
                                         Stage1Trace* trace = nullptr);

}  // namespace gmmct
