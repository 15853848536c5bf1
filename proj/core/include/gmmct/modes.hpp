#pragma once

#include <vector>

#include <Eigen/Dense>

#include "gmmct/geometry.hpp"
#include "gmmct/model.hpp"

namespace gmmct {

struct PeakConfig {
  /// Peaks whose prominence falls below this fraction of the column maximum
  /// are discarded.
  double prominence_fraction = 0.01;
  /// Among surviving peaks, lower ones closer than this many bins to a
  /// higher peak are discarded.
  int min_separation_bins = 3;
  /// Hard cap per time column (highest peaks win).
  int max_peaks = 8;
};

/// One local maximum of a sinogram time column.
struct ModeEntry {
  int detector_index = 0;
  /// detector_index plus the parabolic sub-bin offset (at most half a bin).
  double refined_index = 0.0;
  Eigen::VectorXd position;  // point on the detector segment
  double value = 0.0;        // sinogram value at the peak bin
};

/// Detected modes per time index; lists may be empty (flat columns) or
/// shorter than the particle count (occlusion).
struct ModeSet {
  std::vector<std::vector<ModeEntry>> per_time;

  int num_times() const { return static_cast<int>(per_time.size()); }
  bool all_empty() const;
  int total_count() const;
};

/// Interior strict local maxima per time column, filtered by prominence and
/// minimum separation, with sub-bin positions from a three-point parabola on
/// log values. Entries are sorted by detector index.
ModeSet detect_modes(const Sinogram& g, const PeakConfig& cfg = {});

/// Predicted detector-space mode of a particle with trajectory eta at time t:
/// the intersection of the ray through source and C[eta](t) with the detector
/// plane. Independent of the particle's shape, attenuation and rotation.
/// Throws DegenerateGeometryError when the trajectory point is level with the
/// source in the pinned coordinate (|denominator| < 1e-12).
Eigen::VectorXd mode_map(const TrajectoryParams& eta, double t,
                         const AcquisitionGeometry& geom);

/// d mode_map / d (mu, v, a), a d x 3d matrix with columns ordered mu, v, a.
Eigen::MatrixXd mode_map_jacobian(const TrajectoryParams& eta, double t,
                                  const AcquisitionGeometry& geom);

struct NewtonRefineSettings {
  int max_iterations = 50;
  double step_tolerance = 1e-12;
  /// The fit is flagged when the RMS mode residual stays above this many
  /// detector pitches (inconsistent assignments cannot fit to sub-pitch).
  double residual_warn_pitch_fraction = 0.5;
};

struct RefineResult {
  TrajectoryParams eta;
  bool converged = false;  // false both on iteration exhaustion and bad fit
  double residual_norm = 0.0;
  int iterations = 0;
};

/// Gauss-Newton polish of one particle's trajectory against its assigned
/// observed modes. assigned[t] holds the mode index used at time t, or -1.
/// The residual norm never increases relative to eta_init; on failure to
/// converge within max_iterations the initial eta is returned flagged.
RefineResult newton_refine(const TrajectoryParams& eta_init,
                           const ModeSet& modes,
                           const std::vector<int>& assigned,
                           const AcquisitionGeometry& geom,
                           TrajectoryVariables vars = TrajectoryVariables::kVelocity,
                           const NewtonRefineSettings& settings = {});

}  // namespace gmmct
