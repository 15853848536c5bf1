#pragma once

#include <cstdint>

#include <Eigen/Dense>

namespace gmmct {

/// Number of rotation parameters in dimension d: d(d-1)/2.
inline int rotation_dim(int d) { return d * (d - 1) / 2; }

/// Number of free entries of a d x d upper-triangular shape matrix: d(d+1)/2.
inline int shape_dim(int d) { return d * (d + 1) / 2; }

/// Fixed single-source fan geometry: one source point, M_r detector points
/// equally spaced from detector_start to detector_end inclusive, and M_t time
/// samples equally spaced on [t_min, t_max] inclusive.
struct AcquisitionGeometry {
  Eigen::VectorXd source;
  Eigen::VectorXd detector_start;
  Eigen::VectorXd detector_end;
  int num_detectors = 0;
  double t_min = 0.0;
  double t_max = 0.0;
  int num_times = 0;
  /// Coordinate pinned on the detector plane; it anchors the scale factor of
  /// the trajectory-to-mode map and must be constant along the detector.
  int fixed_component_index = 0;

  int dim() const { return static_cast<int>(source.size()); }

  /// Throws ConfigError / DimensionError when an invariant is violated.
  void validate() const;

  Eigen::VectorXd detector_position(int index) const;
  /// Position at fractional detector index (sub-bin interpolation).
  Eigen::VectorXd detector_position(double index) const;
  double time_sample(int index) const;
  /// Spacing between consecutive detector points.
  double detector_pitch() const;
  /// The constant fixed-component coordinate shared by all detector points.
  double detector_plane_coordinate() const;
};

/// Quadratic trajectory parameters: position mu at t=0, initial velocity v,
/// constant acceleration a.
struct TrajectoryParams {
  Eigen::VectorXd mu;
  Eigen::VectorXd v;
  Eigen::VectorXd a;
};

/// C[eta](t) = mu + t v + (t^2/2) a.
Eigen::VectorXd trajectory(const TrajectoryParams& eta, double t);

/// Which trajectory components are free during fitting. Launch point and
/// gravity are usually known, so the default everywhere is velocity only.
enum class TrajectoryVariables { kVelocity, kVelocityPosition, kFull };

int trajectory_variable_dim(TrajectoryVariables vars, int d);

/// Flattens the free block in the order v, then mu, then a.
Eigen::VectorXd trajectory_pack(const TrajectoryParams& eta,
                                TrajectoryVariables vars);

/// Writes the free block back; fixed components are left untouched.
void trajectory_unpack(const Eigen::VectorXd& x, TrajectoryVariables vars,
                       TrajectoryParams* eta);

/// Rotation in SO(d) as the ordered product of the d(d-1)/2 planar rotations,
/// factor k applied left to right with planes enumerated (1,2), (1,3), ...,
/// (1,d), (2,3), ... in ascending lexicographic order.
Eigen::MatrixXd rotation_matrix(const Eigen::VectorXd& omega, int d);

/// Partial derivative of rotation_matrix with respect to omega[k].
Eigen::MatrixXd rotation_matrix_derivative(const Eigen::VectorXd& omega, int d,
                                           int k);

/// Sampling-count check: (2d+1) * M_s * M_r * M_t >= (d^2+3d+1) * N.
/// Necessary for the parameter count not to exceed the data count; not
/// sufficient for invertibility (a single view never determines an arbitrary
/// object).
struct DimensionCheck {
  bool satisfied = false;
  std::int64_t minimal_num_times = 0;
};

DimensionCheck dimension_criterion(int d, std::int64_t n_particles,
                                   std::int64_t num_sources,
                                   std::int64_t num_detectors,
                                   std::int64_t num_times);

}  // namespace gmmct
