#include "gmmct/geometry.hpp"

#include <cmath>
#include <string>

#include "gmmct/errors.hpp"

namespace gmmct {

void AcquisitionGeometry::validate() const {
  const int d = dim();
  if (d < 2) throw ConfigError("geometry: ambient dimension must be >= 2");
  if (detector_start.size() != d || detector_end.size() != d)
    throw DimensionError("geometry: source/detector dimension mismatch");
  if (num_detectors < 1) throw ConfigError("geometry: num_detectors must be >= 1");
  if (num_times < 1) throw ConfigError("geometry: num_times must be >= 1");
  if (!(t_min <= t_max)) throw ConfigError("geometry: t_min must be <= t_max");
  if (fixed_component_index < 0 || fixed_component_index >= d)
    throw ConfigError("geometry: fixed_component_index out of range");

  const double span = (detector_end - detector_start).norm();
  const double scale = std::max(1.0, span);

  // Source off the detector segment.
  if (span == 0.0) {
    if ((source - detector_start).norm() < 1e-12 * scale)
      throw ConfigError("geometry: source lies on the detector");
  } else {
    const Eigen::VectorXd dir = (detector_end - detector_start) / span;
    const Eigen::VectorXd rel = source - detector_start;
    const double along = rel.dot(dir);
    if (along >= -1e-12 * scale && along <= span + 1e-12 * scale &&
        (rel - along * dir).norm() < 1e-12 * scale)
      throw ConfigError("geometry: source lies on the detector segment");
  }

  // The pinned coordinate must be constant along the detector so that the
  // detector plane coordinate is well defined, and the source must be off
  // that plane so the mode-map scale factor stays finite and nonzero.
  const int fc = fixed_component_index;
  if (std::abs(detector_start[fc] - detector_end[fc]) > 1e-9 * scale)
    throw ConfigError(
        "geometry: fixed component varies along the detector (index " +
        std::to_string(fc) + ")");
  if (std::abs(source[fc] - detector_start[fc]) < 1e-12 * scale)
    throw ConfigError(
        "geometry: source and detector share the fixed component coordinate");
}

Eigen::VectorXd AcquisitionGeometry::detector_position(int index) const {
  return detector_position(static_cast<double>(index));
}

Eigen::VectorXd AcquisitionGeometry::detector_position(double index) const {
  if (num_detectors == 1) return detector_start;
  const double frac = index / static_cast<double>(num_detectors - 1);
  return detector_start + frac * (detector_end - detector_start);
}

double AcquisitionGeometry::time_sample(int index) const {
  if (num_times == 1) return t_min;
  return t_min + (t_max - t_min) * index / static_cast<double>(num_times - 1);
}

double AcquisitionGeometry::detector_pitch() const {
  if (num_detectors <= 1) return 0.0;
  return (detector_end - detector_start).norm() /
         static_cast<double>(num_detectors - 1);
}

double AcquisitionGeometry::detector_plane_coordinate() const {
  return detector_start[fixed_component_index];
}

Eigen::VectorXd trajectory(const TrajectoryParams& eta, double t) {
  if (eta.v.size() != eta.mu.size() || eta.a.size() != eta.mu.size())
    throw DimensionError("trajectory: mu/v/a dimension mismatch");
  return eta.mu + t * eta.v + (0.5 * t * t) * eta.a;
}

int trajectory_variable_dim(TrajectoryVariables vars, int d) {
  switch (vars) {
    case TrajectoryVariables::kVelocity:
      return d;
    case TrajectoryVariables::kVelocityPosition:
      return 2 * d;
    case TrajectoryVariables::kFull:
      return 3 * d;
  }
  throw ConfigError("unknown trajectory variable block");
}

Eigen::VectorXd trajectory_pack(const TrajectoryParams& eta,
                                TrajectoryVariables vars) {
  const int d = static_cast<int>(eta.v.size());
  Eigen::VectorXd x(trajectory_variable_dim(vars, d));
  x.head(d) = eta.v;
  if (vars != TrajectoryVariables::kVelocity) x.segment(d, d) = eta.mu;
  if (vars == TrajectoryVariables::kFull) x.segment(2 * d, d) = eta.a;
  return x;
}

void trajectory_unpack(const Eigen::VectorXd& x, TrajectoryVariables vars,
                       TrajectoryParams* eta) {
  const int d = static_cast<int>(eta->v.size());
  if (x.size() != trajectory_variable_dim(vars, d))
    throw DimensionError("trajectory_unpack: block length mismatch");
  eta->v = x.head(d);
  if (vars != TrajectoryVariables::kVelocity) eta->mu = x.segment(d, d);
  if (vars == TrajectoryVariables::kFull) eta->a = x.segment(2 * d, d);
}

namespace {

// Planes (d1, d2), 0-based, in ascending lexicographic order.
void plane_for_factor(int d, int k, int* d1, int* d2) {
  int idx = 0;
  for (int i = 0; i < d; ++i) {
    for (int j = i + 1; j < d; ++j) {
      if (idx == k) {
        *d1 = i;
        *d2 = j;
        return;
      }
      ++idx;
    }
  }
  throw DimensionError("rotation factor index out of range");
}

Eigen::MatrixXd planar_rotation(int d, int d1, int d2, double angle,
                                bool derivative) {
  Eigen::MatrixXd r = derivative
                          ? Eigen::MatrixXd(Eigen::MatrixXd::Zero(d, d))
                          : Eigen::MatrixXd(Eigen::MatrixXd::Identity(d, d));
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  if (!derivative) {
    r(d1, d1) = c;
    r(d2, d2) = c;
    r(d1, d2) = -s;
    r(d2, d1) = s;
  } else {
    r(d1, d1) = -s;
    r(d2, d2) = -s;
    r(d1, d2) = -c;
    r(d2, d1) = c;
  }
  return r;
}

}  // namespace

Eigen::MatrixXd rotation_matrix(const Eigen::VectorXd& omega, int d) {
  if (omega.size() != rotation_dim(d))
    throw DimensionError("rotation_matrix: omega must have length d(d-1)/2");
  Eigen::MatrixXd r = Eigen::MatrixXd::Identity(d, d);
  for (int k = 0; k < rotation_dim(d); ++k) {
    int d1, d2;
    plane_for_factor(d, k, &d1, &d2);
    r = r * planar_rotation(d, d1, d2, omega[k], false);
  }
  return r;
}

Eigen::MatrixXd rotation_matrix_derivative(const Eigen::VectorXd& omega, int d,
                                           int k) {
  if (omega.size() != rotation_dim(d))
    throw DimensionError("rotation_matrix_derivative: omega length mismatch");
  if (k < 0 || k >= rotation_dim(d))
    throw DimensionError("rotation_matrix_derivative: factor index");
  Eigen::MatrixXd r = Eigen::MatrixXd::Identity(d, d);
  for (int i = 0; i < rotation_dim(d); ++i) {
    int d1, d2;
    plane_for_factor(d, i, &d1, &d2);
    r = r * planar_rotation(d, d1, d2, omega[i], i == k);
  }
  return r;
}

DimensionCheck dimension_criterion(int d, std::int64_t n_particles,
                                   std::int64_t num_sources,
                                   std::int64_t num_detectors,
                                   std::int64_t num_times) {
  if (d < 1 || n_particles < 1 || num_sources < 1 || num_detectors < 1 ||
      num_times < 1)
    throw ConfigError("dimension_criterion: all inputs must be positive");
  const std::int64_t dd = d;
  const std::int64_t params_per_particle = dd * dd + 3 * dd + 1;
  const std::int64_t data_per_sample = 2 * dd + 1;
  const std::int64_t need = params_per_particle * n_particles;
  const std::int64_t per_time = data_per_sample * num_sources * num_detectors;
  DimensionCheck out;
  out.minimal_num_times = std::max<std::int64_t>(1, (need + per_time - 1) / per_time);
  out.satisfied = per_time * num_times >= need;
  return out;
}

}  // namespace gmmct
