#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "gmmct/model.hpp"
#include "gmmct/optim.hpp"

namespace gmmct {

/// Rotation/morphology recovery settings.
struct Stage2Config {
  /// Absolute Huber threshold; 0 means huber_delta_fraction * max sinogram
  /// value, resolved once the data is seen.
  double huber_delta = 0.0;
  double huber_delta_fraction = 0.1;
  int n_rot_grid = 200;
  double omega_min = 2.0;
  double omega_max = 6.0;
  int n_morph_trials = 3;
  MinimizeSettings optimizer{.max_iterations = 500};
  /// Warm-start scan: candidate angular velocities per rotation coordinate,
  /// each scored by a short shape fit against the peeled residual.
  int n_init_candidates = 16;
  int init_fit_iterations = 40;
  std::uint64_t seed = 0;
  /// Placeholder morphology: diag(init_u_diag) plus a strictly upper
  /// triangular Gaussian perturbation, and a flat attenuation.
  Eigen::VectorXd init_u_diag;
  double init_u_offdiag_std = 1.0;
  double init_alpha = 12.5;

  void validate(int d) const;
  double effective_delta(const Sinogram& data) const;
};

struct MorphologyEstimate {
  std::vector<Eigen::VectorXd> thetas;
  std::vector<double> alphas;
  std::vector<Eigen::MatrixXd> us;
  double loss = 0.0;
  int trial_index = -1;
  bool converged = false;
  double huber_delta = 0.0;  // the resolved threshold
};

struct Stage2TraceRow {
  int trial = 0;
  int iteration = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
};
using Stage2Trace = std::vector<Stage2TraceRow>;

/// Quadratic inside [-delta, delta], linear with matched slope outside.
double huber(double u, double delta);
double huber_derivative(double u, double delta);

/// Mean Huber misfit over the sinogram grid with trajectories frozen,
/// together with its analytic gradient with respect to the raw parameters,
/// packed per particle as [alpha, row-major upper-triangular U, theta].
struct Stage2ObjectiveResult {
  double loss = 0.0;
  Eigen::VectorXd gradient;
};

Stage2ObjectiveResult stage2_objective(
    const std::vector<Eigen::VectorXd>& thetas,
    const std::vector<double>& alphas,
    const std::vector<Eigen::MatrixXd>& us,
    const std::vector<TrajectoryParams>& etas_fixed, const Sinogram& data,
    const Stage2Config& cfg);

/// Number of stage-2 variables per particle: alpha + triu(U) + theta.
inline int stage2_particle_dim(int d) {
  return 1 + shape_dim(d) + rotation_dim(d);
}

/// Coordinate-wise scan of particle n's angular velocity over an equally
/// spaced grid, minimizing the l2 misfit of the residual sinogram (all other
/// particles' current contributions subtracted). The particle's placeholder
/// shape must be anisotropic (diagonal ratio >= 1.01) or the scan is
/// rejected. Ties break toward the smaller grid value.
Eigen::VectorXd grid_search_rotation(int n, const Scene& current_scene,
                                     const Sinogram& data,
                                     const Stage2Config& cfg);

/// Non-negative least-squares attenuations: column n of the design matrix is
/// particle n's full unit-attenuation sinogram.
struct AttenuationInit {
  Eigen::VectorXd alphas;
  bool degenerate = false;
};

AttenuationInit nnls_attenuation(const Scene& scene_with_unit_alphas,
                                 const Sinogram& data);

/// Full stage-2 pipeline: placeholder morphology, rotation grid search,
/// NNLS attenuations, then n_morph_trials quasi-Newton descents on the Huber
/// objective over (theta, alpha, U) jointly. Trial 1 warm-starts from the
/// initialization; later trials redraw theta uniformly in the grid window.
/// Positivity of alpha and diag(U) is kept by a softplus reparameterization.
MorphologyEstimate optimize_morphology(
    const std::vector<TrajectoryParams>& etas_fixed, const Sinogram& data,
    const Stage2Config& cfg, Stage2Trace* trace = nullptr);

}  // namespace gmmct
