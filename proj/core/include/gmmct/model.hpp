#pragma once

#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "gmmct/geometry.hpp"

namespace gmmct {

/// One Gaussian particle. The density template is the fixed isotropic
/// Gaussian exp(-x.x); a particle is its affine orbit element
///   alpha * exp(-|U R_{t theta}^T (x - C[eta](t))|^2),
/// where U is upper triangular with positive diagonal (the canonical
/// representative, unique as the Cholesky factor of U^T U).
struct ParticleParams {
  double alpha = 1.0;
  Eigen::MatrixXd u;
  Eigen::VectorXd theta;
  TrajectoryParams eta;

  int dim() const { return static_cast<int>(u.rows()); }
  void validate() const;
};

/// Ordered collection of particles sharing one ambient dimension.
struct Scene {
  std::vector<ParticleParams> particles;

  int size() const { return static_cast<int>(particles.size()); }
  int dim() const;
  void validate() const;
};

/// Projection values over the full (detector, time) grid.
struct Sinogram {
  Eigen::MatrixXd values;  // num_detectors x num_times
  AcquisitionGeometry geometry;

  void validate() const;
};

/// Shape matrix and center of a particle frozen at time t:
/// u_eff = U R_{t theta}^T, center = C[eta](t).
struct EffectiveGaussian {
  Eigen::MatrixXd u;
  Eigen::VectorXd center;
};

EffectiveGaussian effective_gaussian(const ParticleParams& p, double t);

/// Closed-form ray transform of x -> exp(-|U (x - center)|^2) along the line
/// through source s and detector point r:
///   sqrt(pi)/|U u_hat| * exp(<U(r-s), U(s-center)>^2 / |U(r-s)|^2
///                            - |U(s-center)|^2),
/// with u_hat the unit direction of r-s. Throws DegenerateGeometryError when
/// r == s, NumericalError when U is singular along the ray direction.
double xray_gaussian(const Eigen::MatrixXd& u, const Eigen::VectorXd& center,
                     const Eigen::VectorXd& s, const Eigen::VectorXd& r);

/// Mixture projection: sum_n alpha_n * X(particle n at time t)[s, r].
double forward_operator(const Scene& scene, const Eigen::VectorXd& s,
                        const Eigen::VectorXd& r, double t);

/// Noiseless synthesis of the full sinogram grid for the scene.
Sinogram simulate_sinogram(const Scene& scene, const AcquisitionGeometry& geom);

/// Entries of one particle's gradient block, in order:
/// alpha, row-major upper-triangular U entries, theta components,
/// velocity components. (mu and a are treated as known constants.)
inline int particle_gradient_dim(int d) { return 1 + d * d + d; }

/// Forward value together with the full analytic parameter gradient, packed
/// per particle in the block layout of particle_gradient_dim.
std::pair<double, Eigen::VectorXd> forward_gradients(const Scene& scene,
                                                     const Eigen::VectorXd& s,
                                                     const Eigen::VectorXd& r,
                                                     double t);

namespace detail {

/// Per-(particle, time) factors reused across all detector positions at one
/// time sample.
struct ParticleTimeTerms {
  Eigen::MatrixXd v_eff;                   // U R^T
  Eigen::MatrixXd rot;                     // R_{t theta}
  Eigen::VectorXd center;                  // C[eta](t)
  std::vector<Eigen::MatrixXd> dv_dtheta;  // t * U * d(R^T)/d omega_k
  double t = 0.0;
};

ParticleTimeTerms particle_time_terms(const ParticleParams& p, double t,
                                      bool with_theta_derivatives);

/// Value of one particle's term alpha * X(...) at line (s, r). When grad is
/// non-null it receives weight * d(term)/d(alpha, triu U, theta, v) added
/// into grad[0 .. particle_gradient_dim(d)).
double particle_term(const ParticleParams& p, const ParticleTimeTerms& tt,
                     const double* s, const double* r, int d, double weight,
                     double* grad);

}  // namespace detail

/// Evaluates the forward model (and optionally accumulates parameter
/// gradients) over a fixed geometry grid, with all per-time factors
/// precomputed so per-entry evaluation is allocation-free. Thread-safe for
/// concurrent reads after construction.
class SinogramEvaluator {
 public:
  SinogramEvaluator(const Scene& scene, const AcquisitionGeometry& geom,
                    bool with_gradients);

  int gradient_dim() const { return grad_dim_; }

  double value(int det_index, int time_index) const;

  /// Returns the forward value at one grid entry; accumulates
  /// weight * dF/dparams into grad (length gradient_dim()).
  double value_and_accumulate(int det_index, int time_index, double weight,
                              double* grad) const;

 private:
  const Scene scene_;
  AcquisitionGeometry geom_;
  std::vector<std::vector<detail::ParticleTimeTerms>> terms_;  // [time][particle]
  std::vector<Eigen::VectorXd> detectors_;
  int grad_dim_ = 0;
  int per_particle_ = 0;
};

}  // namespace gmmct
