#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gmmct/errors.hpp"
#include "gmmct/model.hpp"
#include "gmmct/stage1.hpp"
#include "gmmct/stage2.hpp"

namespace gmmct {

class Stage1Error : public Error {
 public:
  using Error::Error;
};
class Stage2Error : public Error {
 public:
  using Error::Error;
};

/// Distributions and constraints for synthetic scene generation.
struct GenerationConfig {
  double attenuation_mean_base = 15.0;
  double attenuation_mean_step = 5.0;
  double attenuation_std = 1.0;
  double u_diag_min = 7.5;
  double u_diag_max = 25.5;
  double u_offdiag_mean = 10.0;
  double u_offdiag_std = 1.0;
  /// Minimum max/min diagonal ratio of U, enforced by rejection.
  double anisotropy_min_ratio = 1.5;
  double omega_min = 2.0;
  double omega_max = 6.0;
  /// Reject angular velocities whose per-projection displacement lands
  /// within this fraction of a half turn of a positive half-turn multiple
  /// (such rotations alias to invisibility at the sampling rate).
  double guard_band_fraction = 0.1;
  Eigen::VectorXd mu;     // shared known launch point
  Eigen::VectorXd accel;  // shared known acceleration
  /// Deterministic velocity list; when empty, velocities are sampled from
  /// N(velocity_mean, velocity_std^2 I) rejected until the first component
  /// is positive (particles must travel toward the detectors).
  std::vector<Eigen::VectorXd> velocities;
  Eigen::VectorXd velocity_mean;
  double velocity_std = 1.5;
  int rejection_budget = 10000;
};

struct ExperimentConfig {
  AcquisitionGeometry geometry;
  int n_particles = 5;
  GenerationConfig generation;
  Stage1Config stage1;
  Stage2Config stage2;
  std::uint64_t seed = 0;

  void validate() const;

  /// The stock 2-D experiment: source (-1, 1), vertical 128-point detector
  /// from (4, 1) to (4, -3), 150 samples on [0, 1.5] s, five particles with
  /// the stock deterministic velocity list.
  static ExperimentConfig defaults();
};

/// Draws a scene from the generation models, deterministic per seed. Every
/// rejection loop shares one budget; exhausting it raises NumericalError.
Scene generate_scene(const ExperimentConfig& cfg, std::uint64_t seed);

/// True when theta trips the aliasing guard band for the given sampling.
bool rotation_guard_band_rejects(const Eigen::VectorXd& theta, double dt,
                                 double guard_band_fraction);

struct RenderSettings {
  int resolution = 256;
  double half_width = 0.4;  // meters around the particle center
  double time = 0.0;
};

/// Particle density sampled on a square grid centered on the particle at
/// render time.
Eigen::MatrixXd render_particle(const ParticleParams& p,
                                const RenderSettings& settings);

struct ParticleMetrics {
  int truth_index = -1;
  int estimate_index = -1;
  double velocity_error_inf = 0.0;
  double theta_error_inf = 0.0;
  double alpha_rel_error = 0.0;
  /// Frobenius error of U^T U relative to truth (shape compared through the
  /// Gram matrix; raw U entries are only defined up to a rotation).
  double gram_rel_error = 0.0;
  double rendered_max_abs_error = 0.0;
};

struct MetricsReport {
  std::vector<ParticleMetrics> per_particle;
  std::string table;  // side-by-side parameter table, truth vs estimate
};

/// Matches estimated particles to truth through their projected mode tracks
/// (velocity matching as fallback) and reports per-particle errors.
MetricsReport metrics_report(const Scene& truth,
                             const std::vector<TrajectoryParams>& est_etas,
                             const MorphologyEstimate& est_morph,
                             const AcquisitionGeometry& geom,
                             const RenderSettings& render = {});

struct PipelineOptions {
  std::string out_dir;
  bool force = false;
  int stage = 0;  // 0 = both stages, 1 or 2 for a single stage
  /// When set, the sinogram is loaded from this file instead of simulated.
  std::string sinogram_path;
  /// Optional explicit ground truth (otherwise generated from the config
  /// when simulating).
  std::optional<Scene> truth_override;
};

struct PipelineResult {
  std::optional<Scene> truth;
  Sinogram sinogram;
  ModeSet modes;
  std::optional<TrajectoryEstimate> trajectory;
  std::optional<MorphologyEstimate> morphology;
  std::optional<MetricsReport> metrics;
};

/// Orchestrates simulate/load, mode detection, stage 1, stage 2 and metrics,
/// writing every artifact into out_dir as soon as it exists. Existing target
/// files abort the run unless force is set. Stage failures are rethrown as
/// Stage1Error / Stage2Error with earlier artifacts preserved on disk.
PipelineResult run_pipeline(const ExperimentConfig& cfg,
                            const PipelineOptions& opts);

}  // namespace gmmct
