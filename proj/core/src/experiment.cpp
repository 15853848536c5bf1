#include "gmmct/experiment.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include "gmmct/io.hpp"
#include "gmmct/rng.hpp"

namespace gmmct {

void ExperimentConfig::validate() const {
  geometry.validate();
  const int d = geometry.dim();
  if (n_particles < 1) throw ConfigError("config: n_particles must be >= 1");
  if (generation.mu.size() != d || generation.accel.size() != d)
    throw ConfigError("config: generation mu/accel dimension mismatch");
  if (generation.velocity_mean.size() != d)
    throw ConfigError("config: generation velocity_mean dimension mismatch");
  if (!generation.velocities.empty() &&
      static_cast<int>(generation.velocities.size()) != n_particles)
    throw ConfigError("config: velocity list length must equal n_particles");
  for (const auto& v : generation.velocities)
    if (v.size() != d) throw ConfigError("config: velocity dimension mismatch");
  if (!(generation.u_diag_min > 0.0 &&
        generation.u_diag_max > generation.u_diag_min))
    throw ConfigError("config: U diagonal bounds must satisfy 0 < min < max");
  if (generation.anisotropy_min_ratio < 1.0)
    throw ConfigError("config: anisotropy ratio floor must be >= 1");
  if (!(generation.omega_min < generation.omega_max))
    throw ConfigError("config: omega bounds must satisfy min < max");
  if (generation.guard_band_fraction < 0.0 ||
      generation.guard_band_fraction >= 0.5)
    throw ConfigError("config: guard band fraction must lie in [0, 0.5)");
  stage1.validate(d);
  stage2.validate(d);
}

ExperimentConfig ExperimentConfig::defaults() {
  ExperimentConfig cfg;
  cfg.geometry.source = Eigen::Vector2d(-1.0, 1.0);
  cfg.geometry.detector_start = Eigen::Vector2d(4.0, 1.0);
  cfg.geometry.detector_end = Eigen::Vector2d(4.0, -3.0);
  cfg.geometry.num_detectors = 128;
  cfg.geometry.t_min = 0.0;
  cfg.geometry.t_max = 1.5;
  cfg.geometry.num_times = 150;
  cfg.geometry.fixed_component_index = 0;

  cfg.n_particles = 5;
  cfg.generation.mu = Eigen::Vector2d(1.0, 1.0);
  cfg.generation.accel = Eigen::Vector2d(0.0, -9.81);
  cfg.generation.velocity_mean = Eigen::Vector2d(1.0, 1.0);
  cfg.generation.velocities = {
      Eigen::Vector2d(1.0, 3.0),  Eigen::Vector2d(1.5, 1.8),
      Eigen::Vector2d(0.8, 2.5),  Eigen::Vector2d(0.75, 1.2),
      Eigen::Vector2d(2.0, 3.0)};

  cfg.stage1.n_trials = 20;
  cfg.stage1.init_mean = Eigen::Vector2d(1.0, 1.0);
  cfg.stage1.init_cov = 1.5 * 1.5 * Eigen::Matrix2d::Identity();
  cfg.stage1.known_mu = cfg.generation.mu;
  cfg.stage1.known_accel = cfg.generation.accel;

  cfg.stage2.n_rot_grid = 200;
  cfg.stage2.omega_min = 2.0;
  cfg.stage2.omega_max = 6.0;
  cfg.stage2.n_morph_trials = 3;
  cfg.stage2.init_u_diag = Eigen::Vector2d(30.0, 15.0);
  cfg.stage2.init_alpha = 12.5;
  return cfg;
}

bool rotation_guard_band_rejects(const Eigen::VectorXd& theta, double dt,
                                 double guard_band_fraction) {
  if (dt <= 0.0 || guard_band_fraction <= 0.0) return false;
  constexpr double kPi = 3.14159265358979323846;
  const double band = guard_band_fraction * kPi;
  for (Eigen::Index k = 0; k < theta.size(); ++k) {
    const double phi = std::abs(theta[k]) * dt;
    if (phi < kPi - band) continue;  // below the first half-turn multiple
    const double rem = std::fmod(phi, kPi);
    if (std::min(rem, kPi - rem) < band) return true;
  }
  return false;
}

Scene generate_scene(const ExperimentConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const int d = cfg.geometry.dim();
  const auto& gen = cfg.generation;
  Rng rng(seed);
  int budget = gen.rejection_budget;
  auto spend = [&budget](const char* what) {
    if (--budget < 0)
      throw NumericalError(std::string("generate_scene: rejection budget "
                                       "exhausted while sampling ") +
                           what);
  };
  const double dt = cfg.geometry.num_times > 1
                        ? (cfg.geometry.t_max - cfg.geometry.t_min) /
                              (cfg.geometry.num_times - 1)
                        : 0.0;

  Scene scene;
  for (int n = 0; n < cfg.n_particles; ++n) {
    ParticleParams p;

    const double mean = gen.attenuation_mean_base + gen.attenuation_mean_step * n;
    do {
      spend("attenuation");
      p.alpha = rng.normal(mean, gen.attenuation_std);
    } while (!(p.alpha > 0.0));

    p.u = Eigen::MatrixXd::Zero(d, d);
    for (;;) {
      spend("shape matrix");
      for (int i = 0; i < d; ++i)
        p.u(i, i) = rng.uniform(gen.u_diag_min, gen.u_diag_max);
      for (int i = 0; i < d; ++i)
        for (int j = i + 1; j < d; ++j)
          p.u(i, j) = rng.normal(gen.u_offdiag_mean, gen.u_offdiag_std);
      const double ratio = p.u.diagonal().maxCoeff() / p.u.diagonal().minCoeff();
      if (ratio >= gen.anisotropy_min_ratio) break;
    }

    p.theta = Eigen::VectorXd(rotation_dim(d));
    do {
      spend("angular velocity");
      for (Eigen::Index k = 0; k < p.theta.size(); ++k)
        p.theta[k] = rng.uniform(gen.omega_min, gen.omega_max);
    } while (rotation_guard_band_rejects(p.theta, dt, gen.guard_band_fraction));

    p.eta.mu = gen.mu;
    p.eta.a = gen.accel;
    if (!gen.velocities.empty()) {
      p.eta.v = gen.velocities[n];
    } else {
      do {
        spend("velocity");
        p.eta.v = gen.velocity_mean;
        for (int i = 0; i < d; ++i)
          p.eta.v[i] = rng.normal(gen.velocity_mean[i], gen.velocity_std);
      } while (!(p.eta.v[0] > 0.0));
    }
    scene.particles.push_back(std::move(p));
  }
  scene.validate();
  return scene;
}

namespace {

namespace fs = std::filesystem;

void guard_target(const fs::path& path, bool force) {
  if (!force && fs::exists(path))
    throw IoError("refusing to overwrite " + path.string() +
                  " (pass --force to allow)");
}

}  // namespace

PipelineResult run_pipeline(const ExperimentConfig& cfg,
                            const PipelineOptions& opts) {
  cfg.validate();
  if (opts.out_dir.empty()) throw ConfigError("pipeline: output dir required");
  if (opts.stage < 0 || opts.stage > 2)
    throw ConfigError("pipeline: stage must be 0, 1 or 2");

  const fs::path out(opts.out_dir);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("pipeline: cannot create " + out.string());

  const bool run_stage1 = opts.stage == 0 || opts.stage == 1;
  const bool run_stage2 = opts.stage == 0 || opts.stage == 2;
  const bool simulate = opts.sinogram_path.empty();

  // Refuse to clobber anything this invocation would write.
  guard_target(out / "config.json", opts.force);
  if (simulate) guard_target(out / "sinogram.txt", opts.force);
  guard_target(out / "modes.tsv", opts.force);
  if (run_stage1) {
    guard_target(out / "trajectory_estimate.json", opts.force);
    guard_target(out / "stage1_trace.tsv", opts.force);
  }
  if (run_stage2) {
    guard_target(out / "morphology_estimate.json", opts.force);
    guard_target(out / "stage2_trace.tsv", opts.force);
    guard_target(out / "metrics.json", opts.force);
    guard_target(out / "report.txt", opts.force);
  }

  save_config(cfg, (out / "config.json").string());

  PipelineResult result;

  // Data: simulate from (possibly explicit) truth, or load from disk.
  if (simulate) {
    if (opts.truth_override.has_value()) {
      result.truth = *opts.truth_override;
      result.truth->validate();
      if (result.truth->dim() != cfg.geometry.dim())
        throw ConfigError("pipeline: truth dimension mismatch");
    } else {
      result.truth = generate_scene(cfg, Rng::mix(cfg.seed, 1));
    }
    guard_target(out / "truth.json", opts.force);
    save_scene(*result.truth, (out / "truth.json").string());
    result.sinogram = simulate_sinogram(*result.truth, cfg.geometry);
    save_sinogram(result.sinogram, (out / "sinogram.txt").string());
  } else {
    result.sinogram = load_sinogram(opts.sinogram_path);
    if (opts.truth_override.has_value()) {
      result.truth = *opts.truth_override;
      result.truth->validate();
    }
  }

  result.modes = detect_modes(result.sinogram, cfg.stage1.peaks);
  save_modes_tsv(result.modes, (out / "modes.tsv").string());

  Stage1Config s1 = cfg.stage1;
  s1.seed = Rng::mix(cfg.seed, 2);
  s1.known_mu = cfg.generation.mu;
  s1.known_accel = cfg.generation.accel;

  if (run_stage1) {
    try {
      Stage1Trace trace;
      result.trajectory = optimize_trajectories(
          result.modes, result.sinogram.geometry, s1, cfg.n_particles, &trace);
      save_trajectory_estimate(*result.trajectory,
                               (out / "trajectory_estimate.json").string());
      save_stage1_trace(trace, (out / "stage1_trace.tsv").string());
    } catch (const Error& e) {
      throw Stage1Error(e.what());
    }
  } else {
    const fs::path prior = out / "trajectory_estimate.json";
    if (!fs::exists(prior))
      throw ConfigError("pipeline: --stage 2 needs " + prior.string() +
                        " from an earlier stage-1 run");
    result.trajectory = load_trajectory_estimate(prior.string());
  }

  if (run_stage2) {
    Stage2Config s2 = cfg.stage2;
    s2.seed = Rng::mix(cfg.seed, 3);
    try {
      Stage2Trace trace;
      std::vector<TrajectoryParams> etas = result.trajectory->etas;
      result.morphology = optimize_morphology(etas, result.sinogram, s2, &trace);
      save_morphology_estimate(*result.morphology,
                               (out / "morphology_estimate.json").string());
      save_stage2_trace(trace, (out / "stage2_trace.tsv").string());
    } catch (const Error& e) {
      throw Stage2Error(e.what());
    }

    if (result.truth.has_value()) {
      result.metrics =
          metrics_report(*result.truth, result.trajectory->etas,
                         *result.morphology, result.sinogram.geometry);
      save_metrics(*result.metrics, (out / "metrics.json").string());
      std::ofstream report((out / "report.txt").string());
      report << result.metrics->table;
    }
  }
  return result;
}

}  // namespace gmmct
