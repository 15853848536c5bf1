// Command line front end: simulate synthetic data, reconstruct particle
// motion and morphology from a sinogram, or run both ends fused.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "gmmct/experiment.hpp"
#include "gmmct/io.hpp"
#include "gmmct/rng.hpp"

namespace {

namespace fs = std::filesystem;
using namespace gmmct;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitStage1 = 3;
constexpr int kExitStage2 = 4;
constexpr int kExitIo = 5;

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::string sinogram_path;
  std::string truth_path;
  std::string stage = "all";
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool force = false;
};

ExperimentConfig resolve_config(const CommonArgs& args) {
  ExperimentConfig cfg = args.config_path.empty()
                             ? ExperimentConfig::defaults()
                             : load_config(args.config_path);
  if (args.seed_set) cfg.seed = args.seed;
  return cfg;
}

int stage_number(const std::string& s) {
  if (s == "all") return 0;
  if (s == "1") return 1;
  if (s == "2") return 2;
  throw ConfigError("--stage must be one of 1, 2, all");
}

void guard(const fs::path& p, bool force) {
  if (!force && fs::exists(p))
    throw IoError("refusing to overwrite " + p.string() +
                  " (pass --force to allow)");
}

int cmd_simulate(const CommonArgs& args) {
  ExperimentConfig cfg = resolve_config(args);
  const fs::path out(args.out_dir);
  fs::create_directories(out);
  guard(out / "config.json", args.force);
  guard(out / "truth.json", args.force);
  guard(out / "sinogram.txt", args.force);

  Scene truth = args.truth_path.empty()
                    ? generate_scene(cfg, Rng::mix(cfg.seed, 1))
                    : load_scene(args.truth_path);
  save_config(cfg, (out / "config.json").string());
  save_scene(truth, (out / "truth.json").string());
  const Sinogram g = simulate_sinogram(truth, cfg.geometry);
  save_sinogram(g, (out / "sinogram.txt").string());
  std::cout << "simulated " << g.geometry.num_detectors << " x "
            << g.geometry.num_times << " sinogram for " << truth.size()
            << " particles -> " << out.string() << "\n";
  return kExitOk;
}

void print_summary(const PipelineResult& result) {
  if (result.trajectory) {
    std::cout << "stage 1: loss " << result.trajectory->loss << " (trial "
              << result.trajectory->trial_index << ", "
              << (result.trajectory->converged ? "converged" : "flagged")
              << ")\n";
  }
  if (result.morphology) {
    std::cout << "stage 2: loss " << result.morphology->loss << " (trial "
              << result.morphology->trial_index << ", "
              << (result.morphology->converged ? "converged" : "flagged")
              << ")\n";
  }
  if (result.metrics) {
    std::cout << result.metrics->table;
    for (const auto& m : result.metrics->per_particle)
      std::printf(
          "n=%d: |dv|_inf %.4g  |dtheta| %.4g  alpha rel %.4g  rendered max "
          "%.4g\n",
          m.truth_index + 1, m.velocity_error_inf, m.theta_error_inf,
          m.alpha_rel_error, m.rendered_max_abs_error);
  }
}

int cmd_run(const CommonArgs& args, bool simulate) {
  ExperimentConfig cfg = resolve_config(args);
  PipelineOptions opts;
  opts.out_dir = args.out_dir;
  opts.force = args.force;
  opts.stage = stage_number(args.stage);
  if (!simulate) {
    if (args.sinogram_path.empty())
      throw ConfigError("reconstruct needs --sinogram <path>");
    opts.sinogram_path = args.sinogram_path;
  }
  if (!args.truth_path.empty()) opts.truth_override = load_scene(args.truth_path);
  const PipelineResult result = run_pipeline(cfg, opts);
  print_summary(result);
  return kExitOk;
}

int cmd_report(const CommonArgs& args) {
  if (args.truth_path.empty() || args.out_dir.empty())
    throw ConfigError("report needs --truth <scene> and --out <results dir>");
  const fs::path out(args.out_dir);
  const Scene truth = load_scene(args.truth_path);
  const TrajectoryEstimate traj =
      load_trajectory_estimate((out / "trajectory_estimate.json").string());
  const MorphologyEstimate morph =
      load_morphology_estimate((out / "morphology_estimate.json").string());
  ExperimentConfig cfg = resolve_config(args);
  const fs::path saved_cfg = out / "config.json";
  if (args.config_path.empty() && fs::exists(saved_cfg))
    cfg = load_config(saved_cfg.string());

  const MetricsReport report =
      metrics_report(truth, traj.etas, morph, cfg.geometry);
  std::cout << report.table;
  for (const auto& m : report.per_particle)
    std::printf(
        "n=%d: |dv|_inf %.4g  |dtheta| %.4g  alpha rel %.4g  rendered max "
        "%.4g\n",
        m.truth_index + 1, m.velocity_error_inf, m.theta_error_inf,
        m.alpha_rel_error, m.rendered_max_abs_error);
  if (args.force) {
    save_metrics(report, (out / "metrics.json").string());
    std::ofstream rep((out / "report.txt").string());
    rep << report.table;
  }
  return kExitOk;
}

int cmd_check_gradients(const CommonArgs& args) {
  ExperimentConfig cfg = resolve_config(args);
  const int d = cfg.geometry.dim();
  Rng rng(Rng::mix(cfg.seed, 71));

  // Point checks of the forward gradient against central differences.
  double worst_forward = 0.0;
  for (int rep = 0; rep < 20; ++rep) {
    ExperimentConfig small = cfg;
    small.n_particles = 2;
    small.generation.velocities.clear();
    const Scene scene = generate_scene(small, rng.fork());
    const Eigen::VectorXd s = cfg.geometry.source;
    const Eigen::VectorXd r = cfg.geometry.detector_position(
        static_cast<int>(rng.uniform(0.0, cfg.geometry.num_detectors)));
    const double t =
        rng.uniform(0.3, 0.9) * (cfg.geometry.t_max - cfg.geometry.t_min);

    const int per = particle_gradient_dim(d);
    auto pack = [&](const Scene& sc) {
      Eigen::VectorXd x(per * sc.size());
      for (int nidx = 0; nidx < sc.size(); ++nidx) {
        int idx = nidx * per;
        const auto& p = sc.particles[nidx];
        x[idx++] = p.alpha;
        for (int i = 0; i < d; ++i)
          for (int j = i; j < d; ++j) x[idx++] = p.u(i, j);
        for (int k = 0; k < rotation_dim(d); ++k) x[idx++] = p.theta[k];
        for (int i = 0; i < d; ++i) x[idx++] = p.eta.v[i];
      }
      return x;
    };
    auto unpack = [&](const Eigen::VectorXd& x) {
      Scene sc = scene;
      for (int nidx = 0; nidx < sc.size(); ++nidx) {
        int idx = nidx * per;
        auto& p = sc.particles[nidx];
        p.alpha = x[idx++];
        for (int i = 0; i < d; ++i)
          for (int j = i; j < d; ++j) p.u(i, j) = x[idx++];
        for (int k = 0; k < rotation_dim(d); ++k) p.theta[k] = x[idx++];
        for (int i = 0; i < d; ++i) p.eta.v[i] = x[idx++];
      }
      return sc;
    };
    const double err = check_gradient(
        [&](const Eigen::VectorXd& x, Eigen::VectorXd& grad) {
          const Scene sc = unpack(x);
          auto [value, g] = forward_gradients(sc, s, r, t);
          grad = g;
          return value;
        },
        pack(scene));
    worst_forward = std::max(worst_forward, err);
  }
  std::printf("forward gradient vs central differences: max rel err %.3e\n",
              worst_forward);

  // Whole-objective check at random perturbations of a generated scene.
  const Scene truth = generate_scene(cfg, Rng::mix(cfg.seed, 1));
  const Sinogram data = simulate_sinogram(truth, cfg.geometry);
  const int n = truth.size();
  const int s2_per = stage2_particle_dim(d);
  double worst_objective = 0.0;
  for (int rep = 0; rep < 5; ++rep) {
    std::vector<Eigen::VectorXd> thetas;
    std::vector<double> alphas;
    std::vector<Eigen::MatrixXd> us;
    std::vector<TrajectoryParams> etas;
    for (const auto& p : truth.particles) {
      thetas.push_back(p.theta + 0.05 * Eigen::VectorXd::Ones(p.theta.size()) *
                                     rng.normal());
      alphas.push_back(p.alpha * (1.0 + 0.02 * rng.normal()));
      Eigen::MatrixXd u = p.u;
      for (int i = 0; i < d; ++i)
        for (int j = i; j < d; ++j) u(i, j) += 0.1 * rng.normal();
      us.push_back(u);
      etas.push_back(p.eta);
    }
    auto objective = [&](const Eigen::VectorXd& x, Eigen::VectorXd& grad) {
      std::vector<Eigen::VectorXd> th = thetas;
      std::vector<double> al = alphas;
      std::vector<Eigen::MatrixXd> uu = us;
      for (int nidx = 0; nidx < n; ++nidx) {
        int idx = nidx * s2_per;
        al[nidx] = x[idx++];
        for (int i = 0; i < d; ++i)
          for (int j = i; j < d; ++j) uu[nidx](i, j) = x[idx++];
        for (int k = 0; k < rotation_dim(d); ++k) th[nidx][k] = x[idx++];
      }
      const Stage2ObjectiveResult r =
          stage2_objective(th, al, uu, etas, data, cfg.stage2);
      grad = r.gradient;
      return r.loss;
    };
    Eigen::VectorXd x0(n * s2_per);
    for (int nidx = 0; nidx < n; ++nidx) {
      int idx = nidx * s2_per;
      x0[idx++] = alphas[nidx];
      for (int i = 0; i < d; ++i)
        for (int j = i; j < d; ++j) x0[idx++] = us[nidx](i, j);
      for (int k = 0; k < rotation_dim(d); ++k) x0[idx++] = thetas[nidx][k];
    }
    worst_objective = std::max(worst_objective, check_gradient(objective, x0));
  }
  std::printf("huber objective gradient vs central differences: max rel err %.3e\n",
              worst_objective);

  const bool ok = worst_forward <= 1e-5 && worst_objective <= 1e-5;
  std::printf("%s\n", ok ? "PASS" : "FAIL");
  return ok ? kExitOk : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gaussian-particle tomography: simulate projectile scenes and "
               "reconstruct motion and morphology from their sinograms"};
  app.require_subcommand(1);

  CommonArgs args;
  auto add_common = [&](CLI::App* sub, bool needs_out) {
    sub->add_option("--config", args.config_path, "experiment config (JSON)");
    auto* seed =
        sub->add_option("--seed", args.seed, "master seed (overrides config)");
    seed->each([&](const std::string&) { args.seed_set = true; });
    auto* out = sub->add_option("--out", args.out_dir, "output directory");
    if (needs_out) out->required();
    sub->add_flag("--force", args.force, "overwrite existing outputs");
    return sub;
  };

  auto* sim = add_common(app.add_subcommand("simulate", "generate a synthetic "
                                                        "scene and its sinogram"),
                         true);
  sim->add_option("--truth", args.truth_path, "explicit truth scene (JSON)");

  auto* rec = add_common(
      app.add_subcommand("reconstruct", "run the two-stage reconstruction on "
                                        "an existing sinogram"),
      true);
  rec->add_option("--sinogram", args.sinogram_path, "sinogram file")->required();
  rec->add_option("--truth", args.truth_path, "truth scene for metrics");
  rec->add_option("--stage", args.stage, "1, 2 or all");

  auto* run = add_common(
      app.add_subcommand("run", "simulate then reconstruct in one go"), true);
  run->add_option("--truth", args.truth_path, "explicit truth scene (JSON)");
  run->add_option("--stage", args.stage, "1, 2 or all");

  add_common(app.add_subcommand("check-gradients",
                                "verify analytic gradients against finite "
                                "differences"),
             false);

  auto* rep = add_common(
      app.add_subcommand("report", "recompute metrics for stored estimates"),
      true);
  rep->add_option("--truth", args.truth_path, "truth scene (JSON)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (app.got_subcommand("simulate")) return cmd_simulate(args);
    if (app.got_subcommand("reconstruct")) return cmd_run(args, false);
    if (app.got_subcommand("run")) return cmd_run(args, true);
    if (app.got_subcommand("check-gradients")) return cmd_check_gradients(args);
    if (app.got_subcommand("report")) return cmd_report(args);
  } catch (const Stage1Error& e) {
    std::cerr << "stage 1 failed: " << e.what() << "\n";
    return kExitStage1;
  } catch (const Stage2Error& e) {
    std::cerr << "stage 2 failed: " << e.what() << "\n";
    return kExitStage2;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitConfig;
}
