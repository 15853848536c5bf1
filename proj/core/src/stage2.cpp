#include "gmmct/stage2.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gmmct/errors.hpp"
#include "gmmct/parallel.hpp"
#include "gmmct/rng.hpp"

namespace gmmct {

void Stage2Config::validate(int d) const {
  if (huber_delta < 0.0 || (huber_delta == 0.0 && huber_delta_fraction <= 0.0))
    throw ConfigError("stage2: Huber threshold must resolve to > 0");
  if (n_rot_grid < 2) throw ConfigError("stage2: n_rot_grid must be >= 2");
  if (!(omega_min < omega_max))
    throw ConfigError("stage2: omega_min must be < omega_max");
  if (n_morph_trials < 1) throw ConfigError("stage2: n_morph_trials >= 1");
  if (init_u_diag.size() != d)
    throw ConfigError("stage2: init_u_diag must have the ambient dimension");
  if (!(init_alpha > 0.0)) throw ConfigError("stage2: init_alpha must be > 0");
}

double Stage2Config::effective_delta(const Sinogram& data) const {
  if (huber_delta > 0.0) return huber_delta;
  const double m = data.values.cwiseAbs().maxCoeff();
  if (!(m > 0.0))
    throw NumericalError("stage2: cannot scale Huber threshold on empty data");
  return huber_delta_fraction * m;
}

double huber(double u, double delta) {
  const double au = std::abs(u);
  if (au <= delta) return 0.5 * u * u;
  return delta * (au - 0.5 * delta);
}

double huber_derivative(double u, double delta) {
  if (std::abs(u) <= delta) return u;
  return u > 0.0 ? delta : -delta;
}

namespace {

// Chunked deterministic reduction over time columns: per-column partial loss
// and gradient slots are filled in parallel and summed in column order.
Stage2ObjectiveResult objective_on_scene(const Scene& scene,
                                         const Sinogram& data, double delta) {
  const auto& geom = data.geometry;
  const SinogramEvaluator eval(scene, geom, true);
  const int model_dim = eval.gradient_dim();
  const int mt_count = geom.num_times;
  const int mr_count = geom.num_detectors;
  const double inv_m = 1.0 / (static_cast<double>(mt_count) * mr_count);

  std::vector<double> losses(mt_count, 0.0);
  std::vector<Eigen::VectorXd> grads(mt_count);
  parallel_for(mt_count, [&](std::size_t mt) {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(model_dim);
    double loss = 0.0;
    for (int mr = 0; mr < mr_count; ++mr) {
      // Residual weight folds the chain rule and the sign of -dF.
      // First pass computes F, then the weighted gradient accumulation reuses
      // the same evaluation with the known weight.
      const double f = eval.value(mr, static_cast<int>(mt));
      const double u = data.values(mr, static_cast<int>(mt)) - f;
      loss += huber(u, delta);
      const double w = -inv_m * huber_derivative(u, delta);
      if (w != 0.0)
        eval.value_and_accumulate(mr, static_cast<int>(mt), w, g.data());
    }
    losses[mt] = loss;
    grads[mt] = std::move(g);
  });

  Stage2ObjectiveResult out;
  out.gradient = Eigen::VectorXd::Zero(model_dim);
  for (int mt = 0; mt < mt_count; ++mt) {
    out.loss += losses[mt];
    out.gradient += grads[mt];
  }
  out.loss *= inv_m;
  return out;
}

Scene assemble_scene(const std::vector<Eigen::VectorXd>& thetas,
                     const std::vector<double>& alphas,
                     const std::vector<Eigen::MatrixXd>& us,
                     const std::vector<TrajectoryParams>& etas) {
  const std::size_t n = etas.size();
  if (thetas.size() != n || alphas.size() != n || us.size() != n)
    throw DimensionError("stage2: parameter list lengths must match");
  Scene scene;
  scene.particles.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    scene.particles.push_back({alphas[i], us[i], thetas[i], etas[i]});
  return scene;
}

// Strips the velocity block from the full model gradient, leaving the
// stage-2 layout [alpha, triu U, theta] per particle.
Eigen::VectorXd strip_velocity_block(const Eigen::VectorXd& full, int d, int n) {
  const int model_per = particle_gradient_dim(d);
  const int s2_per = stage2_particle_dim(d);
  Eigen::VectorXd out(s2_per * n);
  for (int i = 0; i < n; ++i)
    out.segment(i * s2_per, s2_per) = full.segment(i * model_per, s2_per);
  return out;
}

constexpr double kMinAnisotropyRatio = 1.01;

double diag_ratio(const Eigen::MatrixXd& u) {
  const Eigen::VectorXd diag = u.diagonal();
  return diag.maxCoeff() / diag.minCoeff();
}

double softplus(double x) {
  return x > 30.0 ? x : std::log1p(std::exp(x));
}
double softplus_inv(double y) {
  return y > 30.0 ? y : std::log(std::expm1(y));
}
double softplus_grad(double x) {
  return x > 30.0 ? 1.0 : 1.0 / (1.0 + std::exp(-x));
}

// Bijection between the unconstrained optimizer vector and the positive-
// constrained parameters: softplus on alpha and diag(U), identity elsewhere.
class MorphPacking {
 public:
  MorphPacking(int d, int n) : d_(d), n_(n), per_(stage2_particle_dim(d)) {}

  Eigen::VectorXd pack(const std::vector<Eigen::VectorXd>& thetas,
                       const std::vector<double>& alphas,
                       const std::vector<Eigen::MatrixXd>& us) const {
    Eigen::VectorXd x(per_ * n_);
    for (int i = 0; i < n_; ++i) {
      int idx = i * per_;
      x[idx++] = softplus_inv(alphas[i]);
      for (int r = 0; r < d_; ++r)
        for (int c = r; c < d_; ++c)
          x[idx++] = r == c ? softplus_inv(us[i](r, c)) : us[i](r, c);
      for (int k = 0; k < rotation_dim(d_); ++k) x[idx++] = thetas[i][k];
    }
    return x;
  }

  void unpack(const Eigen::VectorXd& x, std::vector<Eigen::VectorXd>* thetas,
              std::vector<double>* alphas,
              std::vector<Eigen::MatrixXd>* us) const {
    thetas->assign(n_, Eigen::VectorXd(rotation_dim(d_)));
    alphas->assign(n_, 0.0);
    us->assign(n_, Eigen::MatrixXd::Zero(d_, d_));
    for (int i = 0; i < n_; ++i) {
      int idx = i * per_;
      (*alphas)[i] = softplus(x[idx++]);
      for (int r = 0; r < d_; ++r)
        for (int c = r; c < d_; ++c) {
          (*us)[i](r, c) = r == c ? softplus(x[idx]) : x[idx];
          ++idx;
        }
      for (int k = 0; k < rotation_dim(d_); ++k) (*thetas)[i][k] = x[idx++];
    }
  }

  // Chain rule from the raw-parameter gradient to the packed one.
  Eigen::VectorXd chain(const Eigen::VectorXd& raw_grad,
                        const Eigen::VectorXd& x) const {
    Eigen::VectorXd g = raw_grad;
    for (int i = 0; i < n_; ++i) {
      int idx = i * per_;
      g[idx] *= softplus_grad(x[idx]);  // alpha
      ++idx;
      for (int r = 0; r < d_; ++r)
        for (int c = r; c < d_; ++c) {
          if (r == c) g[idx] *= softplus_grad(x[idx]);
          ++idx;
        }
    }
    return g;
  }

 private:
  int d_;
  int n_;
  int per_;
};

}  // namespace

Stage2ObjectiveResult stage2_objective(
    const std::vector<Eigen::VectorXd>& thetas,
    const std::vector<double>& alphas,
    const std::vector<Eigen::MatrixXd>& us,
    const std::vector<TrajectoryParams>& etas_fixed, const Sinogram& data,
    const Stage2Config& cfg) {
  data.validate();
  const Scene scene = assemble_scene(thetas, alphas, us, etas_fixed);
  const double delta = cfg.effective_delta(data);
  Stage2ObjectiveResult res = objective_on_scene(scene, data, delta);
  res.gradient = strip_velocity_block(res.gradient, scene.dim(), scene.size());
  return res;
}

Eigen::VectorXd grid_search_rotation(int n, const Scene& current_scene,
                                     const Sinogram& data,
                                     const Stage2Config& cfg) {
  current_scene.validate();
  data.validate();
  const int d = current_scene.dim();
  cfg.validate(d);
  if (n < 0 || n >= current_scene.size())
    throw DimensionError("grid_search_rotation: particle index out of range");
  if (diag_ratio(current_scene.particles[n].u) < kMinAnisotropyRatio)
    throw NumericalError(
        "grid_search_rotation: placeholder shape is too isotropic to carry a "
        "rotation signature");

  // Residual with every other particle's current contribution removed.
  Eigen::MatrixXd residual = data.values;
  if (current_scene.size() > 1) {
    Scene others;
    for (int i = 0; i < current_scene.size(); ++i)
      if (i != n) others.particles.push_back(current_scene.particles[i]);
    residual -= simulate_sinogram(others, data.geometry).values;
  }

  ParticleParams probe = current_scene.particles[n];
  Scene single;
  single.particles.push_back(probe);

  Eigen::VectorXd theta = probe.theta;
  for (int k = 0; k < rotation_dim(d); ++k) {
    std::vector<double> misfits(cfg.n_rot_grid);
    parallel_for(cfg.n_rot_grid, [&](std::size_t g) {
      Scene local = single;
      local.particles[0].theta = theta;
      local.particles[0].theta[k] =
          cfg.omega_min + (cfg.omega_max - cfg.omega_min) * g /
                              static_cast<double>(cfg.n_rot_grid - 1);
      const Sinogram sim = simulate_sinogram(local, data.geometry);
      misfits[g] = (residual - sim.values).norm();
    });
    int best = 0;
    for (int g = 1; g < cfg.n_rot_grid; ++g)
      if (misfits[g] < misfits[best]) best = g;  // ties keep the smaller omega
    theta[k] = cfg.omega_min + (cfg.omega_max - cfg.omega_min) * best /
                                   static_cast<double>(cfg.n_rot_grid - 1);
    single.particles[0].theta = theta;
  }
  return theta;
}

AttenuationInit nnls_attenuation(const Scene& scene_with_unit_alphas,
                                 const Sinogram& data) {
  scene_with_unit_alphas.validate();
  data.validate();
  const auto& geom = data.geometry;
  const int n = scene_with_unit_alphas.size();
  const Eigen::Index rows =
      static_cast<Eigen::Index>(geom.num_detectors) * geom.num_times;
  Eigen::MatrixXd phi(rows, n);
  for (int i = 0; i < n; ++i) {
    Scene single;
    single.particles.push_back(scene_with_unit_alphas.particles[i]);
    single.particles[0].alpha = 1.0;
    const Sinogram sim = simulate_sinogram(single, geom);
    phi.col(i) = Eigen::Map<const Eigen::VectorXd>(sim.values.data(), rows);
  }
  const Eigen::VectorXd b =
      Eigen::Map<const Eigen::VectorXd>(data.values.data(), rows);
  if (b.cwiseAbs().maxCoeff() == 0.0)
    throw NumericalError("nnls_attenuation: data sinogram is identically zero");
  const NnlsResult r = nnls(phi, b);
  return {r.x, r.rank_deficient};
}

MorphologyEstimate optimize_morphology(
    const std::vector<TrajectoryParams>& etas_fixed, const Sinogram& data,
    const Stage2Config& cfg, Stage2Trace* trace) {
  data.validate();
  const int d = data.geometry.dim();
  cfg.validate(d);
  const int n = static_cast<int>(etas_fixed.size());
  if (n < 1) throw ConfigError("stage2: need at least one trajectory");
  const double delta = cfg.effective_delta(data);

  Rng rng(cfg.seed);

  // Placeholder morphology shared by the grid search and the first trial.
  Scene init_scene;
  for (int i = 0; i < n; ++i) {
    ParticleParams p;
    p.alpha = cfg.init_alpha;
    p.u = Eigen::MatrixXd::Zero(d, d);
    for (int r = 0; r < d; ++r) p.u(r, r) = cfg.init_u_diag[r];
    for (int r = 0; r < d; ++r)
      for (int c = r + 1; c < d; ++c)
        p.u(r, c) = rng.normal(0.0, cfg.init_u_offdiag_std);
    p.theta = Eigen::VectorXd::Zero(rotation_dim(d));
    p.eta = etas_fixed[i];
    init_scene.particles.push_back(std::move(p));
  }

  // One ascending sweep of the rotation grid search, then NNLS attenuations.
  for (int i = 0; i < n; ++i)
    init_scene.particles[i].theta =
        grid_search_rotation(i, init_scene, data, cfg);
  const AttenuationInit att = nnls_attenuation(init_scene, data);
  for (int i = 0; i < n; ++i)
    init_scene.particles[i].alpha = std::max(att.alphas[i], 1e-3);

  const MorphPacking packing(d, n);

  MorphologyEstimate best;
  best.loss = std::numeric_limits<double>::infinity();
  best.huber_delta = delta;
  bool any_valid = false;

  for (int trial = 0; trial < cfg.n_morph_trials; ++trial) {
    std::vector<Eigen::VectorXd> thetas;
    std::vector<double> alphas;
    std::vector<Eigen::MatrixXd> us;
    for (const auto& p : init_scene.particles) {
      thetas.push_back(p.theta);
      alphas.push_back(p.alpha);
      us.push_back(p.u);
    }
    if (trial > 0) {
      // Fresh uniform angular velocities; morphology keeps the warm values.
      for (auto& th : thetas)
        for (Eigen::Index k = 0; k < th.size(); ++k)
          th[k] = rng.uniform(cfg.omega_min, cfg.omega_max);
    }

    auto objective = [&](const Eigen::VectorXd& x,
                         Eigen::VectorXd& grad) -> double {
      std::vector<Eigen::VectorXd> th;
      std::vector<double> al;
      std::vector<Eigen::MatrixXd> uu;
      packing.unpack(x, &th, &al, &uu);
      Scene scene;
      try {
        scene = assemble_scene(th, al, uu, etas_fixed);
        const Stage2ObjectiveResult r = objective_on_scene(scene, data, delta);
        grad = packing.chain(strip_velocity_block(r.gradient, d, n), x);
        return r.loss;
      } catch (const Error&) {
        return std::numeric_limits<double>::infinity();
      }
    };

    IterationCallback cb;
    if (trace)
      cb = [&](int it, double f, double gn) {
        trace->push_back({trial, it, f, gn});
      };

    try {
      const MinimizeResult mr =
          minimize(objective, packing.pack(thetas, alphas, us), cfg.optimizer, cb);
      any_valid = true;
      if (mr.f < best.loss) {
        packing.unpack(mr.x, &best.thetas, &best.alphas, &best.us);
        best.loss = mr.f;
        best.trial_index = trial;
        best.converged = mr.converged();
      }
    } catch (const Error&) {
      continue;  // this trial failed outright
    }
  }

  if (!any_valid)
    throw NumericalError("stage2: every morphology trial failed");
  return best;
}

}  // namespace gmmct
