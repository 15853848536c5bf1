#include "gmmct/stage1.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gmmct/errors.hpp"
#include "gmmct/parallel.hpp"

namespace gmmct {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

void Stage1Config::validate(int d) const {
  if (n_trials < 1) throw ConfigError("stage1: n_trials must be >= 1");
  if (init_mean.size() != d || known_mu.size() != d || known_accel.size() != d)
    throw ConfigError("stage1: mean/mu/accel must have the ambient dimension");
  if (init_cov.rows() != d || init_cov.cols() != d)
    throw ConfigError("stage1: init_cov must be d x d");
  if (!init_cov.isApprox(init_cov.transpose(), 1e-12))
    throw ConfigError("stage1: init_cov must be symmetric");
  Eigen::LLT<Eigen::MatrixXd> llt(init_cov);
  if (llt.info() != Eigen::Success)
    throw ConfigError("stage1: init_cov must be positive definite");
}

std::vector<Eigen::VectorXd> sample_initial_trajectories(
    const Stage1Config& cfg, int n, Rng& rng) {
  std::vector<Eigen::VectorXd> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i)
    out.push_back(rng.multivariate_normal(cfg.init_mean, cfg.init_cov));
  return out;
}

AssignmentLossResult assignment_loss(const std::vector<TrajectoryParams>& etas,
                                     const ModeSet& observed,
                                     const AcquisitionGeometry& geom) {
  if (observed.all_empty())
    throw NumericalError("assignment_loss: no observed modes at any time");
  const int n = static_cast<int>(etas.size());
  AssignmentLossResult out;
  out.assignment.assign(observed.num_times(), std::vector<int>(n, -1));

  for (int mt = 0; mt < observed.num_times(); ++mt) {
    const auto& obs = observed.per_time[mt];
    if (obs.empty()) continue;
    const double t = geom.time_sample(mt);
    const int m = static_cast<int>(obs.size());
    Eigen::MatrixXd cost(n, m);
    for (int i = 0; i < n; ++i) {
      const Eigen::VectorXd pred = mode_map(etas[i], t, geom);
      for (int j = 0; j < m; ++j)
        cost(i, j) = (pred - obs[j].position).squaredNorm();
    }
    const AssignmentResult match = rectangular_assignment(cost);
    out.loss += match.total_cost;
    out.assignment[mt] = match.row_to_col;
  }
  return out;
}

double hausdorff_diagnostic(const std::vector<TrajectoryParams>& etas,
                            const ModeSet& observed,
                            const AcquisitionGeometry& geom) {
  double total = 0.0;
  for (int mt = 0; mt < observed.num_times(); ++mt) {
    const auto& obs = observed.per_time[mt];
    if (obs.empty()) continue;
    const double t = geom.time_sample(mt);
    std::vector<Eigen::VectorXd> preds;
    preds.reserve(etas.size());
    for (const auto& eta : etas) preds.push_back(mode_map(eta, t, geom));
    double sup_ab = 0.0, sup_ba = 0.0;
    for (const auto& o : obs) {
      double inf_d = kInf;
      for (const auto& p : preds) inf_d = std::min(inf_d, (o.position - p).norm());
      sup_ab = std::max(sup_ab, inf_d);
    }
    for (const auto& p : preds) {
      double inf_d = kInf;
      for (const auto& o : obs) inf_d = std::min(inf_d, (p - o.position).norm());
      sup_ba = std::max(sup_ba, inf_d);
    }
    total += std::max(sup_ab, sup_ba);
  }
  return total;
}

namespace {

struct TrialResult {
  std::vector<TrajectoryParams> etas;
  double loss = kInf;
  std::vector<std::vector<int>> assignment;
  bool converged = false;
  bool valid = false;
};

// Matched-cost objective with the assignment held fixed; packs all particles'
// free blocks into one vector. Degenerate geometries evaluate to +inf so the
// line search backs away from them.
class FixedAssignmentObjective {
 public:
  FixedAssignmentObjective(const ModeSet& modes,
                           const std::vector<std::vector<int>>& assignment,
                           const AcquisitionGeometry& geom,
                           std::vector<TrajectoryParams> etas,
                           TrajectoryVariables vars)
      : modes_(modes), assignment_(assignment), geom_(geom),
        etas_(std::move(etas)), vars_(vars),
        nvar_(trajectory_variable_dim(vars, geom.dim())) {}

  Eigen::VectorXd pack() const {
    Eigen::VectorXd x(nvar_ * etas_.size());
    for (std::size_t i = 0; i < etas_.size(); ++i)
      x.segment(i * nvar_, nvar_) = trajectory_pack(etas_[i], vars_);
    return x;
  }

  std::vector<TrajectoryParams> unpack(const Eigen::VectorXd& x) const {
    std::vector<TrajectoryParams> etas = etas_;
    for (std::size_t i = 0; i < etas.size(); ++i)
      trajectory_unpack(x.segment(i * nvar_, nvar_), vars_, &etas[i]);
    return etas;
  }

  double operator()(const Eigen::VectorXd& x, Eigen::VectorXd& grad) const {
    auto etas = unpack(x);
    const int d = geom_.dim();
    grad.setZero();
    double loss = 0.0;
    try {
      for (int mt = 0; mt < modes_.num_times(); ++mt) {
        const double t = geom_.time_sample(mt);
        for (std::size_t i = 0; i < etas.size(); ++i) {
          const int mi = assignment_[mt][i];
          if (mi < 0) continue;
          const Eigen::VectorXd res =
              mode_map(etas[i], t, geom_) - modes_.per_time[mt][mi].position;
          loss += res.squaredNorm();
          const Eigen::MatrixXd full = mode_map_jacobian(etas[i], t, geom_);
          Eigen::MatrixXd sel(d, nvar_);
          sel.leftCols(d) = full.middleCols(d, d);
          if (vars_ != TrajectoryVariables::kVelocity)
            sel.middleCols(d, d) = full.leftCols(d);
          if (vars_ == TrajectoryVariables::kFull)
            sel.rightCols(d) = full.rightCols(d);
          grad.segment(i * nvar_, nvar_) += 2.0 * sel.transpose() * res;
        }
      }
    } catch (const DegenerateGeometryError&) {
      return kInf;
    }
    return loss;
  }

 private:
  const ModeSet& modes_;
  const std::vector<std::vector<int>>& assignment_;
  const AcquisitionGeometry& geom_;
  std::vector<TrajectoryParams> etas_;
  TrajectoryVariables vars_;
  int nvar_;
};

}  // namespace

TrajectoryEstimate optimize_trajectories(const ModeSet& observed,
                                         const AcquisitionGeometry& geom,
                                         const Stage1Config& cfg,
                                         int n_particles,
                                         Stage1Trace* trace) {
  geom.validate();
  cfg.validate(geom.dim());
  if (n_particles < 1) throw ConfigError("stage1: n_particles must be >= 1");
  if (observed.all_empty())
    throw NumericalError("stage1: no observed modes at any time");

  Rng master(cfg.seed);
  std::vector<std::uint64_t> trial_seeds(cfg.n_trials);
  for (auto& s : trial_seeds) s = master.fork();

  std::vector<TrialResult> trials(cfg.n_trials);
  std::vector<Stage1Trace> traces(trace ? cfg.n_trials : 0);

  parallel_for(cfg.n_trials, [&](std::size_t k) {
    Rng rng(trial_seeds[k]);
    TrialResult& tr = trials[k];
    Stage1Trace* tlog = trace ? &traces[k] : nullptr;

    std::vector<TrajectoryParams> etas;
    for (const auto& v : sample_initial_trajectories(cfg, n_particles, rng))
      etas.push_back({cfg.known_mu, v, cfg.known_accel});

    std::vector<std::vector<int>> assignment;
    bool settled = false;
    double prev_f = kInf;
    try {
      for (int round = 0; round < cfg.max_assignment_rounds; ++round) {
        AssignmentLossResult al = assignment_loss(etas, observed, geom);
        if (tlog)
          tlog->push_back({static_cast<int>(k), round, -1, al.loss, 0.0,
                           hausdorff_diagnostic(etas, observed, geom)});
        const bool stable = round > 0 && al.assignment == assignment;
        assignment = std::move(al.assignment);
        if (stable && settled) break;

        FixedAssignmentObjective obj(observed, assignment, geom, etas,
                                     cfg.variables);
        IterationCallback cb;
        if (tlog)
          cb = [&](int it, double f, double gn) {
            tlog->push_back({static_cast<int>(k), round, it, f, gn, 0.0});
          };
        const MinimizeResult mr = minimize(
            [&obj](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
              return obj(x, g);
            },
            obj.pack(), cfg.optimizer, cb);
        etas = obj.unpack(mr.x);
        // Settled once the inner solve stops making progress: either proper
        // convergence, a dead line search, or no measurable decrease.
        settled = mr.converged() ||
                  mr.status == MinimizeStatus::kLineSearchFailure ||
                  mr.f >= prev_f * (1.0 - 1e-12);
        prev_f = mr.f;
      }
      AssignmentLossResult final_al = assignment_loss(etas, observed, geom);
      tr.etas = std::move(etas);
      tr.loss = final_al.loss;
      tr.assignment = std::move(final_al.assignment);
      tr.converged = settled;
      tr.valid = std::isfinite(tr.loss);
    } catch (const Error&) {
      tr.valid = false;  // divergent trial; others may still succeed
    }
  });

  if (trace)
    for (auto& t : traces)
      trace->insert(trace->end(), t.begin(), t.end());

  int best = -1;
  for (int k = 0; k < cfg.n_trials; ++k)
    if (trials[k].valid && (best < 0 || trials[k].loss < trials[best].loss))
      best = k;
  if (best < 0)
    throw NumericalError("stage1: all trajectory trials diverged");

  TrialResult& win = trials[best];

  // Gauss-Newton polish against the winning assignment, one particle at a
  // time, then a final re-scored assignment. Outlier matches (merged peaks
  // near track crossings) are dropped first.
  bool refine_ok = true;
  const int num_times = observed.num_times();
  const double pitch = geom.detector_pitch();
  for (int n = 0; n < n_particles; ++n) {
    std::vector<int> assigned(num_times, -1);
    std::vector<double> residuals;
    for (int mt = 0; mt < num_times; ++mt) {
      assigned[mt] = win.assignment[mt][n];
      if (assigned[mt] < 0) continue;
      const double t = geom.time_sample(mt);
      residuals.push_back(
          (mode_map(win.etas[n], t, geom) -
           observed.per_time[mt][assigned[mt]].position)
              .norm());
    }
    if (!residuals.empty()) {
      std::vector<double> sorted = residuals;
      std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2,
                       sorted.end());
      const double median = sorted[sorted.size() / 2];
      const double cut = std::max(cfg.outlier_median_factor * median,
                                  cfg.outlier_pitch_floor * pitch);
      std::size_t ri = 0;
      for (int mt = 0; mt < num_times; ++mt) {
        if (assigned[mt] < 0) continue;
        if (residuals[ri++] > cut) assigned[mt] = -1;
      }
    }
    const RefineResult rr = newton_refine(win.etas[n], observed, assigned, geom,
                                          cfg.variables, cfg.refine);
    win.etas[n] = rr.eta;
    refine_ok = refine_ok && rr.converged;
  }
  const AssignmentLossResult refined = assignment_loss(win.etas, observed, geom);

  TrajectoryEstimate out;
  out.etas = std::move(win.etas);
  out.loss = refined.loss;
  out.assignment = refined.assignment;
  out.trial_index = best;
  out.converged = win.converged && refine_ok;
  return out;
}

TrajectoryEstimate optimize_trajectories(const Sinogram& data,
                                         const Stage1Config& cfg,
                                         int n_particles,
                                         Stage1Trace* trace) {
  const ModeSet modes = detect_modes(data, cfg.peaks);
  return optimize_trajectories(modes, data.geometry, cfg, n_particles, trace);
}

}  // namespace gmmct
