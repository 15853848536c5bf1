#include "gmmct/modes.hpp"

#include <algorithm>
#include <cmath>

#include "gmmct/errors.hpp"
#include "gmmct/parallel.hpp"

namespace gmmct {

bool ModeSet::all_empty() const {
  for (const auto& col : per_time)
    if (!col.empty()) return false;
  return true;
}

int ModeSet::total_count() const {
  int n = 0;
  for (const auto& col : per_time) n += static_cast<int>(col.size());
  return n;
}

namespace {

// Classic topographic prominence: height above the higher of the two
// lowest saddles reachable before meeting a taller sample or the boundary.
double peak_prominence(const Eigen::VectorXd& col, int peak) {
  const double h = col[peak];
  double left_min = h;
  for (int i = peak - 1; i >= 0; --i) {
    if (col[i] > h) break;
    left_min = std::min(left_min, col[i]);
  }
  double right_min = h;
  for (int i = peak + 1; i < col.size(); ++i) {
    if (col[i] > h) break;
    right_min = std::min(right_min, col[i]);
  }
  return h - std::max(left_min, right_min);
}

// Vertex offset of the parabola through (-1,a), (0,b), (1,c), clamped to
// half a bin. Log values are used when positive: a Gaussian bump is exactly
// quadratic in log space.
double subbin_offset(double a, double b, double c) {
  if (a > 0.0 && b > 0.0 && c > 0.0) {
    a = std::log(a);
    b = std::log(b);
    c = std::log(c);
  }
  const double denom = a - 2.0 * b + c;
  if (!(denom < 0.0)) return 0.0;
  const double off = 0.5 * (a - c) / denom;
  return std::clamp(off, -0.5, 0.5);
}

}  // namespace

ModeSet detect_modes(const Sinogram& g, const PeakConfig& cfg) {
  g.validate();
  const auto& geom = g.geometry;
  ModeSet out;
  out.per_time.resize(geom.num_times);

  parallel_for(geom.num_times, [&](std::size_t mt_s) {
    const int mt = static_cast<int>(mt_s);
    const Eigen::VectorXd col = g.values.col(mt);
    const double col_max = col.maxCoeff();
    if (!(col_max > 0.0)) return;

    std::vector<int> candidates;
    for (int i = 1; i + 1 < col.size(); ++i)
      if (col[i] > col[i - 1] && col[i] > col[i + 1]) candidates.push_back(i);

    const double min_prom = cfg.prominence_fraction * col_max;
    std::vector<int> kept;
    for (int i : candidates)
      if (peak_prominence(col, i) >= min_prom) kept.push_back(i);

    // Enforce minimum separation, higher peaks first.
    std::sort(kept.begin(), kept.end(), [&](int a, int b) {
      if (col[a] != col[b]) return col[a] > col[b];
      return a < b;
    });
    std::vector<int> separated;
    for (int i : kept) {
      bool ok = true;
      for (int j : separated)
        if (std::abs(i - j) < cfg.min_separation_bins) {
          ok = false;
          break;
        }
      if (ok) separated.push_back(i);
    }
    if (static_cast<int>(separated.size()) > cfg.max_peaks)
      separated.resize(cfg.max_peaks);
    std::sort(separated.begin(), separated.end());

    auto& entries = out.per_time[mt];
    entries.reserve(separated.size());
    for (int i : separated) {
      ModeEntry e;
      e.detector_index = i;
      e.refined_index = i + subbin_offset(col[i - 1], col[i], col[i + 1]);
      e.position = geom.detector_position(e.refined_index);
      e.value = col[i];
      entries.push_back(std::move(e));
    }
  });
  return out;
}

Eigen::VectorXd mode_map(const TrajectoryParams& eta, double t,
                         const AcquisitionGeometry& geom) {
  const int fc = geom.fixed_component_index;
  const Eigen::VectorXd c = trajectory(eta, t);
  const double denom = geom.source[fc] - c[fc];
  if (std::abs(denom) < 1e-12)
    throw DegenerateGeometryError(
        "mode_map: trajectory level with the source in the pinned coordinate");
  const double lambda = (geom.detector_plane_coordinate() - geom.source[fc]) / denom;
  return geom.source + lambda * (geom.source - c);
}

Eigen::MatrixXd mode_map_jacobian(const TrajectoryParams& eta, double t,
                                  const AcquisitionGeometry& geom) {
  const int d = geom.dim();
  const int fc = geom.fixed_component_index;
  const Eigen::VectorXd c = trajectory(eta, t);
  const double denom = geom.source[fc] - c[fc];
  if (std::abs(denom) < 1e-12)
    throw DegenerateGeometryError(
        "mode_map_jacobian: trajectory level with the source");
  const double r0s0 = geom.detector_plane_coordinate() - geom.source[fc];
  const double lambda = r0s0 / denom;
  const Eigen::VectorXd sc = geom.source - c;

  // r_hat = s + lambda(c) (s - c); dC/dmu = I, dC/dv = tI, dC/da = (t^2/2)I.
  Eigen::MatrixXd jac(d, 3 * d);
  const double factors[3] = {1.0, t, 0.5 * t * t};
  for (int block = 0; block < 3; ++block) {
    const double f = factors[block];
    for (int j = 0; j < d; ++j) {
      // dC = f e_j; dlambda = r0s0 * dC_fc / denom^2.
      const double dlam = (j == fc) ? r0s0 * f / (denom * denom) : 0.0;
      Eigen::VectorXd dr = dlam * sc;
      dr[j] += -lambda * f;
      jac.col(block * d + j) = dr;
    }
  }
  return jac;
}

RefineResult newton_refine(const TrajectoryParams& eta_init,
                           const ModeSet& modes,
                           const std::vector<int>& assigned,
                           const AcquisitionGeometry& geom,
                           TrajectoryVariables vars,
                           const NewtonRefineSettings& settings) {
  const int d = geom.dim();
  const int nvar = trajectory_variable_dim(vars, d);

  std::vector<std::pair<int, const ModeEntry*>> obs;
  for (int mt = 0; mt < modes.num_times() &&
                   mt < static_cast<int>(assigned.size());
       ++mt) {
    const int mi = assigned[mt];
    if (mi < 0) continue;
    if (mi >= static_cast<int>(modes.per_time[mt].size()))
      throw DimensionError("newton_refine: assigned mode index out of range");
    obs.emplace_back(mt, &modes.per_time[mt][mi]);
  }

  RefineResult out;
  out.eta = eta_init;
  if (static_cast<int>(obs.size()) * d < nvar) return out;  // underdetermined

  auto residual = [&](const TrajectoryParams& eta, Eigen::VectorXd* r,
                      Eigen::MatrixXd* jac) {
    if (r) r->resize(obs.size() * d);
    if (jac) jac->resize(obs.size() * d, nvar);
    for (std::size_t k = 0; k < obs.size(); ++k) {
      const double t = geom.time_sample(obs[k].first);
      if (r)
        r->segment(k * d, d) = mode_map(eta, t, geom) - obs[k].second->position;
      if (jac) {
        const Eigen::MatrixXd full = mode_map_jacobian(eta, t, geom);
        Eigen::MatrixXd sel(d, nvar);
        sel.leftCols(d) = full.middleCols(d, d);  // v block
        if (vars != TrajectoryVariables::kVelocity)
          sel.middleCols(d, d) = full.leftCols(d);  // mu block
        if (vars == TrajectoryVariables::kFull)
          sel.rightCols(d) = full.rightCols(d);  // a block
        jac->middleRows(k * d, d) = sel;
      }
    }
  };

  TrajectoryParams eta = eta_init;
  Eigen::VectorXd r;
  Eigen::MatrixXd jac;
  try {
    residual(eta, &r, nullptr);
  } catch (const DegenerateGeometryError&) {
    return out;  // cannot even evaluate at the start; flagged
  }
  double rnorm = r.norm();
  const double init_norm = rnorm;

  bool step_converged = false;
  int iter = 0;
  for (; iter < settings.max_iterations; ++iter) {
    try {
      residual(eta, &r, &jac);
    } catch (const DegenerateGeometryError&) {
      break;
    }
    rnorm = r.norm();
    Eigen::VectorXd step =
        jac.colPivHouseholderQr().solve(-r);
    if (!step.allFinite()) break;
    const double xscale =
        std::max(1.0, trajectory_pack(eta, vars).norm());
    if (step.norm() <= settings.step_tolerance * xscale) {
      step_converged = true;
      break;
    }
    // Backtrack so the residual never increases.
    double scale = 1.0;
    bool improved = false;
    TrajectoryParams trial = eta;
    for (int h = 0; h < 25; ++h) {
      Eigen::VectorXd x = trajectory_pack(eta, vars) + scale * step;
      trajectory_unpack(x, vars, &trial);
      Eigen::VectorXd rt;
      try {
        residual(trial, &rt, nullptr);
      } catch (const DegenerateGeometryError&) {
        scale *= 0.5;
        continue;
      }
      if (rt.norm() <= rnorm) {
        eta = trial;
        rnorm = rt.norm();
        improved = true;
        break;
      }
      scale *= 0.5;
    }
    if (!improved) {
      step_converged = true;  // stationary within backtracking resolution
      break;
    }
  }

  if (!step_converged) {
    out.eta = eta_init;
    out.converged = false;
    out.residual_norm = init_norm;
    out.iterations = iter;
    return out;
  }

  out.eta = eta;
  out.residual_norm = rnorm;
  out.iterations = iter;
  const double pitch = geom.detector_pitch();
  const double rms = rnorm / std::sqrt(static_cast<double>(obs.size()));
  out.converged =
      pitch <= 0.0 || rms <= settings.residual_warn_pitch_fraction * pitch;
  return out;
}

}  // namespace gmmct
