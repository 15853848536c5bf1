#include <cmath>
#include <cstdio>
#include <sstream>

#include "gmmct/experiment.hpp"
#include "gmmct/modes.hpp"

namespace gmmct {

Eigen::MatrixXd render_particle(const ParticleParams& p,
                                const RenderSettings& settings) {
  if (p.dim() != 2)
    throw DimensionError("render_particle: rendering supports d = 2");
  const EffectiveGaussian eff = effective_gaussian(p, settings.time);
  const int res = settings.resolution;
  Eigen::MatrixXd img(res, res);
  const double x0 = eff.center[0] - settings.half_width;
  const double y0 = eff.center[1] - settings.half_width;
  const double step = 2.0 * settings.half_width / (res - 1);
  for (int iy = 0; iy < res; ++iy) {
    for (int ix = 0; ix < res; ++ix) {
      Eigen::Vector2d x(x0 + ix * step, y0 + iy * step);
      img(iy, ix) = p.alpha * std::exp(-(eff.u * (x - eff.center)).squaredNorm());
    }
  }
  return img;
}

namespace {

// Match estimates to truth by how close their projected mode tracks run over
// the acquisition window; this is well defined even when two particles share
// a velocity. Falls back to velocity distance when the tracks degenerate.
std::vector<int> match_by_trajectory(const Scene& truth,
                                     const std::vector<TrajectoryParams>& est,
                                     const AcquisitionGeometry& geom) {
  const int n = static_cast<int>(est.size());
  Eigen::MatrixXd cost = Eigen::MatrixXd::Zero(n, n);
  bool usable = false;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      double c = 0.0;
      int count = 0;
      for (int mt = 0; mt < geom.num_times; ++mt) {
        const double t = geom.time_sample(mt);
        try {
          c += (mode_map(est[i], t, geom) -
                mode_map(truth.particles[j].eta, t, geom))
                   .squaredNorm();
          ++count;
        } catch (const DegenerateGeometryError&) {
        }
      }
      if (count > 0) usable = true;
      cost(i, j) = count > 0 ? c / count : 1e30;
    }
  }
  if (!usable) {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        cost(i, j) = (est[i].v - truth.particles[j].eta.v).squaredNorm();
  }
  return rectangular_assignment(cost).row_to_col;
}

std::string format_matrix(const Eigen::MatrixXd& m) {
  std::ostringstream os;
  os << "[";
  for (int i = 0; i < m.rows(); ++i) {
    if (i) os << "; ";
    for (int j = 0; j < m.cols(); ++j) {
      if (j) os << " ";
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.4f", m(i, j));
      os << buf;
    }
  }
  os << "]";
  return os.str();
}

std::string format_vector(const Eigen::VectorXd& v) {
  std::ostringstream os;
  os << "(";
  for (int i = 0; i < v.size(); ++i) {
    if (i) os << ", ";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v[i]);
    os << buf;
  }
  os << ")";
  return os.str();
}

}  // namespace

MetricsReport metrics_report(const Scene& truth,
                             const std::vector<TrajectoryParams>& est_etas,
                             const MorphologyEstimate& est_morph,
                             const AcquisitionGeometry& geom,
                             const RenderSettings& render) {
  truth.validate();
  const int n = truth.size();
  if (static_cast<int>(est_etas.size()) != n ||
      static_cast<int>(est_morph.alphas.size()) != n)
    throw DimensionError("metrics: truth/estimate particle count mismatch");
  if (truth.dim() != geom.dim())
    throw DimensionError("metrics: truth/geometry dimension mismatch");

  const std::vector<int> est_to_truth =
      match_by_trajectory(truth, est_etas, geom);

  MetricsReport report;
  std::ostringstream table;
  table << "particle  quantity    truth                                 "
           "estimate\n";
  for (int i = 0; i < n; ++i) {
    const int j = est_to_truth[i];
    const ParticleParams& tp = truth.particles[j];

    ParticleMetrics m;
    m.estimate_index = i;
    m.truth_index = j;
    m.velocity_error_inf =
        (est_etas[i].v - tp.eta.v).lpNorm<Eigen::Infinity>();
    m.theta_error_inf =
        (est_morph.thetas[i] - tp.theta).lpNorm<Eigen::Infinity>();
    m.alpha_rel_error = std::abs(est_morph.alphas[i] - tp.alpha) / tp.alpha;
    const Eigen::MatrixXd gram_t = tp.u.transpose() * tp.u;
    const Eigen::MatrixXd gram_e =
        est_morph.us[i].transpose() * est_morph.us[i];
    m.gram_rel_error = (gram_e - gram_t).norm() / gram_t.norm();

    if (truth.dim() == 2) {
      ParticleParams ep;
      ep.alpha = est_morph.alphas[i];
      ep.u = est_morph.us[i];
      ep.theta = est_morph.thetas[i];
      ep.eta = est_etas[i];
      // Both rendered on the grid anchored at the truth particle.
      RenderSettings rs = render;
      const Eigen::MatrixXd img_t = render_particle(tp, rs);
      ParticleParams anchored = ep;
      anchored.eta = tp.eta;
      const Eigen::MatrixXd img_e = render_particle(anchored, rs);
      m.rendered_max_abs_error = (img_e - img_t).cwiseAbs().maxCoeff();
    }
    report.per_particle.push_back(m);

    table << "n=" << (j + 1) << "\n";
    table << "  alpha   " << tp.alpha << "  ->  " << est_morph.alphas[i] << "\n";
    table << "  U       " << format_matrix(tp.u) << "  ->  "
          << format_matrix(est_morph.us[i]) << "\n";
    table << "  theta   " << format_vector(tp.theta) << "  ->  "
          << format_vector(est_morph.thetas[i]) << "\n";
    table << "  v       " << format_vector(tp.eta.v) << "  ->  "
          << format_vector(est_etas[i].v) << "\n";
  }
  report.table = table.str();
  return report;
}

}  // namespace gmmct
