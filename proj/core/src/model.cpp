#include "gmmct/model.hpp"

#include <cmath>
#include <string>

#include "gmmct/errors.hpp"
#include "gmmct/parallel.hpp"

namespace gmmct {

namespace {
constexpr int kMaxDim = 8;
constexpr double kSqrtPi = 1.7724538509055160273;
}  // namespace

void ParticleParams::validate() const {
  const int d = dim();
  if (d < 1 || u.cols() != d) throw DimensionError("particle: U must be square");
  if (!(alpha > 0.0)) throw NumericalError("particle: alpha must be > 0");
  for (int i = 0; i < d; ++i) {
    if (!(u(i, i) > 0.0))
      throw NumericalError("particle: U diagonal must be positive");
    for (int j = 0; j < i; ++j)
      if (u(i, j) != 0.0)
        throw NumericalError("particle: U must be upper triangular");
  }
  if (theta.size() != rotation_dim(d))
    throw DimensionError("particle: theta must have length d(d-1)/2");
  if (eta.mu.size() != d || eta.v.size() != d || eta.a.size() != d)
    throw DimensionError("particle: trajectory parameters must have length d");
}

int Scene::dim() const {
  return particles.empty() ? 0 : particles.front().dim();
}

void Scene::validate() const {
  if (particles.empty()) throw DimensionError("scene: at least one particle");
  const int d = particles.front().dim();
  for (const auto& p : particles) {
    p.validate();
    if (p.dim() != d)
      throw DimensionError("scene: particles must share one dimension");
  }
}

void Sinogram::validate() const {
  geometry.validate();
  if (values.rows() != geometry.num_detectors ||
      values.cols() != geometry.num_times)
    throw DimensionError("sinogram: grid does not match geometry");
  if (!values.allFinite()) throw NumericalError("sinogram: non-finite values");
}

EffectiveGaussian effective_gaussian(const ParticleParams& p, double t) {
  p.validate();
  EffectiveGaussian out;
  out.u = p.u * rotation_matrix(t * p.theta, p.dim()).transpose();
  out.center = trajectory(p.eta, t);
  return out;
}

double xray_gaussian(const Eigen::MatrixXd& u, const Eigen::VectorXd& center,
                     const Eigen::VectorXd& s, const Eigen::VectorXd& r) {
  const int d = static_cast<int>(s.size());
  if (u.rows() != d || u.cols() != d || center.size() != d || r.size() != d)
    throw DimensionError("xray_gaussian: dimension mismatch");
  const Eigen::VectorXd delta = r - s;
  const double len = delta.norm();
  if (len < 1e-14)
    throw DegenerateGeometryError("xray_gaussian: source equals detector point");
  const Eigen::VectorXd w = u * delta;
  const Eigen::VectorXd z = u * (s - center);
  const double nw2 = w.squaredNorm();
  if (!(nw2 > 1e-300 * len * len))
    throw NumericalError("xray_gaussian: singular shape matrix along the ray");
  const double q = w.dot(z);
  return kSqrtPi * len / std::sqrt(nw2) * std::exp(q * q / nw2 - z.squaredNorm());
}

namespace detail {

ParticleTimeTerms particle_time_terms(const ParticleParams& p, double t,
                                      bool with_theta_derivatives) {
  const int d = p.dim();
  ParticleTimeTerms tt;
  tt.t = t;
  const Eigen::VectorXd omega = t * p.theta;
  tt.rot = rotation_matrix(omega, d);
  tt.v_eff = p.u * tt.rot.transpose();
  tt.center = trajectory(p.eta, t);
  if (with_theta_derivatives) {
    tt.dv_dtheta.reserve(rotation_dim(d));
    for (int k = 0; k < rotation_dim(d); ++k)
      tt.dv_dtheta.push_back(
          t * p.u * rotation_matrix_derivative(omega, d, k).transpose());
  }
  return tt;
}

double particle_term(const ParticleParams& p, const ParticleTimeTerms& tt,
                     const double* s, const double* r, int d, double weight,
                     double* grad) {
  if (d > kMaxDim) throw DimensionError("particle_term: dimension above cap");
  double delta[kMaxDim], sigma[kMaxDim], w[kMaxDim], z[kMaxDim];
  double len2 = 0.0;
  for (int i = 0; i < d; ++i) {
    delta[i] = r[i] - s[i];
    sigma[i] = s[i] - tt.center[i];
    len2 += delta[i] * delta[i];
  }
  if (len2 < 1e-28)
    throw DegenerateGeometryError("forward: source equals detector point");
  const Eigen::MatrixXd& v = tt.v_eff;
  double nw2 = 0.0, q = 0.0, nz2 = 0.0;
  for (int i = 0; i < d; ++i) {
    double wi = 0.0, zi = 0.0;
    for (int j = 0; j < d; ++j) {
      wi += v(i, j) * delta[j];
      zi += v(i, j) * sigma[j];
    }
    w[i] = wi;
    z[i] = zi;
    nw2 += wi * wi;
    q += wi * zi;
    nz2 += zi * zi;
  }
  if (!(nw2 > 1e-300 * len2))
    throw NumericalError("forward: singular shape matrix along the ray");
  const double g = kSqrtPi * std::sqrt(len2 / nw2) * std::exp(q * q / nw2 - nz2);
  const double value = p.alpha * g;
  if (grad == nullptr) return value;

  // dG(dw, dz) = G * (a1 <w,dw> + a2 (<dw,z> + <w,dz>) + a3 <z,dz>)
  const double a1 = -1.0 / nw2 - 2.0 * q * q / (nw2 * nw2);
  const double a2 = 2.0 * q / nw2;
  const double a3 = -2.0;
  const double ag = p.alpha * g;

  int idx = 0;
  grad[idx++] += weight * g;  // d/d alpha

  // d/d U_ij with dV = E_ij R^T: dw = e_i (R^T delta)_j, dz = e_i (R^T sigma)_j.
  double rd[kMaxDim], rs[kMaxDim];
  const Eigen::MatrixXd& rot = tt.rot;
  for (int j = 0; j < d; ++j) {
    double pj = 0.0, qj = 0.0;
    for (int i = 0; i < d; ++i) {
      pj += rot(i, j) * delta[i];
      qj += rot(i, j) * sigma[i];
    }
    rd[j] = pj;
    rs[j] = qj;
  }
  for (int i = 0; i < d; ++i)
    for (int j = i; j < d; ++j)
      grad[idx++] += weight * ag *
                     (a1 * w[i] * rd[j] + a2 * (z[i] * rd[j] + w[i] * rs[j]) +
                      a3 * z[i] * rs[j]);

  // d/d theta_k with dV precomputed in dv_dtheta.
  for (const auto& dv : tt.dv_dtheta) {
    double dww = 0.0, dwz = 0.0, wdz = 0.0, zdz = 0.0;
    for (int i = 0; i < d; ++i) {
      double dwi = 0.0, dzi = 0.0;
      for (int j = 0; j < d; ++j) {
        dwi += dv(i, j) * delta[j];
        dzi += dv(i, j) * sigma[j];
      }
      dww += w[i] * dwi;
      dwz += dwi * z[i];
      wdz += w[i] * dzi;
      zdz += z[i] * dzi;
    }
    grad[idx++] += weight * ag * (a1 * dww + a2 * (dwz + wdz) + a3 * zdz);
  }

  // d/d v_j: dz = -t V e_j, dw = 0.
  for (int j = 0; j < d; ++j) {
    double vtw = 0.0, vtz = 0.0;
    for (int i = 0; i < d; ++i) {
      vtw += v(i, j) * w[i];
      vtz += v(i, j) * z[i];
    }
    grad[idx++] += weight * ag * (-tt.t) * (a2 * vtw + a3 * vtz);
  }
  return value;
}

}  // namespace detail

double forward_operator(const Scene& scene, const Eigen::VectorXd& s,
                        const Eigen::VectorXd& r, double t) {
  scene.validate();
  double total = 0.0;
  for (const auto& p : scene.particles) {
    const EffectiveGaussian eff = effective_gaussian(p, t);
    total += p.alpha * xray_gaussian(eff.u, eff.center, s, r);
  }
  return total;
}

std::pair<double, Eigen::VectorXd> forward_gradients(const Scene& scene,
                                                     const Eigen::VectorXd& s,
                                                     const Eigen::VectorXd& r,
                                                     double t) {
  scene.validate();
  const int d = scene.dim();
  const int per = particle_gradient_dim(d);
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(per * scene.size());
  double value = 0.0;
  for (int n = 0; n < scene.size(); ++n) {
    const auto tt = detail::particle_time_terms(scene.particles[n], t, true);
    value += detail::particle_term(scene.particles[n], tt, s.data(), r.data(),
                                   d, 1.0, grad.data() + n * per);
  }
  return {value, std::move(grad)};
}

SinogramEvaluator::SinogramEvaluator(const Scene& scene,
                                     const AcquisitionGeometry& geom,
                                     bool with_gradients)
    : scene_(scene), geom_(geom) {
  scene_.validate();
  geom_.validate();
  if (scene_.dim() != geom_.dim())
    throw DimensionError("evaluator: scene/geometry dimension mismatch");
  const int d = scene_.dim();
  per_particle_ = particle_gradient_dim(d);
  grad_dim_ = with_gradients ? per_particle_ * scene_.size() : 0;
  terms_.resize(geom_.num_times);
  for (int mt = 0; mt < geom_.num_times; ++mt) {
    const double t = geom_.time_sample(mt);
    terms_[mt].reserve(scene_.size());
    for (const auto& p : scene_.particles)
      terms_[mt].push_back(detail::particle_time_terms(p, t, with_gradients));
  }
  detectors_.reserve(geom_.num_detectors);
  for (int mr = 0; mr < geom_.num_detectors; ++mr)
    detectors_.push_back(geom_.detector_position(mr));
}

double SinogramEvaluator::value(int det_index, int time_index) const {
  const int d = scene_.dim();
  const double* s = geom_.source.data();
  const double* r = detectors_[det_index].data();
  double total = 0.0;
  for (int n = 0; n < scene_.size(); ++n)
    total += detail::particle_term(scene_.particles[n], terms_[time_index][n],
                                   s, r, d, 0.0, nullptr);
  return total;
}

double SinogramEvaluator::value_and_accumulate(int det_index, int time_index,
                                               double weight,
                                               double* grad) const {
  const int d = scene_.dim();
  const double* s = geom_.source.data();
  const double* r = detectors_[det_index].data();
  double total = 0.0;
  for (int n = 0; n < scene_.size(); ++n)
    total += detail::particle_term(scene_.particles[n], terms_[time_index][n],
                                   s, r, d, weight, grad + n * per_particle_);
  return total;
}

Sinogram simulate_sinogram(const Scene& scene, const AcquisitionGeometry& geom) {
  const SinogramEvaluator eval(scene, geom, false);
  Sinogram out;
  out.geometry = geom;
  out.values.resize(geom.num_detectors, geom.num_times);
  parallel_for(geom.num_times, [&](std::size_t mt) {
    for (int mr = 0; mr < geom.num_detectors; ++mr)
      out.values(mr, static_cast<int>(mt)) = eval.value(mr, static_cast<int>(mt));
  });
  return out;
}

}  // namespace gmmct
