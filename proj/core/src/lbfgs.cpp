#include <cmath>
#include <deque>
#include <limits>

#include "gmmct/errors.hpp"
#include "gmmct/optim.hpp"

namespace gmmct {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct EvalPoint {
  double a = 0.0;       // step length
  double f = kInf;      // phi(a)
  double dphi = 0.0;    // phi'(a)
};

class LineObjective {
 public:
  LineObjective(const Objective& fn, const Eigen::VectorXd& x,
                const Eigen::VectorXd& dir)
      : fn_(fn), x_(x), dir_(dir), xa_(x.size()), grad_(x.size()) {}

  EvalPoint eval(double a) {
    xa_ = x_ + a * dir_;
    double f = fn_(xa_, grad_);
    if (!std::isfinite(f)) f = kInf;
    return {a, f, grad_.dot(dir_)};
  }

  const Eigen::VectorXd& last_x() const { return xa_; }
  const Eigen::VectorXd& last_grad() const { return grad_; }

 private:
  const Objective& fn_;
  const Eigen::VectorXd& x_;
  const Eigen::VectorXd& dir_;
  Eigen::VectorXd xa_;
  Eigen::VectorXd grad_;
};

// Strong-Wolfe search (bracket then zoom with bisection). Returns whether a
// step satisfying both conditions was accepted; "out" holds the final trial.
bool wolfe_line_search(LineObjective& line, double f0, double dphi0,
                       const MinimizeSettings& cfg, EvalPoint* out) {
  const double c1 = cfg.wolfe_c1;
  const double c2 = cfg.wolfe_c2;
  int evals = 0;

  auto zoom = [&](EvalPoint lo, EvalPoint hi) -> bool {
    while (evals < cfg.max_line_search_steps) {
      EvalPoint mid = line.eval(0.5 * (lo.a + hi.a));
      ++evals;
      if (mid.f > f0 + c1 * mid.a * dphi0 || mid.f >= lo.f) {
        hi = mid;
      } else {
        if (std::abs(mid.dphi) <= -c2 * dphi0) {
          *out = mid;
          return true;
        }
        if (mid.dphi * (hi.a - lo.a) >= 0.0) hi = lo;
        lo = mid;
      }
      if (std::abs(hi.a - lo.a) < 1e-16 * std::max(1.0, lo.a)) break;
    }
    // Fall back to the best sufficient-decrease point seen.
    if (lo.f < f0) {
      *out = line.eval(lo.a);
      return true;
    }
    return false;
  };

  EvalPoint prev{0.0, f0, dphi0};
  double a = 1.0;
  for (; evals < cfg.max_line_search_steps;) {
    EvalPoint cur = line.eval(a);
    ++evals;
    if (cur.f > f0 + c1 * a * dphi0 || (evals > 1 && cur.f >= prev.f))
      return zoom(prev, cur);
    if (std::abs(cur.dphi) <= -c2 * dphi0) {
      *out = cur;
      return true;
    }
    if (cur.dphi >= 0.0) return zoom(cur, prev);
    prev = cur;
    a *= 2.0;
    if (a > 1e10) break;
  }
  return false;
}

}  // namespace

MinimizeResult minimize(const Objective& fn, const Eigen::VectorXd& x0,
                        const MinimizeSettings& settings,
                        const IterationCallback& callback) {
  const auto n = x0.size();
  Eigen::VectorXd x = x0;
  Eigen::VectorXd grad(n);
  double f = fn(x, grad);
  if (!std::isfinite(f) || !grad.allFinite())
    throw NumericalError("minimize: objective is non-finite at x0");

  std::deque<Eigen::VectorXd> s_hist, y_hist;
  std::deque<double> rho_hist;

  MinimizeResult result;
  result.x = x;
  result.f = f;
  result.grad_norm = grad.norm();
  if (callback) callback(0, f, result.grad_norm);

  Eigen::VectorXd dir(n), q(n);
  std::vector<double> alpha_buf;

  for (int iter = 0; iter < settings.max_iterations; ++iter) {
    const double gnorm = grad.norm();
    result.x = x;
    result.f = f;
    result.grad_norm = gnorm;
    result.iterations = iter;
    if (gnorm < settings.gradient_tolerance) {
      result.status = MinimizeStatus::kConverged;
      return result;
    }

    // Two-loop recursion.
    q = grad;
    const int m = static_cast<int>(s_hist.size());
    alpha_buf.assign(m, 0.0);
    for (int i = m - 1; i >= 0; --i) {
      alpha_buf[i] = rho_hist[i] * s_hist[i].dot(q);
      q -= alpha_buf[i] * y_hist[i];
    }
    if (m > 0) {
      const double gamma =
          s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
      q *= gamma;
    }
    for (int i = 0; i < m; ++i) {
      const double beta = rho_hist[i] * y_hist[i].dot(q);
      q += (alpha_buf[i] - beta) * s_hist[i];
    }
    dir = -q;

    double dphi0 = grad.dot(dir);
    if (!(dphi0 < 0.0)) {
      // Not a descent direction; restart from steepest descent.
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      dir = -grad;
      dphi0 = -gnorm * gnorm;
    }

    LineObjective line(fn, x, dir);
    EvalPoint accepted;
    if (!wolfe_line_search(line, f, dphi0, settings, &accepted)) {
      result.status = MinimizeStatus::kLineSearchFailure;
      return result;
    }

    const Eigen::VectorXd x_new = line.last_x();
    const Eigen::VectorXd& g_new = line.last_grad();
    const Eigen::VectorXd s = x_new - x;
    const Eigen::VectorXd y = g_new - grad;
    const double ys = y.dot(s);
    if (ys > 1e-10 * s.norm() * y.norm()) {
      s_hist.push_back(s);
      y_hist.push_back(y);
      rho_hist.push_back(1.0 / ys);
      if (static_cast<int>(s_hist.size()) > settings.memory) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
    x = x_new;
    f = accepted.f;
    grad = g_new;
    if (callback) callback(iter + 1, f, grad.norm());
  }

  result.x = x;
  result.f = f;
  result.grad_norm = grad.norm();
  result.iterations = settings.max_iterations;
  result.status = result.grad_norm < settings.gradient_tolerance
                      ? MinimizeStatus::kConverged
                      : MinimizeStatus::kMaxIterations;
  return result;
}

double check_gradient(const Objective& fn, const Eigen::VectorXd& x,
                      double rel_step) {
  Eigen::VectorXd grad(x.size());
  const double f0 = fn(x, grad);
  const double scale = std::max(1.0, std::abs(f0));
  Eigen::VectorXd xp = x;
  Eigen::VectorXd dummy(x.size());
  double worst = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double h = rel_step * std::max(1.0, std::abs(x[i]));
    xp[i] = x[i] + h;
    const double fp = fn(xp, dummy);
    xp[i] = x[i] - h;
    const double fm = fn(xp, dummy);
    xp[i] = x[i];
    const double fd = (fp - fm) / (2.0 * h);
    const double denom = std::max(std::abs(fd), std::abs(grad[i]));
    if (denom <= 1e-12 * scale) continue;
    worst = std::max(worst, std::abs(fd - grad[i]) / denom);
  }
  return worst;
}

}  // namespace gmmct
