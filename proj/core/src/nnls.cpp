#include <cmath>
#include <vector>

#include "gmmct/errors.hpp"
#include "gmmct/optim.hpp"

namespace gmmct {

namespace {

// Least squares restricted to the passive columns; minimum-norm when the
// passive block is rank deficient.
Eigen::VectorXd passive_solve(const Eigen::MatrixXd& a,
                              const Eigen::VectorXd& b,
                              const std::vector<int>& passive,
                              bool* rank_deficient) {
  Eigen::MatrixXd ap(a.rows(), passive.size());
  for (std::size_t k = 0; k < passive.size(); ++k) ap.col(k) = a.col(passive[k]);
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(ap);
  if (cod.rank() < static_cast<Eigen::Index>(passive.size()))
    *rank_deficient = true;
  return cod.solve(b);
}

}  // namespace

NnlsResult nnls(const Eigen::MatrixXd& a, const Eigen::VectorXd& b) {
  if (a.rows() != b.size())
    throw DimensionError("nnls: A rows must match b length");
  if (!a.allFinite() || !b.allFinite())
    throw NumericalError("nnls: inputs must be finite");

  const int n = static_cast<int>(a.cols());
  NnlsResult result;
  result.x = Eigen::VectorXd::Zero(n);

  Eigen::VectorXd w = a.transpose() * b;
  const double tol = 1e-12 * std::max(1.0, w.lpNorm<Eigen::Infinity>());

  std::vector<bool> in_passive(n, false);
  std::vector<int> passive;
  const int max_outer = 3 * n + 10;

  for (int outer = 0; outer < max_outer; ++outer) {
    result.iterations = outer;
    // Most violated stationarity condition among the active set.
    int j_best = -1;
    double w_best = tol;
    for (int j = 0; j < n; ++j) {
      if (in_passive[j]) continue;
      if (w[j] > w_best) {
        w_best = w[j];
        j_best = j;
      }
    }
    if (j_best < 0) break;
    in_passive[j_best] = true;
    passive.push_back(j_best);

    for (int inner = 0; inner < max_outer; ++inner) {
      Eigen::VectorXd z =
          passive_solve(a, b, passive, &result.rank_deficient);
      double min_z = z.size() > 0 ? z.minCoeff() : 1.0;
      if (min_z > 0.0) {
        result.x.setZero();
        for (std::size_t k = 0; k < passive.size(); ++k)
          result.x[passive[k]] = z[k];
        break;
      }
      // Step toward z until the first passive coordinate hits zero.
      double step = 1.0;
      for (std::size_t k = 0; k < passive.size(); ++k) {
        if (z[k] > 0.0) continue;
        const double xi = result.x[passive[k]];
        const double denom = xi - z[k];
        const double ratio = denom > 0.0 ? xi / denom : 0.0;
        step = std::min(step, ratio);
      }
      for (std::size_t k = 0; k < passive.size(); ++k) {
        const int j = passive[k];
        result.x[j] += step * (z[k] - result.x[j]);
      }
      // Drop coordinates pinned at zero.
      std::vector<int> kept;
      for (int j : passive) {
        if (result.x[j] <= 1e-14 * std::max(1.0, result.x.maxCoeff())) {
          result.x[j] = 0.0;
          in_passive[j] = false;
        } else {
          kept.push_back(j);
        }
      }
      passive = std::move(kept);
      if (passive.empty()) break;
    }
    w = a.transpose() * (b - a * result.x);
  }
  return result;
}

}  // namespace gmmct
