#pragma once

#include <functional>
#include <vector>

#include <Eigen/Dense>

namespace gmmct {

/// Objective callback: returns f(x) and fills grad (resized by the caller).
/// Implementations may return +inf/NaN outside their domain; the line search
/// treats non-finite values as rejected steps.
using Objective =
    std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& grad)>;

/// Invoked after every accepted iterate: (iteration, f, gradient norm).
using IterationCallback = std::function<void(int, double, double)>;

enum class MinimizeStatus { kConverged, kMaxIterations, kLineSearchFailure };

struct MinimizeSettings {
  int max_iterations = 500;
  double gradient_tolerance = 1e-8;
  int memory = 10;          // L-BFGS history length
  double wolfe_c1 = 1e-4;   // sufficient decrease
  double wolfe_c2 = 0.9;    // curvature
  int max_line_search_steps = 60;
};

struct MinimizeResult {
  Eigen::VectorXd x;
  double f = 0.0;
  double grad_norm = 0.0;
  int iterations = 0;
  MinimizeStatus status = MinimizeStatus::kMaxIterations;

  bool converged() const { return status == MinimizeStatus::kConverged; }
};

/// Limited-memory BFGS with a strong-Wolfe line search. The accepted
/// objective sequence is non-increasing; on line-search failure the best
/// iterate found so far is returned. Throws NumericalError when the
/// objective is non-finite at x0.
MinimizeResult minimize(const Objective& fn, const Eigen::VectorXd& x0,
                        const MinimizeSettings& settings = {},
                        const IterationCallback& callback = nullptr);

/// Globally optimal min-cost matching of min(n_rows, n_cols) pairs in a
/// rectangular cost matrix (shortest augmenting path / Jonker-Volgenant
/// family). Deterministic: rows are augmented in ascending order and ties in
/// the column scan prefer lower, unassigned columns.
struct AssignmentResult {
  std::vector<int> row_to_col;  // -1 where a row stays unmatched
  std::vector<int> col_to_row;  // -1 where a column stays unmatched
  double total_cost = 0.0;
};

AssignmentResult rectangular_assignment(const Eigen::MatrixXd& cost);

/// Lawson-Hanson active-set non-negative least squares:
/// min |A x - b| s.t. x >= 0, satisfying the KKT conditions to tight
/// tolerance. Rank-deficient passive sets are solved in the minimum-norm
/// sense and flagged.
struct NnlsResult {
  Eigen::VectorXd x;
  bool rank_deficient = false;
  int iterations = 0;
};

NnlsResult nnls(const Eigen::MatrixXd& a, const Eigen::VectorXd& b);

/// Worst per-coordinate relative error between the analytic gradient and a
/// central finite difference with step rel_step * max(1, |x_i|).
double check_gradient(const Objective& fn, const Eigen::VectorXd& x,
                      double rel_step = 1e-6);

}  // namespace gmmct
