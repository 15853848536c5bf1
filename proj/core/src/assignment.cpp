#include <limits>
#include <vector>

#include "gmmct/errors.hpp"
#include "gmmct/optim.hpp"

namespace gmmct {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Shortest augmenting path over the reduced costs, one new row per call.
// cost is nr x nc with nr <= nc. Returns the sink column.
int augmenting_path(const Eigen::MatrixXd& cost, int start_row,
                    std::vector<double>& u, std::vector<double>& v,
                    const std::vector<int>& row4col, std::vector<int>& path,
                    std::vector<bool>& scanned_rows,
                    std::vector<bool>& scanned_cols,
                    std::vector<double>& shortest, double* out_min) {
  const int nc = static_cast<int>(cost.cols());
  std::fill(shortest.begin(), shortest.end(), kInf);
  std::fill(scanned_rows.begin(), scanned_rows.end(), false);
  std::fill(scanned_cols.begin(), scanned_cols.end(), false);
  std::fill(path.begin(), path.end(), -1);

  double min_val = 0.0;
  int i = start_row;
  int sink = -1;
  while (sink == -1) {
    scanned_rows[i] = true;
    int best_j = -1;
    double lowest = kInf;
    for (int j = 0; j < nc; ++j) {
      if (scanned_cols[j]) continue;
      const double r = min_val + cost(i, j) - u[i] - v[j];
      if (r < shortest[j]) {
        shortest[j] = r;
        path[j] = i;
      }
      if (shortest[j] < lowest ||
          (shortest[j] == lowest && best_j >= 0 && row4col[j] == -1 &&
           row4col[best_j] != -1)) {
        lowest = shortest[j];
        best_j = j;
      }
    }
    if (best_j < 0 || lowest == kInf)
      throw NumericalError("rectangular_assignment: infeasible cost matrix");
    min_val = lowest;
    scanned_cols[best_j] = true;
    if (row4col[best_j] == -1)
      sink = best_j;
    else
      i = row4col[best_j];
  }
  *out_min = min_val;
  return sink;
}

AssignmentResult solve_wide(const Eigen::MatrixXd& cost) {
  const int nr = static_cast<int>(cost.rows());
  const int nc = static_cast<int>(cost.cols());
  std::vector<double> u(nr, 0.0), v(nc, 0.0), shortest(nc, 0.0);
  std::vector<int> row4col(nc, -1), col4row(nr, -1), path(nc, -1);
  std::vector<bool> sr(nr, false), sc(nc, false);

  for (int cur = 0; cur < nr; ++cur) {
    double min_val = 0.0;
    const int sink =
        augmenting_path(cost, cur, u, v, row4col, path, sr, sc, shortest, &min_val);
    u[cur] += min_val;
    for (int i = 0; i < nr; ++i)
      if (sr[i] && i != cur) u[i] += min_val - shortest[col4row[i]];
    for (int j = 0; j < nc; ++j)
      if (sc[j]) v[j] -= min_val - shortest[j];

    int j = sink;
    for (;;) {
      const int i = path[j];
      row4col[j] = i;
      std::swap(col4row[i], j);
      if (i == cur) break;
    }
  }

  AssignmentResult out;
  out.row_to_col = col4row;
  out.col_to_row = row4col;
  out.total_cost = 0.0;
  for (int i = 0; i < nr; ++i)
    if (col4row[i] >= 0) out.total_cost += cost(i, col4row[i]);
  return out;
}

}  // namespace

AssignmentResult rectangular_assignment(const Eigen::MatrixXd& cost) {
  if (cost.rows() < 1 || cost.cols() < 1)
    throw DimensionError("rectangular_assignment: empty cost matrix");
  if (!cost.allFinite())
    throw NumericalError("rectangular_assignment: costs must be finite");
  if (cost.rows() <= cost.cols()) return solve_wide(cost);

  const AssignmentResult t = solve_wide(cost.transpose());
  AssignmentResult out;
  out.row_to_col = t.col_to_row;
  out.col_to_row = t.row_to_col;
  out.total_cost = t.total_cost;
  return out;
}

}  // namespace gmmct
