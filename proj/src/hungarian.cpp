#include "sp/hungarian.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace sp {

namespace {

// Assigns every row of an n×m matrix (n <= m) to a distinct column with
// minimum total cost. Returns row_of[col] with -1 for unassigned columns.
// Classic potentials formulation: one virtual column 0 marks the start of
// each augmenting search; indices are shifted by one internally.
std::vector<int> solve_rows_le_cols(const std::vector<double>& a, int n, int m) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> row_of(m + 1, 0);  // 0 = unassigned (rows are 1-based here)
  std::vector<int> way(m + 1, 0);

  for (int i = 1; i <= n; ++i) {
    row_of[0] = i;
    int j0 = 0;
    std::vector<double> min_v(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = row_of[j0];
      double delta = inf;
      int j1 = -1;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a[(i0 - 1) * m + (j - 1)] - u[i0] - v[j];
        if (cur < min_v[j]) {
          min_v[j] = cur;
          way[j] = j0;
        }
        if (min_v[j] < delta) {
          delta = min_v[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[row_of[j]] += delta;
          v[j] -= delta;
        } else {
          min_v[j] -= delta;
        }
      }
      j0 = j1;
    } while (row_of[j0] != 0);
    // Walk the augmenting path back to the virtual column.
    do {
      const int j1 = way[j0];
      row_of[j0] = row_of[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<int> result(m, -1);
  for (int j = 1; j <= m; ++j)
    if (row_of[j] > 0) result[j - 1] = row_of[j] - 1;
  return result;
}

}  // namespace

MatchResult match_hungarian(const Tensor& cost) {
  if (cost.rank() != 2) throw std::invalid_argument("match_hungarian: expected N×L");
  const int n = static_cast<int>(cost.dim(0));
  const int l = static_cast<int>(cost.dim(1));
  if (n < 1 || l < 1)
    throw std::invalid_argument("match_hungarian: needs at least one row and column");
  for (double v : cost.values())
    if (!std::isfinite(v))
      throw std::invalid_argument("match_hungarian: non-finite cost entry");

  MatchResult result;
  if (n <= l) {
    const auto row_of = solve_rows_le_cols(cost.values(), n, l);
    for (int j = 0; j < l; ++j)
      if (row_of[j] >= 0) result.pairs.emplace_back(row_of[j], j);
  } else {
    // Transpose so rows <= cols, then swap the pair order back.
    std::vector<double> t(static_cast<std::size_t>(n) * l);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < l; ++j) t[static_cast<std::size_t>(j) * n + i] = cost(i, j);
    const auto col_of = solve_rows_le_cols(t, l, n);
    for (int i = 0; i < n; ++i)
      if (col_of[i] >= 0) result.pairs.emplace_back(i, col_of[i]);
  }

  std::sort(result.pairs.begin(), result.pairs.end());
  std::vector<char> kernel_used(n, 0), proposal_used(l, 0);
  for (const auto& [kn, pl] : result.pairs) {
    assert(!kernel_used[kn] && !proposal_used[pl]);
    kernel_used[kn] = 1;
    proposal_used[pl] = 1;
    result.total_cost += cost(static_cast<std::size_t>(kn), static_cast<std::size_t>(pl));
  }
  for (int i = 0; i < n; ++i)
    if (!kernel_used[i]) result.unmatched_kernels.push_back(i);
  assert(result.pairs.size() == static_cast<std::size_t>(std::min(n, l)));
  return result;
}

}  // namespace sp
