#pragma once

#include <utility>
#include <vector>

#include "sp/tensor.hpp"

namespace sp {

// Optimal injective assignment between kernels (rows) and proposals (cols).
// pairs holds min(N,L) (kernel, proposal) pairs sorted by kernel index; every
// kernel and proposal appears at most once.
struct MatchResult {
  std::vector<std::pair<int, int>> pairs;
  std::vector<int> unmatched_kernels;
  double total_cost = 0.0;
};

// Minimum-total-cost bipartite matching of an N×L cost matrix (Kuhn–Munkres
// with row/column potentials and shortest augmenting paths, O(n^2 m)).
// Rejects non-finite cost entries.
MatchResult match_hungarian(const Tensor& cost);

}  // namespace sp
