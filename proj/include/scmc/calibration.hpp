#pragma once

#include <vector>

#include "scmc/matrix_core.hpp"

namespace scmc {

struct CalibrationPlan {
  std::vector<IndexGroup> groups;    // draw order preserved
  std::vector<MatrixIndex> train;    // pruned entries plus the leftover pool
  std::vector<MatrixIndex> pruned;
  int K = 1;
  int n = 0;
};

// Sum over columns of floor(count / K).
std::size_t max_calibration_groups(const std::vector<MatrixIndex>& obs, int n_cols, int K);

// n = min(cap, floor(xi / 2)).
int default_calibration_size(std::size_t xi, int cap = 1000);

// Prunes count mod K entries per column uniformly at random, then draws n
// disjoint single-column groups of size K with uniform weights.
CalibrationPlan assemble_calibration(const std::vector<MatrixIndex>& obs, int n_cols, int n, int K,
                                     Rng& rng);

// All indices that are observed according to the plan (groups plus train).
std::vector<MatrixIndex> plan_observed(const CalibrationPlan& plan);

}  // namespace scmc
