#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "scmc/matrix_core.hpp"

namespace scmc {

struct CompletionEstimate {
  Eigen::MatrixXd estimate;
  // Present for factor-based solvers: estimate = U * V^T.
  std::optional<Eigen::MatrixXd> U;
  std::optional<Eigen::MatrixXd> V;
  // Objective after each ALS sweep (empty for other solvers).
  std::vector<double> objective_trace;

  double at(const MatrixIndex& idx) const { return estimate(idx.row, idx.col); }
  bool has_factors() const { return U.has_value() && V.has_value(); }
};

struct AlsOptions {
  int rank = 5;
  double regularization = 0.1;
  int max_iters = 100;
  double tol = 1e-6;
};

CompletionEstimate als_complete(const PartialMatrix& train, int rank, double regularization,
                                int max_iters, double tol, Rng& rng);

struct SolverConfig {
  std::string name = "als";  // "als" or "mean"
  AlsOptions als;
};

CompletionEstimate complete(const PartialMatrix& train, const SolverConfig& config, Rng& rng);

// Sum of squared residuals on the observed entries plus the ridge penalty.
double als_objective(const PartialMatrix& train, const Eigen::MatrixXd& U, const Eigen::MatrixXd& V,
                     double regularization);

}  // namespace scmc
