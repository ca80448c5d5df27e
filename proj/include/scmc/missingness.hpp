#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "scmc/matrix_core.hpp"

namespace scmc {

struct MissingnessModel {
  Eigen::MatrixXd A_hat;
  int rank_bound = 3;
  double inf_bound = 4.0;
  WeightField w_hat;  // logistic(A_hat), entries in (0,1)
  std::vector<double> loglik_trace;
  int iterations = 0;
};

struct MissingnessOptions {
  int max_iters = 500;
  double step = 4.0;
  double rel_tol = 1e-7;
  int projection_rounds = 10;
  // Also keep only the top rank_bound singular values when projecting.
  bool truncate_rank = true;
};

// Bernoulli log-likelihood of a 0/1 mask (row-major) under logits A.
double mask_log_likelihood(const std::vector<std::uint8_t>& mask, const Eigen::MatrixXd& A);

// Projected gradient ascent of the Bernoulli likelihood over
// {||A||_* <= nu sqrt(rho n_r n_c)} and {||A||_inf <= nu}.
MissingnessModel estimate_weights(const std::vector<std::uint8_t>& mask, int n_rows, int n_cols,
                                  int rank_bound, double inf_bound,
                                  const MissingnessOptions& options = {});

// Alternating projection onto the two norm balls; max_rank > 0 additionally
// truncates the spectrum to that many singular values.
Eigen::MatrixXd project_constraints(const Eigen::MatrixXd& A, double nuclear_radius, double inf_bound,
                                    int rounds, int max_rank = 0);

}  // namespace scmc
