#pragma once

#include <vector>

#include <Eigen/Dense>

#include "scmc/completion.hpp"
#include "scmc/matrix_core.hpp"

namespace scmc {

// 0.5 * U V^T + 0.5 * (0.1 eps + 0.9 * 1 eps~^T), with standard normal
// factors of rank l and column shifts eps~_c ~ (1-gamma) N(0,1) + gamma N(mu, 0.01).
Eigen::MatrixXd gen_uniform_synthetic(int n_rows, int n_cols, int l, double mu, double gamma, Rng& rng);

// U V^T + N with N i.i.d. N(noise_mean, noise_sd^2).
Eigen::MatrixXd gen_low_rank_plus_noise(int n_rows, int n_cols, int l, double noise_mean,
                                        double noise_sd, Rng& rng);

// Column-constant field: s on columns flagged with probability gamma, 1 elsewhere.
WeightField gen_hetero_weights(int n_rows, int n_cols, double s, double gamma, Rng& rng);

// w_{r,c} = (n_rows * c + r + 1)^s with 0-based r, c.
WeightField gen_power_weights(int n_rows, int n_cols, double s);

// logistic(A) for a random rank-`rank` A rescaled to max |A| = nu.
WeightField gen_logistic_weights(int n_rows, int n_cols, int rank, double nu, Rng& rng);

std::vector<MatrixIndex> all_indices(int n_rows, int n_cols);

// Draws n_obs entries by weighted sampling without replacement.
std::vector<MatrixIndex> sample_observations(int n_rows, int n_cols, std::size_t n_obs,
                                             const WeightField& w, Rng& rng);

// Independent Bernoulli(w_{r,c}) inclusion (for the missingness model).
std::vector<MatrixIndex> sample_bernoulli_observations(const WeightField& w, Rng& rng);

PartialMatrix observe(const Eigen::MatrixXd& M, const std::vector<MatrixIndex>& indices);

struct WorstSlab {
  WeightField w_star;
  Eigen::VectorXd direction;  // v, with the intercept dropped
  double a = 0.0;
  double b = 0.0;
  double slab_error = 0.0;    // mean |M-hat - M| inside the slab
  bool degenerate = false;
};

// Fits |M-hat - M| ~ y_{r,c} = (U_r, V_c) by least squares over the holdout,
// grid-searches the slab [a, b] of mass >= delta with the largest mean
// residual, and smooths the indicator with Gaussian tails of sd (b - a)/5.
WorstSlab worst_slab_weights(const Eigen::MatrixXd& M, const CompletionEstimate& estimate,
                             const std::vector<MatrixIndex>& holdout, double delta);

}  // namespace scmc
