#include "scmc/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace scmc {

namespace {

Eigen::MatrixXd normal_matrix(int rows, int cols, Rng& rng) {
  std::normal_distribution<double> z(0.0, 1.0);
  Eigen::MatrixXd X(rows, cols);
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) X(i, j) = z(rng);
  return X;
}

}  // namespace

Eigen::MatrixXd gen_uniform_synthetic(int n_rows, int n_cols, int l, double mu, double gamma, Rng& rng) {
  if (l < 1) throw Error(ErrorKind::Parameter, "rank must be at least 1");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw Error(ErrorKind::Parameter, "gamma must lie in [0,1]");
  const Eigen::MatrixXd U = normal_matrix(n_rows, l, rng);
  const Eigen::MatrixXd V = normal_matrix(n_cols, l, rng);
  const Eigen::MatrixXd eps = normal_matrix(n_rows, n_cols, rng);
  std::normal_distribution<double> z(0.0, 1.0);
  Eigen::RowVectorXd shift(n_cols);
  for (int c = 0; c < n_cols; ++c) {
    const bool spike = uniform01(rng) < gamma;
    shift(c) = spike ? mu + 0.1 * z(rng) : z(rng);
  }
  const Eigen::MatrixXd noise = 0.1 * eps + 0.9 * Eigen::VectorXd::Ones(n_rows) * shift;
  return 0.5 * (U * V.transpose()) + 0.5 * noise;
}

Eigen::MatrixXd gen_low_rank_plus_noise(int n_rows, int n_cols, int l, double noise_mean,
                                        double noise_sd, Rng& rng) {
  if (l < 1) throw Error(ErrorKind::Parameter, "rank must be at least 1");
  const Eigen::MatrixXd U = normal_matrix(n_rows, l, rng);
  const Eigen::MatrixXd V = normal_matrix(n_cols, l, rng);
  const Eigen::MatrixXd eps = normal_matrix(n_rows, n_cols, rng);
  return U * V.transpose() + noise_sd * eps + Eigen::MatrixXd::Constant(n_rows, n_cols, noise_mean);
}

WeightField gen_hetero_weights(int n_rows, int n_cols, double s, double gamma, Rng& rng) {
  if (!(s > 0.0 && s <= 1.0)) throw Error(ErrorKind::Parameter, "s must lie in (0,1]");
  WeightField w(n_rows, n_cols, 1.0);
  for (int c = 0; c < n_cols; ++c) {
    if (uniform01(rng) < gamma)
      for (int r = 0; r < n_rows; ++r) w(r, c) = s;
  }
  return w;
}

WeightField gen_power_weights(int n_rows, int n_cols, double s) {
  WeightField w(n_rows, n_cols);
  for (int r = 0; r < n_rows; ++r)
    for (int c = 0; c < n_cols; ++c)
      w(r, c) = std::pow(static_cast<double>(n_rows) * c + r + 1.0, s);
  return w;
}

WeightField gen_logistic_weights(int n_rows, int n_cols, int rank, double nu, Rng& rng) {
  const Eigen::MatrixXd A0 = normal_matrix(n_rows, rank, rng) * normal_matrix(n_cols, rank, rng).transpose();
  const double scale = nu / std::max(A0.cwiseAbs().maxCoeff(), 1e-300);
  WeightField w(n_rows, n_cols);
  for (int r = 0; r < n_rows; ++r)
    for (int c = 0; c < n_cols; ++c) w(r, c) = 1.0 / (1.0 + std::exp(-scale * A0(r, c)));
  return w;
}

std::vector<MatrixIndex> all_indices(int n_rows, int n_cols) {
  std::vector<MatrixIndex> out;
  out.reserve(static_cast<std::size_t>(n_rows) * n_cols);
  for (int r = 0; r < n_rows; ++r)
    for (int c = 0; c < n_cols; ++c) out.push_back({r, c});
  return out;
}

std::vector<MatrixIndex> sample_observations(int n_rows, int n_cols, std::size_t n_obs,
                                             const WeightField& w, Rng& rng) {
  return sample_without_replacement(all_indices(n_rows, n_cols), n_obs, w, rng);
}

std::vector<MatrixIndex> sample_bernoulli_observations(const WeightField& w, Rng& rng) {
  std::vector<MatrixIndex> out;
  for (int r = 0; r < w.n_rows(); ++r)
    for (int c = 0; c < w.n_cols(); ++c) {
      const double p = w(r, c);
      if (!(p >= 0.0 && p <= 1.0)) throw Error(ErrorKind::Weight, "inclusion probabilities must lie in [0,1]");
      if (uniform01(rng) < p) out.push_back({r, c});
    }
  return out;
}

PartialMatrix observe(const Eigen::MatrixXd& M, const std::vector<MatrixIndex>& indices) {
  PartialMatrix pm(static_cast<int>(M.rows()), static_cast<int>(M.cols()));
  for (const auto& idx : indices) pm.add(idx.row, idx.col, M(idx.row, idx.col));
  return pm;
}

WorstSlab worst_slab_weights(const Eigen::MatrixXd& M, const CompletionEstimate& estimate,
                             const std::vector<MatrixIndex>& holdout, double delta) {
  if (!estimate.has_factors()) {
    throw Error(ErrorKind::Parameter, "worst-slab weights need a factor-based estimate");
  }
  if (!(delta > 0.0)) throw Error(ErrorKind::Parameter, "slab mass must be positive");
  const Eigen::MatrixXd& U = *estimate.U;
  const Eigen::MatrixXd& V = *estimate.V;
  const int nr = static_cast<int>(M.rows());
  const int nc = static_cast<int>(M.cols());
  const int l = static_cast<int>(U.cols());

  WorstSlab out;
  out.w_star = WeightField(nr, nc, 1.0);
  out.direction = Eigen::VectorXd::Zero(2 * l);
  if (delta >= 1.0) return out;
  if (holdout.size() < 2) {
    out.degenerate = true;
    return out;
  }

  const int m = static_cast<int>(holdout.size());
  Eigen::MatrixXd X(m, 2 * l + 1);
  Eigen::VectorXd y(m);
  for (int i = 0; i < m; ++i) {
    const auto& idx = holdout[i];
    X(i, 0) = 1.0;
    X.block(i, 1, 1, l) = U.row(idx.row);
    X.block(i, 1 + l, 1, l) = V.row(idx.col);
    y(i) = std::abs(estimate.at(idx) - M(idx.row, idx.col));
  }
  const Eigen::VectorXd beta = X.completeOrthogonalDecomposition().solve(y);
  const Eigen::VectorXd v = beta.tail(2 * l);
  out.direction = v;

  auto project = [&](int r, int c) { return U.row(r).dot(v.head(l)) + V.row(c).dot(v.tail(l)); };
  std::vector<std::pair<double, double>> tr(m);
  for (int i = 0; i < m; ++i) tr[i] = {project(holdout[i].row, holdout[i].col), y(i)};
  std::sort(tr.begin(), tr.end());
  if (!(tr.back().first > tr.front().first)) {
    out.degenerate = true;
    return out;
  }
  std::vector<double> prefix(m + 1, 0.0);
  for (int i = 0; i < m; ++i) prefix[i + 1] = prefix[i] + tr[i].second;

  constexpr int kGrid = 100;
  std::vector<double> grid(kGrid + 1);
  for (int g = 0; g <= kGrid; ++g) {
    const std::size_t pos = std::min<std::size_t>(m - 1, static_cast<std::size_t>(
        std::llround(static_cast<double>(g) / kGrid * (m - 1))));
    grid[g] = tr[pos].first;
  }
  // first index with t >= a, one past the last index with t <= b
  auto lower = [&](double a) {
    return static_cast<int>(std::lower_bound(tr.begin(), tr.end(), std::make_pair(a, -1e300)) - tr.begin());
  };
  auto upper = [&](double b) {
    return static_cast<int>(std::upper_bound(tr.begin(), tr.end(), std::make_pair(b, 1e300)) - tr.begin());
  };
  std::vector<int> lo_idx(kGrid + 1), hi_idx(kGrid + 1);
  for (int g = 0; g <= kGrid; ++g) {
    lo_idx[g] = lower(grid[g]);
    hi_idx[g] = upper(grid[g]);
  }
  const double need = delta * m;
  double best = -1.0;
  int best_a = -1;
  int best_b = -1;
  for (int ga = 0; ga <= kGrid; ++ga) {
    for (int gb = ga + 1; gb <= kGrid; ++gb) {
      if (!(grid[gb] > grid[ga])) continue;
      const int i0 = lo_idx[ga];
      const int i1 = hi_idx[gb];
      const int cnt = i1 - i0;
      if (cnt <= 0 || cnt < need) continue;
      const double mean = (prefix[i1] - prefix[i0]) / cnt;
      if (mean > best) {
        best = mean;
        best_a = ga;
        best_b = gb;
      }
    }
  }
  if (best_a < 0) {
    out.degenerate = true;
    return out;
  }
  out.a = grid[best_a];
  out.b = grid[best_b];
  out.slab_error = best;
  const double sigma = (out.b - out.a) / 5.0;
  for (int r = 0; r < nr; ++r)
    for (int c = 0; c < nc; ++c) {
      const double t = project(r, c);
      double wv = 1.0;
      if (t < out.a) wv = std::exp(-0.5 * (t - out.a) * (t - out.a) / (sigma * sigma));
      else if (t > out.b) wv = std::exp(-0.5 * (t - out.b) * (t - out.b) / (sigma * sigma));
      out.w_star(r, c) = wv;
    }
  return out;
}

}  // namespace scmc
