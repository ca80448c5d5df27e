#include "scmc/missingness.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/SVD>

namespace scmc {

namespace {

// log(1 + e^a), stable for large |a|.
double softplus(double a) { return std::max(a, 0.0) + std::log1p(std::exp(-std::abs(a))); }

double logistic(double a) {
  if (a >= 0.0) return 1.0 / (1.0 + std::exp(-a));
  const double e = std::exp(a);
  return e / (1.0 + e);
}

// Euclidean projection of nonnegative values onto {sum <= radius}.
Eigen::VectorXd project_l1(const Eigen::VectorXd& s, double radius) {
  if (s.sum() <= radius) return s;
  std::vector<double> v(s.data(), s.data() + s.size());
  std::sort(v.begin(), v.end(), std::greater<>());
  double cum = 0.0;
  double theta = 0.0;
  for (std::size_t j = 0; j < v.size(); ++j) {
    cum += v[j];
    const double t = (cum - radius) / static_cast<double>(j + 1);
    if (j + 1 == v.size() || v[j + 1] <= t) {
      theta = t;
      break;
    }
  }
  return (s.array() - theta).max(0.0).matrix();
}

}  // namespace

double mask_log_likelihood(const std::vector<std::uint8_t>& mask, const Eigen::MatrixXd& A) {
  const int nc = static_cast<int>(A.cols());
  double ll = 0.0;
  for (int r = 0; r < A.rows(); ++r)
    for (int c = 0; c < nc; ++c) {
      const double a = A(r, c);
      ll += (mask[static_cast<std::size_t>(r) * nc + c] ? a : 0.0) - softplus(a);
    }
  return ll;
}

Eigen::MatrixXd project_constraints(const Eigen::MatrixXd& A, double nuclear_radius, double inf_bound,
                                    int rounds, int max_rank) {
  Eigen::MatrixXd X = A.cwiseMax(-inf_bound).cwiseMin(inf_bound);
  for (int it = 0; it < rounds; ++it) {
    Eigen::BDCSVD<Eigen::MatrixXd> svd(X, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::VectorXd s = svd.singularValues();
    const bool low_rank = max_rank <= 0 || s.size() <= max_rank || s(max_rank) <= 1e-9 * std::max(1.0, s(0));
    if (low_rank && s.sum() <= nuclear_radius * (1.0 + 1e-9)) break;
    Eigen::VectorXd t = project_l1(s, nuclear_radius);
    if (max_rank > 0 && t.size() > max_rank) t.tail(t.size() - max_rank).setZero();
    X = svd.matrixU() * t.asDiagonal() * svd.matrixV().transpose();
    X = X.cwiseMax(-inf_bound).cwiseMin(inf_bound);
  }
  return X;
}

MissingnessModel estimate_weights(const std::vector<std::uint8_t>& mask, int n_rows, int n_cols,
                                  int rank_bound, double inf_bound, const MissingnessOptions& options) {
  if (n_rows <= 0 || n_cols <= 0 ||
      mask.size() != static_cast<std::size_t>(n_rows) * n_cols) {
    throw Error(ErrorKind::Size, "mask does not match the matrix shape");
  }
  if (rank_bound < 1) throw Error(ErrorKind::Parameter, "rank bound must be at least 1");
  if (!(inf_bound > 0.0)) throw Error(ErrorKind::Parameter, "entry bound must be positive");
  std::size_t observed = 0;
  for (auto m : mask) observed += m ? 1 : 0;
  if (observed == 0 || observed == mask.size()) {
    throw Error(ErrorKind::Degenerate, "mask is all observed or all missing");
  }

  const double radius = inf_bound * std::sqrt(static_cast<double>(rank_bound) * n_rows * n_cols);
  const double frac = static_cast<double>(observed) / static_cast<double>(mask.size());
  const double a0 = std::clamp(std::log(frac / (1.0 - frac)), -inf_bound, inf_bound);

  MissingnessModel model;
  model.rank_bound = rank_bound;
  model.inf_bound = inf_bound;
  Eigen::MatrixXd A = Eigen::MatrixXd::Constant(n_rows, n_cols, a0);
  const int max_rank = options.truncate_rank ? rank_bound : 0;
  A = project_constraints(A, radius, inf_bound, options.projection_rounds, max_rank);
  double ll = mask_log_likelihood(mask, A);
  model.loglik_trace.push_back(ll);

  Eigen::MatrixXd G(n_rows, n_cols);
  for (int it = 0; it < options.max_iters; ++it) {
    double step = options.step;
    for (int r = 0; r < n_rows; ++r)
      for (int c = 0; c < n_cols; ++c)
        G(r, c) = (mask[static_cast<std::size_t>(r) * n_cols + c] ? 1.0 : 0.0) - logistic(A(r, c));
    bool accepted = false;
    Eigen::MatrixXd next;
    double ll_next = ll;
    for (int bt = 0; bt < 30; ++bt) {
      next = project_constraints(A + step * G, radius, inf_bound, options.projection_rounds, max_rank);
      ll_next = mask_log_likelihood(mask, next);
      if (ll_next >= ll) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    const double change = std::abs(ll_next - ll) / std::max(std::abs(ll), 1e-300);
    A = std::move(next);
    ll = ll_next;
    model.loglik_trace.push_back(ll);
    model.iterations = it + 1;
    if (change < options.rel_tol) break;
  }

  model.A_hat = A;
  model.w_hat = WeightField(n_rows, n_cols);
  for (int r = 0; r < n_rows; ++r)
    for (int c = 0; c < n_cols; ++c) model.w_hat(r, c) = logistic(A(r, c));
  return model;
}

}  // namespace scmc
