#include "scmc/completion.hpp"

#include <algorithm>
#include <cmath>

namespace scmc {

namespace {

struct Slice {
  std::vector<int> other;
  std::vector<double> value;
};

// Ridge (or minimum-norm when reg == 0) solve for one factor row.
Eigen::VectorXd solve_row(const Eigen::MatrixXd& F, const Slice& s, double reg) {
  const int l = static_cast<int>(F.cols());
  if (s.other.empty()) return Eigen::VectorXd::Zero(l);
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(l, l);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(l);
  for (std::size_t j = 0; j < s.other.size(); ++j) {
    const auto f = F.row(s.other[j]).transpose();
    A.selfadjointView<Eigen::Lower>().rankUpdate(f);
    b += s.value[j] * f;
  }
  A.triangularView<Eigen::StrictlyUpper>() = A.transpose();
  if (reg > 0.0) {
    A.diagonal().array() += reg;
    Eigen::LLT<Eigen::MatrixXd> llt(A);
    if (llt.info() == Eigen::Success) return llt.solve(b);
  }
  return A.completeOrthogonalDecomposition().solve(b);
}

}  // namespace

double als_objective(const PartialMatrix& train, const Eigen::MatrixXd& U, const Eigen::MatrixXd& V,
                     double regularization) {
  double sse = 0.0;
  for (const auto& e : train.entries()) {
    const double r = e.value - U.row(e.index.row).dot(V.row(e.index.col));
    sse += r * r;
  }
  return sse + regularization * (U.squaredNorm() + V.squaredNorm());
}

CompletionEstimate als_complete(const PartialMatrix& train, int rank, double regularization,
                                int max_iters, double tol, Rng& rng) {
  if (train.observed_count() == 0) {
    throw Error(ErrorKind::Data, "training set is empty");
  }
  if (rank < 1 || rank > std::min(train.n_rows(), train.n_cols())) {
    throw Error(ErrorKind::Parameter, "rank must lie in [1, min(n_rows, n_cols)]");
  }
  if (regularization < 0.0) {
    throw Error(ErrorKind::Parameter, "regularization must be nonnegative");
  }
  const int nr = train.n_rows();
  const int nc = train.n_cols();
  std::vector<Slice> rows(nr), cols(nc);
  for (const auto& e : train.entries()) {
    rows[e.index.row].other.push_back(e.index.col);
    rows[e.index.row].value.push_back(e.value);
    cols[e.index.col].other.push_back(e.index.row);
    cols[e.index.col].value.push_back(e.value);
  }

  std::normal_distribution<double> init(0.0, 1.0 / std::sqrt(static_cast<double>(rank)));
  Eigen::MatrixXd U(nr, rank), V(nc, rank);
  for (int i = 0; i < nr; ++i)
    for (int k = 0; k < rank; ++k) U(i, k) = init(rng);
  for (int i = 0; i < nc; ++i)
    for (int k = 0; k < rank; ++k) V(i, k) = init(rng);

  CompletionEstimate out;
  double prev = als_objective(train, U, V, regularization);
  for (int it = 0; it < max_iters; ++it) {
    for (int r = 0; r < nr; ++r) U.row(r) = solve_row(V, rows[r], regularization).transpose();
    for (int c = 0; c < nc; ++c) V.row(c) = solve_row(U, cols[c], regularization).transpose();
    const double obj = als_objective(train, U, V, regularization);
    out.objective_trace.push_back(obj);
    const double rel = (prev - obj) / std::max(prev, 1e-300);
    prev = obj;
    if (rel < tol) break;
  }
  out.estimate = U * V.transpose();
  out.U = std::move(U);
  out.V = std::move(V);
  return out;
}

CompletionEstimate complete(const PartialMatrix& train, const SolverConfig& config, Rng& rng) {
  if (config.name == "als") {
    return als_complete(train, config.als.rank, config.als.regularization, config.als.max_iters,
                        config.als.tol, rng);
  }
  if (config.name == "mean") {
    if (train.observed_count() == 0) throw Error(ErrorKind::Data, "training set is empty");
    double s = 0.0;
    for (const auto& e : train.entries()) s += e.value;
    CompletionEstimate out;
    out.estimate = Eigen::MatrixXd::Constant(train.n_rows(), train.n_cols(),
                                             s / static_cast<double>(train.observed_count()));
    return out;
  }
  throw Error(ErrorKind::Config, "unknown solver '" + config.name + "'");
}

}  // namespace scmc
