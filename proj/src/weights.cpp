#include "scmc/weights.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <boost/math/quadrature/gauss_kronrod.hpp>

namespace scmc {

namespace {

constexpr double kLn2 = 0.69314718055994530942;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// log(1 - tau^a) given log tau.
double log1m_pow(double a, double log_tau) { return std::log(-std::expm1(a * log_tau)); }

double log_sum_exp(const std::vector<double>& v) {
  double m = kNegInf;
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

void check_obs_weights(const std::vector<double>& obs_weights, double delta) {
  if (!(delta > 0.0) || !std::isfinite(delta)) {
    throw Error(ErrorKind::Domain, "missing-set mass delta must be positive");
  }
  for (double w : obs_weights) {
    if (!(w > 0.0) || !std::isfinite(w)) {
      throw Error(ErrorKind::Weight, "sampling weights must be strictly positive");
    }
  }
}

}  // namespace

std::vector<double> log_factorial_table(int max_n) {
  std::vector<double> t(static_cast<std::size_t>(std::max(max_n, 0)) + 1, 0.0);
  for (std::size_t i = 1; i < t.size(); ++i) t[i] = t[i - 1] + std::log(static_cast<double>(i));
  return t;
}

double WalleniusContext::log_binomial(int n, int k) const {
  if (k < 0 || k > n) return kNegInf;
  if (static_cast<std::size_t>(n) >= log_factorials.size()) {
    throw Error(ErrorKind::Size, "log-factorial table too small");
  }
  return log_factorials[n] - log_factorials[k] - log_factorials[n - k];
}

double scale_residual(const std::vector<double>& obs_weights, double delta, double h) {
  // Neumaier summation; the terms nearly cancel delta at the root.
  double z = delta;
  double carry = 0.0;
  auto add = [&](double x) {
    const double t = z + x;
    carry += std::abs(z) >= std::abs(x) ? (z - t) + x : (x - t) + z;
    z = t;
  };
  add(-1.0 / h);
  for (double w : obs_weights) {
    const double e = std::expm1(h * w * kLn2);
    if (std::isfinite(e)) add(-w / e);
  }
  return z + carry;
}

namespace {

double scale_residual_slope(const std::vector<double>& obs_weights, double h) {
  double s = 1.0 / (h * h);
  for (double w : obs_weights) {
    const double e = std::expm1(h * w * kLn2);
    if (std::isfinite(e) && e > 0.0) s += w * w * kLn2 * ((e + 1.0) / e) / e;
  }
  return s;
}

}  // namespace

double find_scale(const std::vector<double>& obs_weights, double delta, double tol, int max_iters) {
  check_obs_weights(obs_weights, delta);
  const double lo0 = 1.0 / delta;
  if (obs_weights.empty()) return lo0;
  const double ztol = tol;

  // z is increasing and concave, so Newton from the left stays left of the
  // root and increases monotonically.
  double h = lo0;
  for (int it = 0; it < max_iters; ++it) {
    const double z = scale_residual(obs_weights, delta, h);
    if (std::abs(z) <= ztol && h > lo0) return h;
    const double step = z / scale_residual_slope(obs_weights, h);
    const double next = h - step;
    if (!std::isfinite(next) || next <= 0.0) break;
    if (std::abs(next - h) <= 4.0 * std::numeric_limits<double>::epsilon() * h && next > lo0) {
      return next;
    }
    h = next;
  }

  double lo = lo0;
  double hi = (1.0 + static_cast<double>(obs_weights.size()) / kLn2) / delta;
  if (scale_residual(obs_weights, delta, hi) < 0.0) {
    throw Error(ErrorKind::Numerical, "scale search failed to bracket the root");
  }
  for (int it = 0; it < 400; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double z = scale_residual(obs_weights, delta, mid);
    if (std::abs(z) <= ztol && mid > lo0) return mid;
    if (z < 0.0) lo = mid; else hi = mid;
    if (hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() * hi) return hi;
  }
  throw Error(ErrorKind::Numerical, "scale search did not converge");
}

double log_phi(const std::vector<double>& obs_weights, double delta, double h, double tau) {
  const double lt = std::log(tau);
  double v = std::log(h * delta) + (h * delta - 1.0) * lt;
  for (double w : obs_weights) v += log1m_pow(h * w, lt);
  return v;
}

double log_phi_prime(const std::vector<double>& obs_weights, double delta, double h, double tau) {
  const double lt = std::log(tau);
  double v = (h * delta - 1.0) / tau;
  for (double w : obs_weights) {
    const double a = h * w;
    v -= a * std::exp((a - 1.0) * lt) / -std::expm1(a * lt);
  }
  return v;
}

double log_phi_second(const std::vector<double>& obs_weights, double delta, double h, double tau) {
  const double lt = std::log(tau);
  double v = -(h * delta - 1.0) / (tau * tau);
  for (double w : obs_weights) {
    const double a = h * w;
    const double q = std::exp(a * lt);
    const double om = -std::expm1(a * lt);
    v -= a * std::exp((a - 2.0) * lt) * (a - 1.0 + q) / (om * om);
  }
  return v;
}

WalleniusContext make_wallenius_context(const std::vector<double>& obs_weights, double delta,
                                        int max_count) {
  WalleniusContext ctx;
  ctx.delta = delta;
  ctx.h = find_scale(obs_weights, delta);
  ctx.phi_peak = log_phi(obs_weights, delta, ctx.h, 0.5);
  ctx.phi_second = log_phi_second(obs_weights, delta, ctx.h, 0.5);
  ctx.log_factorials = log_factorial_table(max_count);
  return ctx;
}

double log_eta(const std::vector<double>& w_group, const std::vector<double>& w_test, double delta,
               double h, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw Error(ErrorKind::Domain, "tau must lie in (0,1)");
  if (w_group.size() != w_test.size()) {
    throw Error(ErrorKind::Size, "group and test weights differ in length");
  }
  const double lt = std::log(tau);
  double d = 0.0;
  double tail = 0.0;
  for (std::size_t k = 0; k < w_group.size(); ++k) {
    d += w_group[k] - w_test[k];
    tail += log1m_pow(h * w_test[k], lt) - log1m_pow(h * w_group[k], lt);
  }
  if (!(delta + d > 0.0)) throw Error(ErrorKind::Domain, "swapped missing mass must be positive");
  return h * d * lt + std::log((delta + d) / delta) + tail;
}

double eta(const std::vector<double>& w_group, const std::vector<double>& w_test, double delta,
           double h, double tau) {
  return std::exp(log_eta(w_group, w_test, delta, h, tau));
}

double wallenius_log_prob_quadrature(const std::vector<double>& obs_weights, double delta, double h,
                                     const LogEtaFn& log_eta_fn) {
  check_obs_weights(obs_weights, delta);
  std::vector<double> a(obs_weights.size());
  for (std::size_t j = 0; j < a.size(); ++j) a[j] = h * obs_weights[j];
  const double lead = std::log(h * delta);
  const double expo = h * delta - 1.0;
  auto g = [&](double t) {
    const double lt = std::log(t);
    double v = lead + expo * lt;
    for (double aj : a) v += log1m_pow(aj, lt);
    if (log_eta_fn) v += log_eta_fn(t);
    return v;
  };

  constexpr int kGrid = 4096;
  double gmax = kNegInf;
  for (int k = 0; k < kGrid; ++k) gmax = std::max(gmax, g((k + 0.5) / kGrid));
  if (!std::isfinite(gmax)) throw Error(ErrorKind::Numerical, "integrand vanishes on the grid");

  auto f = [&](double t) {
    if (t <= 0.0 || t >= 1.0) return 0.0;
    return std::exp(g(t) - gmax);
  };
  using GK = boost::math::quadrature::gauss_kronrod<double, 31>;
  constexpr int kPanels = 64;
  // A first non-adaptive pass sizes each panel's share, so that panels
  // carrying little mass are refined only to the precision the sum needs.
  std::vector<double> rough(kPanels);
  double rough_total = 0.0;
  for (int p = 0; p < kPanels; ++p) {
    rough[p] = GK::integrate(f, static_cast<double>(p) / kPanels, static_cast<double>(p + 1) / kPanels, 0);
    rough_total += rough[p];
  }
  double total = 0.0;
  for (int p = 0; p < kPanels; ++p) {
    if (rough[p] <= 1e-18 * rough_total) {
      total += rough[p];
      continue;
    }
    const double tol = std::min(1e-3, std::max(1e-11, 1e-12 * rough_total / rough[p]));
    double err = 0.0;
    total += GK::integrate(f, static_cast<double>(p) / kPanels, static_cast<double>(p + 1) / kPanels, 10, tol, &err);
  }
  if (!(total > 0.0) || !std::isfinite(total)) {
    throw Error(ErrorKind::Numerical, "quadrature failed");
  }
  return gmax + std::log(total);
}

double wallenius_log_prob_exact(const std::vector<double>& set_weights, double rest_mass) {
  const std::size_t m = set_weights.size();
  if (m > 20) throw Error(ErrorKind::Capacity, "exact set probability limited to 20 items");
  check_obs_weights(set_weights, rest_mass > 0.0 ? rest_mass : 1.0);
  double total = rest_mass;
  for (double w : set_weights) total += w;
  const std::size_t full = (std::size_t{1} << m);
  std::vector<double> f(full, 0.0), mass(full, 0.0);
  f[0] = 1.0;
  for (std::size_t s = 1; s < full; ++s) {
    const std::size_t low = s & (~s + 1);
    mass[s] = mass[s ^ low] + set_weights[static_cast<std::size_t>(__builtin_ctzll(low))];
    double acc = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      const std::size_t bit = std::size_t{1} << j;
      if (!(s & bit)) continue;
      const std::size_t prev = s ^ bit;
      acc += f[prev] * set_weights[j] / (total - mass[prev]);
    }
    f[s] = acc;
  }
  return std::log(f[full - 1]);
}

double WeightVector::max_p() const {
  return p.empty() ? 0.0 : *std::max_element(p.begin(), p.end());
}

WeightModel::WeightModel(const CalibrationPlan& plan, int n_rows, int n_cols, const WeightField& w,
                         const WeightField& w_star, WeightMode mode)
    : plan_(&plan), n_rows_(n_rows), n_cols_(n_cols), w_(&w), w_star_(&w_star), mode_(mode),
      K_(plan.K) {
  if (w.n_rows() != n_rows || w.n_cols() != n_cols || w_star.n_rows() != n_rows ||
      w_star.n_cols() != n_cols) {
    throw Error(ErrorKind::Size, "weight fields do not match the matrix shape");
  }
  if (!w.all_positive()) throw Error(ErrorKind::Weight, "sampling weights must be strictly positive");
  if (!w_star.all_nonnegative()) throw Error(ErrorKind::Weight, "test weights must be nonnegative");

  observed_.assign(static_cast<std::size_t>(n_rows) * n_cols, 0);
  obs_count_.assign(n_cols, 0);
  for (const auto& idx : plan_observed(plan)) {
    auto& o = observed_[static_cast<std::size_t>(idx.row) * n_cols + idx.col];
    if (o) throw Error(ErrorKind::Domain, "plan lists an index twice");
    o = 1;
    ++obs_count_[idx.col];
    obs_weights_.push_back(w(idx));
  }
  miss_count_.assign(n_cols, 0);
  miss_mass_.assign(n_cols, 0.0);
  double delta = 0.0;
  for (int r = 0; r < n_rows; ++r) {
    for (int c = 0; c < n_cols; ++c) {
      if (observed_[static_cast<std::size_t>(r) * n_cols + c]) continue;
      missing_.push_back({r, c});
      ++miss_count_[c];
      miss_mass_[c] += w_star(r, c);
      delta += w(r, c);
    }
  }
  for (int c = 0; c < n_cols; ++c)
    if (miss_count_[c] >= K_) eligible_mass_ += miss_mass_[c];
  total_w_ = delta;
  for (double x : obs_weights_) total_w_ += x;
  if (missing_.empty()) throw Error(ErrorKind::Infeasible, "no missing entries to test");

  if (mode == WeightMode::ExactTiny) {
    if (obs_weights_.size() > kExactTinyLimit) {
      throw Error(ErrorKind::Capacity, "exact weights are limited to " +
                                           std::to_string(kExactTinyLimit) + " observed entries");
    }
    ctx_.delta = delta;
    ctx_.log_factorials = log_factorial_table(n_rows + K_);
    base_log_prob_ = wallenius_log_prob_exact(obs_weights_, delta);
  } else {
    ctx_ = make_wallenius_context(obs_weights_, delta, n_rows + K_);
    if (mode == WeightMode::Quadrature) {
      base_log_prob_ = wallenius_log_prob_quadrature(obs_weights_, delta, ctx_.h);
    }
  }

  groups_.reserve(plan.groups.size());
  for (const auto& g : plan.groups) {
    if (static_cast<int>(g.size()) != K_) throw Error(ErrorKind::Size, "group size differs from K");
    groups_.push_back(describe(g));
  }
}

WeightModel::GroupInfo WeightModel::describe(const IndexGroup& g) const {
  GroupInfo gi;
  gi.col = g.column();
  const double lt = std::log(0.5);
  for (const auto& idx : g.indices) {
    const double wv = (*w_)(idx);
    const double sv = (*w_star_)(idx);
    gi.w_sum += wv;
    gi.star_sum += sv;
    gi.star.push_back(sv);
    if (ctx_.h > 0.0) gi.log_tail += log1m_pow(ctx_.h * wv, lt);
  }
  return gi;
}

double WeightModel::log_binomial_factor(int ci, int ct) const {
  const int K = K_;
  const int ni = obs_count_[ci];
  const int nbi = ni - ni % K;
  const int nt = obs_count_[ct];
  const int nbt = nt - nt % K;
  double v = ctx_.log_binomial(ni, nbi) - ctx_.log_binomial(ni - K, nbi - K) +
             ctx_.log_binomial(nt, nbt) - ctx_.log_binomial(nt + K, nbt + K);
  for (int k = 1; k < K; ++k) v += std::log(nbi - k) - std::log(nbt + K - k);
  return v;
}

double WeightModel::log_ratio(std::size_t i, const GroupInfo& gi, const GroupInfo& test,
                              const IndexGroup& tg) const {
  const double d = gi.w_sum - test.w_sum;
  switch (mode_) {
    case WeightMode::Fast:
      return ctx_.h * d * std::log(0.5) + std::log((ctx_.delta + d) / ctx_.delta) + test.log_tail -
             gi.log_tail;
    case WeightMode::Quadrature: {
      std::vector<double> wg, wt;
      for (const auto& idx : plan_->groups[i].indices) wg.push_back((*w_)(idx));
      for (const auto& idx : tg.indices) wt.push_back((*w_)(idx));
      const double delta = ctx_.delta;
      const double h = ctx_.h;
      auto fn = [&](double t) { return log_eta(wg, wt, delta, h, t); };
      return wallenius_log_prob_quadrature(obs_weights_, delta, h, fn) - base_log_prob_;
    }
    case WeightMode::ExactTiny: {
      std::vector<double> set;
      set.reserve(obs_weights_.size());
      std::vector<std::uint8_t> drop(static_cast<std::size_t>(n_rows_) * n_cols_, 0);
      for (const auto& idx : plan_->groups[i].indices)
        drop[static_cast<std::size_t>(idx.row) * n_cols_ + idx.col] = 1;
      for (int r = 0; r < n_rows_; ++r)
        for (int c = 0; c < n_cols_; ++c) {
          const std::size_t s = static_cast<std::size_t>(r) * n_cols_ + c;
          if (observed_[s] && !drop[s]) set.push_back((*w_)(r, c));
        }
      double in = 0.0;
      for (const auto& idx : tg.indices) {
        set.push_back((*w_)(idx));
      }
      for (double x : set) in += x;
      return wallenius_log_prob_exact(set, total_w_ - in) - base_log_prob_;
    }
  }
  return 0.0;
}

namespace {

// log of the sequential test-weight chain: first draw over the eligible mass,
// later draws within the column (base = column mass without the group).
double log_chain(const std::vector<double>& star, double eligible, double base) {
  if (!(star[0] > 0.0)) return kNegInf;
  if (!(eligible > 0.0)) throw Error(ErrorKind::Degenerate, "eligible test mass is zero");
  double lp = std::log(star[0]) - std::log(eligible);
  double suffix = 0.0;
  for (std::size_t k = star.size(); k-- > 1;) {
    suffix += star[k];
    if (!(star[k] > 0.0)) return kNegInf;
    const double denom = std::max(base, 0.0) + suffix;
    if (!(denom > 0.0)) throw Error(ErrorKind::Degenerate, "nonpositive within-column mass");
    lp += std::log(star[k]) - std::log(denom);
  }
  return lp;
}

}  // namespace

WeightVector WeightModel::compute(const IndexGroup& test) const {
  if (static_cast<int>(test.size()) != K_ || !test.valid()) {
    throw Error(ErrorKind::Size, "test group must hold K distinct indices in one column");
  }
  for (const auto& idx : test.indices) {
    if (idx.row < 0 || idx.row >= n_rows_ || idx.col < 0 || idx.col >= n_cols_ ||
        observed_[static_cast<std::size_t>(idx.row) * n_cols_ + idx.col]) {
      throw Error(ErrorKind::Domain, "test group must lie in the missing set");
    }
  }
  const GroupInfo tinfo = describe(test);
  const int t = tinfo.col;
  const std::size_t n = groups_.size();
  WeightVector out;
  out.log_unnormalized.assign(n + 1, kNegInf);
  out.d.assign(n + 1, 0.0);

  const auto eligible = [&](int count) { return count >= K_; };
  const double Mt = miss_mass_[t];
  const int nt = miss_count_[t];

  for (std::size_t i = 0; i < n; ++i) {
    const GroupInfo& gi = groups_[i];
    const int c = gi.col;
    out.d[i] = gi.w_sum - tinfo.w_sum;
    double S = eligible_mass_;
    double base;
    if (c == t) {
      S += gi.star_sum - tinfo.star_sum;
      base = Mt - tinfo.star_sum;
    } else {
      const double Mc = miss_mass_[c];
      const int nc = miss_count_[c];
      if (eligible(nt)) S -= Mt;
      if (eligible(nc)) S -= Mc;
      if (eligible(nt - K_)) S += Mt - tinfo.star_sum;
      S += Mc + gi.star_sum;  // column c now holds at least K missing entries
      base = Mc;
    }
    double lp = log_chain(gi.star, S, base);
    if (lp == kNegInf) continue;
    lp += log_ratio(i, gi, tinfo, test);
    if (c != t) lp += log_binomial_factor(c, t);
    out.log_unnormalized[i] = lp;
  }
  out.log_unnormalized[n] = log_chain(tinfo.star, eligible_mass_, Mt - tinfo.star_sum);

  const double lse = log_sum_exp(out.log_unnormalized);
  if (!std::isfinite(lse)) throw Error(ErrorKind::Degenerate, "all conformalization weights vanish");
  out.p.resize(n + 1);
  for (std::size_t i = 0; i <= n; ++i) out.p[i] = std::exp(out.log_unnormalized[i] - lse);
  return out;
}

WeightVector conformalization_weights(const CalibrationPlan& plan, const IndexGroup& test,
                                      int n_rows, int n_cols, const WeightField& w,
                                      const WeightField& w_star, WeightMode mode) {
  WeightModel model(plan, n_rows, n_cols, w, w_star, mode);
  return model.compute(test);
}

double exact_joint_log_prob(const std::vector<IndexGroup>& groups, const IndexGroup& test,
                            const std::vector<MatrixIndex>& pruned,
                            const std::vector<MatrixIndex>& train, int n_rows, int n_cols,
                            const WeightField& w, const WeightField& w_star) {
  const int K = static_cast<int>(test.size());
  if (K < 1 || !test.valid()) throw Error(ErrorKind::Size, "invalid test group");
  const std::size_t cells = static_cast<std::size_t>(n_rows) * n_cols;
  std::vector<std::uint8_t> obs(cells, 0), prune_mark(cells, 0);
  std::vector<double> obs_w;
  auto mark = [&](const MatrixIndex& idx) {
    auto& o = obs[static_cast<std::size_t>(idx.row) * n_cols + idx.col];
    if (o) throw Error(ErrorKind::Domain, "index listed twice");
    o = 1;
    obs_w.push_back(w(idx));
  };
  for (const auto& idx : train) mark(idx);
  for (const auto& g : groups) {
    if (static_cast<int>(g.size()) != K || !g.valid()) throw Error(ErrorKind::Size, "invalid group");
    for (const auto& idx : g.indices) mark(idx);
  }
  if (obs_w.size() > kExactTinyLimit) {
    throw Error(ErrorKind::Capacity, "exact joint law is limited to " +
                                         std::to_string(kExactTinyLimit) + " observed entries");
  }
  for (const auto& idx : pruned) {
    if (!obs[static_cast<std::size_t>(idx.row) * n_cols + idx.col]) {
      throw Error(ErrorKind::Domain, "pruned index is not observed");
    }
    prune_mark[static_cast<std::size_t>(idx.row) * n_cols + idx.col] = 1;
  }
  for (const auto& g : groups)
    for (const auto& idx : g.indices)
      if (prune_mark[static_cast<std::size_t>(idx.row) * n_cols + idx.col]) {
        throw Error(ErrorKind::Domain, "pruned index used by a group");
      }

  std::vector<int> obs_count(n_cols, 0), prune_count(n_cols, 0), miss_count(n_cols, 0),
      group_count(n_cols, 0);
  std::vector<double> miss_star(n_cols, 0.0);
  double rest = 0.0;
  for (int r = 0; r < n_rows; ++r)
    for (int c = 0; c < n_cols; ++c) {
      const std::size_t s = static_cast<std::size_t>(r) * n_cols + c;
      if (obs[s]) {
        ++obs_count[c];
        if (prune_mark[s]) ++prune_count[c];
      } else {
        ++miss_count[c];
        miss_star[c] += w_star(r, c);
        rest += w(r, c);
      }
    }
  for (const auto& idx : test.indices)
    if (obs[static_cast<std::size_t>(idx.row) * n_cols + idx.col]) {
      throw Error(ErrorKind::Domain, "test group must lie in the missing set");
    }

  for (int c = 0; c < n_cols; ++c)
    if (prune_count[c] != obs_count[c] % K) return kNegInf;

  // Test group drawn from the pruned missing set.
  const int t = test.column();
  double eligible = 0.0;
  for (int c = 0; c < n_cols; ++c)
    if (miss_count[c] >= K) eligible += miss_star[c];
  if (miss_count[t] < K) return kNegInf;
  std::vector<double> star;
  for (const auto& idx : test.indices) star.push_back(w_star(idx));
  double total_star = 0.0;
  for (double s : star) total_star += s;
  double lp = log_chain(star, eligible, miss_star[t] - total_star);
  if (lp == kNegInf) return lp;

  lp += wallenius_log_prob_exact(obs_w, rest);

  const auto lf = log_factorial_table(n_rows + K);
  auto lbin = [&](int n, int k) { return lf[n] - lf[k] - lf[n - k]; };
  int nbar_total = 0;
  for (int c = 0; c < n_cols; ++c) {
    lp -= lbin(obs_count[c], prune_count[c]);
    nbar_total += obs_count[c] - prune_count[c];
  }
  for (std::size_t i = 0; i < groups.size(); ++i) {
    lp -= std::log(static_cast<double>(nbar_total - K * static_cast<int>(i)));
  }
  for (const auto& g : groups) ++group_count[g.column()];
  for (int c = 0; c < n_cols; ++c) {
    const int nbar = obs_count[c] - prune_count[c];
    for (int j = 0; j < group_count[c]; ++j)
      for (int k = 1; k < K; ++k) lp -= std::log(static_cast<double>(nbar - K * j - k));
  }
  return lp;
}

}  // namespace scmc
