#pragma once

#include <functional>
#include <vector>

#include "scmc/calibration.hpp"
#include "scmc/matrix_core.hpp"

namespace scmc {

// log n! for n = 0..max_n.
std::vector<double> log_factorial_table(int max_n);

struct WalleniusContext {
  double delta = 0.0;      // sampling mass of the missing set
  double h = 0.0;          // scale placing the peak of Phi at tau = 1/2
  double tau_peak = 0.5;
  double phi_peak = 0.0;   // log Phi(1/2; h)
  double phi_second = 0.0; // second derivative of log Phi at 1/2
  std::vector<double> log_factorials;

  double log_binomial(int n, int k) const;
};

// z(h) = delta - 1/h - sum_j w_j / (2^{h w_j} - 1); its root puts the peak at 1/2.
double scale_residual(const std::vector<double>& obs_weights, double delta, double h);

// Newton-Raphson from 1/delta, bisection fallback. Converged when
// |z(h)| <= tol or the step falls to the resolution of h.
double find_scale(const std::vector<double>& obs_weights, double delta, double tol = 1e-10,
                  int max_iters = 100);

// log Phi(tau; h) and its first two derivatives in tau.
double log_phi(const std::vector<double>& obs_weights, double delta, double h, double tau);
double log_phi_prime(const std::vector<double>& obs_weights, double delta, double h, double tau);
double log_phi_second(const std::vector<double>& obs_weights, double delta, double h, double tau);

WalleniusContext make_wallenius_context(const std::vector<double>& obs_weights, double delta,
                                        int max_count);

// log eta_i(tau; h) for calibration-group sampling weights w_group and test
// weights w_test (same length K).
double log_eta(const std::vector<double>& w_group, const std::vector<double>& w_test, double delta,
               double h, double tau);
double eta(const std::vector<double>& w_group, const std::vector<double>& w_test, double delta,
           double h, double tau);

using LogEtaFn = std::function<double(double)>;

// log of the integral of Phi(tau; h) * eta(tau) over (0,1): the probability
// that the first |obs| weighted draws are exactly `obs` when the rest of the
// urn has mass delta. Gauss-Kronrod on 64 panels combined in log space.
double wallenius_log_prob_quadrature(const std::vector<double>& obs_weights, double delta, double h,
                                     const LogEtaFn& log_eta_fn = {});

// Same probability by exact recursion over subsets; |set| <= 20.
double wallenius_log_prob_exact(const std::vector<double>& set_weights, double rest_mass);

enum class WeightMode { Fast, Quadrature, ExactTiny };

inline constexpr std::size_t kExactTinyLimit = 10;

struct WeightVector {
  std::vector<double> p;                 // normalized, index n is the test group
  std::vector<double> log_unnormalized;  // log p-bar
  std::vector<double> d;                 // sampling-weight shift of each swap

  double max_p() const;
};

// Precomputes everything that does not depend on the test group, so
// compute() costs O(nK) per call.
class WeightModel {
 public:
  WeightModel(const CalibrationPlan& plan, int n_rows, int n_cols, const WeightField& w,
              const WeightField& w_star, WeightMode mode = WeightMode::Fast);

  WeightVector compute(const IndexGroup& test) const;

  const WalleniusContext& context() const { return ctx_; }
  // Missing entries under the plan, the universe for test draws.
  const std::vector<MatrixIndex>& missing() const { return missing_; }

 private:
  struct GroupInfo {
    int col = 0;
    double w_sum = 0.0;         // sampling weights
    double star_sum = 0.0;      // test weights
    double log_tail = 0.0;      // sum_k log(1 - 2^{-h w_k})
    std::vector<double> star;   // test weights in draw order
  };
  GroupInfo describe(const IndexGroup& g) const;
  double log_ratio(std::size_t i, const GroupInfo& gi, const GroupInfo& test, const IndexGroup& tg) const;
  double log_binomial_factor(int ci, int ct) const;

  const CalibrationPlan* plan_;
  int n_rows_;
  int n_cols_;
  const WeightField* w_;
  const WeightField* w_star_;
  WeightMode mode_;
  int K_;
  std::vector<std::uint8_t> observed_;
  std::vector<MatrixIndex> missing_;
  std::vector<int> obs_count_;
  std::vector<int> miss_count_;
  std::vector<double> miss_mass_;
  double eligible_mass_ = 0.0;
  double total_w_ = 0.0;
  std::vector<double> obs_weights_;
  WalleniusContext ctx_;
  std::vector<GroupInfo> groups_;
  double base_log_prob_ = 0.0;  // log P(D_obs) for the non-fast modes
};

WeightVector conformalization_weights(const CalibrationPlan& plan, const IndexGroup& test,
                                      int n_rows, int n_cols, const WeightField& w,
                                      const WeightField& w_star,
                                      WeightMode mode = WeightMode::Fast);

// Joint log probability of (pruned set, ordered calibration groups, test
// group) together with the observed set train + groups. Tiny instances only.
double exact_joint_log_prob(const std::vector<IndexGroup>& groups, const IndexGroup& test,
                            const std::vector<MatrixIndex>& pruned,
                            const std::vector<MatrixIndex>& train, int n_rows, int n_cols,
                            const WeightField& w, const WeightField& w_star);

}  // namespace scmc
