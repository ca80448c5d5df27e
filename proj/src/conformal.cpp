#include "scmc/conformal.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace scmc {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kReachSlack = 1e-12;
// Halfwidths come from mapping a score back through tau/(1-tau) or |c| tau,
// which can land an ulp or two below the residual that produced the score.
constexpr double kEdgeSlack = 1e-12;
}  // namespace

RuleKind parse_rule(const std::string& name) {
  if (name == "cube") return RuleKind::HyperCube;
  if (name == "rect" || name == "rectangle") return RuleKind::HyperRectangle;
  if (name == "sphere") return RuleKind::HyperSphere;
  throw Error(ErrorKind::Config, "unknown prediction rule '" + name + "'");
}

const char* rule_name(RuleKind kind) {
  switch (kind) {
    case RuleKind::HyperCube: return "cube";
    case RuleKind::HyperRectangle: return "rect";
    case RuleKind::HyperSphere: return "sphere";
  }
  return "cube";
}

double score_from_residuals(RuleKind rule, const std::vector<double>& centers,
                            const std::vector<double>& truth) {
  if (centers.size() != truth.size()) throw Error(ErrorKind::Size, "truth has the wrong length");
  double s = 0.0;
  switch (rule) {
    case RuleKind::HyperCube:
      for (std::size_t k = 0; k < truth.size(); ++k) {
        const double r = std::abs(truth[k] - centers[k]);
        s = std::max(s, r / (1.0 + r));
      }
      return s;
    case RuleKind::HyperRectangle:
      for (std::size_t k = 0; k < truth.size(); ++k) {
        const double r = std::abs(truth[k] - centers[k]);
        if (centers[k] == 0.0) {
          if (r > 0.0) return kInf;
          continue;
        }
        s = std::max(s, r / std::abs(centers[k]));
      }
      return s;
    case RuleKind::HyperSphere:
      for (std::size_t k = 0; k < truth.size(); ++k) {
        const double r = truth[k] - centers[k];
        s += r * r;
      }
      return std::sqrt(s);
  }
  return s;
}

double conformity_score(RuleKind rule, const CompletionEstimate& estimate, const IndexGroup& group,
                        const std::vector<double>& truth) {
  std::vector<double> centers;
  centers.reserve(group.size());
  for (const auto& idx : group.indices) centers.push_back(estimate.at(idx));
  return score_from_residuals(rule, centers, truth);
}

namespace {

void check_weights(std::size_t n_scores, const std::vector<double>& weights, double beta) {
  if (weights.size() != n_scores + 1) {
    throw Error(ErrorKind::Size, "weights must have one more entry than scores");
  }
  if (!(beta > 0.0 && beta < 1.0)) throw Error(ErrorKind::Domain, "beta must lie in (0,1)");
  double s = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw Error(ErrorKind::Normalization, "weights must be nonnegative");
    s += w;
  }
  if (std::abs(s - 1.0) > 1e-9) throw Error(ErrorKind::Normalization, "weights must sum to 1");
}

}  // namespace

double weighted_quantile_sorted(const std::vector<double>& sorted_scores,
                                const std::vector<std::size_t>& order,
                                const std::vector<double>& weights, double beta) {
  check_weights(sorted_scores.size(), weights, beta);
  double cum = 0.0;
  for (std::size_t j = 0; j < sorted_scores.size(); ++j) {
    cum += weights[order[j]];
    if (cum >= beta - kReachSlack) return sorted_scores[j];
  }
  return kInf;
}

double weighted_quantile(const std::vector<double>& scores, const std::vector<double>& weights,
                         double beta) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> sorted(scores.size());
  for (std::size_t j = 0; j < order.size(); ++j) sorted[j] = scores[order[j]];
  return weighted_quantile_sorted(sorted, order, weights, beta);
}

ConfidenceRegion make_region(RuleKind rule, const CompletionEstimate& estimate,
                             const IndexGroup& group, double tau) {
  if (!(tau >= 0.0)) throw Error(ErrorKind::Domain, "threshold must be nonnegative");
  ConfidenceRegion reg;
  reg.group = group;
  reg.rule = rule;
  reg.tau_hat = tau;
  for (const auto& idx : group.indices) reg.centers.push_back(estimate.at(idx));
  switch (rule) {
    case RuleKind::HyperCube: {
      const double hw = tau >= 1.0 ? kInf : tau / (1.0 - tau);
      reg.halfwidths.assign(group.size(), hw);
      break;
    }
    case RuleKind::HyperRectangle:
      for (double c : reg.centers) reg.halfwidths.push_back(std::isinf(tau) ? kInf : std::abs(c) * tau);
      break;
    case RuleKind::HyperSphere:
      reg.is_ball = true;
      reg.radius = tau;
      break;
  }
  return reg;
}

bool region_contains(const ConfidenceRegion& region, const std::vector<double>& truth) {
  if (truth.size() != region.centers.size()) throw Error(ErrorKind::Size, "truth has the wrong length");
  if (region.is_ball) {
    if (std::isinf(region.radius)) return true;
    double s = 0.0;
    for (std::size_t k = 0; k < truth.size(); ++k) {
      const double r = truth[k] - region.centers[k];
      s += r * r;
    }
    return std::sqrt(s) <= region.radius * (1.0 + kEdgeSlack);
  }
  for (std::size_t k = 0; k < truth.size(); ++k) {
    if (std::abs(truth[k] - region.centers[k]) > region.halfwidths[k] * (1.0 + kEdgeSlack)) return false;
  }
  return true;
}

double region_width(const ConfidenceRegion& region) {
  if (region.is_ball) return 2.0 * region.radius;
  if (region.halfwidths.empty()) return 0.0;
  double s = 0.0;
  for (double h : region.halfwidths) s += 2.0 * h;
  return s / static_cast<double>(region.halfwidths.size());
}

ScmcCalibrator::ScmcCalibrator(const PartialMatrix& obs, const CalibrationPlan& plan,
                               const CompletionEstimate& estimate, RuleKind rule,
                               const WeightField& w, const WeightField& w_star, WeightMode mode)
    : estimate_(&estimate), rule_(rule), model_(plan, obs.n_rows(), obs.n_cols(), w, w_star, mode) {
  if (plan.groups.empty()) throw Error(ErrorKind::Parameter, "at least one calibration group is required");
  if (estimate.estimate.rows() != obs.n_rows() || estimate.estimate.cols() != obs.n_cols()) {
    throw Error(ErrorKind::Size, "estimate shape does not match the matrix");
  }
  scores_.reserve(plan.groups.size());
  std::vector<double> truth;
  for (const auto& g : plan.groups) {
    truth.clear();
    for (const auto& idx : g.indices) truth.push_back(obs.value(idx));
    scores_.push_back(conformity_score(rule, estimate, g, truth));
  }
  order_.resize(scores_.size());
  std::iota(order_.begin(), order_.end(), 0);
  std::stable_sort(order_.begin(), order_.end(),
                   [&](std::size_t a, std::size_t b) { return scores_[a] < scores_[b]; });
  sorted_.resize(scores_.size());
  for (std::size_t j = 0; j < order_.size(); ++j) sorted_[j] = scores_[order_[j]];
}

ConfidenceRegion ScmcCalibrator::region(const IndexGroup& test, double alpha) const {
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorKind::Parameter, "alpha must lie in (0,1)");
  const WeightVector wv = model_.compute(test);
  double tau = weighted_quantile_sorted(sorted_, order_, wv.p, 1.0 - alpha);
  bool clipped = false;
  if (std::isinf(tau)) {
    tau = sorted_.back();
    clipped = true;
  }
  ConfidenceRegion reg = make_region(rule_, *estimate_, test, tau);
  reg.clipped = clipped;
  reg.max_weight = wv.max_p();
  reg.weights_used = wv.p;
  return reg;
}

ConfidenceRegion scmc_region(const PartialMatrix& obs, const CalibrationPlan& plan,
                             const CompletionEstimate& estimate, RuleKind rule,
                             const IndexGroup& test, double alpha, const WeightField& w,
                             const WeightField& w_star) {
  ScmcCalibrator cal(obs, plan, estimate, rule, w, w_star);
  return cal.region(test, alpha);
}

BaselineCalibrator::BaselineCalibrator(const PartialMatrix& obs, const CalibrationPlan& plan,
                                       const CompletionEstimate& estimate, RuleKind rule,
                                       const WeightField& w, const WeightField& w_star)
    : inner_((plan.K == 1 ? obs : throw Error(ErrorKind::Parameter,
                                              "baseline calibration needs group size 1")),
             plan, estimate, rule, w, w_star),
      rule_(rule) {}

ConfidenceRegion BaselineCalibrator::region(BaselineKind kind, const IndexGroup& test,
                                            double alpha) const {
  const double K = static_cast<double>(test.size());
  const double level = kind == BaselineKind::Bonferroni ? alpha / K : alpha;
  ConfidenceRegion out;
  out.group = test;
  out.rule = rule_;
  out.tau_hat = 0.0;
  for (std::size_t k = 0; k < test.size(); ++k) {
    IndexGroup single;
    single.indices.push_back(test[k]);
    const ConfidenceRegion r = inner_.region(single, level);
    out.centers.push_back(r.centers[0]);
    out.halfwidths.push_back(r.is_ball ? r.radius : r.halfwidths[0]);
    out.tau_hat = std::max(out.tau_hat, r.tau_hat);
    out.clipped = out.clipped || r.clipped;
    out.max_weight = std::max(out.max_weight, r.max_weight);
    if (k == 0) out.weights_used = r.weights_used;
  }
  return out;
}

ConfidenceRegion baseline_region(BaselineKind kind, const PartialMatrix& obs,
                                 const CalibrationPlan& plan, const CompletionEstimate& estimate,
                                 RuleKind rule, const IndexGroup& test, double alpha,
                                 const WeightField& w, const WeightField& w_star) {
  BaselineCalibrator cal(obs, plan, estimate, rule, w, w_star);
  return cal.region(kind, test, alpha);
}

}  // namespace scmc
