#pragma once

#include <string>
#include <vector>

#include "scmc/calibration.hpp"
#include "scmc/completion.hpp"
#include "scmc/matrix_core.hpp"
#include "scmc/weights.hpp"

namespace scmc {

enum class RuleKind { HyperCube, HyperRectangle, HyperSphere };

struct PredictionRule {
  RuleKind kind = RuleKind::HyperCube;
};

RuleKind parse_rule(const std::string& name);  // cube | rect | sphere
const char* rule_name(RuleKind kind);

struct ConfidenceRegion {
  IndexGroup group;
  RuleKind rule = RuleKind::HyperCube;
  // Calibrated threshold in score space; +inf when no finite score reaches
  // the level and clipping is off.
  double tau_hat = 0.0;
  std::vector<double> centers;
  std::vector<double> halfwidths;  // box regions
  double radius = 0.0;             // ball regions
  bool is_ball = false;
  std::vector<double> weights_used;
  bool clipped = false;
  double max_weight = 0.0;
};

double score_from_residuals(RuleKind rule, const std::vector<double>& centers,
                            const std::vector<double>& truth);

double conformity_score(RuleKind rule, const CompletionEstimate& estimate, const IndexGroup& group,
                        const std::vector<double>& truth);

// Smallest score whose cumulative weight reaches beta; the last weight is the
// mass at +inf. Ties are ordered by position.
double weighted_quantile(const std::vector<double>& scores, const std::vector<double>& weights,
                         double beta);

// Same, with scores already sorted ascending and `order` mapping sorted
// positions back to weight positions.
double weighted_quantile_sorted(const std::vector<double>& sorted_scores,
                                const std::vector<std::size_t>& order,
                                const std::vector<double>& weights, double beta);

// C(x*, tau, M-hat) for a threshold in score space.
ConfidenceRegion make_region(RuleKind rule, const CompletionEstimate& estimate,
                             const IndexGroup& group, double tau);

bool region_contains(const ConfidenceRegion& region, const std::vector<double>& truth);

// Mean per-entry interval length for boxes, 2 * radius for balls.
double region_width(const ConfidenceRegion& region);

class ScmcCalibrator {
 public:
  ScmcCalibrator(const PartialMatrix& obs, const CalibrationPlan& plan,
                 const CompletionEstimate& estimate, RuleKind rule, const WeightField& w,
                 const WeightField& w_star, WeightMode mode = WeightMode::Fast);

  ConfidenceRegion region(const IndexGroup& test, double alpha) const;

  const WeightModel& weight_model() const { return model_; }
  const std::vector<double>& scores() const { return scores_; }

 private:
  const CompletionEstimate* estimate_;
  RuleKind rule_;
  WeightModel model_;
  std::vector<double> scores_;
  std::vector<double> sorted_;
  std::vector<std::size_t> order_;
};

ConfidenceRegion scmc_region(const PartialMatrix& obs, const CalibrationPlan& plan,
                             const CompletionEstimate& estimate, RuleKind rule,
                             const IndexGroup& test, double alpha, const WeightField& w,
                             const WeightField& w_star);

enum class BaselineKind { Unadjusted, Bonferroni };

// Per-entry K = 1 calibration; the plan must have group size 1.
class BaselineCalibrator {
 public:
  BaselineCalibrator(const PartialMatrix& obs, const CalibrationPlan& plan,
                     const CompletionEstimate& estimate, RuleKind rule, const WeightField& w,
                     const WeightField& w_star);

  ConfidenceRegion region(BaselineKind kind, const IndexGroup& test, double alpha) const;

 private:
  ScmcCalibrator inner_;
  RuleKind rule_;
};

ConfidenceRegion baseline_region(BaselineKind kind, const PartialMatrix& obs,
                                 const CalibrationPlan& plan, const CompletionEstimate& estimate,
                                 RuleKind rule, const IndexGroup& test, double alpha,
                                 const WeightField& w, const WeightField& w_star);

}  // namespace scmc
