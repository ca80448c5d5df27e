#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "scmc/config.hpp"
#include "scmc/matrix_core.hpp"

namespace scmc {

struct MetricsRow {
  std::string method;
  int K = 0;
  std::string params;
  double coverage = 0.0;     // NaN when the run does not measure coverage
  double coverage_se = 0.0;  // standard error across trials
  double mean_width = 0.0;
  double clipped_rate = 0.0;
  double mean_max_p = 0.0;
  double weight_gap = 0.0;   // mean half L1 gap to the oracle weights (scmc_est)
  double wall_time_s = 0.0;
  int trials = 0;
};

// Synthetic suites: one row per requested method.
std::vector<MetricsRow> run_experiment(const ExperimentConfig& cfg);

// Hold-out protocol on a ratings matrix (already loaded; subsampled here).
std::vector<MetricsRow> run_movielens(const ExperimentConfig& cfg, const PartialMatrix& ratings);

// Mean of max_i p_i for each calibration size in cfg.ub_sizes.
std::vector<MetricsRow> run_upper_bound(const ExperimentConfig& cfg);

// Comma-separated grid, one matrix row per line.
WeightField read_weight_grid(const std::string& path);
void write_weight_grid(const std::string& path, const WeightField& w);

std::string metrics_csv(const std::vector<MetricsRow>& rows);
nlohmann::json metrics_json(const ExperimentConfig& cfg, const std::vector<MetricsRow>& rows);

// CSV unless the path ends in ".json"; "-" writes CSV to stdout.
void write_metrics(const std::string& path, const ExperimentConfig& cfg,
                   const std::vector<MetricsRow>& rows);

}  // namespace scmc
