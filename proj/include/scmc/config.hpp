#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace scmc {

struct ExperimentConfig {
  // matrix
  int n_rows = 100;
  int n_cols = 100;
  std::string generator = "factor";  // factor | lowrank_noise
  int true_rank = 5;
  double mu = 0.0;
  double gamma = -1.0;  // negative: alpha / 2
  double noise_sd = 0.1;

  // observations
  std::size_t n_obs = 2000;
  std::string obs_weights = "uniform";  // uniform | hetero | power
  double hetero_s = 1.0;
  double power_s = 2.0;

  // calibration and regions
  int calib_n = 0;  // 0: min(calib_cap, floor(xi / 2))
  int calib_cap = 1000;
  int K = 2;
  std::string rule = "cube";
  double alpha = 0.1;
  std::vector<std::string> methods = {"scmc", "unadj", "bonf"};

  // test groups
  int test_groups = 100;
  std::string test_weights = "uniform";  // uniform | worst_slab | file
  std::string test_weights_file;         // grid read when test_weights = file
  double slab_delta = 0.2;
  double slab_holdout = 0.25;

  // completion
  std::string solver = "als";
  int als_rank = 5;
  double als_reg = 0.1;
  int als_iters = 100;
  double als_tol = 1e-6;

  // estimated sampling weights
  int est_rank = 3;
  double est_nu = 4.0;
  int est_iters = 500;

  // MovieLens
  std::string data;
  int ml_users = 800;
  int ml_items = 1000;
  double holdout_frac = 0.2;

  // upper-bound study
  std::vector<int> ub_sizes = {100, 200, 400};

  int trials = 10;
  std::uint64_t seed = 1;
  int threads = 1;

  double effective_gamma() const { return gamma < 0.0 ? alpha / 2.0 : gamma; }
  bool wants(const std::string& method) const;
};

// Applies one `key = value` setting; unknown keys and bad values raise config errors.
void apply_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);

// Flat `key = value` lines; `#` starts a comment.
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config_file(const std::string& path);

void validate_config(const ExperimentConfig& cfg);

nlohmann::json config_to_json(const ExperimentConfig& cfg);

std::vector<std::string> split_list(const std::string& s);

}  // namespace scmc
