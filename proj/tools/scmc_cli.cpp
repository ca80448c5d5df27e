#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "scmc/config.hpp"
#include "scmc/experiment.hpp"
#include "scmc/missingness.hpp"
#include "scmc/movielens.hpp"

namespace {

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<double> alpha;
  std::optional<int> k;
  std::optional<std::string> rule;
  std::optional<std::string> methods;
  std::optional<int> trials;
};

scmc::ExperimentConfig load(const std::string& path, const Overrides& o,
                            const scmc::ExperimentConfig& base = {}) {
  scmc::ExperimentConfig cfg = path.empty() ? base : scmc::load_config_file(path);
  if (o.seed) cfg.seed = *o.seed;
  if (o.threads) cfg.threads = *o.threads;
  if (o.alpha) cfg.alpha = *o.alpha;
  if (o.k) cfg.K = *o.k;
  if (o.rule) cfg.rule = *o.rule;
  if (o.methods) cfg.methods = scmc::split_list(*o.methods);
  if (o.trials) cfg.trials = *o.trials;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Structured conformalized matrix completion experiments"};
  app.require_subcommand(1);
  app.fallthrough();

  Overrides o;
  app.add_option("--seed", o.seed, "Master seed");
  app.add_option("--threads", o.threads, "Worker threads");
  app.add_option("--alpha", o.alpha, "Miscoverage level");
  app.add_option("--k", o.k, "Group size K");
  app.add_option("--rule", o.rule, "Prediction rule")->check(CLI::IsMember({"cube", "rect", "sphere"}));
  app.add_option("--methods", o.methods, "Comma list from scmc,unadj,bonf,scmc_unif,scmc_est");
  app.add_option("--trials", o.trials, "Number of trials");

  std::string config_path;
  std::string out = "-";

  auto* synthetic = app.add_subcommand("synthetic", "Synthetic coverage suites");
  synthetic->add_option("--config", config_path, "Config file")->check(CLI::ExistingFile);
  synthetic->add_option("--out", out, "Output path (.csv or .json, - for stdout)");

  std::string data;
  std::optional<double> holdout;
  auto* movielens = app.add_subcommand("movielens", "Hold-out protocol on a ratings file");
  movielens->add_option("--data", data, "Path to u.data");
  movielens->add_option("--holdout-frac", holdout, "Hold-out fraction");
  movielens->add_option("--config", config_path, "Config file")->check(CLI::ExistingFile);
  movielens->add_option("--out", out, "Output path (.csv or .json, - for stdout)");

  int est_rank = 3;
  double est_nu = 4.0;
  int est_users = 0;
  int est_items = 0;
  int est_iters = 500;
  std::string grid_out;
  auto* estimate = app.add_subcommand("estimate-weights", "Fit observation probabilities to a ratings mask");
  estimate->add_option("--data", data, "Path to u.data")->required();
  estimate->add_option("--rank", est_rank, "Nuclear-norm rank parameter");
  estimate->add_option("--nu", est_nu, "Entrywise logit bound");
  estimate->add_option("--users", est_users, "Subsample rows (0 keeps all)");
  estimate->add_option("--items", est_items, "Subsample columns (0 keeps all)");
  estimate->add_option("--iters", est_iters, "Gradient iterations");
  estimate->add_option("--out", grid_out, "Grid output path")->required();

  auto* upper = app.add_subcommand("upper-bound", "Largest conformalization weight versus n");
  upper->add_option("--config", config_path, "Config file")->check(CLI::ExistingFile);
  upper->add_option("--out", out, "Output path (.csv or .json, - for stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (synthetic->parsed()) {
      const auto cfg = load(config_path, o);
      scmc::write_metrics(out, cfg, scmc::run_experiment(cfg));
    } else if (movielens->parsed()) {
      auto cfg = load(config_path, o);
      if (!data.empty()) cfg.data = data;
      if (holdout) cfg.holdout_frac = *holdout;
      if (cfg.data.empty()) throw scmc::Error(scmc::ErrorKind::Config, "movielens needs --data");
      const auto ratings = scmc::load_movielens(cfg.data);
      scmc::write_metrics(out, cfg, scmc::run_movielens(cfg, ratings));
    } else if (estimate->parsed()) {
      auto ratings = scmc::load_movielens(data);
      if (est_users > 0 || est_items > 0) {
        scmc::Rng rng(scmc::derive_seed(o.seed.value_or(1), 0xfeedULL));
        ratings = scmc::subsample_matrix(ratings, est_users > 0 ? est_users : ratings.n_rows(),
                                         est_items > 0 ? est_items : ratings.n_cols(), rng);
      }
      scmc::MissingnessOptions opt;
      opt.max_iters = est_iters;
      const auto model = scmc::estimate_weights(ratings.mask(), ratings.n_rows(), ratings.n_cols(),
                                                est_rank, est_nu, opt);
      scmc::write_weight_grid(grid_out, model.w_hat);
      std::cerr << "estimated " << ratings.n_rows() << "x" << ratings.n_cols() << " grid in "
                << model.iterations << " iterations\n";
    } else if (upper->parsed()) {
      scmc::ExperimentConfig base;
      base.n_rows = 200;
      base.n_cols = 200;
      base.n_obs = 8000;
      base.obs_weights = "power";
      const auto cfg = load(config_path, o, base);
      scmc::write_metrics(out, cfg, scmc::run_upper_bound(cfg));
    }
  } catch (const scmc::Error& e) {
    std::cerr << "error (" << scmc::error_kind_name(e.kind()) << "): " << e.what() << "\n";
    return scmc::exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
