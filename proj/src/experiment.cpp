#include "scmc/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <thread>

#include "scmc/calibration.hpp"
#include "scmc/completion.hpp"
#include "scmc/conformal.hpp"
#include "scmc/missingness.hpp"
#include "scmc/movielens.hpp"
#include "scmc/synthetic.hpp"
#include "scmc/weights.hpp"

namespace scmc {

namespace {

using Clock = std::chrono::steady_clock;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct MethodStats {
  double coverage = 0.0;
  double width = 0.0;
  double clipped = 0.0;
  double max_p = 0.0;
  double gap = kNaN;
  double seconds = 0.0;
};

using TrialResult = std::vector<MethodStats>;  // indexed like cfg.methods

// Runs fn(trial) for every trial on a pool of workers. Results come back in
// trial order; the first failing trial (by index) is rethrown with its seed.
template <class R>
std::vector<R> run_trials(int trials, int threads, std::uint64_t seed,
                          const std::function<R(int, Rng&)>& fn) {
  std::vector<std::optional<R>> results(trials);
  std::vector<std::exception_ptr> errors(trials);
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int t = next++; t < trials; t = next++) {
      Rng rng(derive_seed(seed, static_cast<std::uint64_t>(t)));
      try {
        results[t] = fn(t, rng);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    }
  };
  const int n_workers = std::max(1, std::min(threads, trials));
  std::vector<std::thread> pool;
  for (int i = 1; i < n_workers; ++i) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  for (int t = 0; t < trials; ++t) {
    if (!errors[t]) continue;
    const std::string tag = "trial " + std::to_string(t) + " (seed " + std::to_string(seed) + "): ";
    try {
      std::rethrow_exception(errors[t]);
    } catch (const Error& e) {
      throw Error(e.kind(), tag + e.what());
    } catch (const std::exception& e) {
      throw Error(ErrorKind::Numerical, tag + e.what());
    }
  }
  std::vector<R> out;
  out.reserve(trials);
  for (auto& r : results) out.push_back(std::move(*r));
  return out;
}

std::string fmt(double v) {
  std::ostringstream ss;
  ss << std::setprecision(6) << v;
  return ss.str();
}

WeightField sampling_field(const ExperimentConfig& cfg, Rng& rng) {
  if (cfg.obs_weights == "hetero") {
    return gen_hetero_weights(cfg.n_rows, cfg.n_cols, cfg.hetero_s, cfg.effective_gamma(), rng);
  }
  if (cfg.obs_weights == "power") return gen_power_weights(cfg.n_rows, cfg.n_cols, cfg.power_s);
  return WeightField(cfg.n_rows, cfg.n_cols, 1.0);
}

Eigen::MatrixXd ground_truth(const ExperimentConfig& cfg, Rng& rng) {
  if (cfg.generator == "lowrank_noise") {
    return gen_low_rank_plus_noise(cfg.n_rows, cfg.n_cols, cfg.true_rank, cfg.mu, cfg.noise_sd, rng);
  }
  return gen_uniform_synthetic(cfg.n_rows, cfg.n_cols, cfg.true_rank, cfg.mu, cfg.effective_gamma(), rng);
}

SolverConfig solver_config(const ExperimentConfig& cfg) {
  SolverConfig s;
  s.name = cfg.solver;
  s.als.rank = cfg.als_rank;
  s.als.regularization = cfg.als_reg;
  s.als.max_iters = cfg.als_iters;
  s.als.tol = cfg.als_tol;
  return s;
}

int calibration_size(const ExperimentConfig& cfg, std::size_t xi) {
  const int n = cfg.calib_n > 0 ? static_cast<int>(std::min<std::size_t>(cfg.calib_n, xi))
                                : default_calibration_size(xi, cfg.calib_cap);
  if (n < 1) throw Error(ErrorKind::Infeasible, "not enough observations for one calibration group");
  return n;
}

std::vector<std::uint8_t> mask_of(int n_rows, int n_cols, const std::vector<MatrixIndex>& idx) {
  std::vector<std::uint8_t> m(static_cast<std::size_t>(n_rows) * n_cols, 0);
  for (const auto& i : idx) m[static_cast<std::size_t>(i.row) * n_cols + i.col] = 1;
  return m;
}

// Everything a trial needs once the observed set is fixed.
struct TrialSetup {
  const PartialMatrix* obs = nullptr;
  std::vector<MatrixIndex> obs_idx;
  const WeightField* w = nullptr;       // sampling weights handed to the methods
  const WeightField* w_hat = nullptr;   // estimated weights for scmc_est
  const WeightField* w_oracle = nullptr;  // true weights, for the gap (may be null)
  std::function<double(const MatrixIndex&)> truth;
  // Given the fitted estimate and the missing set, returns test weights and
  // the candidate pool for test draws.
  std::function<std::pair<WeightField, std::vector<MatrixIndex>>(const CompletionEstimate&,
                                                                 const std::vector<MatrixIndex>&, Rng&)>
      tests;
};

TrialResult evaluate_trial(const ExperimentConfig& cfg, const TrialSetup& s, Rng& rng) {
  const int nr = s.obs->n_rows();
  const int nc = s.obs->n_cols();
  const RuleKind rule = parse_rule(cfg.rule);
  const SolverConfig solver = solver_config(cfg);

  const auto t_fit = Clock::now();
  const int n = calibration_size(cfg, max_calibration_groups(s.obs_idx, nc, cfg.K));
  const CalibrationPlan plan = assemble_calibration(s.obs_idx, nc, n, cfg.K, rng);
  const CompletionEstimate est = complete(s.obs->restrict_to(plan.train), solver, rng);
  const double fit_seconds = seconds_since(t_fit);

  std::vector<MatrixIndex> missing;
  {
    const auto m = mask_of(nr, nc, s.obs_idx);
    for (int r = 0; r < nr; ++r)
      for (int c = 0; c < nc; ++c)
        if (!m[static_cast<std::size_t>(r) * nc + c]) missing.push_back({r, c});
  }
  auto test_spec = s.tests(est, missing, rng);
  const WeightField& w_star = test_spec.first;
  const std::vector<MatrixIndex>& candidates = test_spec.second;
  const ColumnGroupSampler sampler(candidates, cfg.K, w_star);
  std::vector<IndexGroup> tests;
  tests.reserve(cfg.test_groups);
  for (int g = 0; g < cfg.test_groups; ++g) tests.push_back(sampler.draw(rng));
  std::vector<std::vector<double>> truths;
  for (const auto& g : tests) {
    std::vector<double> t;
    for (const auto& idx : g.indices) t.push_back(s.truth(idx));
    truths.push_back(std::move(t));
  }

  const bool baselines = cfg.wants("unadj") || cfg.wants("bonf");
  std::optional<CalibrationPlan> plan1;
  std::optional<CompletionEstimate> est1;
  double fit1_seconds = 0.0;
  if (baselines) {
    const auto t0 = Clock::now();
    plan1 = assemble_calibration(s.obs_idx, nc, cfg.K * n, 1, rng);
    est1 = complete(s.obs->restrict_to(plan1->train), solver, rng);
    fit1_seconds = seconds_since(t0);
  }
  const WeightField uniform_star(nr, nc, 1.0);

  std::optional<ScmcCalibrator> oracle;
  auto oracle_cal = [&]() -> const ScmcCalibrator& {
    if (!oracle) oracle.emplace(*s.obs, plan, est, rule, *s.w_oracle, w_star);
    return *oracle;
  };

  TrialResult out(cfg.methods.size());
  for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi) {
    const std::string& method = cfg.methods[mi];
    MethodStats& st = out[mi];
    const auto t0 = Clock::now();
    std::function<ConfidenceRegion(const IndexGroup&)> make;
    std::optional<ScmcCalibrator> cal;
    std::optional<BaselineCalibrator> base;
    bool track_gap = false;
    if (method == "scmc") {
      cal.emplace(*s.obs, plan, est, rule, *s.w, w_star);
    } else if (method == "scmc_unif") {
      cal.emplace(*s.obs, plan, est, rule, *s.w, uniform_star);
    } else if (method == "scmc_est") {
      cal.emplace(*s.obs, plan, est, rule, *s.w_hat, w_star);
      track_gap = s.w_oracle != nullptr;
    } else {
      base.emplace(*s.obs, *plan1, *est1, rule, *s.w, w_star);
    }
    const BaselineKind bk = method == "bonf" ? BaselineKind::Bonferroni : BaselineKind::Unadjusted;
    double gap_sum = 0.0;
    for (std::size_t g = 0; g < tests.size(); ++g) {
      const ConfidenceRegion reg = cal ? cal->region(tests[g], cfg.alpha)
                                       : base->region(bk, tests[g], cfg.alpha);
      st.coverage += region_contains(reg, truths[g]) ? 1.0 : 0.0;
      st.width += region_width(reg);
      st.clipped += reg.clipped ? 1.0 : 0.0;
      st.max_p += reg.max_weight;
      if (track_gap) {
        const auto p_true = oracle_cal().weight_model().compute(tests[g]).p;
        double gap = 0.0;
        for (std::size_t i = 0; i < p_true.size(); ++i) gap += std::abs(p_true[i] - reg.weights_used[i]);
        gap_sum += 0.5 * gap;
      }
    }
    const double m = static_cast<double>(tests.size());
    st.coverage /= m;
    st.width /= m;
    st.clipped /= m;
    st.max_p /= m;
    if (track_gap) st.gap = gap_sum / m;
    st.seconds = seconds_since(t0) + (base ? fit1_seconds : fit_seconds);
  }
  return out;
}

std::vector<MetricsRow> aggregate(const ExperimentConfig& cfg, const std::vector<TrialResult>& trials,
                                  const std::string& params) {
  std::vector<MetricsRow> rows;
  const double T = static_cast<double>(trials.size());
  for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi) {
    MetricsRow row;
    row.method = cfg.methods[mi];
    row.K = cfg.K;
    row.params = params;
    row.trials = static_cast<int>(trials.size());
    double cov2 = 0.0;
    double gap = 0.0;
    int gap_n = 0;
    for (const auto& tr : trials) {
      const MethodStats& st = tr[mi];
      row.coverage += st.coverage;
      cov2 += st.coverage * st.coverage;
      row.mean_width += st.width;
      row.clipped_rate += st.clipped;
      row.mean_max_p += st.max_p;
      row.wall_time_s += st.seconds;
      if (!std::isnan(st.gap)) {
        gap += st.gap;
        ++gap_n;
      }
    }
    row.coverage /= T;
    row.mean_width /= T;
    row.clipped_rate /= T;
    row.mean_max_p /= T;
    row.weight_gap = gap_n > 0 ? gap / gap_n : kNaN;
    const double var = T > 1 ? std::max(0.0, (cov2 - T * row.coverage * row.coverage) / (T - 1)) : 0.0;
    row.coverage_se = std::sqrt(var / T);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace

std::vector<MetricsRow> run_experiment(const ExperimentConfig& cfg) {
  validate_config(cfg);
  const bool need_hat = cfg.wants("scmc_est");
  std::optional<WeightField> file_star;
  if (cfg.test_weights == "file") {
    file_star = read_weight_grid(cfg.test_weights_file);
    if (file_star->n_rows() != cfg.n_rows || file_star->n_cols() != cfg.n_cols) {
      throw Error(ErrorKind::Size, "test weight grid does not match the matrix dimensions");
    }
    if (!file_star->all_nonnegative()) throw Error(ErrorKind::Weight, "test weights must be nonnegative");
  }
  std::function<TrialResult(int, Rng&)> trial = [&](int, Rng& rng) {
    const Eigen::MatrixXd M = ground_truth(cfg, rng);
    const WeightField w = sampling_field(cfg, rng);
    const auto obs_idx = sample_observations(cfg.n_rows, cfg.n_cols, cfg.n_obs, w, rng);
    const PartialMatrix obs = observe(M, obs_idx);
    std::optional<MissingnessModel> hat;
    if (need_hat) {
      MissingnessOptions opt;
      opt.max_iters = cfg.est_iters;
      hat = estimate_weights(obs.mask(), cfg.n_rows, cfg.n_cols, cfg.est_rank, cfg.est_nu, opt);
    }
    TrialSetup s;
    s.obs = &obs;
    s.obs_idx = obs_idx;
    s.w = &w;
    s.w_hat = hat ? &hat->w_hat : nullptr;
    s.w_oracle = &w;
    s.truth = [&M](const MatrixIndex& i) { return M(i.row, i.col); };
    if (cfg.test_weights == "file") {
      s.tests = [&](const CompletionEstimate&, const std::vector<MatrixIndex>& missing, Rng&) {
        return std::make_pair(*file_star, missing);
      };
    } else if (cfg.test_weights == "worst_slab") {
      s.tests = [&](const CompletionEstimate& est, const std::vector<MatrixIndex>& missing, Rng& r) {
        std::vector<MatrixIndex> pool = missing;
        const std::size_t m = static_cast<std::size_t>(std::llround(cfg.slab_holdout * pool.size()));
        for (std::size_t j = 0; j < m; ++j) std::swap(pool[j], pool[j + uniform_index(r, pool.size() - j)]);
        const std::vector<MatrixIndex> holdout(pool.begin(), pool.begin() + m);
        WorstSlab slab = worst_slab_weights(M, est, holdout, cfg.slab_delta);
        if (slab.degenerate) std::cerr << "warning: degenerate slab, falling back to uniform test weights\n";
        for (const auto& idx : holdout) slab.w_star(idx) = 0.0;
        return std::make_pair(std::move(slab.w_star), missing);
      };
    } else {
      s.tests = [&](const CompletionEstimate&, const std::vector<MatrixIndex>& missing, Rng&) {
        return std::make_pair(WeightField(cfg.n_rows, cfg.n_cols, 1.0), missing);
      };
    }
    return evaluate_trial(cfg, s, rng);
  };
  const auto results = run_trials<TrialResult>(cfg.trials, cfg.threads, cfg.seed, trial);
  std::string params = "mu=" + fmt(cfg.mu) + ";n_obs=" + std::to_string(cfg.n_obs) +
                       ";obs_weights=" + cfg.obs_weights + ";test_weights=" + cfg.test_weights +
                       ";rule=" + cfg.rule;
  if (cfg.test_weights == "worst_slab") params += ";delta=" + fmt(cfg.slab_delta);
  if (cfg.obs_weights == "hetero") params += ";s=" + fmt(cfg.hetero_s);
  return aggregate(cfg, results, params);
}

std::vector<MetricsRow> run_movielens(const ExperimentConfig& cfg, const PartialMatrix& ratings) {
  validate_config(cfg);
  Rng sub_rng(derive_seed(cfg.seed, 0xfeedULL));
  const PartialMatrix data = subsample_matrix(ratings, cfg.ml_users, cfg.ml_items, sub_rng);
  const int nr = data.n_rows();
  const int nc = data.n_cols();

  std::function<TrialResult(int, Rng&)> trial = [&](int, Rng& rng) {
    std::vector<MatrixIndex> all = data.observed_indices();
    const std::size_t m = static_cast<std::size_t>(std::llround(cfg.holdout_frac * all.size()));
    for (std::size_t j = 0; j < m; ++j) std::swap(all[j], all[j + uniform_index(rng, all.size() - j)]);
    const std::vector<MatrixIndex> hout(all.begin(), all.begin() + m);
    const std::vector<MatrixIndex> kept(all.begin() + m, all.end());
    const PartialMatrix obs = data.restrict_to(kept);

    MissingnessOptions opt;
    opt.max_iters = cfg.est_iters;
    const MissingnessModel hat = estimate_weights(obs.mask(), nr, nc, cfg.est_rank, cfg.est_nu, opt);

    TrialSetup s;
    s.obs = &obs;
    s.obs_idx = kept;
    s.w = &hat.w_hat;
    s.w_hat = &hat.w_hat;
    s.w_oracle = nullptr;
    s.truth = [&data](const MatrixIndex& i) { return data.value(i); };
    s.tests = [&](const CompletionEstimate&, const std::vector<MatrixIndex>&, Rng&) {
      return std::make_pair(WeightField(nr, nc, 1.0), hout);
    };
    return evaluate_trial(cfg, s, rng);
  };
  const auto results = run_trials<TrialResult>(cfg.trials, cfg.threads, cfg.seed, trial);
  const std::string params = "users=" + std::to_string(nr) + ";items=" + std::to_string(nc) +
                             ";holdout=" + fmt(cfg.holdout_frac) + ";est_rank=" +
                             std::to_string(cfg.est_rank) + ";rule=" + cfg.rule;
  return aggregate(cfg, results, params);
}

std::vector<MetricsRow> run_upper_bound(const ExperimentConfig& cfg) {
  validate_config(cfg);
  Rng field_rng(derive_seed(cfg.seed, 0xf1e1dULL));
  const WeightField w = sampling_field(cfg, field_rng);
  std::vector<MetricsRow> rows;
  for (std::size_t si = 0; si < cfg.ub_sizes.size(); ++si) {
    const int n = cfg.ub_sizes[si];
    const auto t0 = Clock::now();
    std::function<double(int, Rng&)> trial = [&](int, Rng& rng) {
      const auto obs_idx = sample_observations(cfg.n_rows, cfg.n_cols, cfg.n_obs, w, rng);
      const CalibrationPlan plan = assemble_calibration(obs_idx, cfg.n_cols, n, cfg.K, rng);
      const WeightModel model(plan, cfg.n_rows, cfg.n_cols, w, w);
      const ColumnGroupSampler sampler(model.missing(), cfg.K, w);
      double acc = 0.0;
      for (int g = 0; g < cfg.test_groups; ++g) acc += model.compute(sampler.draw(rng)).max_p();
      return acc / cfg.test_groups;
    };
    const auto maxes = run_trials<double>(cfg.trials, cfg.threads,
                                          derive_seed(cfg.seed, 1000 + si), trial);
    MetricsRow row;
    row.method = "scmc";
    row.K = cfg.K;
    row.params = "n=" + std::to_string(n) + ";obs_weights=" + cfg.obs_weights;
    row.coverage = kNaN;
    row.coverage_se = kNaN;
    row.mean_width = kNaN;
    row.clipped_rate = kNaN;
    row.weight_gap = kNaN;
    row.trials = cfg.trials;
    for (double v : maxes) row.mean_max_p += v;
    row.mean_max_p /= static_cast<double>(maxes.size());
    row.wall_time_s = seconds_since(t0);
    rows.push_back(row);
  }
  return rows;
}

WeightField read_weight_grid(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Data, "cannot open '" + path + "'");
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
        if (cell.find_first_not_of(" \t\r", used) != std::string::npos) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw Error(ErrorKind::Parse, "line " + std::to_string(rows.size() + 1) + ": bad weight '" + cell + "'");
      }
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw Error(ErrorKind::Parse, "line " + std::to_string(rows.size() + 1) + ": ragged weight grid");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw Error(ErrorKind::Data, "'" + path + "' holds no weights");
  WeightField w(static_cast<int>(rows.size()), static_cast<int>(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c) w(static_cast<int>(r), static_cast<int>(c)) = rows[r][c];
  return w;
}

void write_weight_grid(const std::string& path, const WeightField& w) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Config, "cannot write '" + path + "'");
  out << std::setprecision(10);
  for (int r = 0; r < w.n_rows(); ++r) {
    for (int c = 0; c < w.n_cols(); ++c) out << (c ? "," : "") << w(r, c);
    out << '\n';
  }
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::ostringstream out;
  out << "method,K,params,coverage,coverage_se,mean_width,clipped_rate,mean_max_p,weight_gap,"
         "wall_time_s,trials\n";
  auto num = [&](double v) {
    if (std::isnan(v)) return std::string();
    std::ostringstream ss;
    ss << std::setprecision(10) << v;
    return ss.str();
  };
  for (const auto& r : rows) {
    out << r.method << ',' << r.K << ',' << r.params << ',' << num(r.coverage) << ','
        << num(r.coverage_se) << ',' << num(r.mean_width) << ',' << num(r.clipped_rate) << ','
        << num(r.mean_max_p) << ',' << num(r.weight_gap) << ',' << num(r.wall_time_s) << ','
        << r.trials << '\n';
  }
  return out.str();
}

nlohmann::json metrics_json(const ExperimentConfig& cfg, const std::vector<MetricsRow>& rows) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rows) {
    arr.push_back({{"method", r.method},
                   {"K", r.K},
                   {"params", r.params},
                   {"coverage", num(r.coverage)},
                   {"coverage_se", num(r.coverage_se)},
                   {"mean_width", num(r.mean_width)},
                   {"clipped_rate", num(r.clipped_rate)},
                   {"mean_max_p", num(r.mean_max_p)},
                   {"weight_gap", num(r.weight_gap)},
                   {"wall_time_s", num(r.wall_time_s)},
                   {"trials", r.trials}});
  }
  return {{"config", config_to_json(cfg)}, {"rows", arr}};
}

void write_metrics(const std::string& path, const ExperimentConfig& cfg,
                   const std::vector<MetricsRow>& rows) {
  const bool json = path.size() >= 5 && path.compare(path.size() - 5, 5, ".json") == 0;
  const std::string body = json ? metrics_json(cfg, rows).dump(2) + "\n" : metrics_csv(rows);
  if (path == "-") {
    std::cout << body;
    return;
  }
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Config, "cannot write '" + path + "'");
  out << body;
}

}  // namespace scmc
