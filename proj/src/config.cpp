#include "scmc/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "scmc/matrix_core.hpp"

namespace scmc {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_as(const std::string& key, const std::string& value) {
  T out{};
  const char* b = value.data();
  const char* e = value.data() + value.size();
  auto [p, ec] = std::from_chars(b, e, out);
  if (ec != std::errc() || p != e) {
    throw Error(ErrorKind::Config, "bad value '" + value + "' for key '" + key + "'");
  }
  return out;
}

std::string unquote(const std::string& v) {
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') return v.substr(1, v.size() - 2);
  return v;
}

using Setter = std::function<void(ExperimentConfig&, const std::string&, const std::string&)>;

template <class T, class Field>
Setter number(Field field) {
  return [field](ExperimentConfig& c, const std::string& k, const std::string& v) {
    c.*field = parse_as<T>(k, v);
  };
}

Setter text(std::string ExperimentConfig::*field) {
  return [field](ExperimentConfig& c, const std::string&, const std::string& v) { c.*field = unquote(v); };
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"n_rows", number<int>(&ExperimentConfig::n_rows)},
      {"n_cols", number<int>(&ExperimentConfig::n_cols)},
      {"generator", text(&ExperimentConfig::generator)},
      {"true_rank", number<int>(&ExperimentConfig::true_rank)},
      {"mu", number<double>(&ExperimentConfig::mu)},
      {"gamma", number<double>(&ExperimentConfig::gamma)},
      {"noise_sd", number<double>(&ExperimentConfig::noise_sd)},
      {"n_obs", number<std::size_t>(&ExperimentConfig::n_obs)},
      {"obs_weights", text(&ExperimentConfig::obs_weights)},
      {"hetero_s", number<double>(&ExperimentConfig::hetero_s)},
      {"power_s", number<double>(&ExperimentConfig::power_s)},
      {"calib_n", number<int>(&ExperimentConfig::calib_n)},
      {"calib_cap", number<int>(&ExperimentConfig::calib_cap)},
      {"k", number<int>(&ExperimentConfig::K)},
      {"rule", text(&ExperimentConfig::rule)},
      {"alpha", number<double>(&ExperimentConfig::alpha)},
      {"methods",
       [](ExperimentConfig& c, const std::string&, const std::string& v) { c.methods = split_list(unquote(v)); }},
      {"test_groups", number<int>(&ExperimentConfig::test_groups)},
      {"test_weights", text(&ExperimentConfig::test_weights)},
      {"test_weights_file", text(&ExperimentConfig::test_weights_file)},
      {"slab_delta", number<double>(&ExperimentConfig::slab_delta)},
      {"slab_holdout", number<double>(&ExperimentConfig::slab_holdout)},
      {"solver", text(&ExperimentConfig::solver)},
      {"als_rank", number<int>(&ExperimentConfig::als_rank)},
      {"als_reg", number<double>(&ExperimentConfig::als_reg)},
      {"als_iters", number<int>(&ExperimentConfig::als_iters)},
      {"als_tol", number<double>(&ExperimentConfig::als_tol)},
      {"est_rank", number<int>(&ExperimentConfig::est_rank)},
      {"est_nu", number<double>(&ExperimentConfig::est_nu)},
      {"est_iters", number<int>(&ExperimentConfig::est_iters)},
      {"data", text(&ExperimentConfig::data)},
      {"ml_users", number<int>(&ExperimentConfig::ml_users)},
      {"ml_items", number<int>(&ExperimentConfig::ml_items)},
      {"holdout_frac", number<double>(&ExperimentConfig::holdout_frac)},
      {"ub_sizes",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.ub_sizes.clear();
         for (const auto& item : split_list(unquote(v))) c.ub_sizes.push_back(parse_as<int>(k, item));
       }},
      {"trials", number<int>(&ExperimentConfig::trials)},
      {"seed", number<std::uint64_t>(&ExperimentConfig::seed)},
      {"threads", number<int>(&ExperimentConfig::threads)},
  };
  return table;
}

}  // namespace

bool ExperimentConfig::wants(const std::string& method) const {
  return std::find(methods.begin(), methods.end(), method) != methods.end();
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void apply_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  const auto& table = setters();
  const auto it = table.find(key);
  if (it == table.end()) throw Error(ErrorKind::Config, "unknown config key '" + key + "'");
  it->second(cfg, key, trim(value));
}

ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorKind::Config, "line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    try {
      apply_config_value(cfg, key, line.substr(eq + 1));
    } catch (const Error& e) {
      throw Error(ErrorKind::Config, "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Config, "cannot open config '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

void validate_config(const ExperimentConfig& c) {
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::Config, msg); };
  if (c.n_rows < 1 || c.n_cols < 1) fail("matrix dimensions must be positive");
  if (c.trials < 1) fail("trials must be at least 1");
  if (!(c.alpha > 0.0 && c.alpha < 1.0)) fail("alpha must lie in (0,1)");
  if (c.K < 1) fail("k must be at least 1");
  if (c.threads < 1) fail("threads must be at least 1");
  if (c.test_groups < 1) fail("test_groups must be at least 1");
  if (c.generator != "factor" && c.generator != "lowrank_noise") fail("unknown generator '" + c.generator + "'");
  if (c.obs_weights != "uniform" && c.obs_weights != "hetero" && c.obs_weights != "power") {
    fail("unknown obs_weights '" + c.obs_weights + "'");
  }
  if (c.test_weights != "uniform" && c.test_weights != "worst_slab" && c.test_weights != "file") {
    fail("unknown test_weights '" + c.test_weights + "'");
  }
  if (c.test_weights == "file" && c.test_weights_file.empty()) fail("test_weights = file needs test_weights_file");
  if (c.rule != "cube" && c.rule != "rect" && c.rule != "rectangle" && c.rule != "sphere") {
    fail("unknown rule '" + c.rule + "'");
  }
  if (c.solver != "als" && c.solver != "mean") fail("unknown solver '" + c.solver + "'");
  if (c.methods.empty()) fail("methods must not be empty");
  for (const auto& m : c.methods) {
    if (m != "scmc" && m != "unadj" && m != "bonf" && m != "scmc_unif" && m != "scmc_est") {
      fail("unknown method '" + m + "'");
    }
  }
  if (c.n_obs < 1 || c.n_obs >= static_cast<std::size_t>(c.n_rows) * c.n_cols) {
    fail("n_obs must lie in [1, n_rows * n_cols)");
  }
  if (!(c.holdout_frac > 0.0 && c.holdout_frac < 1.0)) fail("holdout_frac must lie in (0,1)");
  if (!(c.slab_holdout > 0.0 && c.slab_holdout < 1.0)) fail("slab_holdout must lie in (0,1)");
  if (!(c.slab_delta > 0.0 && c.slab_delta <= 1.0)) fail("slab_delta must lie in (0,1]");
  if (c.calib_n < 0 || c.calib_cap < 1) fail("calibration sizes must be positive");
  for (int n : c.ub_sizes)
    if (n < 1) fail("ub_sizes entries must be positive");
}

nlohmann::json config_to_json(const ExperimentConfig& c) {
  return nlohmann::json{
      {"n_rows", c.n_rows},         {"n_cols", c.n_cols},
      {"generator", c.generator},   {"true_rank", c.true_rank},
      {"mu", c.mu},                 {"gamma", c.effective_gamma()},
      {"noise_sd", c.noise_sd},     {"n_obs", c.n_obs},
      {"obs_weights", c.obs_weights}, {"hetero_s", c.hetero_s},
      {"power_s", c.power_s},       {"calib_n", c.calib_n},
      {"calib_cap", c.calib_cap},   {"k", c.K},
      {"rule", c.rule},             {"alpha", c.alpha},
      {"methods", c.methods},       {"test_groups", c.test_groups},
      {"test_weights", c.test_weights}, {"test_weights_file", c.test_weights_file},
      {"slab_delta", c.slab_delta},
      {"slab_holdout", c.slab_holdout}, {"solver", c.solver},
      {"als_rank", c.als_rank},     {"als_reg", c.als_reg},
      {"als_iters", c.als_iters},   {"als_tol", c.als_tol},
      {"est_rank", c.est_rank},     {"est_nu", c.est_nu},
      {"est_iters", c.est_iters},   {"data", c.data},
      {"ml_users", c.ml_users},     {"ml_items", c.ml_items},
      {"holdout_frac", c.holdout_frac}, {"ub_sizes", c.ub_sizes},
      {"trials", c.trials},         {"seed", c.seed},
      {"threads", c.threads},
  };
}

}  // namespace scmc
