#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "scmc/experiment.hpp"
#include "scmc/matrix_core.hpp"

namespace fs = std::filesystem;

namespace {

fs::path dir() {
  const fs::path d = fs::path(::testing::TempDir()) / "scmc_cli";
  fs::create_directories(d);
  return d;
}

std::string put(const std::string& name, const std::string& body) {
  const fs::path p = dir() / name;
  std::ofstream(p) << body;
  return p.string();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(const std::string& args) {
  const fs::path out = dir() / "stdout.txt";
  const fs::path err = dir() / "stderr.txt";
  const std::string cmd = std::string(SCMC_CLI_PATH) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

const char* kSmall =
    "n_rows = 30\n"
    "n_cols = 30\n"
    "n_obs = 300\n"
    "trials = 2\n"
    "test_groups = 10\n"
    "als_rank = 3\n"
    "als_iters = 20\n";

std::string ratings(int users, int items) {
  scmc::Rng rng(4);
  std::ostringstream out;
  for (int u = 1; u <= users; ++u)
    for (int i = 1; i <= items; ++i)
      if (scmc::uniform01(rng) < 0.3 || (u == users && i == items)) {
        out << u << '\t' << i << '\t' << 1 + scmc::uniform_index(rng, 5) << "\t881250949\n";
      }
  return out.str();
}

}  // namespace

TEST(Cli, SyntheticCsvToStdout) {
  const auto r = run("synthetic --config " + put("small.cfg", kSmall));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("method,K,params,coverage", 0), 0u) << r.out;
  EXPECT_NE(r.out.find("\nscmc,2,"), std::string::npos);
  EXPECT_NE(r.out.find("\nbonf,2,"), std::string::npos);
}

TEST(Cli, GlobalFlagsOverrideConfig) {
  const std::string json = (dir() / "out.json").string();
  const auto r = run("--seed 9 --k 3 --alpha 0.2 --rule sphere --methods scmc,unadj --trials 1 synthetic --config " +
                     put("small.cfg", kSmall) + " --out " + json);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(slurp(json));
  EXPECT_EQ(j["config"]["k"], 3);
  EXPECT_EQ(j["config"]["seed"], 9);
  EXPECT_EQ(j["config"]["rule"], "sphere");
  EXPECT_DOUBLE_EQ(j["config"]["alpha"].get<double>(), 0.2);
  ASSERT_EQ(j["rows"].size(), 2u);
  EXPECT_EQ(j["rows"][1]["method"], "unadj");
  EXPECT_EQ(j["rows"][0]["trials"], 1);
}

TEST(Cli, ConfigErrorsExitTwo) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("nonsense").code, 2);
  EXPECT_EQ(run("synthetic --config /nonexistent.cfg").code, 2);
  EXPECT_EQ(run("--rule ellipse synthetic").code, 2);
  EXPECT_EQ(run("synthetic --config " + put("bad.cfg", "bogus = 1\n")).code, 2);
  const auto r = run("synthetic --config " + put("alpha.cfg", std::string(kSmall) + "alpha = 2\n"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("alpha"), std::string::npos) << r.err;
  EXPECT_EQ(run("movielens").code, 2);
  EXPECT_EQ(run("estimate-weights --out x.csv").code, 2);
}

TEST(Cli, DataErrorsExitThree) {
  EXPECT_EQ(run("movielens --data /nonexistent/u.data").code, 3);
  const auto r = run("movielens --data " + put("broken.data", "1\t2\t3\t4\n1\tx\n"));
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("line 2"), std::string::npos) << r.err;
  EXPECT_EQ(run("estimate-weights --data " + put("six.data", "1\t1\t6\t0\n") + " --out " +
                (dir() / "w.csv").string()).code, 3);
}

TEST(Cli, HelpExitsZero) {
  const auto r = run("--help");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("estimate-weights"), std::string::npos);
}

TEST(Cli, EstimateWeightsWritesGrid) {
  const std::string grid = (dir() / "what.csv").string();
  const auto r = run("estimate-weights --data " + put("u.data", ratings(25, 30)) +
                     " --rank 2 --nu 3 --iters 40 --out " + grid);
  ASSERT_EQ(r.code, 0) << r.err;
  const scmc::WeightField w = scmc::read_weight_grid(grid);
  EXPECT_EQ(w.n_rows(), 25);
  EXPECT_EQ(w.n_cols(), 30);
  for (double v : w.values()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  const auto sub = run("--seed 3 estimate-weights --data " + put("u.data", ratings(25, 30)) +
                       " --users 10 --items 12 --iters 5 --out " + grid);
  ASSERT_EQ(sub.code, 0) << sub.err;
  EXPECT_EQ(scmc::read_weight_grid(grid).n_cols(), 12);
}

TEST(Cli, MovieLensOnFixture) {
  const std::string cfg = put("ml.cfg",
                              "ml_users = 30\nml_items = 35\ntrials = 2\ntest_groups = 10\n"
                              "als_rank = 3\nals_iters = 20\nest_iters = 20\nmethods = scmc,bonf\n");
  const auto r = run("movielens --data " + put("ml.data", ratings(40, 45)) + " --holdout-frac 0.25 --config " + cfg);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("users=30;items=35;holdout=0.25"), std::string::npos) << r.out;
}

TEST(Cli, UpperBoundRows) {
  const std::string cfg = put("ub.cfg",
                              "n_rows = 40\nn_cols = 40\nn_obs = 320\nobs_weights = power\n"
                              "ub_sizes = 10,20\ntrials = 2\ntest_groups = 4\n");
  const auto r = run("upper-bound --config " + cfg);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("scmc,2,n=10;"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("scmc,2,n=20;"), std::string::npos) << r.out;
}
