#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include <boost/math/tools/roots.hpp>

#include "scmc/calibration.hpp"
#include "scmc/weights.hpp"

using namespace scmc;

namespace {

constexpr double kLn2 = 0.69314718055994530942;

IndexGroup group(std::initializer_list<MatrixIndex> idx) { return IndexGroup{std::vector<MatrixIndex>(idx)}; }

// Brute-force conformalization weights: swap the test group with each
// calibration group and normalize the exact joint law.
std::vector<double> brute_weights(const CalibrationPlan& plan, const IndexGroup& test, int n_r, int n_c,
                                  const WeightField& w, const WeightField& ws) {
  const std::size_t n = plan.groups.size();
  std::vector<double> lp(n + 1);
  for (std::size_t i = 0; i < n; ++i) {
    auto groups = plan.groups;
    groups[i] = test;
    lp[i] = exact_joint_log_prob(groups, plan.groups[i], plan.pruned, plan.train, n_r, n_c, w, ws);
  }
  lp[n] = exact_joint_log_prob(plan.groups, test, plan.pruned, plan.train, n_r, n_c, w, ws);
  const double m = *std::max_element(lp.begin(), lp.end());
  double s = 0.0;
  for (double x : lp) s += std::exp(x - m);
  std::vector<double> p(n + 1);
  for (std::size_t i = 0; i <= n; ++i) p[i] = std::exp(lp[i] - m) / s;
  return p;
}

// Every ordered draw of the observed set, summed: the unordered set probability.
double enumerate_set_prob(std::vector<double> set, double rest) {
  std::vector<int> perm(set.size());
  std::iota(perm.begin(), perm.end(), 0);
  double total_mass = rest;
  for (double x : set) total_mass += x;
  double total = 0.0;
  do {
    double p = 1.0, left = total_mass;
    for (int j : perm) {
      p *= set[j] / left;
      left -= set[j];
    }
    total += p;
  } while (std::next_permutation(perm.begin(), perm.end()));
  return total;
}

// 4x3 instance: column counts (3,2,1), K = 2, n = 2.
struct Tiny {
  CalibrationPlan plan;
  WeightField w{4, 3, 1.0};
  WeightField ws{4, 3, 1.0};
};

Tiny tiny_instance(std::uint64_t seed) {
  Tiny t;
  Rng rng(seed);
  for (auto& v : t.w.values()) v = 0.9 + 0.2 * uniform01(rng);
  for (auto& v : t.ws.values()) v = 0.5 + uniform01(rng);
  const std::vector<MatrixIndex> obs = {{0, 0}, {1, 0}, {2, 0}, {0, 1}, {1, 1}, {0, 2}};
  t.plan = assemble_calibration(obs, 3, 2, 2, rng);
  return t;
}

}  // namespace

TEST(Eta, UniformAndSelf) {
  EXPECT_NEAR(eta({1, 1}, {1, 1}, 30.0, 0.7, 0.3), 1.0, 1e-15);
  EXPECT_NEAR(eta({0.3, 2.0}, {0.3, 2.0}, 5.0, 1.3, 0.8), 1.0, 1e-15);
}

TEST(Eta, HandValue) {
  EXPECT_NEAR(eta({2.0}, {1.0}, 10.0, 1.0, 0.5), 0.55 * (0.5 / 0.75), 1e-12);
  EXPECT_NEAR(eta({2.0}, {1.0}, 10.0, 1.0, 0.5), 0.36666666666666666, 1e-12);
}

TEST(Eta, DomainErrors) {
  try {
    eta({1}, {1}, 1.0, 1.0, 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Domain);
  }
  EXPECT_THROW(eta({1}, {1}, 1.0, 1.0, 0.0), Error);
  EXPECT_THROW(eta({1, 2}, {1}, 1.0, 1.0, 0.5), Error);
}

TEST(FindScale, SingleEntryMatchesBisection) {
  const double h = find_scale({1.0}, 1.0);
  auto z = [](double x) { return 1.0 - 1.0 / x - 1.0 / (std::exp2(x) - 1.0); };
  boost::math::tools::eps_tolerance<double> tol(52);
  auto [lo, hi] = boost::math::tools::bisect(z, 1.0 + 1e-9, 1.0 + 1.0 / kLn2, tol);
  EXPECT_NEAR(h, 0.5 * (lo + hi), 1e-10);
  EXPECT_LE(std::abs(scale_residual({1.0}, 1.0, h)), 1e-10);
}

TEST(FindScale, PeakSitsAtOneHalf) {
  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    const int m = 1 + static_cast<int>(uniform_index(rng, 60));
    std::vector<double> w(m);
    for (auto& x : w) x = 0.05 + uniform01(rng);
    double delta = 0.0;
    const int miss = 1 + static_cast<int>(uniform_index(rng, 200));
    for (int j = 0; j < miss; ++j) delta += 0.05 + uniform01(rng);
    const double h = find_scale(w, delta);
    EXPECT_GT(h, 1.0 / delta);
    EXPECT_LE(std::abs(scale_residual(w, delta, h)), 1e-10 * std::max(1.0, delta));
    constexpr int kGrid = 200000;
    double best = -1e300;
    int arg = 0;
    for (int k = 1; k < kGrid; ++k) {
      const double v = log_phi(w, delta, h, static_cast<double>(k) / kGrid);
      if (v > best) {
        best = v;
        arg = k;
      }
    }
    EXPECT_NEAR(static_cast<double>(arg) / kGrid, 0.5, 1.0 / kGrid) << "instance " << t;
    EXPECT_LT(log_phi_second(w, delta, h, 0.5), 0.0);
    EXPECT_NEAR(log_phi_prime(w, delta, h, 0.5), 0.0, 1e-8 * std::max(1.0, h * delta));
  }
}

TEST(FindScale, WithinFiniteSampleBracket) {
  Rng rng(4);
  for (int t = 0; t < 50; ++t) {
    const int n_obs = 5 + static_cast<int>(uniform_index(rng, 300));
    const int n_miss = 5 + static_cast<int>(uniform_index(rng, 600));
    std::vector<double> w(n_obs);
    double s = 0.0;
    for (auto& x : w) {
      x = 0.01 + 0.98 * uniform01(rng);
      s += x;
    }
    double delta = 0.0;
    for (int j = 0; j < n_miss; ++j) delta += 0.01 + 0.98 * uniform01(rng);
    const double N = n_obs + n_miss;
    const double h = find_scale(w, delta);
    const double x = 2.0 * N / delta;
    const double lower = (1.0 + s * x / std::expm1(x * kLn2)) / delta;
    EXPECT_GE(h, lower * (1 - 1e-12));
    EXPECT_LE(h, (1.0 + n_obs / kLn2) / delta * (1 + 1e-12));
  }
}

TEST(FindScale, Errors) {
  EXPECT_THROW(find_scale({1.0}, 0.0), Error);
  EXPECT_THROW(find_scale({0.0}, 1.0), Error);
}

TEST(Quadrature, UrnOfFourMatchesEnumeration) {
  const std::vector<double> obs = {0.7, 2.3};
  const double delta = 1.1 + 0.4;
  const double h = find_scale(obs, delta);
  const double quad = std::exp(wallenius_log_prob_quadrature(obs, delta, h));
  const double exact = enumerate_set_prob(obs, delta);
  EXPECT_NEAR(quad / exact, 1.0, 1e-8);
  EXPECT_NEAR(std::exp(wallenius_log_prob_exact(obs, delta)) / exact, 1.0, 1e-12);
}

TEST(Quadrature, UniformIsHypergeometric) {
  for (int N : {6, 20, 60}) {
    for (int m : {1, 3, N / 2}) {
      const std::vector<double> obs(m, 1.0);
      const double delta = N - m;
      const double h = find_scale(obs, delta);
      const double lp = wallenius_log_prob_quadrature(obs, delta, h);
      const double expected = -(std::lgamma(N + 1.0) - std::lgamma(m + 1.0) - std::lgamma(N - m + 1.0));
      EXPECT_NEAR(lp, expected, 1e-8 * std::max(1.0, std::abs(expected))) << N << " " << m;
    }
  }
}

TEST(Quadrature, EtaTiltGivesSwappedSetProbability) {
  // Swapping one observed item (weight 2.0) for a missing one (weight 0.5).
  const std::vector<double> obs = {1.0, 2.0, 0.8};
  const double delta = 0.5 + 1.5 + 0.3;
  const double h = find_scale(obs, delta);
  auto fn = [&](double t) { return log_eta({2.0}, {0.5}, delta, h, t); };
  const double lp_swapped = wallenius_log_prob_quadrature(obs, delta, h, fn);
  const double direct = std::log(enumerate_set_prob({1.0, 0.5, 0.8}, 2.0 + 1.5 + 0.3));
  EXPECT_NEAR(lp_swapped, direct, 1e-8);
}

TEST(ExactSetProb, MatchesEnumeration) {
  Rng rng(5);
  for (int t = 0; t < 10; ++t) {
    const int m = 1 + static_cast<int>(uniform_index(rng, 6));
    std::vector<double> set(m);
    for (auto& x : set) x = 0.1 + 2 * uniform01(rng);
    const double rest = 0.5 + 3 * uniform01(rng);
    EXPECT_NEAR(std::exp(wallenius_log_prob_exact(set, rest)), enumerate_set_prob(set, rest), 1e-13);
  }
}

TEST(JointLaw, SumsToOneOnTwoByTwo) {
  WeightField w(2, 2), ws(2, 2);
  w(0, 0) = 1.0, w(0, 1) = 2.0, w(1, 0) = 0.5, w(1, 1) = 1.5;
  ws(0, 0) = 0.3, ws(0, 1) = 1.0, ws(1, 0) = 2.0, ws(1, 1) = 0.7;
  std::vector<MatrixIndex> cells = {{0, 0}, {0, 1}, {1, 0}, {1, 1}};
  double total = 0.0;
  for (std::size_t a = 0; a < 4; ++a)
    for (std::size_t b = a + 1; b < 4; ++b) {
      const std::vector<MatrixIndex> obs = {cells[a], cells[b]};
      for (std::size_t g = 0; g < 2; ++g) {
        const std::vector<MatrixIndex> train = {obs[1 - g]};
        for (const auto& t : cells) {
          if (t == obs[0] || t == obs[1]) continue;
          total += std::exp(exact_joint_log_prob({group({obs[g]})}, group({t}), {}, train, 2, 2, w, ws));
        }
      }
    }
  EXPECT_NEAR(total, 1.0, 1e-10);
}

TEST(JointLaw, InvariantToGroupOrder) {
  const Tiny t = tiny_instance(8);
  ASSERT_EQ(t.plan.groups.size(), 2u);
  const auto test = group({{2, 2}, {3, 2}});
  const double a = exact_joint_log_prob(t.plan.groups, test, t.plan.pruned, t.plan.train, 4, 3, t.w, t.ws);
  const std::vector<IndexGroup> swapped = {t.plan.groups[1], t.plan.groups[0]};
  const double b = exact_joint_log_prob(swapped, test, t.plan.pruned, t.plan.train, 4, 3, t.w, t.ws);
  EXPECT_NEAR(a, b, 1e-13);
}

TEST(JointLaw, UniformFactorization) {
  // 2x2, all weights 1, obs = {(0,0),(1,0)}, K=1, n=1, group (0,0), test (0,1).
  const WeightField one(2, 2, 1.0);
  const double lp = exact_joint_log_prob({group({{0, 0}})}, group({{0, 1}}), {}, {{1, 0}}, 2, 2, one, one);
  // test draw 1/2, set prob 1/C(4,2), no pruning, group draw 1/2
  EXPECT_NEAR(std::exp(lp), 0.5 * (1.0 / 6.0) * 0.5, 1e-14);
}

TEST(Weights, ExactTinyMatchesBruteForce) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Tiny t = tiny_instance(seed);
    WeightModel model(t.plan, 4, 3, t.w, t.ws, WeightMode::ExactTiny);
    for (const auto& test : {group({{2, 2}, {3, 2}}), group({{3, 2}, {1, 2}}), group({{2, 1}, {3, 1}})}) {
      const auto p = model.compute(test).p;
      const auto q = brute_weights(t.plan, test, 4, 3, t.w, t.ws);
      for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(p[i], q[i], 1e-9) << "seed " << seed;
    }
  }
}

TEST(Weights, FastCloseToExactOnTinyInstance) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Tiny t = tiny_instance(seed);
    WeightModel fast(t.plan, 4, 3, t.w, t.ws, WeightMode::Fast);
    WeightModel exact(t.plan, 4, 3, t.w, t.ws, WeightMode::ExactTiny);
    for (const auto& test : {group({{2, 2}, {3, 2}}), group({{2, 1}, {3, 1}})}) {
      const auto p = fast.compute(test).p;
      const auto q = exact.compute(test).p;
      for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(p[i] / q[i], 1.0, 0.05);
    }
  }
}

TEST(Weights, UniformSingleColumnIsUniform) {
  // Every group and the test share column 0, so the swap is symmetric.
  CalibrationPlan plan;
  plan.K = 2;
  plan.n = 3;
  plan.groups = {group({{0, 0}, {1, 0}}), group({{3, 0}, {2, 0}}), group({{5, 0}, {4, 0}})};
  plan.train = {{0, 1}, {1, 1}};
  const WeightField one(10, 2, 1.0);
  WeightModel model(plan, 10, 2, one, one);
  const auto wv = model.compute(group({{7, 0}, {9, 0}}));
  for (double p : wv.p) EXPECT_NEAR(p, 0.25, 1e-12);
  EXPECT_EQ(wv.d.back(), 0.0);
}

TEST(Weights, UniformDistinctColumnsMatchJointLaw) {
  // Equal column counts with groups in other columns: the within-column draw
  // factor of the swapped world makes the weights unequal.
  CalibrationPlan plan;
  plan.K = 2;
  plan.n = 3;
  plan.groups = {group({{0, 0}, {1, 0}}), group({{1, 1}, {0, 1}}), group({{0, 2}, {1, 2}})};
  plan.train = {{0, 3}, {1, 3}};
  const WeightField one(4, 4, 1.0);
  const auto test = group({{2, 3}, {3, 3}});
  WeightModel fast(plan, 4, 4, one, one, WeightMode::Fast);
  const auto p = fast.compute(test).p;
  const auto q = brute_weights(plan, test, 4, 4, one, one);
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(p[i], q[i], 1e-12);
  EXPECT_NEAR(p[0], p[1], 1e-15);
  EXPECT_NEAR(p[1], p[2], 1e-15);
}

TEST(Weights, SingletonReductionMatchesDirectFormula) {
  Rng rng(9);
  const int n_r = 30, n_c = 20;
  WeightField w(n_r, n_c), ws(n_r, n_c);
  for (auto& v : w.values()) v = 0.2 + uniform01(rng);
  for (auto& v : ws.values()) v = 0.1 + uniform01(rng);
  std::vector<MatrixIndex> all;
  for (int r = 0; r < n_r; ++r)
    for (int c = 0; c < n_c; ++c) all.push_back({r, c});
  const auto obs = sample_without_replacement(all, 150, w, rng);
  const auto plan = assemble_calibration(obs, n_c, 40, 1, rng);
  WeightModel model(plan, n_r, n_c, w, ws);
  const double h = model.context().h;
  const double delta = model.context().delta;

  std::vector<std::uint8_t> seen(n_r * n_c, 0);
  for (const auto& i : obs) seen[i.row * n_c + i.col] = 1;
  double star_miss = 0.0;
  std::vector<MatrixIndex> miss;
  for (const auto& i : all)
    if (!seen[i.row * n_c + i.col]) {
      star_miss += ws(i);
      miss.push_back(i);
    }
  for (int t = 0; t < 5; ++t) {
    const MatrixIndex x = miss[uniform_index(rng, miss.size())];
    const auto p = model.compute(group({x})).p;
    std::vector<double> q(plan.groups.size() + 1);
    for (std::size_t i = 0; i < plan.groups.size(); ++i) {
      const MatrixIndex xi = plan.groups[i][0];
      // eta at 1/2 written out for a single entry
      const double d = w(xi) - w(x);
      const double e = std::pow(0.5, h * d) * (delta + d) / delta * (1 - std::pow(0.5, h * w(x))) /
                       (1 - std::pow(0.5, h * w(xi)));
      q[i] = e * ws(xi) / (star_miss - ws(x) + ws(xi));
    }
    q.back() = ws(x) / star_miss;
    const double s = std::accumulate(q.begin(), q.end(), 0.0);
    for (std::size_t i = 0; i < q.size(); ++i) EXPECT_NEAR(p[i], q[i] / s, 1e-12);
  }
}

TEST(Weights, NormalizedAndNonnegative) {
  Rng rng(10);
  const int n_r = 40, n_c = 30;
  WeightField w(n_r, n_c), ws(n_r, n_c);
  for (auto& v : w.values()) v = 0.1 + uniform01(rng);
  for (auto& v : ws.values()) v = uniform01(rng) < 0.2 ? 0.0 : uniform01(rng);
  std::vector<MatrixIndex> all;
  for (int r = 0; r < n_r; ++r)
    for (int c = 0; c < n_c; ++c) all.push_back({r, c});
  const auto obs = sample_without_replacement(all, 300, w, rng);
  const auto plan = assemble_calibration(obs, n_c, 60, 3, rng);
  WeightModel model(plan, n_r, n_c, w, ws);
  const ColumnGroupSampler sampler(model.missing(), 3, ws);
  for (int t = 0; t < 20; ++t) {
    const auto g = sampler.draw(rng);
    const auto a = model.compute(g);
    const auto b = model.compute(g);
    EXPECT_EQ(a.p, b.p);
    double s = 0.0;
    for (double p : a.p) {
      EXPECT_GE(p, 0.0);
      s += p;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
    EXPECT_EQ(a.d.back(), 0.0);
  }
}

TEST(Weights, ZeroTestWeightGroupGetsNoMass) {
  const Tiny base = tiny_instance(3);
  Tiny t = base;
  for (const auto& idx : t.plan.groups[0].indices) t.ws(idx) = 0.0;
  WeightModel model(t.plan, 4, 3, t.w, t.ws);
  const auto p = model.compute(group({{2, 2}, {3, 2}})).p;
  EXPECT_EQ(p[0], 0.0);
}

TEST(Weights, ExactTinyGuard) {
  Rng rng(2);
  std::vector<MatrixIndex> obs;
  for (int r = 0; r < 6; ++r) obs.push_back({r, 0}), obs.push_back({r, 1});
  const auto plan = assemble_calibration(obs, 3, 2, 2, rng);
  const WeightField one(8, 3, 1.0);
  try {
    WeightModel model(plan, 8, 3, one, one, WeightMode::ExactTiny);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Capacity);
  }
}

TEST(Weights, QuadratureModeTracksExact) {
  const Tiny t = tiny_instance(4);
  WeightModel quad(t.plan, 4, 3, t.w, t.ws, WeightMode::Quadrature);
  WeightModel exact(t.plan, 4, 3, t.w, t.ws, WeightMode::ExactTiny);
  const auto test = group({{2, 2}, {3, 2}});
  const auto p = quad.compute(test).p;
  const auto q = exact.compute(test).p;
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(p[i], q[i], 1e-8);
}
