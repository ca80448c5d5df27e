#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "scmc/matrix_core.hpp"
#include "test_util.hpp"

using namespace scmc;
using scmc::testing::chi_square_pvalue;

namespace {

using Seq = std::vector<MatrixIndex>;

WeightField row_weights(const std::vector<double>& w) {
  WeightField f(static_cast<int>(w.size()), 1);
  for (std::size_t i = 0; i < w.size(); ++i) f(static_cast<int>(i), 0) = w[i];
  return f;
}

Seq column(int n) { return scmc::testing::column_indices(n, 0); }

// Every ordered m-subset of the universe.
void ordered_subsets(const Seq& u, std::size_t m, Seq& cur, std::vector<Seq>& out) {
  if (cur.size() == m) {
    out.push_back(cur);
    return;
  }
  for (const auto& x : u) {
    if (std::find(cur.begin(), cur.end(), x) != cur.end()) continue;
    cur.push_back(x);
    ordered_subsets(u, m, cur, out);
    cur.pop_back();
  }
}

std::vector<Seq> ordered_subsets(const Seq& u, std::size_t m) {
  std::vector<Seq> out;
  Seq cur;
  ordered_subsets(u, m, cur, out);
  return out;
}

}  // namespace

TEST(PartialMatrix, AddAndQuery) {
  PartialMatrix pm(3, 4);
  pm.add(0, 1, 2.5);
  pm.add(2, 3, -1.0);
  EXPECT_EQ(pm.observed_count(), 2u);
  EXPECT_TRUE(pm.contains(0, 1));
  EXPECT_FALSE(pm.contains(1, 1));
  EXPECT_DOUBLE_EQ(pm.value(2, 3), -1.0);
  EXPECT_EQ(pm.missing_indices().size(), 10u);
  const auto mask = pm.mask();
  EXPECT_EQ(mask[0 * 4 + 1], 1);
  EXPECT_EQ(std::accumulate(mask.begin(), mask.end(), 0), 2);
}

TEST(PartialMatrix, RejectsDuplicatesAndOutOfRange) {
  PartialMatrix pm(2, 2);
  pm.add(0, 0, 1.0);
  try {
    pm.add(0, 0, 2.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Data);
  }
  EXPECT_THROW(pm.add(2, 0, 1.0), Error);
  EXPECT_THROW(pm.value(1, 1), Error);
}

TEST(PartialMatrix, RestrictKeepsValues) {
  PartialMatrix pm(2, 2);
  pm.add(0, 0, 1.0);
  pm.add(1, 1, 4.0);
  const auto r = pm.restrict_to({{1, 1}});
  EXPECT_EQ(r.observed_count(), 1u);
  EXPECT_DOUBLE_EQ(r.value(1, 1), 4.0);
}

TEST(Sampling, TwoItemsEachOrderHalf) {
  const Seq u = column(2);
  const auto w = row_weights({1, 1});
  Rng rng(11);
  long first_a = 0;
  const long N = 200000;
  for (long t = 0; t < N; ++t) first_a += sample_without_replacement(u, 2, w, rng)[0] == u[0];
  const double se = std::sqrt(0.25 / N);
  EXPECT_NEAR(static_cast<double>(first_a) / N, 0.5, 4 * se);
}

TEST(Sampling, EnumerationSumsToOneAndHandValue) {
  const Seq u = column(3);
  const auto w = row_weights({1, 2, 3});
  double total = 0.0;
  for (const auto& s : ordered_subsets(u, 2)) total += std::exp(ordered_draw_log_prob(s, u, w));
  EXPECT_NEAR(total, 1.0, 1e-12);
  EXPECT_NEAR(std::exp(ordered_draw_log_prob({u[1], u[0]}, u, w)), 1.0 / 12.0, 1e-14);
}

TEST(Sampling, FrequencyOfBA) {
  const Seq u = column(3);
  const auto w = row_weights({1, 2, 3});
  Rng rng(2024);
  const long N = 1000000;
  long hits = 0;
  for (long t = 0; t < N; ++t) {
    const auto s = sample_without_replacement(u, 2, w, rng);
    hits += (s[0] == u[1] && s[1] == u[0]);
  }
  const double p = 1.0 / 12.0;
  EXPECT_NEAR(static_cast<double>(hits) / N, p, 3 * std::sqrt(p * (1 - p) / N));
}

TEST(Sampling, FullDrawIsUniformPermutation) {
  const Seq u = column(4);
  const auto w = row_weights({1, 1, 1, 1});
  Rng rng(5);
  std::map<Seq, long> counts;
  std::map<Seq, double> probs;
  for (const auto& s : ordered_subsets(u, 4)) probs[s] = 1.0 / 24.0;
  const long N = 120000;
  for (long t = 0; t < N; ++t) ++counts[sample_without_replacement(u, 4, w, rng)];
  EXPECT_GT(chi_square_pvalue(counts, probs, N), 0.01);
}

// Small universes: empirical law of the sampler matches the telescoping product.
TEST(Sampling, ChiSquareAgainstTelescopingProduct) {
  Rng setup(77);
  for (int trial = 0; trial < 6; ++trial) {
    const int size = 2 + static_cast<int>(uniform_index(setup, 5));  // 2..6
    const std::size_t m = 1 + uniform_index(setup, std::min(3, size));
    std::vector<double> wv(size);
    for (auto& x : wv) x = 0.1 + 3.0 * uniform01(setup);
    const Seq u = column(size);
    const auto w = row_weights(wv);
    std::map<Seq, double> probs;
    double total = 0.0;
    for (const auto& s : ordered_subsets(u, m)) {
      probs[s] = std::exp(ordered_draw_log_prob(s, u, w));
      total += probs[s];
    }
    ASSERT_NEAR(total, 1.0, 1e-12);
    Rng rng(derive_seed(99, trial));
    std::map<Seq, long> counts;
    const long N = 100000;
    for (long t = 0; t < N; ++t) ++counts[sample_without_replacement(u, m, w, rng)];
    EXPECT_GT(chi_square_pvalue(counts, probs, N), 0.01) << "universe " << size << ", m " << m;
  }
}

TEST(Sampling, Errors) {
  const Seq u = column(3);
  Rng rng(1);
  try {
    sample_without_replacement(u, 4, row_weights({1, 1, 1}), rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Size);
  }
  try {
    sample_without_replacement(u, 2, row_weights({1, 0, 1}), rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Weight);
  }
}

TEST(Sampling, Deterministic) {
  const Seq u = column(6);
  const auto w = row_weights({1, 2, 3, 4, 5, 6});
  Rng a(123), b(123);
  for (int t = 0; t < 50; ++t) EXPECT_EQ(sample_without_replacement(u, 3, w, a), sample_without_replacement(u, 3, w, b));
}

TEST(Sampling, LargePoolStaysConsistent) {
  // Exercises the tree rebuild path: draw almost everything from a big pool.
  WeightField w(50, 40);
  for (int r = 0; r < 50; ++r)
    for (int c = 0; c < 40; ++c) w(r, c) = 1.0 + r + 0.001 * c;
  std::vector<MatrixIndex> u;
  for (int r = 0; r < 50; ++r)
    for (int c = 0; c < 40; ++c) u.push_back({r, c});
  Rng rng(8);
  auto s = sample_without_replacement(u, 1990, w, rng);
  std::sort(s.begin(), s.end());
  EXPECT_EQ(std::adjacent_find(s.begin(), s.end()), s.end());
  EXPECT_EQ(s.size(), 1990u);
}

TEST(OrderedDrawLogProb, HandValues) {
  const Seq u = column(3);
  EXPECT_NEAR(ordered_draw_log_prob({u[1]}, u, row_weights({1, 2, 5})), std::log(0.25), 1e-14);
  const Seq u6 = column(6);
  const auto w = row_weights({1, 1, 1, 1, 1, 1});
  EXPECT_NEAR(ordered_draw_log_prob({u6[0], u6[3], u6[5]}, u6, w), -std::log(6.0 * 5 * 4), 1e-12);
}

TEST(OrderedDrawLogProb, SetProbabilityFromOrders) {
  const Seq u = column(4);
  const auto w = row_weights({0.5, 1, 2, 4});
  // P{set {0,2}} summed over both orders equals the direct two-term product.
  const double p = std::exp(ordered_draw_log_prob({u[0], u[2]}, u, w)) +
                   std::exp(ordered_draw_log_prob({u[2], u[0]}, u, w));
  const double direct = 0.5 / 7.5 * 2 / 7.0 + 2 / 7.5 * 0.5 / 5.5;
  EXPECT_NEAR(p, direct, 1e-14);
}

TEST(OrderedDrawLogProb, DomainErrors) {
  const Seq u = column(3);
  const auto w = row_weights({1, 1, 1});
  try {
    ordered_draw_log_prob({{5, 0}}, u, w);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Domain);
  }
  EXPECT_THROW(ordered_draw_log_prob({u[0], u[0]}, u, w), Error);
}

TEST(ColumnGroup, FullyMissingColumnOnly) {
  // 3x3; column 1 fully missing, columns 0 and 2 have one missing entry each.
  const Seq missing = {{0, 0}, {0, 1}, {1, 1}, {2, 1}, {2, 2}};
  const WeightField w(3, 3, 1.0);
  Rng rng(3);
  std::map<Seq, long> counts;
  std::map<Seq, double> probs;
  for (const auto& s : ordered_subsets(scmc::testing::column_indices(3, 1), 2)) probs[s] = 1.0 / 6.0;
  const long N = 60000;
  for (long t = 0; t < N; ++t) {
    const auto g = sample_column_group(missing, 2, w, rng);
    ASSERT_TRUE(g.valid());
    ASSERT_EQ(g.column(), 1);
    ++counts[g.indices];
  }
  EXPECT_GT(chi_square_pvalue(counts, probs, N), 0.01);
}

TEST(ColumnGroup, HeavyColumnShare) {
  // Column 0 has mass 1, column 1 mass 3.
  const Seq missing = {{0, 0}, {1, 0}, {0, 1}, {1, 1}};
  WeightField w(2, 2);
  w(0, 0) = 0.5;
  w(1, 0) = 0.5;
  w(0, 1) = 1.0;
  w(1, 1) = 2.0;
  const ColumnGroupSampler sampler(missing, 2, w);
  EXPECT_DOUBLE_EQ(sampler.eligible_mass(), 4.0);
  Rng rng(10);
  const long N = 1000000;
  long heavy = 0;
  for (long t = 0; t < N; ++t) heavy += sampler.draw(rng).column() == 1;
  EXPECT_NEAR(static_cast<double>(heavy) / N, 0.75, 3 * std::sqrt(0.75 * 0.25 / N));
}

TEST(ColumnGroup, ShortColumnNeverSampled) {
  // K = 3; column 0 has 2 missing entries, column 1 has 3.
  const Seq missing = {{0, 0}, {1, 0}, {0, 1}, {1, 1}, {2, 1}};
  WeightField w(3, 2, 1.0);
  w(0, 0) = 100.0;
  const ColumnGroupSampler sampler(missing, 3, w);
  EXPECT_EQ(sampler.eligible_columns(), std::vector<int>{1});
  Rng rng(4);
  for (int t = 0; t < 1000; ++t) EXPECT_EQ(sampler.draw(rng).column(), 1);
}

TEST(ColumnGroup, WithinColumnDrawsFollowWeights) {
  const Seq missing = {{0, 0}, {1, 0}, {2, 0}};
  WeightField w(3, 1);
  w(0, 0) = 1.0;
  w(1, 0) = 2.0;
  w(2, 0) = 3.0;
  Rng rng(21);
  std::map<Seq, long> counts;
  std::map<Seq, double> probs;
  for (const auto& s : ordered_subsets(missing, 2)) probs[s] = std::exp(ordered_draw_log_prob(s, missing, w));
  const long N = 100000;
  for (long t = 0; t < N; ++t) ++counts[sample_column_group(missing, 2, w, rng).indices];
  EXPECT_GT(chi_square_pvalue(counts, probs, N), 0.01);
}

TEST(ColumnGroup, InfeasibleWhenNoEligibleColumn) {
  const Seq missing = {{0, 0}, {0, 1}};
  Rng rng(1);
  try {
    sample_column_group(missing, 2, WeightField(1, 2, 1.0), rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Infeasible);
  }
}

TEST(ColumnGroup, ZeroWeightEntriesNeverDrawn) {
  const Seq missing = {{0, 0}, {1, 0}, {2, 0}, {3, 0}};
  WeightField w(4, 1, 1.0);
  w(2, 0) = 0.0;
  Rng rng(6);
  for (int t = 0; t < 2000; ++t) {
    const auto g = sample_column_group(missing, 3, w, rng);
    EXPECT_TRUE(std::find(g.indices.begin(), g.indices.end(), MatrixIndex{2, 0}) == g.indices.end());
  }
}

TEST(Rng, DeriveSeedSeparatesStreams) {
  EXPECT_NE(derive_seed(1, 0), derive_seed(1, 1));
  EXPECT_NE(derive_seed(1, 0), derive_seed(2, 0));
  EXPECT_EQ(derive_seed(7, 3), derive_seed(7, 3));
}

TEST(Rng, UniformIndexCoversRange) {
  Rng rng(9);
  std::vector<long> hits(7, 0);
  for (int t = 0; t < 70000; ++t) ++hits[uniform_index(rng, 7)];
  for (long h : hits) EXPECT_NEAR(h, 10000, 500);
}

TEST(WeightField, Predicates) {
  WeightField w(2, 2, 1.0);
  EXPECT_TRUE(w.is_constant());
  w(1, 1) = 0.0;
  EXPECT_FALSE(w.all_positive());
  EXPECT_TRUE(w.all_nonnegative());
  w(0, 0) = -1.0;
  EXPECT_FALSE(w.all_nonnegative());
}

TEST(Errors, ExitCodes) {
  EXPECT_EQ(exit_code_for(ErrorKind::Config), 2);
  EXPECT_EQ(exit_code_for(ErrorKind::Data), 3);
  EXPECT_EQ(exit_code_for(ErrorKind::Parse), 3);
  EXPECT_EQ(exit_code_for(ErrorKind::Numerical), 4);
}
