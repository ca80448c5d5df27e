#include "scmc/calibration.hpp"

#include <algorithm>

namespace scmc {

std::size_t max_calibration_groups(const std::vector<MatrixIndex>& obs, int n_cols, int K) {
  if (K < 1) throw Error(ErrorKind::Parameter, "group size K must be at least 1");
  std::vector<std::size_t> counts(n_cols, 0);
  for (const auto& idx : obs) ++counts[idx.col];
  std::size_t xi = 0;
  for (auto c : counts) xi += c / static_cast<std::size_t>(K);
  return xi;
}

int default_calibration_size(std::size_t xi, int cap) {
  return static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(cap), xi / 2));
}

CalibrationPlan assemble_calibration(const std::vector<MatrixIndex>& obs, int n_cols, int n, int K,
                                     Rng& rng) {
  if (K < 1) throw Error(ErrorKind::Parameter, "group size K must be at least 1");
  if (n < 0) throw Error(ErrorKind::Parameter, "number of calibration groups must be nonnegative");
  const std::size_t xi = max_calibration_groups(obs, n_cols, K);
  if (static_cast<std::size_t>(n) > xi) {
    throw Error(ErrorKind::Capacity, "requested " + std::to_string(n) +
                                         " calibration groups but at most " + std::to_string(xi) +
                                         " fit");
  }

  CalibrationPlan plan;
  plan.K = K;
  plan.n = n;

  std::vector<std::vector<MatrixIndex>> by_col(n_cols);
  for (const auto& idx : obs) by_col[idx.col].push_back(idx);

  // Pruning, then the available pool as id lists (global and per column).
  std::vector<MatrixIndex> avail;
  std::vector<std::vector<int>> col_ids(n_cols);
  for (int c = 0; c < n_cols; ++c) {
    auto& entries = by_col[c];
    const std::size_t m = entries.size() % static_cast<std::size_t>(K);
    for (std::size_t j = 0; j < m; ++j) {
      std::swap(entries[j], entries[j + uniform_index(rng, entries.size() - j)]);
      plan.pruned.push_back(entries[j]);
    }
    for (std::size_t j = m; j < entries.size(); ++j) {
      col_ids[c].push_back(static_cast<int>(avail.size()));
      avail.push_back(entries[j]);
    }
  }
  std::vector<int> global(avail.size());
  std::vector<std::size_t> gpos(avail.size()), cpos(avail.size());
  for (std::size_t i = 0; i < avail.size(); ++i) {
    global[i] = static_cast<int>(i);
    gpos[i] = i;
  }
  for (int c = 0; c < n_cols; ++c)
    for (std::size_t j = 0; j < col_ids[c].size(); ++j) cpos[col_ids[c][j]] = j;

  auto remove = [&](int id) {
    const int c = avail[id].col;
    auto& cl = col_ids[c];
    const int last_c = cl.back();
    cl[cpos[id]] = last_c;
    cpos[last_c] = cpos[id];
    cl.pop_back();
    const int last_g = global.back();
    global[gpos[id]] = last_g;
    gpos[last_g] = gpos[id];
    global.pop_back();
  };

  plan.groups.reserve(n);
  for (int i = 0; i < n; ++i) {
    IndexGroup g;
    g.indices.reserve(K);
    const int first = global[uniform_index(rng, global.size())];
    g.indices.push_back(avail[first]);
    remove(first);
    auto& cl = col_ids[avail[first].col];
    for (int k = 1; k < K; ++k) {
      const int id = cl[uniform_index(rng, cl.size())];
      g.indices.push_back(avail[id]);
      remove(id);
    }
    plan.groups.push_back(std::move(g));
  }

  plan.train = plan.pruned;
  for (int id : global) plan.train.push_back(avail[id]);
  std::sort(plan.train.begin(), plan.train.end());
  std::sort(plan.pruned.begin(), plan.pruned.end());
  return plan;
}

std::vector<MatrixIndex> plan_observed(const CalibrationPlan& plan) {
  std::vector<MatrixIndex> out = plan.train;
  for (const auto& g : plan.groups) out.insert(out.end(), g.indices.begin(), g.indices.end());
  return out;
}

}  // namespace scmc
