#include "scmc/matrix_core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_map>

namespace scmc {

const char* error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Size: return "size error";
    case ErrorKind::Weight: return "weight error";
    case ErrorKind::Infeasible: return "infeasible";
    case ErrorKind::Domain: return "domain error";
    case ErrorKind::Data: return "data error";
    case ErrorKind::Parse: return "parse error";
    case ErrorKind::Parameter: return "parameter error";
    case ErrorKind::Config: return "config error";
    case ErrorKind::Capacity: return "capacity error";
    case ErrorKind::Normalization: return "normalization error";
    case ErrorKind::Degenerate: return "degenerate input";
    case ErrorKind::Numerical: return "numerical error";
  }
  return "error";
}

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config:
    case ErrorKind::Parameter:
      return 2;
    case ErrorKind::Numerical:
    case ErrorKind::Normalization:
    case ErrorKind::Domain:
      return 4;
    default:
      return 3;
  }
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  // splitmix64 finalizer applied twice
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(master) ^ (stream * 0xd1342543de82ef95ULL + 1));
}

double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

std::size_t uniform_index(Rng& rng, std::size_t n) {
  if (n == 0) throw Error(ErrorKind::Size, "cannot draw from an empty range");
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return static_cast<std::size_t>(x % bound);
}

PartialMatrix::PartialMatrix(int n_rows, int n_cols) : n_rows_(n_rows), n_cols_(n_cols) {
  if (n_rows <= 0 || n_cols <= 0) {
    throw Error(ErrorKind::Size, "matrix dimensions must be positive");
  }
  slot_.assign(static_cast<std::size_t>(n_rows) * n_cols, -1);
}

void PartialMatrix::add(int row, int col, double value) {
  if (row < 0 || row >= n_rows_ || col < 0 || col >= n_cols_) {
    throw Error(ErrorKind::Domain, "index (" + std::to_string(row) + "," + std::to_string(col) +
                                       ") out of range");
  }
  auto& s = slot_[static_cast<std::size_t>(row) * n_cols_ + col];
  if (s >= 0) {
    throw Error(ErrorKind::Data, "duplicate index (" + std::to_string(row) + "," +
                                     std::to_string(col) + ")");
  }
  s = static_cast<std::int32_t>(entries_.size());
  entries_.push_back({{row, col}, value});
}

bool PartialMatrix::contains(int row, int col) const {
  if (row < 0 || row >= n_rows_ || col < 0 || col >= n_cols_) return false;
  return slot_[static_cast<std::size_t>(row) * n_cols_ + col] >= 0;
}

double PartialMatrix::value(int row, int col) const {
  if (!contains(row, col)) {
    throw Error(ErrorKind::Domain, "entry (" + std::to_string(row) + "," + std::to_string(col) +
                                       ") is not observed");
  }
  return entries_[slot_[static_cast<std::size_t>(row) * n_cols_ + col]].value;
}

std::vector<MatrixIndex> PartialMatrix::observed_indices() const {
  std::vector<MatrixIndex> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.index);
  return out;
}

std::vector<MatrixIndex> PartialMatrix::missing_indices() const {
  std::vector<MatrixIndex> out;
  out.reserve(slot_.size() - entries_.size());
  for (int r = 0; r < n_rows_; ++r)
    for (int c = 0; c < n_cols_; ++c)
      if (slot_[static_cast<std::size_t>(r) * n_cols_ + c] < 0) out.push_back({r, c});
  return out;
}

std::vector<std::uint8_t> PartialMatrix::mask() const {
  std::vector<std::uint8_t> m(slot_.size(), 0);
  for (std::size_t i = 0; i < slot_.size(); ++i) m[i] = slot_[i] >= 0 ? 1 : 0;
  return m;
}

PartialMatrix PartialMatrix::restrict_to(const std::vector<MatrixIndex>& keep) const {
  PartialMatrix out(n_rows_, n_cols_);
  for (const auto& idx : keep) out.add(idx.row, idx.col, value(idx));
  return out;
}

bool WeightField::all_positive() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return v > 0.0 && std::isfinite(v); });
}

bool WeightField::all_nonnegative() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return v >= 0.0 && std::isfinite(v); });
}

bool WeightField::is_constant() const {
  if (values_.empty()) return true;
  const double v0 = values_.front();
  return std::all_of(values_.begin(), values_.end(), [v0](double v) { return v == v0; });
}

bool IndexGroup::valid() const {
  if (indices.empty()) return false;
  const int c = indices.front().col;
  for (std::size_t a = 0; a < indices.size(); ++a) {
    if (indices[a].col != c) return false;
    for (std::size_t b = a + 1; b < indices.size(); ++b)
      if (indices[a] == indices[b]) return false;
  }
  return true;
}

namespace {

class Fenwick {
 public:
  explicit Fenwick(const std::vector<double>& w) : n_(w.size()), weights_(w), alive_(w.size(), 1) {
    rebuild();
    while (top_ * 2 <= n_) top_ *= 2;
  }

  double total() const { return prefix(n_); }

  void remove(std::size_t i) {
    alive_[i] = 0;
    const double w = weights_[i];
    removed_ += w;
    if (removed_ > 0.5 * built_total_) {
      rebuild();
      return;
    }
    for (std::size_t j = i + 1; j <= n_; j += j & (~j + 1)) tree_[j] -= w;
  }

  // Smallest index whose inclusive prefix sum reaches u.
  std::size_t search(double u) const {
    std::size_t pos = 0;
    double rem = u;
    for (std::size_t step = top_; step > 0; step >>= 1) {
      if (pos + step <= n_ && tree_[pos + step] < rem) {
        pos += step;
        rem -= tree_[pos];
      }
    }
    return pos;
  }

  bool alive(std::size_t i) const { return i < n_ && alive_[i] && weights_[i] > 0.0; }

 private:
  void rebuild() {
    tree_.assign(n_ + 1, 0.0);
    built_total_ = 0.0;
    for (std::size_t i = 0; i < n_; ++i) {
      const double w = alive_[i] ? weights_[i] : 0.0;
      built_total_ += w;
      tree_[i + 1] += w;
      const std::size_t parent = (i + 1) + ((i + 1) & (~(i + 1) + 1));
      if (parent <= n_) tree_[parent] += tree_[i + 1];
    }
    removed_ = 0.0;
  }

  double prefix(std::size_t i) const {
    double s = 0.0;
    for (std::size_t j = i; j > 0; j -= j & (~j + 1)) s += tree_[j];
    return s;
  }

  std::size_t n_;
  std::vector<double> weights_;
  std::vector<std::uint8_t> alive_;
  std::vector<double> tree_;
  std::size_t top_ = 1;
  double built_total_ = 0.0;
  double removed_ = 0.0;
};

}  // namespace

std::vector<std::size_t> weighted_draw_indices(const std::vector<double>& pool_weights, std::size_t m,
                                               Rng& rng) {
  if (m > pool_weights.size()) {
    throw Error(ErrorKind::Size, "cannot draw " + std::to_string(m) + " items from a pool of " +
                                     std::to_string(pool_weights.size()));
  }
  std::vector<std::size_t> out;
  out.reserve(m);
  if (m == 0) return out;
  Fenwick tree(pool_weights);
  for (std::size_t k = 0; k < m; ++k) {
    const double total = tree.total();
    if (!(total > 0.0)) {
      throw Error(ErrorKind::Infeasible, "no positive weight left to draw from");
    }
    std::size_t pick = pool_weights.size();
    for (int attempt = 0; attempt < 64; ++attempt) {
      const std::size_t cand = tree.search(uniform01(rng) * total);
      if (tree.alive(cand)) {
        pick = cand;
        break;
      }
    }
    if (pick == pool_weights.size()) {
      throw Error(ErrorKind::Numerical, "weighted draw failed to locate a live item");
    }
    tree.remove(pick);
    out.push_back(pick);
  }
  return out;
}

std::vector<MatrixIndex> sample_without_replacement(const std::vector<MatrixIndex>& universe,
                                                    std::size_t m, const WeightField& weights,
                                                    Rng& rng) {
  if (m > universe.size()) {
    throw Error(ErrorKind::Size, "sample size exceeds universe size");
  }
  std::vector<double> w(universe.size());
  for (std::size_t i = 0; i < universe.size(); ++i) {
    w[i] = weights(universe[i]);
    if (!(w[i] > 0.0) || !std::isfinite(w[i])) {
      throw Error(ErrorKind::Weight, "sampling weights must be strictly positive");
    }
  }
  const auto picks = weighted_draw_indices(w, m, rng);
  std::vector<MatrixIndex> out;
  out.reserve(m);
  for (auto p : picks) out.push_back(universe[p]);
  return out;
}

double ordered_draw_log_prob(const std::vector<MatrixIndex>& draws,
                             const std::vector<MatrixIndex>& universe, const WeightField& weights) {
  std::unordered_map<std::int64_t, char> members;
  members.reserve(universe.size() * 2);
  double total = 0.0;
  for (const auto& u : universe) {
    members[static_cast<std::int64_t>(u.row) * weights.n_cols() + u.col] = 0;
    total += weights(u);
  }
  double lp = 0.0;
  double removed = 0.0;
  for (const auto& d : draws) {
    auto it = members.find(static_cast<std::int64_t>(d.row) * weights.n_cols() + d.col);
    if (it == members.end()) {
      throw Error(ErrorKind::Domain, "draw lies outside the universe");
    }
    if (it->second) {
      throw Error(ErrorKind::Domain, "draws must be distinct");
    }
    it->second = 1;
    const double w = weights(d);
    lp += std::log(w) - std::log(total - removed);
    removed += w;
  }
  return lp;
}

ColumnGroupSampler::ColumnGroupSampler(const std::vector<MatrixIndex>& candidates, int K,
                                       const WeightField& weights)
    : K_(K), weights_(&weights) {
  if (K < 1) throw Error(ErrorKind::Parameter, "group size K must be at least 1");
  std::vector<std::vector<MatrixIndex>> by_col(weights.n_cols());
  for (const auto& idx : candidates) by_col[idx.col].push_back(idx);
  for (int c = 0; c < weights.n_cols(); ++c) {
    if (static_cast<int>(by_col[c].size()) < K) continue;
    double mass = 0.0;
    for (const auto& idx : by_col[c]) {
      const double w = weights(idx);
      if (!(w >= 0.0) || !std::isfinite(w)) {
        throw Error(ErrorKind::Weight, "test weights must be nonnegative");
      }
      mass += w;
    }
    columns_.push_back(c);
    members_.push_back(std::move(by_col[c]));
    column_mass_.push_back(mass);
    total_mass_ += mass;
  }
  if (columns_.empty() || !(total_mass_ > 0.0)) {
    throw Error(ErrorKind::Infeasible, "no column with at least K candidates and positive weight");
  }
}

IndexGroup ColumnGroupSampler::draw(Rng& rng) const {
  // First index by weight over the pruned set: pick a column by mass, then
  // an entry within it. The rest stay in that column.
  double u = uniform01(rng) * total_mass_;
  std::size_t ci = 0;
  for (; ci + 1 < columns_.size(); ++ci) {
    if (u < column_mass_[ci]) break;
    u -= column_mass_[ci];
  }
  while (!(column_mass_[ci] > 0.0)) ci = (ci + 1) % columns_.size();
  const auto& pool = members_[ci];
  std::vector<double> w(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) w[i] = (*weights_)(pool[i]);
  const auto picks = weighted_draw_indices(w, static_cast<std::size_t>(K_), rng);
  IndexGroup g;
  g.indices.reserve(K_);
  for (auto p : picks) g.indices.push_back(pool[p]);
  return g;
}

IndexGroup sample_column_group(const std::vector<MatrixIndex>& missing, int K,
                               const WeightField& test_weights, Rng& rng) {
  ColumnGroupSampler sampler(missing, K, test_weights);
  return sampler.draw(rng);
}

}  // namespace scmc
