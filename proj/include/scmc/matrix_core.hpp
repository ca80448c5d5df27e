#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace scmc {

enum class ErrorKind {
  Size,
  Weight,
  Infeasible,
  Domain,
  Data,
  Parse,
  Parameter,
  Config,
  Capacity,
  Normalization,
  Degenerate,
  Numerical,
};

const char* error_kind_name(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

// Process exit code for the CLI: 2 config, 3 data, 4 numerical.
int exit_code_for(ErrorKind kind);

using Rng = std::mt19937_64;

// Mixes a master seed with a stream id so parallel trials get independent,
// reproducible generators.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream);

struct MatrixIndex {
  int row = 0;
  int col = 0;
  friend bool operator==(const MatrixIndex&, const MatrixIndex&) = default;
  friend auto operator<=>(const MatrixIndex&, const MatrixIndex&) = default;
};

struct Entry {
  MatrixIndex index;
  double value = 0.0;
};

class PartialMatrix {
 public:
  PartialMatrix() = default;
  PartialMatrix(int n_rows, int n_cols);

  int n_rows() const { return n_rows_; }
  int n_cols() const { return n_cols_; }
  std::size_t observed_count() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }

  // Throws on out-of-range or duplicate indices.
  void add(int row, int col, double value);
  bool contains(int row, int col) const;
  bool contains(const MatrixIndex& idx) const { return contains(idx.row, idx.col); }
  double value(int row, int col) const;
  double value(const MatrixIndex& idx) const { return value(idx.row, idx.col); }

  std::vector<MatrixIndex> observed_indices() const;
  std::vector<MatrixIndex> missing_indices() const;
  // Row-major 0/1 grid.
  std::vector<std::uint8_t> mask() const;

  // Restriction to a subset of the observed indices.
  PartialMatrix restrict_to(const std::vector<MatrixIndex>& keep) const;

 private:
  int n_rows_ = 0;
  int n_cols_ = 0;
  std::vector<Entry> entries_;
  std::vector<std::int32_t> slot_;
};

class WeightField {
 public:
  WeightField() = default;
  WeightField(int n_rows, int n_cols, double fill = 1.0)
      : n_rows_(n_rows), n_cols_(n_cols),
        values_(static_cast<std::size_t>(n_rows) * n_cols, fill) {}

  int n_rows() const { return n_rows_; }
  int n_cols() const { return n_cols_; }
  double operator()(int r, int c) const { return values_[static_cast<std::size_t>(r) * n_cols_ + c]; }
  double& operator()(int r, int c) { return values_[static_cast<std::size_t>(r) * n_cols_ + c]; }
  double operator()(const MatrixIndex& i) const { return (*this)(i.row, i.col); }
  double& operator()(const MatrixIndex& i) { return (*this)(i.row, i.col); }
  const std::vector<double>& values() const { return values_; }
  std::vector<double>& values() { return values_; }

  bool all_positive() const;
  bool all_nonnegative() const;
  bool is_constant() const;

 private:
  int n_rows_ = 0;
  int n_cols_ = 0;
  std::vector<double> values_;
};

struct IndexGroup {
  std::vector<MatrixIndex> indices;

  std::size_t size() const { return indices.size(); }
  int column() const { return indices.empty() ? -1 : indices.front().col; }
  const MatrixIndex& operator[](std::size_t k) const { return indices[k]; }
  // Distinct indices sharing one column.
  bool valid() const;
};

// Weighted sampling without replacement: each draw picks a remaining item with
// probability proportional to its weight. Draw order is returned.
std::vector<MatrixIndex> sample_without_replacement(const std::vector<MatrixIndex>& universe,
                                                    std::size_t m, const WeightField& weights,
                                                    Rng& rng);

// Log probability of an ordered draw sequence under the sampler above.
double ordered_draw_log_prob(const std::vector<MatrixIndex>& draws,
                             const std::vector<MatrixIndex>& universe, const WeightField& weights);

// Column-constrained sampler for test groups. Columns with fewer than K
// candidates are dropped; the first index is drawn by weight over the rest and
// the remaining K-1 come from the same column.
class ColumnGroupSampler {
 public:
  ColumnGroupSampler(const std::vector<MatrixIndex>& candidates, int K, const WeightField& weights);

  IndexGroup draw(Rng& rng) const;
  int K() const { return K_; }
  double eligible_mass() const { return total_mass_; }
  // Columns that survive the pruning rule, ascending.
  const std::vector<int>& eligible_columns() const { return columns_; }

 private:
  int K_;
  const WeightField* weights_;
  std::vector<int> columns_;
  std::vector<std::vector<MatrixIndex>> members_;
  std::vector<double> column_mass_;
  double total_mass_ = 0.0;
};

IndexGroup sample_column_group(const std::vector<MatrixIndex>& missing, int K,
                               const WeightField& test_weights, Rng& rng);

// Sequential draw of m items from `pool` by `weight(i)` (indices into pool).
// Fenwick-tree backed, O(m log |pool|).
std::vector<std::size_t> weighted_draw_indices(const std::vector<double>& pool_weights, std::size_t m,
                                               Rng& rng);

double uniform01(Rng& rng);

// Unbiased integer in [0, n).
std::size_t uniform_index(Rng& rng, std::size_t n);

}  // namespace scmc
