#pragma once

#include <string>

#include "scmc/matrix_core.hpp"

namespace scmc {

// Reads u.data-style records: user-id, item-id, rating, timestamp, separated
// by tabs or spaces, ids 1-based. Dimensions are the largest ids seen.
PartialMatrix load_movielens(const std::string& path);

// Random subset of rows and columns (kept in ascending order), re-indexed.
PartialMatrix subsample_matrix(const PartialMatrix& full, int n_rows, int n_cols, Rng& rng);

}  // namespace scmc
