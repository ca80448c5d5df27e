#include "scmc/movielens.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>
#include <vector>

namespace scmc {

namespace {

struct Record {
  long user;
  long item;
  double rating;
  std::size_t line;
};

template <class T>
bool parse_number(const std::string& tok, T& out) {
  const char* b = tok.data();
  const char* e = tok.data() + tok.size();
  auto [p, ec] = std::from_chars(b, e, out);
  return ec == std::errc() && p == e;
}

}  // namespace

PartialMatrix load_movielens(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Data, "cannot open '" + path + "'");
  std::vector<Record> records;
  std::string line;
  std::size_t line_no = 0;
  long max_user = 0;
  long max_item = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::istringstream ss(line);
    std::vector<std::string> tok;
    std::string t;
    while (ss >> t) tok.push_back(t);
    Record rec{0, 0, 0.0, line_no};
    long stamp = 0;
    if (tok.size() != 4 || !parse_number(tok[0], rec.user) || !parse_number(tok[1], rec.item) ||
        !parse_number(tok[2], rec.rating) || !parse_number(tok[3], stamp)) {
      throw Error(ErrorKind::Parse, "line " + std::to_string(line_no) +
                                        ": expected user-id item-id rating timestamp");
    }
    if (rec.user < 1 || rec.item < 1) {
      throw Error(ErrorKind::Parse, "line " + std::to_string(line_no) + ": ids are 1-based");
    }
    if (!(rec.rating >= 1.0 && rec.rating <= 5.0)) {
      throw Error(ErrorKind::Data, "line " + std::to_string(line_no) + ": rating outside [1,5]");
    }
    max_user = std::max(max_user, rec.user);
    max_item = std::max(max_item, rec.item);
    records.push_back(rec);
  }
  if (records.empty()) throw Error(ErrorKind::Data, "'" + path + "' holds no ratings");

  PartialMatrix pm(static_cast<int>(max_user), static_cast<int>(max_item));
  for (const auto& rec : records) {
    const int r = static_cast<int>(rec.user - 1);
    const int c = static_cast<int>(rec.item - 1);
    if (pm.contains(r, c)) {
      throw Error(ErrorKind::Data, "line " + std::to_string(rec.line) + ": duplicate rating for user " +
                                       std::to_string(rec.user) + ", item " + std::to_string(rec.item));
    }
    pm.add(r, c, rec.rating);
  }
  return pm;
}

PartialMatrix subsample_matrix(const PartialMatrix& full, int n_rows, int n_cols, Rng& rng) {
  if (n_rows < 1 || n_cols < 1) throw Error(ErrorKind::Parameter, "subsample size must be positive");
  auto pick = [&](int total, int want) {
    std::vector<int> ids(total);
    for (int i = 0; i < total; ++i) ids[i] = i;
    const int k = std::min(total, want);
    for (int i = 0; i < k; ++i) std::swap(ids[i], ids[i + uniform_index(rng, total - i)]);
    ids.resize(k);
    std::sort(ids.begin(), ids.end());
    std::vector<int> map(total, -1);
    for (int i = 0; i < k; ++i) map[ids[i]] = i;
    return std::make_pair(k, map);
  };
  const auto [kr, row_map] = pick(full.n_rows(), n_rows);
  const auto [kc, col_map] = pick(full.n_cols(), n_cols);
  PartialMatrix out(kr, kc);
  for (const auto& e : full.entries()) {
    const int r = row_map[e.index.row];
    const int c = col_map[e.index.col];
    if (r >= 0 && c >= 0) out.add(r, c, e.value);
  }
  return out;
}

}  // namespace scmc
