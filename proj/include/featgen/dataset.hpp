#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "featgen/common.hpp"

namespace featgen {

// Characters that carry meaning in the feature-name grammar.
inline constexpr std::string_view kReservedNameChars = "()+-*/,|\r\n";

inline bool is_valid_feature_name(std::string_view name) {
  if (name.empty()) return false;
  return name.find_first_of(kReservedNameChars) == std::string_view::npos;
}

// Column-major numeric table. `birth_step` records the global step that
// created each column (0 for original features) and drives prune tie-breaks.
struct DataTable {
  std::vector<std::string> feature_names;
  std::vector<Column> columns;
  std::vector<int> birth_step;
  std::string target_name = "y";
  Column target;
  TaskKind task = TaskKind::Regression;

  std::size_t rows() const { return target.size(); }
  std::size_t features() const { return columns.size(); }

  std::ptrdiff_t index_of(std::string_view name) const {
    const auto it = std::find(feature_names.begin(), feature_names.end(), name);
    return it == feature_names.end() ? -1 : std::distance(feature_names.begin(), it);
  }

  bool has_feature(std::string_view name) const { return index_of(name) >= 0; }

  void add_feature(std::string name, Column values, int step) {
    feature_names.push_back(std::move(name));
    columns.push_back(std::move(values));
    birth_step.push_back(step);
  }

  // Keeps the listed column indices, in the order given.
  DataTable select(std::span<const std::size_t> keep) const {
    DataTable out;
    out.target_name = target_name;
    out.target = target;
    out.task = task;
    for (std::size_t j : keep) {
      out.feature_names.push_back(feature_names[j]);
      out.columns.push_back(columns[j]);
      out.birth_step.push_back(birth_step[j]);
    }
    return out;
  }

  void validate() const {
    const std::size_t n = target.size();
    if (n < 2) throw Error(ErrorCode::EmptyAfterCleaning, "table needs at least 2 rows");
    if (columns.size() != feature_names.size() || birth_step.size() != columns.size())
      throw Error(ErrorCode::LengthMismatch, "feature metadata out of sync with columns");
    std::unordered_set<std::string> seen;
    for (std::size_t j = 0; j < columns.size(); ++j) {
      if (columns[j].size() != n)
        throw Error(ErrorCode::LengthMismatch, "column '" + feature_names[j] + "' has wrong length");
      if (!seen.insert(feature_names[j]).second)
        throw Error(ErrorCode::DuplicateHeader, "duplicate feature '" + feature_names[j] + "'");
      for (double v : columns[j])
        if (!std::isfinite(v))
          throw Error(ErrorCode::LengthMismatch, "non-finite value in '" + feature_names[j] + "'");
    }
    for (double v : target)
      if (!std::isfinite(v)) throw Error(ErrorCode::LengthMismatch, "non-finite target value");
  }
};

struct LoadedTable {
  DataTable table;
  std::size_t rows_dropped = 0;
};

namespace detail {

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r' || s[b] == '"')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r' || s[e - 1] == '"')) --e;
  return std::string(s.substr(b, e - b));
}

inline std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    cells.push_back(trim(std::string_view(line).substr(start, comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return cells;
}

inline bool parse_real(const std::string& cell, double& out) {
  if (cell.empty()) return false;
  char* end = nullptr;
  out = std::strtod(cell.c_str(), &end);
  return end == cell.c_str() + cell.size() && std::isfinite(out);
}

inline std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

inline LoadedTable parse_csv(std::istream& in, const std::string& target_column, TaskKind task) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::EmptyAfterCleaning, "CSV has no header row");
  const auto header = detail::split_row(line);

  std::unordered_set<std::string> seen;
  for (const auto& h : header)
    if (!seen.insert(h).second) throw Error(ErrorCode::DuplicateHeader, "duplicate header '" + h + "'");
  const auto target_it = std::find(header.begin(), header.end(), target_column);
  if (target_it == header.end())
    throw Error(ErrorCode::MissingTarget, "target column '" + target_column + "' not in header");
  const std::size_t target_idx = static_cast<std::size_t>(std::distance(header.begin(), target_it));

  LoadedTable result;
  DataTable& t = result.table;
  t.task = task;
  t.target_name = target_column;
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (j == target_idx) continue;
    if (!is_valid_feature_name(header[j]))
      throw Error(ErrorCode::InvalidName, "feature name '" + header[j] + "' is empty or uses a reserved character");
    t.feature_names.push_back(header[j]);
  }
  if (t.feature_names.empty()) throw Error(ErrorCode::MissingTarget, "CSV has no feature columns");
  t.columns.assign(t.feature_names.size(), {});
  t.birth_step.assign(t.feature_names.size(), 0);

  std::vector<double> row(header.size());
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_row(line);
    bool ok = cells.size() == header.size();
    for (std::size_t j = 0; ok && j < cells.size(); ++j) ok = detail::parse_real(cells[j], row[j]);
    if (ok) {
      const double y = row[target_idx];
      if (task == TaskKind::Classification) ok = y == std::round(y);
      if (task == TaskKind::AnomalyDetection) ok = y == 0.0 || y == 1.0;
    }
    if (!ok) {
      ++result.rows_dropped;
      continue;
    }
    std::size_t f = 0;
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (j == target_idx)
        t.target.push_back(row[j]);
      else
        t.columns[f++].push_back(row[j]);
    }
  }
  if (t.target.size() < 2)
    throw Error(ErrorCode::EmptyAfterCleaning,
                "fewer than 2 rows after dropping " + std::to_string(result.rows_dropped));
  return result;
}

inline LoadedTable load_csv(const std::string& path, const std::string& target_column, TaskKind task) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::FileNotFound, "cannot open '" + path + "'");
  return parse_csv(in, target_column, task);
}

inline void write_csv(const DataTable& t, std::ostream& out) {
  for (const auto& name : t.feature_names) out << name << ',';
  out << t.target_name << '\n';
  for (std::size_t i = 0; i < t.rows(); ++i) {
    for (const auto& c : t.columns) out << detail::format_real(c[i]) << ',';
    out << detail::format_real(t.target[i]) << '\n';
  }
}

inline void write_csv(const DataTable& t, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::FileNotFound, "cannot write '" + path + "'");
  write_csv(t, out);
}

struct NormalizationParams {
  std::vector<double> min;
  std::vector<double> max;
  double a = -1.0;
  double b = 1.0;
};

// Min-max scaling of every feature column into [a, b]. Constant columns map
// to the midpoint (a + b) / 2. The target is left untouched.
inline std::pair<DataTable, NormalizationParams> normalize(const DataTable& table, double a = -1.0,
                                                           double b = 1.0) {
  if (!(a < b)) throw Error(ErrorCode::ConfigError, "normalize requires a < b");
  DataTable out = table;
  NormalizationParams params;
  params.a = a;
  params.b = b;
  for (auto& col : out.columns) {
    const auto [lo_it, hi_it] = std::minmax_element(col.begin(), col.end());
    const double lo = *lo_it, hi = *hi_it;
    params.min.push_back(lo);
    params.max.push_back(hi);
    if (!(hi > lo)) {
      std::fill(col.begin(), col.end(), 0.5 * (a + b));
      continue;
    }
    const double span = hi - lo;
    for (double& v : col) {
      if (v == lo)
        v = a;
      else if (v == hi)
        v = b;
      else
        v = std::clamp((v - lo) / span * (b - a) + a, a, b);
    }
  }
  return {std::move(out), std::move(params)};
}

// (mean, population std, min, p25, median, p75, max)
using StatVector = std::array<double, 7>;

// Linear interpolation between closest ranks on an ascending-sorted range.
inline double percentile_sorted(std::span<const double> sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

inline StatVector column_stats(std::span<const double> values) {
  const std::size_t n = values.size();
  if (n == 0) return StatVector{};
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  // Summation in sorted order keeps the result permutation-invariant.
  double sum = 0.0;
  for (double v : sorted) sum += v;
  const double mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (double v : sorted) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n));
  return {mean,
          sd,
          sorted.front(),
          percentile_sorted(sorted, 0.25),
          percentile_sorted(sorted, 0.5),
          percentile_sorted(sorted, 0.75),
          sorted.back()};
}

}  // namespace featgen
