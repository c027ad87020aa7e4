#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "featgen/common.hpp"
#include "featgen/dataset.hpp"
#include "featgen/forest.hpp"

namespace featgen {

enum class SelectorKind { KBestMI, ExtraTreesImportance, LassoPath, RFImportance, RFE, None };

inline constexpr std::array<SelectorKind, 6> kAllSelectors{SelectorKind::KBestMI, SelectorKind::ExtraTreesImportance,
                                                           SelectorKind::LassoPath, SelectorKind::RFImportance,
                                                           SelectorKind::RFE, SelectorKind::None};

inline const char* to_string(SelectorKind k) {
  switch (k) {
    case SelectorKind::KBestMI: return "kbest";
    case SelectorKind::ExtraTreesImportance: return "extratrees";
    case SelectorKind::LassoPath: return "lasso";
    case SelectorKind::RFImportance: return "rf";
    case SelectorKind::RFE: return "rfe";
    case SelectorKind::None: return "none";
  }
  return "?";
}

inline SelectorKind parse_selector(const std::string& s) {
  for (auto k : kAllSelectors)
    if (s == to_string(k)) return k;
  throw Error(ErrorCode::ConfigError, "unknown selector '" + s + "'");
}

inline constexpr std::size_t kDefaultBins = 10;
inline constexpr std::size_t kDefaultFeatureCap = 30;
inline constexpr std::size_t kDefaultTopK = 10;
inline constexpr double kProportionEps = 1e-8;

// Non-negative per-feature scores summing to 1, or all zero.
using ImportanceVector = std::vector<double>;

inline void normalize_importance(ImportanceVector& v) {
  double s = 0.0;
  for (double& x : v) {
    if (!(x > 0.0)) x = 0.0;
    s += x;
  }
  if (s > 0.0)
    for (double& x : v) x /= s;
}

// Equal-frequency bin codes; tied values share the bin of their average rank.
inline std::vector<int> equal_frequency_bins(std::span<const double> values, std::size_t bins) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<int> codes(n, 0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double avg_pos = 0.5 * static_cast<double>(i + j);  // zero-based average rank
    const int code = std::min(static_cast<int>(bins) - 1,
                              static_cast<int>(std::floor(avg_pos * static_cast<double>(bins) / static_cast<double>(n))));
    for (std::size_t k = i; k <= j; ++k) codes[order[k]] = code;
    i = j + 1;
  }
  return codes;
}

inline std::vector<int> label_codes(std::span<const double> labels) {
  std::vector<int> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) out[i] = static_cast<int>(std::llround(labels[i]));
  return out;
}

// Plug-in mutual information (nats) of two discrete code vectors.
inline double plugin_mutual_information(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) throw Error(ErrorCode::LengthMismatch, "MI inputs differ in length");
  const double n = static_cast<double>(a.size());
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> pa, pb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    joint[{a[i], b[i]}] += 1.0;
    pa[a[i]] += 1.0;
    pb[b[i]] += 1.0;
  }
  double mi = 0.0;
  for (const auto& [key, c] : joint) mi += c / n * std::log(c * n / (pa[key.first] * pb[key.second]));
  return std::max(0.0, mi);
}

inline double mutual_information(std::span<const double> feature, std::span<const double> target, TaskKind task,
                                 std::size_t bins = kDefaultBins, std::uint64_t /*seed*/ = 0) {
  if (feature.size() != target.size()) throw Error(ErrorCode::LengthMismatch, "MI inputs differ in length");
  const auto fx = equal_frequency_bins(feature, bins);
  const auto ty = task == TaskKind::Regression ? equal_frequency_bins(target, bins) : label_codes(target);
  return plugin_mutual_information(fx, ty);
}

namespace detail {

inline bool is_classifier_task(TaskKind t) { return t != TaskKind::Regression; }

inline ImportanceVector forest_importance(const std::vector<Column>& cols, const DataTable& table,
                                          const ForestParams& params) {
  std::vector<std::size_t> rows(table.rows());
  std::iota(rows.begin(), rows.end(), 0);
  RandomForest rf(params);
  rf.fit(cols, table.target, rows, is_classifier_task(table.task));
  return rf.importance();
}

// L1-regularized least squares on z-scored features by cyclic coordinate
// descent; the penalty is the largest grid value keeping at least `want` nonzeros.
inline ImportanceVector lasso_importance(const DataTable& table, std::size_t want) {
  const std::size_t n = table.rows(), m = table.features();
  std::vector<Column> z(m, Column(n, 0.0));
  for (std::size_t j = 0; j < m; ++j) {
    const auto& c = table.columns[j];
    double mean = 0.0;
    for (double v : c) mean += v;
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (double v : c) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / static_cast<double>(n));
    if (sd > 0.0)
      for (std::size_t i = 0; i < n; ++i) z[j][i] = (c[i] - mean) / sd;
  }
  double ymean = 0.0;
  for (double v : table.target) ymean += v;
  ymean /= static_cast<double>(n);
  Column resid(n);
  for (std::size_t i = 0; i < n; ++i) resid[i] = table.target[i] - ymean;

  double lambda_max = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    double dot = 0.0;
    for (std::size_t i = 0; i < n; ++i) dot += z[j][i] * resid[i];
    lambda_max = std::max(lambda_max, std::abs(dot) / static_cast<double>(n));
  }
  std::vector<double> coef(m, 0.0);
  if (!(lambda_max > 0.0)) return coef;

  // Column squared norms / n (1 for non-constant z-scored columns).
  std::vector<double> norm(m, 0.0);
  for (std::size_t j = 0; j < m; ++j) {
    for (double v : z[j]) norm[j] += v * v;
    norm[j] /= static_cast<double>(n);
  }

  constexpr int kGrid = 100;
  std::vector<double> chosen;
  for (int g = 1; g <= kGrid; ++g) {
    const double lambda = lambda_max * std::pow(1e-3, static_cast<double>(g) / kGrid);
    for (int sweep = 0; sweep < 1000; ++sweep) {
      double max_delta = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        if (norm[j] == 0.0) continue;
        double rho = 0.0;
        for (std::size_t i = 0; i < n; ++i) rho += z[j][i] * resid[i];
        rho = rho / static_cast<double>(n) + norm[j] * coef[j];
        const double updated = std::copysign(std::max(0.0, std::abs(rho) - lambda), rho) / norm[j];
        const double delta = updated - coef[j];
        if (delta != 0.0) {
          for (std::size_t i = 0; i < n; ++i) resid[i] -= delta * z[j][i];
          coef[j] = updated;
          max_delta = std::max(max_delta, std::abs(delta));
        }
      }
      if (max_delta < 1e-8) break;
    }
    const auto nnz = static_cast<std::size_t>(std::count_if(coef.begin(), coef.end(), [](double c) { return c != 0.0; }));
    chosen = coef;
    if (nnz >= want) break;
  }
  for (double& c : chosen) c = std::abs(c);
  return chosen;
}

// Features eliminated in round r score r; the last survivors score highest.
inline ImportanceVector rfe_importance(const DataTable& table, std::uint64_t seed) {
  const std::size_t m = table.features();
  std::vector<std::size_t> alive(m);
  std::iota(alive.begin(), alive.end(), 0);
  ImportanceVector score(m, 0.0);
  double round = 1.0;
  while (alive.size() > 1) {
    std::vector<Column> cols;
    cols.reserve(alive.size());
    for (std::size_t j : alive) cols.push_back(table.columns[j]);
    ForestParams p;
    p.seed = mix_seed(seed, static_cast<std::uint64_t>(round));
    const auto imp = forest_importance(cols, table, p);
    std::vector<std::size_t> order(alive.size());
    std::iota(order.begin(), order.end(), 0);
    // Weakest first; among equals the later column goes first.
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return imp[a] < imp[b] || (imp[a] == imp[b] && a > b);
    });
    const std::size_t drop = std::max<std::size_t>(1, alive.size() / 10);
    std::vector<bool> dropped(alive.size(), false);
    for (std::size_t i = 0; i < drop; ++i) {
      dropped[order[i]] = true;
      score[alive[order[i]]] = round;
    }
    std::vector<std::size_t> next;
    for (std::size_t i = 0; i < alive.size(); ++i)
      if (!dropped[i]) next.push_back(alive[i]);
    alive = std::move(next);
    round += 1.0;
  }
  for (std::size_t j : alive) score[j] = round;
  return score;
}

}  // namespace detail

inline ImportanceVector rank_features(const DataTable& table, SelectorKind kind, std::uint64_t seed,
                                      std::size_t cap = kDefaultFeatureCap) {
  const std::size_t m = table.features();
  if (kind == SelectorKind::None) return ImportanceVector(m, m ? 1.0 / static_cast<double>(m) : 0.0);
  const auto& y = table.target;
  if (std::all_of(y.begin(), y.end(), [&](double v) { return v == y.front(); }))
    throw Error(ErrorCode::DegenerateTarget, "cannot rank features against a constant target");

  ImportanceVector imp;
  switch (kind) {
    case SelectorKind::KBestMI:
      imp.reserve(m);
      for (const auto& c : table.columns) imp.push_back(mutual_information(c, y, table.task, kDefaultBins, seed));
      break;
    case SelectorKind::ExtraTreesImportance:
      imp = detail::forest_importance(table.columns, table, extra_trees_params(seed));
      break;
    case SelectorKind::RFImportance: {
      ForestParams p;
      p.seed = seed;
      imp = detail::forest_importance(table.columns, table, p);
      break;
    }
    case SelectorKind::LassoPath: {
      const std::size_t want = std::max<std::size_t>(1, (std::min(cap, m) + 1) / 2);
      imp = detail::lasso_importance(table, want);
      break;
    }
    case SelectorKind::RFE:
      imp = detail::rfe_importance(table, seed);
      break;
    case SelectorKind::None:
      break;
  }
  normalize_importance(imp);
  return imp;
}

// Feature indices by descending importance, ties to the lower index.
inline std::vector<std::size_t> importance_order(std::span<const double> importance) {
  std::vector<std::size_t> order(importance.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return importance[a] > importance[b]; });
  return order;
}

inline std::vector<std::string> top_k_names(const DataTable& table, std::span<const double> importance,
                                            std::size_t k) {
  std::vector<std::string> out;
  for (std::size_t j : importance_order(importance)) {
    if (out.size() >= k) break;
    out.push_back(table.feature_names[j]);
  }
  return out;
}

struct PruneResult {
  DataTable table;
  std::vector<std::string> dropped;
  ImportanceVector importance;  // ranking of the input table; empty when pruning was inactive
  bool active = false;
};

// Keeps every protected feature plus the best-ranked generated features until
// exactly `cap` remain. Ties prefer the older feature, then the smaller name.
inline PruneResult prune(const DataTable& table, SelectorKind kind, std::size_t cap,
                         const std::set<std::string>& protected_names, std::uint64_t seed) {
  if (cap < protected_names.size())
    throw Error(ErrorCode::ConfigError, "feature cap is smaller than the protected set");
  PruneResult out;
  if (kind == SelectorKind::None || table.features() <= cap) {
    out.table = table;
    return out;
  }
  out.active = true;
  out.importance = rank_features(table, kind, seed, cap);
  std::vector<std::size_t> keep, generated;
  for (std::size_t j = 0; j < table.features(); ++j)
    (protected_names.contains(table.feature_names[j]) ? keep : generated).push_back(j);
  const auto& imp = out.importance;
  std::sort(generated.begin(), generated.end(), [&](std::size_t a, std::size_t b) {
    if (imp[a] != imp[b]) return imp[a] > imp[b];
    if (table.birth_step[a] != table.birth_step[b]) return table.birth_step[a] < table.birth_step[b];
    return table.feature_names[a] < table.feature_names[b];
  });
  const std::size_t room = cap > keep.size() ? cap - keep.size() : 0;
  for (std::size_t i = 0; i < generated.size(); ++i) {
    if (i < room)
      keep.push_back(generated[i]);
    else
      out.dropped.push_back(table.feature_names[generated[i]]);
  }
  std::sort(keep.begin(), keep.end());
  out.table = table.select(keep);
  return out;
}

struct Utilization {
  double proportion = 0.0;
  double weighted = 0.0;
};

// Share of newly generated features among the top-k, and that share scaled by
// sigmoid(reward).
inline Utilization utilization(std::span<const std::string> top_k, const std::set<std::string>& base_names,
                               double reward, double eps = kProportionEps) {
  if (!(eps > 0.0)) throw Error(ErrorCode::ConfigError, "utilization epsilon must be positive");
  std::size_t generated = 0;
  for (const auto& name : top_k)
    if (!base_names.contains(name)) ++generated;
  Utilization u;
  u.proportion = static_cast<double>(generated) / (static_cast<double>(top_k.size()) + eps);
  u.weighted = u.proportion * sigmoid(reward);
  return u;
}

}  // namespace featgen
