#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "featgen/common.hpp"
#include "featgen/dataset.hpp"

namespace featgen {

inline constexpr std::size_t kDefaultClusters = 5;

struct ClusterAssignment {
  std::size_t k = 0;
  std::vector<std::size_t> labels;                 // one per feature
  std::vector<std::vector<std::size_t>> members;   // ascending feature indices per cluster
};

namespace detail {

inline double squared_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

inline std::vector<double> zscore(const Column& c) {
  const double n = static_cast<double>(c.size());
  double mean = 0.0;
  for (double v : c) mean += v;
  mean /= n;
  double ss = 0.0;
  for (double v : c) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / n);
  std::vector<double> out(c.size(), 0.0);
  if (sd > 0.0)
    for (std::size_t i = 0; i < c.size(); ++i) out[i] = (c[i] - mean) / sd;
  return out;
}

// Nearest center, ties to the lowest cluster id.
inline std::size_t nearest(const std::vector<double>& p, const std::vector<std::vector<double>>& centers) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centers.size(); ++c) {
    const double d = squared_distance(p, centers[c]);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

}  // namespace detail

// k-means over z-scored feature columns (each feature is one n-dimensional
// point), k-means++ seeding, at most 100 Lloyd iterations.
inline ClusterAssignment cluster_features(const DataTable& table, std::size_t k_config, std::uint64_t seed) {
  const std::size_t m = table.features();
  if (m == 0) throw Error(ErrorCode::ConfigError, "cannot cluster an empty feature set");
  const std::size_t k = std::max<std::size_t>(1, std::min(k_config, m));

  std::vector<std::vector<double>> points;
  points.reserve(m);
  for (const auto& c : table.columns) points.push_back(detail::zscore(c));

  Rng rng(seed);
  std::vector<std::vector<double>> centers;
  std::vector<bool> chosen(m, false);
  const std::size_t first = rng.below(m);
  centers.push_back(points[first]);
  chosen[first] = true;
  std::vector<double> d2(m);
  while (centers.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      d2[i] = std::numeric_limits<double>::infinity();
      for (const auto& c : centers) d2[i] = std::min(d2[i], detail::squared_distance(points[i], c));
      total += d2[i];
    }
    std::size_t pick = m;
    if (total > 0.0) {
      double r = rng.uniform() * total;
      for (std::size_t i = 0; i < m; ++i) {
        if (d2[i] <= 0.0) continue;
        pick = i;
        r -= d2[i];
        if (r < 0.0) break;
      }
    } else {
      // All remaining points coincide with a center; take the first unchosen.
      for (std::size_t i = 0; i < m && pick == m; ++i)
        if (!chosen[i]) pick = i;
    }
    centers.push_back(points[pick]);
    chosen[pick] = true;
  }

  std::vector<std::size_t> labels(m, 0);
  for (int iter = 0; iter < 100; ++iter) {
    bool changed = iter == 0;
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t l = detail::nearest(points[i], centers);
      if (l != labels[i]) {
        labels[i] = l;
        changed = true;
      }
    }
    // Repair empty clusters by moving the member farthest from its center in
    // the largest cluster.
    for (std::size_t c = 0; c < k; ++c) {
      std::vector<std::size_t> counts(k, 0);
      for (std::size_t l : labels) ++counts[l];
      if (counts[c] > 0) continue;
      const std::size_t largest =
          static_cast<std::size_t>(std::distance(counts.begin(), std::max_element(counts.begin(), counts.end())));
      std::size_t far = m;
      double far_d = -1.0;
      for (std::size_t i = 0; i < m; ++i) {
        if (labels[i] != largest) continue;
        const double d = detail::squared_distance(points[i], centers[largest]);
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      labels[far] = c;
      centers[c] = points[far];
      changed = true;
    }
    if (!changed) break;
    for (std::size_t c = 0; c < k; ++c) {
      std::vector<double> acc(points[0].size(), 0.0);
      std::size_t count = 0;
      for (std::size_t i = 0; i < m; ++i) {
        if (labels[i] != c) continue;
        for (std::size_t r = 0; r < acc.size(); ++r) acc[r] += points[i][r];
        ++count;
      }
      if (count == 0) continue;
      for (double& v : acc) v /= static_cast<double>(count);
      centers[c] = std::move(acc);
    }
  }

  ClusterAssignment out;
  out.k = k;
  out.labels = labels;
  out.members.assign(k, {});
  for (std::size_t i = 0; i < m; ++i) out.members[labels[i]].push_back(i);
  return out;
}

}  // namespace featgen
