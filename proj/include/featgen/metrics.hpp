#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <span>
#include <vector>

#include "featgen/common.hpp"

namespace featgen {

inline void require_same_length(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorCode::LengthMismatch, "metric inputs differ in length");
  if (a.empty()) throw Error(ErrorCode::LengthMismatch, "metric inputs are empty");
}

// Relative absolute error against the training-fold mean.
inline double rae(std::span<const double> y_true, std::span<const double> y_pred, double train_mean) {
  require_same_length(y_true, y_pred);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    num += std::abs(y_true[i] - y_pred[i]);
    den += std::abs(y_true[i] - train_mean);
  }
  if (!(den > 0.0)) throw Error(ErrorCode::DegenerateTarget, "RAE denominator is zero");
  return num / den;
}

inline double mae(std::span<const double> y_true, std::span<const double> y_pred) {
  require_same_length(y_true, y_pred);
  double s = 0.0;
  for (std::size_t i = 0; i < y_true.size(); ++i) s += std::abs(y_true[i] - y_pred[i]);
  return s / static_cast<double>(y_true.size());
}

inline double rmse(std::span<const double> y_true, std::span<const double> y_pred) {
  require_same_length(y_true, y_pred);
  double s = 0.0;
  for (std::size_t i = 0; i < y_true.size(); ++i) s += (y_true[i] - y_pred[i]) * (y_true[i] - y_pred[i]);
  return std::sqrt(s / static_cast<double>(y_true.size()));
}

// Per-class F1 weighted by the true class counts. Precision or recall with a
// zero denominator counts as 0.
inline double weighted_f1(std::span<const double> y_true, std::span<const double> y_pred) {
  require_same_length(y_true, y_pred);
  struct Counts {
    double tp = 0, fp = 0, fn = 0, support = 0;
  };
  std::map<long long, Counts> classes;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const auto t = std::llround(y_true[i]);
    const auto p = std::llround(y_pred[i]);
    classes[t].support += 1;
    if (t == p) {
      classes[t].tp += 1;
    } else {
      classes[t].fn += 1;
      classes[p].fp += 1;
    }
  }
  double total = 0.0;
  for (const auto& [label, c] : classes) {
    if (c.support == 0) continue;
    const double precision = c.tp + c.fp > 0 ? c.tp / (c.tp + c.fp) : 0.0;
    const double recall = c.tp + c.fn > 0 ? c.tp / (c.tp + c.fn) : 0.0;
    const double f1 = precision + recall > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    total += f1 * c.support;
  }
  return total / static_cast<double>(y_true.size());
}

// Area under the ROC curve through the Mann-Whitney rank-sum identity, ties
// earning half credit. Labels != 0 are positives.
inline double roc_auc(std::span<const double> y_true, std::span<const double> scores) {
  require_same_length(y_true, scores);
  const std::size_t n = y_true.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos_rank_sum = 0.0;
  double n_pos = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) {
      if (y_true[order[k]] != 0.0) {
        pos_rank_sum += avg_rank;
        n_pos += 1.0;
      }
    }
    i = j + 1;
  }
  const double n_neg = static_cast<double>(n) - n_pos;
  if (n_pos == 0.0 || n_neg == 0.0) throw Error(ErrorCode::SingleClass, "ROC-AUC needs both classes");
  const double u = pos_rank_sum - n_pos * (n_pos + 1.0) / 2.0;
  return u / (n_pos * n_neg);
}

}  // namespace featgen
