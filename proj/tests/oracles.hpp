#pragma once

// Slow reference implementations used as independent checks.

#include <cmath>
#include <map>
#include <set>
#include <vector>

namespace oracle {

inline double rae(const std::vector<double>& y, const std::vector<double>& p, double train_mean) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    num += std::fabs(y[i] - p[i]);
    den += std::fabs(y[i] - train_mean);
  }
  return num / den;
}

// Full confusion matrix, then per-class precision/recall weighted by support.
inline double weighted_f1(const std::vector<double>& y, const std::vector<double>& p) {
  std::set<long long> labels;
  for (double v : y) labels.insert(std::llround(v));
  for (double v : p) labels.insert(std::llround(v));
  std::map<long long, std::map<long long, double>> cm;  // cm[true][pred]
  for (std::size_t i = 0; i < y.size(); ++i) cm[std::llround(y[i])][std::llround(p[i])] += 1.0;
  double total = 0.0;
  for (long long c : labels) {
    double tp = cm[c][c], pred_c = 0.0, true_c = 0.0;
    for (long long o : labels) {
      pred_c += cm[o][c];
      true_c += cm[c][o];
    }
    const double prec = pred_c > 0 ? tp / pred_c : 0.0;
    const double rec = true_c > 0 ? tp / true_c : 0.0;
    const double f1 = prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
    total += f1 * true_c;
  }
  return total / static_cast<double>(y.size());
}

// Pairwise Mann-Whitney count with half credit for ties.
inline double roc_auc(const std::vector<double>& y, const std::vector<double>& s) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] == 0.0) continue;
    for (std::size_t j = 0; j < y.size(); ++j) {
      if (y[j] != 0.0) continue;
      pairs += 1.0;
      if (s[i] > s[j]) wins += 1.0;
      else if (s[i] == s[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

}  // namespace oracle
