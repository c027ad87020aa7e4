#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "featgen/common.hpp"
#include "featgen/dataset.hpp"
#include "featgen/forest.hpp"
#include "featgen/metrics.hpp"

namespace featgen {

inline constexpr std::size_t kFolds = 5;
inline constexpr std::size_t kAnomalyNeighbors = 5;

struct FoldSplit {
  std::vector<std::vector<std::size_t>> folds;
  bool stratified = false;
  bool class_too_small = false;  // stratification was requested but a class had < kFolds members
};

// Five disjoint folds of sizes differing by at most one. When labels are given
// each class is shuffled and dealt round-robin, so per-class counts also differ
// by at most one across folds.
inline FoldSplit kfold_split(std::size_t n, std::optional<std::span<const double>> labels, std::uint64_t seed) {
  if (n < 2 * kFolds) throw Error(ErrorCode::TooFewSamples, "cross-validation needs at least 10 rows");
  Rng rng(seed);
  FoldSplit out;
  out.folds.assign(kFolds, {});

  std::vector<std::vector<std::size_t>> groups;
  if (labels) {
    std::map<long long, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < n; ++i) by_class[std::llround((*labels)[i])].push_back(i);
    for (auto& [label, idx] : by_class) {
      if (idx.size() < kFolds) out.class_too_small = true;
      groups.push_back(std::move(idx));
    }
    if (out.class_too_small) groups.clear();
  }
  if (groups.empty()) {
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), 0);
    groups.push_back(std::move(all));
  } else {
    out.stratified = true;
  }

  std::size_t dealt = 0;
  for (auto& g : groups) {
    rng.shuffle(g);
    for (std::size_t i : g) out.folds[dealt++ % kFolds].push_back(i);
  }
  for (auto& f : out.folds) std::sort(f.begin(), f.end());
  return out;
}

inline FoldSplit kfold_split(std::size_t n, TaskKind task, std::optional<std::span<const double>> labels,
                             std::uint64_t seed) {
  if (task == TaskKind::Regression) labels.reset();
  return kfold_split(n, labels, seed);
}

struct EvalReport {
  TaskKind task = TaskKind::Regression;
  std::vector<double> per_fold;
  double primary_metric = 0.0;
  std::optional<double> mae;   // regression only, mean over folds
  std::optional<double> rmse;  // regression only, mean over folds
  std::vector<double> per_fold_mae;
  std::vector<double> per_fold_rmse;
  bool stratified = false;
};

// Mean Euclidean distance to the k nearest training rows.
inline std::vector<double> knn_anomaly_scores(const std::vector<Column>& x, std::span<const std::size_t> train,
                                              std::span<const std::size_t> test, std::size_t k) {
  std::vector<double> scores;
  scores.reserve(test.size());
  std::vector<double> d(train.size());
  const std::size_t kk = std::min(k, train.size());
  for (std::size_t t : test) {
    for (std::size_t i = 0; i < train.size(); ++i) {
      double s = 0.0;
      for (const auto& col : x) {
        const double diff = col[t] - col[train[i]];
        s += diff * diff;
      }
      d[i] = std::sqrt(s);
    }
    std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(kk), d.end());
    double sum = 0.0;
    for (std::size_t i = 0; i < kk; ++i) sum += d[i];
    scores.push_back(sum / static_cast<double>(kk));
  }
  return scores;
}

inline ForestParams evaluator_forest(std::uint64_t seed) {
  ForestParams p;
  p.seed = seed;
  return p;
}

// Five-fold cross-validated downstream score: 1-RAE from a random-forest
// regressor, weighted F1 from a random-forest classifier, or ROC-AUC of a
// k-nearest-neighbour anomaly score. Folds aggregate in fixed order.
inline EvalReport evaluate(const DataTable& table, std::uint64_t seed) {
  const std::size_t n = table.rows();
  const auto& y = table.target;
  if (table.task == TaskKind::Regression) {
    if (std::all_of(y.begin(), y.end(), [&](double v) { return v == y.front(); }))
      throw Error(ErrorCode::DegenerateTarget, "regression target is constant");
  } else {
    if (std::all_of(y.begin(), y.end(), [&](double v) { return std::llround(v) == std::llround(y.front()); }))
      throw Error(ErrorCode::DegenerateTarget, "target has a single class");
  }

  const FoldSplit split = kfold_split(n, table.task, std::span<const double>(y), seed);
  EvalReport report;
  report.task = table.task;
  report.stratified = split.stratified;

  for (std::size_t k = 0; k < kFolds; ++k) {
    const auto& test = split.folds[k];
    std::vector<std::size_t> train;
    train.reserve(n - test.size());
    for (std::size_t f = 0; f < kFolds; ++f)
      if (f != k) train.insert(train.end(), split.folds[f].begin(), split.folds[f].end());
    std::sort(train.begin(), train.end());

    std::vector<double> y_test;
    y_test.reserve(test.size());
    for (std::size_t r : test) y_test.push_back(y[r]);

    switch (table.task) {
      case TaskKind::Regression: {
        RandomForest rf(evaluator_forest(mix_seed(seed, 100 + k)));
        rf.fit(table.columns, y, train, false);
        const auto pred = rf.predict(test);
        double train_mean = 0.0;
        for (std::size_t r : train) train_mean += y[r];
        train_mean /= static_cast<double>(train.size());
        report.per_fold.push_back(1.0 - rae(y_test, pred, train_mean));
        report.per_fold_mae.push_back(mae(y_test, pred));
        report.per_fold_rmse.push_back(rmse(y_test, pred));
        break;
      }
      case TaskKind::Classification: {
        RandomForest rf(evaluator_forest(mix_seed(seed, 100 + k)));
        rf.fit(table.columns, y, train, true);
        report.per_fold.push_back(weighted_f1(y_test, rf.predict(test)));
        break;
      }
      case TaskKind::AnomalyDetection: {
        const auto scores = knn_anomaly_scores(table.columns, train, test, kAnomalyNeighbors);
        const bool both = std::any_of(y_test.begin(), y_test.end(), [](double v) { return v != 0.0; }) &&
                          std::any_of(y_test.begin(), y_test.end(), [](double v) { return v == 0.0; });
        // A fold without both classes carries no ranking information.
        report.per_fold.push_back(both ? roc_auc(y_test, scores) : 0.5);
        break;
      }
    }
  }

  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  report.primary_metric = mean(report.per_fold);
  if (table.task == TaskKind::Regression) {
    report.mae = mean(report.per_fold_mae);
    report.rmse = mean(report.per_fold_rmse);
  }
  return report;
}

struct RewardSignal {
  double value = 0.0;
  double p_new = 0.0;
  double p_old = 0.0;
  double eta = 1.0;
};

inline RewardSignal reward(double p_new, double p_old, double eta = 1.0) {
  if (!(eta >= 0.0 && eta <= 1.0)) throw Error(ErrorCode::ConfigError, "reward scale must lie in [0, 1]");
  return {eta * (p_new - p_old), p_new, p_old, eta};
}

}  // namespace featgen
