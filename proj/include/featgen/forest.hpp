#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <vector>

#include "featgen/common.hpp"

namespace featgen {

struct TreeParams {
  std::size_t max_depth = 8;
  std::size_t min_leaf = 2;
  std::size_t mtry = 0;        // 0 selects ceil(sqrt(m))
  bool random_thresholds = false;  // extremely randomized splits
};

struct ForestParams {
  std::size_t trees = 10;
  TreeParams tree;
  bool bootstrap = true;
  std::uint64_t seed = 0;
};

inline ForestParams extra_trees_params(std::uint64_t seed) {
  ForestParams p;
  p.seed = seed;
  p.bootstrap = false;
  p.tree.random_thresholds = true;
  return p;
}

// CART tree over column-major features; rows are addressed by index so that
// train and test folds share one feature store.
class DecisionTree {
 public:
  // `classes` == 0 means regression; otherwise y holds class ids in [0, classes).
  void fit(const std::vector<Column>& x, std::span<const double> y, std::vector<std::size_t> rows,
           std::size_t classes, const TreeParams& params, Rng& rng, std::vector<double>& importance) {
    x_ = &x;
    y_ = y;
    classes_ = classes;
    params_ = params;
    rng_ = &rng;
    importance_ = &importance;
    mtry_ = params.mtry ? params.mtry
                        : static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(x.size()))));
    mtry_ = std::clamp<std::size_t>(mtry_, 1, x.size());
    nodes_.clear();
    build(rows, 0);
  }

  // Leaf payload: regression mean, or class distribution.
  const std::vector<double>& leaf_value(const std::vector<Column>& x, std::size_t row) const {
    std::size_t k = 0;
    while (nodes_[k].feature >= 0) {
      const Node& n = nodes_[k];
      k = x[static_cast<std::size_t>(n.feature)][row] <= n.threshold ? n.left : n.right;
    }
    return nodes_[k].value;
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    int feature = -1;
    double threshold = 0.0;
    std::size_t left = 0, right = 0;
    std::vector<double> value;
  };

  struct Split {
    int feature = -1;
    double threshold = 0.0;
    double impurity = 0.0;  // weighted child impurity
  };

  // Regression: sum of squared errors. Classification: n * gini.
  double impurity(std::span<const std::size_t> rows) const {
    if (classes_ == 0) {
      double s = 0.0, ss = 0.0;
      for (std::size_t r : rows) {
        s += y_[r];
        ss += y_[r] * y_[r];
      }
      const double n = static_cast<double>(rows.size());
      return std::max(0.0, ss - s * s / n);
    }
    std::vector<double> counts(classes_, 0.0);
    for (std::size_t r : rows) counts[static_cast<std::size_t>(y_[r])] += 1.0;
    const double n = static_cast<double>(rows.size());
    double sq = 0.0;
    for (double c : counts) sq += c * c;
    return n - sq / n;
  }

  std::vector<double> payload(std::span<const std::size_t> rows) const {
    if (classes_ == 0) {
      double s = 0.0;
      for (std::size_t r : rows) s += y_[r];
      return {s / static_cast<double>(rows.size())};
    }
    std::vector<double> dist(classes_, 0.0);
    for (std::size_t r : rows) dist[static_cast<std::size_t>(y_[r])] += 1.0;
    for (double& d : dist) d /= static_cast<double>(rows.size());
    return dist;
  }

  // Scans sorted rows for the best threshold on one feature.
  void scan_sorted(int feature, std::vector<std::size_t>& rows, Split& best) const {
    const Column& col = (*x_)[static_cast<std::size_t>(feature)];
    std::sort(rows.begin(), rows.end(), [&](std::size_t a, std::size_t b) {
      return col[a] < col[b] || (col[a] == col[b] && a < b);
    });
    const std::size_t n = rows.size();
    const std::size_t min_leaf = params_.min_leaf;
    if (classes_ == 0) {
      double total_s = 0.0, total_ss = 0.0;
      for (std::size_t r : rows) {
        total_s += y_[r];
        total_ss += y_[r] * y_[r];
      }
      double ls = 0.0, lss = 0.0;
      for (std::size_t i = 0; i + 1 < n; ++i) {
        const double v = y_[rows[i]];
        ls += v;
        lss += v * v;
        const std::size_t nl = i + 1, nr = n - nl;
        if (col[rows[i]] == col[rows[i + 1]] || nl < min_leaf || nr < min_leaf) continue;
        const double rs = total_s - ls, rss = total_ss - lss;
        const double imp = (lss - ls * ls / static_cast<double>(nl)) + (rss - rs * rs / static_cast<double>(nr));
        if (best.feature < 0 || imp < best.impurity) {
          best = {feature, 0.5 * (col[rows[i]] + col[rows[i + 1]]), imp};
        }
      }
      return;
    }
    std::vector<double> left(classes_, 0.0), right(classes_, 0.0);
    for (std::size_t r : rows) right[static_cast<std::size_t>(y_[r])] += 1.0;
    double lsq = 0.0, rsq = 0.0;
    for (double c : right) rsq += c * c;
    for (std::size_t i = 0; i + 1 < n; ++i) {
      const auto c = static_cast<std::size_t>(y_[rows[i]]);
      lsq += 2.0 * left[c] + 1.0;
      rsq -= 2.0 * right[c] - 1.0;
      left[c] += 1.0;
      right[c] -= 1.0;
      const std::size_t nl = i + 1, nr = n - nl;
      if (col[rows[i]] == col[rows[i + 1]] || nl < min_leaf || nr < min_leaf) continue;
      const double imp = (static_cast<double>(nl) - lsq / static_cast<double>(nl)) +
                         (static_cast<double>(nr) - rsq / static_cast<double>(nr));
      if (best.feature < 0 || imp < best.impurity) best = {feature, 0.5 * (col[rows[i]] + col[rows[i + 1]]), imp};
    }
  }

  void random_threshold(int feature, std::span<const std::size_t> rows, Split& best) const {
    const Column& col = (*x_)[static_cast<std::size_t>(feature)];
    double lo = col[rows[0]], hi = lo;
    for (std::size_t r : rows) {
      lo = std::min(lo, col[r]);
      hi = std::max(hi, col[r]);
    }
    if (!(hi > lo)) return;
    double t = rng_->uniform(lo, hi);
    if (t >= hi) t = lo;
    std::vector<std::size_t> l, r;
    for (std::size_t row : rows) (col[row] <= t ? l : r).push_back(row);
    if (l.size() < params_.min_leaf || r.size() < params_.min_leaf) return;
    const double imp = impurity(l) + impurity(r);
    if (best.feature < 0 || imp < best.impurity) best = {feature, t, imp};
  }

  std::size_t build(std::vector<std::size_t>& rows, std::size_t depth) {
    const std::size_t id = nodes_.size();
    nodes_.push_back({});
    nodes_[id].value = payload(rows);
    const double node_imp = impurity(rows);
    if (depth >= params_.max_depth || rows.size() < 2 * params_.min_leaf || node_imp <= 1e-12) return id;

    // Partial Fisher-Yates draw of mtry candidate features.
    std::vector<std::size_t> feats(x_->size());
    std::iota(feats.begin(), feats.end(), 0);
    for (std::size_t i = 0; i < mtry_; ++i) std::swap(feats[i], feats[i + rng_->below(feats.size() - i)]);

    Split best;
    std::vector<std::size_t> work;
    for (std::size_t i = 0; i < mtry_; ++i) {
      const int f = static_cast<int>(feats[i]);
      if (params_.random_thresholds) {
        random_threshold(f, rows, best);
      } else {
        work = rows;
        scan_sorted(f, work, best);
      }
    }
    if (best.feature < 0 || best.impurity >= node_imp) return id;

    (*importance_)[static_cast<std::size_t>(best.feature)] += node_imp - best.impurity;
    const Column& col = (*x_)[static_cast<std::size_t>(best.feature)];
    std::vector<std::size_t> left, right;
    for (std::size_t r : rows) (col[r] <= best.threshold ? left : right).push_back(r);
    rows.clear();
    rows.shrink_to_fit();
    const std::size_t l = build(left, depth + 1);
    const std::size_t r = build(right, depth + 1);
    nodes_[id].feature = best.feature;
    nodes_[id].threshold = best.threshold;
    nodes_[id].left = l;
    nodes_[id].right = r;
    return id;
  }

  const std::vector<Column>* x_ = nullptr;
  std::span<const double> y_;
  std::size_t classes_ = 0;
  TreeParams params_;
  Rng* rng_ = nullptr;
  std::vector<double>* importance_ = nullptr;
  std::size_t mtry_ = 1;
  std::vector<Node> nodes_;
};

// Bagged ensemble of CART trees. Regression averages leaf means; classification
// averages leaf class distributions and predicts the arg-max (lowest label on ties).
class RandomForest {
 public:
  explicit RandomForest(ForestParams params = {}) : params_(params) {}

  void fit(const std::vector<Column>& x, std::span<const double> y, std::span<const std::size_t> train_rows,
           bool classification) {
    x_ = &x;
    labels_.clear();
    y_coded_.assign(y.begin(), y.end());
    std::size_t classes = 0;
    if (classification) {
      std::map<long long, std::size_t> code;
      for (std::size_t r : train_rows) code.emplace(std::llround(y[r]), 0);
      for (auto& [label, c] : code) {
        c = labels_.size();
        labels_.push_back(static_cast<double>(label));
      }
      for (std::size_t r : train_rows) y_coded_[r] = static_cast<double>(code[std::llround(y[r])]);
      classes = labels_.size();
    }
    importance_.assign(x.size(), 0.0);
    trees_.assign(params_.trees, {});
    for (std::size_t t = 0; t < params_.trees; ++t) {
      Rng rng(mix_seed(params_.seed, t));
      std::vector<std::size_t> rows;
      if (params_.bootstrap) {
        rows.resize(train_rows.size());
        for (auto& r : rows) r = train_rows[rng.below(train_rows.size())];
      } else {
        rows.assign(train_rows.begin(), train_rows.end());
      }
      std::vector<double> tree_imp(x.size(), 0.0);
      trees_[t].fit(x, y_coded_, std::move(rows), classes, params_.tree, rng, tree_imp);
      double s = 0.0;
      for (double v : tree_imp) s += v;
      if (s > 0.0)
        for (std::size_t j = 0; j < x.size(); ++j) importance_[j] += tree_imp[j] / s;
    }
    for (double& v : importance_) v /= static_cast<double>(params_.trees);
  }

  double predict(std::size_t row) const {
    if (labels_.empty()) {
      double s = 0.0;
      for (const auto& t : trees_) s += t.leaf_value(*x_, row)[0];
      return s / static_cast<double>(trees_.size());
    }
    std::vector<double> votes(labels_.size(), 0.0);
    for (const auto& t : trees_) {
      const auto& dist = t.leaf_value(*x_, row);
      for (std::size_t c = 0; c < dist.size(); ++c) votes[c] += dist[c];
    }
    return labels_[static_cast<std::size_t>(std::distance(votes.begin(), std::max_element(votes.begin(), votes.end())))];
  }

  std::vector<double> predict(std::span<const std::size_t> rows) const {
    std::vector<double> out;
    out.reserve(rows.size());
    for (std::size_t r : rows) out.push_back(predict(r));
    return out;
  }

  // Mean per-tree normalized impurity decrease.
  const std::vector<double>& importance() const { return importance_; }

 private:
  ForestParams params_;
  const std::vector<Column>* x_ = nullptr;
  std::vector<double> y_coded_;
  std::vector<double> labels_;
  std::vector<double> importance_;
  std::vector<DecisionTree> trees_;
};

}  // namespace featgen
