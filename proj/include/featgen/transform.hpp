#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "featgen/common.hpp"
#include "featgen/dataset.hpp"

namespace featgen {

enum class OpKind { Unary, Preprocess, Binary };

// Action order used by the operator-selection agent: 8 unary, 3 preprocess,
// 4 binary.
enum class OpId : int {
  Sqrt,
  Square,
  Sin,
  Cos,
  Tanh,
  Sigmoid,
  Log,
  Reciprocal,
  StandScaler,
  MinmaxScaler,
  QuanTrans,
  Add,
  Sub,
  Mul,
  Div,
};

inline constexpr std::size_t kOperatorCount = 15;

struct OperatorInfo {
  OpId id;
  OpKind kind;
  std::string_view name;    // identifier used in logs and in the grammar for unary ops
  std::string_view symbol;  // grammar glyph; same as name for unary ops
  int arity;
};

inline constexpr std::array<OperatorInfo, kOperatorCount> kOperators{{
    {OpId::Sqrt, OpKind::Unary, "sqrt", "sqrt", 1},
    {OpId::Square, OpKind::Unary, "square", "square", 1},
    {OpId::Sin, OpKind::Unary, "sin", "sin", 1},
    {OpId::Cos, OpKind::Unary, "cos", "cos", 1},
    {OpId::Tanh, OpKind::Unary, "tanh", "tanh", 1},
    {OpId::Sigmoid, OpKind::Unary, "sigmoid", "sigmoid", 1},
    {OpId::Log, OpKind::Unary, "log", "log", 1},
    {OpId::Reciprocal, OpKind::Unary, "reciprocal", "reciprocal", 1},
    {OpId::StandScaler, OpKind::Preprocess, "stand_scaler", "stand_scaler", 1},
    {OpId::MinmaxScaler, OpKind::Preprocess, "minmax_scaler", "minmax_scaler", 1},
    {OpId::QuanTrans, OpKind::Preprocess, "quan_trans", "quan_trans", 1},
    {OpId::Add, OpKind::Binary, "add", "+", 2},
    {OpId::Sub, OpKind::Binary, "sub", "-", 2},
    {OpId::Mul, OpKind::Binary, "mul", "*", 2},
    {OpId::Div, OpKind::Binary, "div", "/", 2},
}};

inline const OperatorInfo& info(OpId op) { return kOperators[static_cast<std::size_t>(op)]; }
inline bool is_binary(OpId op) { return info(op).kind == OpKind::Binary; }
inline OpId op_from_index(std::size_t i) { return kOperators.at(i).id; }
inline std::size_t op_index(OpId op) { return static_cast<std::size_t>(op); }

inline std::optional<OpId> op_from_name(std::string_view name) {
  for (const auto& o : kOperators)
    if (o.name == name) return o.id;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Numeric kernels

inline constexpr double kGuardEps = 1e-6;
inline constexpr double kLogEps = 1e-10;
inline constexpr double kSaturation = 1e300;

namespace detail {

// Final guard so every kernel output stays finite.
inline double saturate(double v) {
  if (std::isnan(v)) return 0.0;
  return std::clamp(v, -kSaturation, kSaturation);
}

inline double guard_denominator(double d) {
  if (std::abs(d) < kGuardEps) return d < 0.0 ? -kGuardEps : kGuardEps;
  return d;
}

inline double population_mean(std::span<const double> c) {
  double s = 0.0;
  for (double v : c) s += v;
  return s / static_cast<double>(c.size());
}

}  // namespace detail

// Rank(x_i) / (n + 1) with average ranks for ties.
inline Column quan_trans(std::span<const double> column) {
  const std::size_t n = column.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return column[a] < column[b]; });
  Column out(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && column[order[j + 1]] == column[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) out[order[k]] = avg_rank / static_cast<double>(n + 1);
    i = j + 1;
  }
  return out;
}

inline Column apply_unary(OpId op, std::span<const double> column) {
  if (is_binary(op)) throw Error(ErrorCode::ConfigError, "apply_unary called with a binary operator");
  Column out(column.begin(), column.end());
  switch (op) {
    case OpId::Sqrt:
      for (double& v : out) v = std::sqrt(std::abs(v));
      break;
    case OpId::Square:
      for (double& v : out) v = v * v;
      break;
    case OpId::Sin:
      for (double& v : out) v = std::sin(v);
      break;
    case OpId::Cos:
      for (double& v : out) v = std::cos(v);
      break;
    case OpId::Tanh:
      for (double& v : out) v = std::tanh(v);
      break;
    case OpId::Sigmoid:
      for (double& v : out) v = sigmoid(v);
      break;
    case OpId::Log:
      for (double& v : out) v = std::log(std::abs(v) + kLogEps);
      break;
    case OpId::Reciprocal:
      for (double& v : out) v = 1.0 / detail::guard_denominator(v);
      break;
    case OpId::StandScaler: {
      if (out.empty()) break;
      const double mu = detail::population_mean(column);
      double ss = 0.0;
      for (double v : column) ss += (v - mu) * (v - mu);
      const double sd = std::sqrt(ss / static_cast<double>(column.size()));
      for (double& v : out) v = sd > 0.0 ? (v - mu) / sd : 0.0;
      break;
    }
    case OpId::MinmaxScaler: {
      if (out.empty()) break;
      const auto [lo, hi] = std::minmax_element(column.begin(), column.end());
      const double span = *hi - *lo;
      for (double& v : out) v = span > 0.0 ? (v - *lo) / span : 0.0;
      break;
    }
    case OpId::QuanTrans:
      out = quan_trans(column);
      break;
    default:
      break;
  }
  for (double& v : out) v = detail::saturate(v);
  return out;
}

inline Column apply_binary(OpId op, std::span<const double> left, std::span<const double> right) {
  if (!is_binary(op)) throw Error(ErrorCode::ConfigError, "apply_binary called with a unary operator");
  if (left.size() != right.size())
    throw Error(ErrorCode::LengthMismatch, "binary operands differ in length");
  Column out(left.size());
  for (std::size_t i = 0; i < left.size(); ++i) {
    double v = 0.0;
    switch (op) {
      case OpId::Add: v = left[i] + right[i]; break;
      case OpId::Sub: v = left[i] - right[i]; break;
      case OpId::Mul: v = left[i] * right[i]; break;
      case OpId::Div: v = left[i] / detail::guard_denominator(right[i]); break;
      default: break;
    }
    out[i] = detail::saturate(v);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Expression trees

struct FeatureExpr;
using ExprPtr = std::shared_ptr<const FeatureExpr>;

// Either a base feature (op empty) or an operator applied to children.
struct FeatureExpr {
  std::optional<OpId> op;
  std::string base;
  std::vector<ExprPtr> children;

  static ExprPtr leaf(std::string name) {
    auto e = std::make_shared<FeatureExpr>();
    e->base = std::move(name);
    return e;
  }

  static ExprPtr apply(OpId op, std::vector<ExprPtr> children) {
    if (static_cast<int>(children.size()) != info(op).arity)
      throw Error(ErrorCode::ConfigError, "arity mismatch for operator " + std::string(info(op).name));
    auto e = std::make_shared<FeatureExpr>();
    e->op = op;
    e->children = std::move(children);
    return e;
  }

  bool is_base() const { return !op.has_value(); }

  int depth() const {
    int d = 0;
    for (const auto& c : children) d = std::max(d, c->depth());
    return d + 1;
  }

  void collect_bases(std::set<std::string>& out) const {
    if (is_base()) out.insert(base);
    for (const auto& c : children) c->collect_bases(out);
  }

  std::set<std::string> bases() const {
    std::set<std::string> out;
    collect_bases(out);
    return out;
  }
};

inline bool structurally_equal(const FeatureExpr& a, const FeatureExpr& b) {
  if (a.op != b.op || a.base != b.base || a.children.size() != b.children.size()) return false;
  for (std::size_t i = 0; i < a.children.size(); ++i)
    if (!structurally_equal(*a.children[i], *b.children[i])) return false;
  return true;
}

inline std::string render_unary(OpId op, std::string_view child) {
  return std::string(info(op).symbol) + "(" + std::string(child) + ")";
}

inline std::string render_binary(OpId op, std::string_view left, std::string_view right) {
  return "(" + std::string(left) + std::string(info(op).symbol) + std::string(right) + ")";
}

inline std::string render_name(const FeatureExpr& e) {
  if (e.is_base()) return e.base;
  if (is_binary(*e.op)) return render_binary(*e.op, render_name(*e.children[0]), render_name(*e.children[1]));
  return render_unary(*e.op, render_name(*e.children[0]));
}

namespace detail {

class NameParser {
 public:
  NameParser(std::string_view text, const std::set<std::string>* known) : text_(text), known_(known) {}

  ExprPtr parse() {
    auto e = expr();
    if (pos_ != text_.size()) throw SyntaxError(pos_, "unexpected trailing input");
    return e;
  }

 private:
  ExprPtr expr() {
    if (pos_ >= text_.size()) throw SyntaxError(pos_, "unexpected end of input");
    if (text_[pos_] == '(') {
      ++pos_;
      auto left = expr();
      if (pos_ >= text_.size()) throw SyntaxError(pos_, "expected binary operator");
      std::optional<OpId> op;
      for (const auto& o : kOperators)
        if (o.kind == OpKind::Binary && o.symbol[0] == text_[pos_]) op = o.id;
      if (!op) throw SyntaxError(pos_, "expected binary operator");
      ++pos_;
      auto right = expr();
      expect(')');
      return FeatureExpr::apply(*op, {left, right});
    }
    const std::size_t start = pos_;
    while (pos_ < text_.size() && kReservedNameChars.find(text_[pos_]) == std::string_view::npos) ++pos_;
    if (pos_ == start) throw SyntaxError(pos_, "expected feature name or operator");
    const std::string ident(text_.substr(start, pos_ - start));
    if (pos_ < text_.size() && text_[pos_] == '(') {
      const auto op = op_from_name(ident);
      if (!op || is_binary(*op)) throw SyntaxError(start, "unknown unary operator '" + ident + "'");
      ++pos_;
      auto child = expr();
      expect(')');
      return FeatureExpr::apply(*op, {child});
    }
    if (known_ && !known_->contains(ident))
      throw Error(ErrorCode::UnknownBase, "unknown base feature '" + ident + "'");
    return FeatureExpr::leaf(ident);
  }

  void expect(char c) {
    if (pos_ >= text_.size() || text_[pos_] != c)
      throw SyntaxError(pos_, std::string("expected '") + c + "'");
    ++pos_;
  }

  std::string_view text_;
  const std::set<std::string>* known_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline ExprPtr parse_name(std::string_view name, const std::set<std::string>& known_bases) {
  return detail::NameParser(name, &known_bases).parse();
}

// Accepts any identifier as a base feature.
inline ExprPtr parse_name_lenient(std::string_view name) {
  return detail::NameParser(name, nullptr).parse();
}

// Recomputes an expression from the base columns of `table`.
inline Column evaluate_expr(const FeatureExpr& e, const DataTable& table) {
  if (e.is_base()) {
    const auto idx = table.index_of(e.base);
    if (idx < 0) throw Error(ErrorCode::UnknownBase, "unknown base feature '" + e.base + "'");
    return table.columns[static_cast<std::size_t>(idx)];
  }
  if (is_binary(*e.op))
    return apply_binary(*e.op, evaluate_expr(*e.children[0], table), evaluate_expr(*e.children[1], table));
  return apply_unary(*e.op, evaluate_expr(*e.children[0], table));
}

// ---------------------------------------------------------------------------
// Candidate generation

inline constexpr std::size_t kDefaultCandidateCap = 64;

struct Candidate {
  std::string name;
  Column values;
};

namespace detail {

inline bool is_constant(std::span<const double> c) {
  return std::all_of(c.begin(), c.end(), [&](double v) { return v == c.front(); });
}

}  // namespace detail

// Applies `op` over the selected clusters. Pairs are enumerated in
// (left index, right index) lexicographic order; candidates that are constant,
// non-finite or already named in the table are skipped, and at most `cap`
// survivors are returned.
inline std::vector<Candidate> generate_features(const DataTable& table, OpId op,
                                                std::span<const std::size_t> cluster1,
                                                std::optional<std::span<const std::size_t>> cluster2,
                                                std::size_t cap = kDefaultCandidateCap) {
  if (is_binary(op) != cluster2.has_value())
    throw Error(ErrorCode::ConfigError, "second cluster must be given exactly for binary operators");
  std::unordered_set<std::string> names(table.feature_names.begin(), table.feature_names.end());
  std::vector<Candidate> out;

  auto consider = [&](std::string name, Column values) {
    if (names.contains(name)) return;
    if (detail::is_constant(values)) return;
    if (!std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); })) return;
    names.insert(name);
    out.push_back({std::move(name), std::move(values)});
  };

  std::vector<std::size_t> left(cluster1.begin(), cluster1.end());
  std::sort(left.begin(), left.end());
  if (!is_binary(op)) {
    for (std::size_t i : left) {
      if (out.size() >= cap) break;
      consider(render_unary(op, table.feature_names[i]), apply_unary(op, table.columns[i]));
    }
    return out;
  }

  std::vector<std::size_t> right(cluster2->begin(), cluster2->end());
  std::sort(right.begin(), right.end());
  const bool skip_self = op == OpId::Sub || op == OpId::Div;
  for (std::size_t i : left) {
    for (std::size_t j : right) {
      if (out.size() >= cap) return out;
      if (skip_self && i == j) continue;
      consider(render_binary(op, table.feature_names[i], table.feature_names[j]),
               apply_binary(op, table.columns[i], table.columns[j]));
    }
  }
  return out;
}

}  // namespace featgen
