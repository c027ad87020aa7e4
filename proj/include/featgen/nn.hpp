#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "featgen/common.hpp"

namespace featgen {

enum class Architecture { Plain, Dueling };

struct Dense {
  std::size_t in = 0, out = 0;
  std::vector<double> w;  // row-major, out x in
  std::vector<double> b;

  Dense() = default;
  Dense(std::size_t in_, std::size_t out_) : in(in_), out(out_), w(in_ * out_, 0.0), b(out_, 0.0) {}

  void forward(std::span<const double> x, std::vector<double>& y) const {
    y.assign(out, 0.0);
    for (std::size_t o = 0; o < out; ++o) {
      double s = b[o];
      const double* row = &w[o * in];
      for (std::size_t i = 0; i < in; ++i) s += row[i] * x[i];
      y[o] = s;
    }
  }

  std::size_t size() const { return w.size() + b.size(); }
};

// Parameters of a multilayer perceptron with rectified-linear hidden layers.
// Plain nets have one head of width |A|; dueling nets have a scalar value head
// followed by an advantage head of width |A|, combined as
// Q = V + A - mean(A).
struct MlpParams {
  std::vector<Dense> trunk;
  std::vector<Dense> heads;

  std::size_t size() const {
    std::size_t s = 0;
    for (const auto& d : trunk) s += d.size();
    for (const auto& d : heads) s += d.size();
    return s;
  }

  template <typename F>
  void for_each_layer(F&& f) {
    for (auto& d : trunk) f(d);
    for (auto& d : heads) f(d);
  }
  template <typename F>
  void for_each_layer(F&& f) const {
    for (const auto& d : trunk) f(d);
    for (const auto& d : heads) f(d);
  }

  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(size());
    for_each_layer([&](const Dense& d) {
      out.insert(out.end(), d.w.begin(), d.w.end());
      out.insert(out.end(), d.b.begin(), d.b.end());
    });
    return out;
  }

  void assign(std::span<const double> flat) {
    if (flat.size() != size()) throw Error(ErrorCode::LengthMismatch, "parameter vector has wrong size");
    std::size_t k = 0;
    for_each_layer([&](Dense& d) {
      for (double& v : d.w) v = flat[k++];
      for (double& v : d.b) v = flat[k++];
    });
  }
};

class Mlp {
 public:
  Mlp() = default;

  Mlp(std::size_t input, std::size_t actions, std::vector<std::size_t> hidden, Architecture arch, Rng& rng)
      : input_(input), actions_(actions), hidden_(std::move(hidden)), arch_(arch) {
    std::size_t width = input;
    for (std::size_t h : hidden_) {
      params_.trunk.emplace_back(width, h);
      width = h;
    }
    if (arch == Architecture::Dueling) {
      params_.heads.emplace_back(width, 1);
      params_.heads.emplace_back(width, actions);
    } else {
      params_.heads.emplace_back(width, actions);
    }
    for (auto& d : params_.trunk) init(d, std::sqrt(6.0 / static_cast<double>(d.in)), rng);
    for (auto& d : params_.heads) init(d, std::sqrt(6.0 / static_cast<double>(d.in + d.out)), rng);
  }

  std::size_t input_size() const { return input_; }
  std::size_t actions() const { return actions_; }
  const std::vector<std::size_t>& hidden() const { return hidden_; }
  Architecture architecture() const { return arch_; }
  MlpParams& params() { return params_; }
  const MlpParams& params() const { return params_; }

  std::vector<double> forward(std::span<const double> x) const {
    Trace t;
    return forward(x, t);
  }

  // Accumulates d(sum_a dq[a] * Q(x, a)) / d(params) into `grad` (flattened
  // in MlpParams::flatten order).
  void backward(std::span<const double> x, std::span<const double> dq, std::vector<double>& grad) const {
    Trace t;
    forward(x, t);

    std::vector<double> d_head_out;
    std::vector<std::vector<double>> head_grads;
    if (arch_ == Architecture::Dueling) {
      double sum = 0.0;
      for (double v : dq) sum += v;
      head_grads.push_back({sum});
      std::vector<double> da(actions_);
      for (std::size_t a = 0; a < actions_; ++a) da[a] = dq[a] - sum / static_cast<double>(actions_);
      head_grads.push_back(std::move(da));
    } else {
      head_grads.emplace_back(dq.begin(), dq.end());
    }

    // Offsets of each layer's block in the flat vector.
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    params_.for_each_layer([&](const Dense& d) {
      offsets.push_back(off);
      off += d.size();
    });

    const std::vector<double>& h_last = t.acts.back();
    std::vector<double> dh(h_last.size(), 0.0);
    for (std::size_t hidx = 0; hidx < params_.heads.size(); ++hidx) {
      const Dense& d = params_.heads[hidx];
      const std::size_t base = offsets[params_.trunk.size() + hidx];
      accumulate_layer(d, h_last, head_grads[hidx], grad, base, dh);
    }
    for (std::size_t l = params_.trunk.size(); l-- > 0;) {
      const Dense& d = params_.trunk[l];
      const std::vector<double>& out = t.acts[l + 1];
      std::vector<double> dz(d.out);
      for (std::size_t o = 0; o < d.out; ++o) dz[o] = out[o] > 0.0 ? dh[o] : 0.0;
      std::vector<double> dx(d.in, 0.0);
      accumulate_layer(d, t.acts[l], dz, grad, offsets[l], dx);
      dh = std::move(dx);
    }
  }

 private:
  struct Trace {
    std::vector<std::vector<double>> acts;  // acts[0] = input, acts[l+1] = relu output of trunk layer l
  };

  std::vector<double> forward(std::span<const double> x, Trace& t) const {
    if (x.size() != input_) throw Error(ErrorCode::LengthMismatch, "state width does not match network input");
    t.acts.clear();
    t.acts.emplace_back(x.begin(), x.end());
    std::vector<double> z;
    for (const auto& d : params_.trunk) {
      d.forward(t.acts.back(), z);
      for (double& v : z) v = std::max(0.0, v);
      t.acts.push_back(z);
    }
    const auto& h = t.acts.back();
    std::vector<double> q;
    if (arch_ == Architecture::Dueling) {
      std::vector<double> v, adv;
      params_.heads[0].forward(h, v);
      params_.heads[1].forward(h, adv);
      double mean = 0.0;
      for (double a : adv) mean += a;
      mean /= static_cast<double>(adv.size());
      q.resize(actions_);
      for (std::size_t a = 0; a < actions_; ++a) q[a] = v[0] + adv[a] - mean;
    } else {
      params_.heads[0].forward(h, q);
    }
    return q;
  }

  static void accumulate_layer(const Dense& d, std::span<const double> x, std::span<const double> dz,
                               std::vector<double>& grad, std::size_t base, std::vector<double>& dx) {
    for (std::size_t o = 0; o < d.out; ++o) {
      if (dz[o] == 0.0) continue;
      const double* row = &d.w[o * d.in];
      double* g = &grad[base + o * d.in];
      for (std::size_t i = 0; i < d.in; ++i) {
        g[i] += dz[o] * x[i];
        dx[i] += dz[o] * row[i];
      }
      grad[base + d.w.size() + o] += dz[o];
    }
  }

  static void init(Dense& d, double limit, Rng& rng) {
    for (double& v : d.w) v = rng.uniform(-limit, limit);
  }

  std::size_t input_ = 0, actions_ = 0;
  std::vector<std::size_t> hidden_;
  Architecture arch_ = Architecture::Plain;
  MlpParams params_;
};

}  // namespace featgen
