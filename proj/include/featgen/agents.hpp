#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <deque>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "featgen/common.hpp"
#include "featgen/dataset.hpp"
#include "featgen/nn.hpp"
#include "featgen/transform.hpp"

namespace featgen {

enum class Role { C1, Op, C2 };

inline const char* to_string(Role r) {
  switch (r) {
    case Role::C1: return "c1";
    case Role::Op: return "op";
    case Role::C2: return "c2";
  }
  return "?";
}

enum class Variant { DQN, DDQN, DuelingDQN, DuelingDDQN };

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::DQN: return "dqn";
    case Variant::DDQN: return "ddqn";
    case Variant::DuelingDQN: return "dueling";
    case Variant::DuelingDDQN: return "duelingddqn";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "dqn") return Variant::DQN;
  if (s == "ddqn") return Variant::DDQN;
  if (s == "dueling" || s == "duelingdqn") return Variant::DuelingDQN;
  if (s == "duelingddqn") return Variant::DuelingDDQN;
  throw Error(ErrorCode::ConfigError, "unknown agent variant '" + s + "'");
}

inline Architecture architecture_of(Variant v) {
  return v == Variant::DuelingDQN || v == Variant::DuelingDDQN ? Architecture::Dueling : Architecture::Plain;
}

inline bool uses_double_q(Variant v) { return v == Variant::DDQN || v == Variant::DuelingDDQN; }

// ---------------------------------------------------------------------------
// State encoding

inline constexpr std::size_t kDescriptorSize = 49;

inline std::size_t state_size(Role r) {
  switch (r) {
    case Role::C1: return kDescriptorSize;
    case Role::Op: return 2 * kDescriptorSize;
    case Role::C2: return 2 * kDescriptorSize + kOperatorCount;
  }
  return 0;
}

struct StateVector {
  std::vector<double> values;
  Role role = Role::C1;
};

// Signed log compression; generated columns can reach 1e6 and beyond.
inline double squash(double v) { return std::copysign(std::log1p(std::abs(v)), v); }

// 7 statistics per column give an m x 7 matrix; the same 7 statistics taken
// down each of its columns give a fixed 49-value descriptor.
inline std::vector<double> describe_columns(const DataTable& table, std::span<const std::size_t> which) {
  std::vector<double> out(kDescriptorSize, 0.0);
  if (which.empty()) return out;
  std::vector<StatVector> per_col;
  per_col.reserve(which.size());
  for (std::size_t j : which) per_col.push_back(column_stats(table.columns[j]));
  std::vector<double> slice(which.size());
  for (std::size_t s = 0; s < 7; ++s) {
    for (std::size_t r = 0; r < per_col.size(); ++r) slice[r] = per_col[r][s];
    const StatVector agg = column_stats(slice);
    for (std::size_t t = 0; t < 7; ++t) out[s * 7 + t] = squash(agg[t]);
  }
  return out;
}

inline std::vector<double> describe_table(const DataTable& table) {
  std::vector<std::size_t> all(table.features());
  for (std::size_t j = 0; j < all.size(); ++j) all[j] = j;
  return describe_columns(table, all);
}

inline std::vector<double> operator_onehot(OpId op) {
  std::vector<double> v(kOperatorCount, 0.0);
  v[op_index(op)] = 1.0;
  return v;
}

inline StateVector encode_state(const DataTable& table, Role role,
                                std::optional<std::span<const std::size_t>> selected_cluster = std::nullopt,
                                std::optional<std::span<const double>> op_onehot = std::nullopt) {
  StateVector s;
  s.role = role;
  s.values = describe_table(table);
  if (role == Role::C1) return s;
  if (!selected_cluster) throw Error(ErrorCode::MissingContext, "Op and C2 states need the selected cluster");
  const auto cluster = describe_columns(table, *selected_cluster);
  s.values.insert(s.values.end(), cluster.begin(), cluster.end());
  if (role == Role::Op) return s;
  if (!op_onehot) throw Error(ErrorCode::MissingContext, "C2 state needs the operator one-hot");
  if (op_onehot->size() != kOperatorCount)
    throw Error(ErrorCode::LengthMismatch, "operator one-hot must have one slot per operator");
  s.values.insert(s.values.end(), op_onehot->begin(), op_onehot->end());
  return s;
}

// ---------------------------------------------------------------------------
// Replay

struct Transition {
  StateVector state;
  std::size_t action = 0;
  double reward = 0.0;
  StateVector next_state;
  bool terminal = false;
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 512) : capacity_(capacity) {
    if (capacity == 0) throw Error(ErrorCode::ConfigError, "replay capacity must be positive");
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const Transition& operator[](std::size_t i) const { return entries_[i]; }

  void store(Transition t) {
    entries_.push_back(std::move(t));
    if (entries_.size() > capacity_) entries_.pop_front();
  }

  // Uniform with replacement.
  std::vector<std::size_t> sample_indices(std::size_t batch, Rng& rng) const {
    std::vector<std::size_t> idx(batch);
    for (auto& i : idx) i = rng.below(entries_.size());
    return idx;
  }

 private:
  std::size_t capacity_;
  std::deque<Transition> entries_;
};

inline void store(ReplayBuffer& buffer, Transition t) { buffer.store(std::move(t)); }

// ---------------------------------------------------------------------------
// Networks and configuration

struct AgentConfig {
  Variant variant = Variant::DQN;
  double gamma = 0.9;
  double eps_start = 1.0;
  double eps_end = 0.05;
  std::size_t eps_decay_steps = 30;
  double learning_rate = 1e-3;
  double grad_clip = 5.0;
  std::size_t batch_size = 32;
  std::size_t target_sync = 10;
  std::size_t buffer_capacity = 512;
  std::vector<std::size_t> hidden{64, 64};
  std::uint64_t seed = 0;

  void validate() const {
    if (!(gamma >= 0.0 && gamma < 1.0)) throw Error(ErrorCode::ConfigError, "gamma must lie in [0, 1)");
    if (!(eps_end <= eps_start) || eps_end < 0.0 || eps_start > 1.0)
      throw Error(ErrorCode::ConfigError, "epsilon schedule must satisfy 0 <= end <= start <= 1");
    if (!(learning_rate > 0.0) || batch_size == 0 || target_sync == 0 || buffer_capacity == 0)
      throw Error(ErrorCode::ConfigError, "agent hyperparameters must be positive");
  }

  // Linear decay from eps_start to eps_end over eps_decay_steps.
  double epsilon(std::size_t step) const {
    if (eps_decay_steps == 0) return eps_end;
    const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(eps_decay_steps));
    return eps_start * (1.0 - frac) + eps_end * frac;
  }
};

// Online parameters plus a delayed target copy.
class QNetwork {
 public:
  QNetwork() = default;
  QNetwork(std::size_t input, std::size_t actions, const std::vector<std::size_t>& hidden, Architecture arch,
           std::uint64_t seed) {
    Rng rng(seed);
    online_ = Mlp(input, actions, hidden, arch, rng);
    target_ = online_;
  }

  std::vector<double> q(std::span<const double> s) const { return online_.forward(s); }
  std::vector<double> q_target(std::span<const double> s) const { return target_.forward(s); }

  Mlp& online() { return online_; }
  const Mlp& online() const { return online_; }
  Mlp& target() { return target_; }
  const Mlp& target() const { return target_; }

  std::size_t actions() const { return online_.actions(); }
  std::size_t input_size() const { return online_.input_size(); }
  std::size_t updates() const { return updates_; }

  void sync_target() { target_.params() = online_.params(); }

  // Counts one optimizer update; syncs the target copy every `period` updates.
  void count_update(std::size_t period) {
    ++updates_;
    if (updates_ % period == 0) sync_target();
  }

  void set_updates(std::size_t n) { updates_ = n; }

 private:
  Mlp online_;
  Mlp target_;
  std::size_t updates_ = 0;
};

inline std::size_t greedy_action(std::span<const double> q, const std::vector<bool>& mask) {
  std::size_t best = q.size();
  for (std::size_t a = 0; a < q.size(); ++a) {
    if (!mask.empty() && !mask[a]) continue;
    if (best == q.size() || q[a] > q[best]) best = a;
  }
  return best;
}

// Epsilon-greedy over the valid actions; greedy ties go to the lowest index.
inline std::size_t select_action(const QNetwork& net, const StateVector& state, const std::vector<bool>& mask,
                                 double epsilon, Rng& rng) {
  std::vector<std::size_t> valid;
  for (std::size_t a = 0; a < net.actions(); ++a)
    if (mask.empty() || mask[a]) valid.push_back(a);
  if (valid.empty()) throw Error(ErrorCode::NoValidAction, "no valid action to select");
  if (rng.uniform() < epsilon) return valid[rng.below(valid.size())];
  return greedy_action(net.q(state.values), mask);
}

inline double td_target(Variant variant, const Transition& t, const QNetwork& net, double gamma) {
  if (t.terminal) return t.reward;
  const auto q_next_target = net.q_target(t.next_state.values);
  if (uses_double_q(variant)) {
    const auto q_next_online = net.q(t.next_state.values);
    const std::size_t a = greedy_action(q_next_online, {});
    return t.reward + gamma * q_next_target[a];
  }
  return t.reward + gamma * *std::max_element(q_next_target.begin(), q_next_target.end());
}

// Mean squared TD error over the given transitions and its gradient with
// respect to the online parameters (targets held fixed).
inline double batch_loss_and_gradient(const QNetwork& net, std::span<const Transition* const> batch,
                                      const AgentConfig& config, std::vector<double>* grad) {
  if (grad) grad->assign(net.online().params().size(), 0.0);
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  std::vector<double> dq(net.actions(), 0.0);
  for (const Transition* t : batch) {
    const double y = td_target(config.variant, *t, net, config.gamma);
    const auto q = net.q(t->state.values);
    const double err = q[t->action] - y;
    loss += err * err * inv_b;
    if (grad) {
      std::fill(dq.begin(), dq.end(), 0.0);
      dq[t->action] = 2.0 * err * inv_b;
      net.online().backward(t->state.values, dq, *grad);
    }
  }
  return loss;
}

// One SGD step on a uniformly sampled batch; returns the pre-step loss.
inline double train_step(QNetwork& net, const ReplayBuffer& buffer, const AgentConfig& config, Rng& rng) {
  if (buffer.size() < config.batch_size)
    throw Error(ErrorCode::InsufficientSamples, "replay buffer holds fewer transitions than one batch");
  const auto idx = buffer.sample_indices(config.batch_size, rng);
  std::vector<const Transition*> batch;
  batch.reserve(idx.size());
  for (std::size_t i : idx) batch.push_back(&buffer[i]);

  std::vector<double> grad;
  const double loss = batch_loss_and_gradient(net, batch, config, &grad);
  double norm = 0.0;
  for (double g : grad) norm += g * g;
  norm = std::sqrt(norm);
  const double scale = norm > config.grad_clip ? config.grad_clip / norm : 1.0;
  auto params = net.online().params().flatten();
  for (std::size_t i = 0; i < params.size(); ++i) params[i] -= config.learning_rate * scale * grad[i];
  net.online().params().assign(params);
  net.count_update(config.target_sync);
  return loss;
}

// ---------------------------------------------------------------------------
// Checkpoints: <prefix>.bin holds online then target parameters as little-endian float64;
// <prefix>.json records shapes, variant and update counter.

namespace detail {

inline void write_f64_le(std::ostream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
  out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
}

inline double read_f64_le(std::istream& in) {
  std::uint64_t bits = 0;
  in.read(reinterpret_cast<char*>(&bits), sizeof bits);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
  double v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

}  // namespace detail

inline void save_checkpoint(const QNetwork& net, Variant variant, const std::string& prefix) {
  std::ofstream bin(prefix + ".bin", std::ios::binary);
  if (!bin) throw Error(ErrorCode::FileNotFound, "cannot write checkpoint '" + prefix + ".bin'");
  for (double v : net.online().params().flatten()) detail::write_f64_le(bin, v);
  for (double v : net.target().params().flatten()) detail::write_f64_le(bin, v);

  nlohmann::json layers = nlohmann::json::array();
  net.online().params().for_each_layer(
      [&](const Dense& d) { layers.push_back({{"in", d.in}, {"out", d.out}}); });
  nlohmann::json meta = {
      {"variant", to_string(variant)},
      {"architecture", net.online().architecture() == Architecture::Dueling ? "dueling" : "plain"},
      {"input", net.input_size()},
      {"actions", net.actions()},
      {"hidden", net.online().hidden()},
      {"layers", layers},
      {"parameter_count", net.online().params().size()},
      {"blocks", {"online", "target"}},
      {"update_counter", net.updates()},
  };
  std::ofstream js(prefix + ".json", std::ios::binary);
  js << meta.dump(2) << '\n';
}

inline QNetwork load_checkpoint(const std::string& prefix) {
  std::ifstream js(prefix + ".json");
  if (!js) throw Error(ErrorCode::FileNotFound, "cannot read checkpoint '" + prefix + ".json'");
  const auto meta = nlohmann::json::parse(js);
  const auto arch = meta.at("architecture").get<std::string>() == "dueling" ? Architecture::Dueling
                                                                           : Architecture::Plain;
  QNetwork net(meta.at("input").get<std::size_t>(), meta.at("actions").get<std::size_t>(),
               meta.at("hidden").get<std::vector<std::size_t>>(), arch, 0);
  std::ifstream bin(prefix + ".bin", std::ios::binary);
  if (!bin) throw Error(ErrorCode::FileNotFound, "cannot read checkpoint '" + prefix + ".bin'");
  const std::size_t n = net.online().params().size();
  std::vector<double> flat(n);
  for (double& v : flat) v = detail::read_f64_le(bin);
  net.online().params().assign(flat);
  for (double& v : flat) v = detail::read_f64_le(bin);
  net.target().params().assign(flat);
  if (!bin) throw Error(ErrorCode::LengthMismatch, "checkpoint payload is truncated");
  net.set_updates(meta.at("update_counter").get<std::size_t>());
  return net;
}

// ---------------------------------------------------------------------------

// One agent owns its network, buffer and random stream; nothing is shared
// between agents.
class Agent {
 public:
  Agent(Role role, std::size_t actions, AgentConfig config)
      : role_(role),
        config_(std::move(config)),
        net_(state_size(role), actions, config_.hidden, architecture_of(config_.variant), mix_seed(config_.seed, 1)),
        buffer_(config_.buffer_capacity),
        rng_(mix_seed(config_.seed, 2)) {
    config_.validate();
  }

  Role role() const { return role_; }
  const AgentConfig& config() const { return config_; }
  QNetwork& network() { return net_; }
  const QNetwork& network() const { return net_; }
  ReplayBuffer& buffer() { return buffer_; }
  const ReplayBuffer& buffer() const { return buffer_; }

  std::size_t act(const StateVector& s, const std::vector<bool>& mask, std::size_t global_step) {
    return select_action(net_, s, mask, config_.epsilon(global_step), rng_);
  }

  void remember(Transition t) { buffer_.store(std::move(t)); }

  // Trains once if a full batch is available.
  std::optional<double> learn() {
    if (buffer_.size() < config_.batch_size) return std::nullopt;
    return train_step(net_, buffer_, config_, rng_);
  }

 private:
  Role role_;
  AgentConfig config_;
  QNetwork net_;
  ReplayBuffer buffer_;
  Rng rng_;
};

}  // namespace featgen
