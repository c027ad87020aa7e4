#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "featgen/agents.hpp"
#include "test_util.hpp"

using namespace featgen;

namespace {

StateVector state_of(std::vector<double> v, Role r = Role::C1) { return StateVector{std::move(v), r}; }

Transition transition(std::vector<double> s, std::size_t a, double r, std::vector<double> s2, bool terminal = false) {
  return Transition{state_of(std::move(s)), a, r, state_of(std::move(s2)), terminal};
}

// Single dense layer, no hidden layers: Q = W s + b.
QNetwork linear_net(std::size_t in, std::size_t actions, std::vector<double> online, std::vector<double> target) {
  QNetwork net(in, actions, {}, Architecture::Plain, 1);
  net.online().params().assign(online);
  net.target().params().assign(target);
  return net;
}

double chi_square(const std::vector<std::size_t>& counts, double expected) {
  double x = 0.0;
  for (auto c : counts) x += (static_cast<double>(c) - expected) * (static_cast<double>(c) - expected) / expected;
  return x;
}

}  // namespace

TEST(State, SizesPerRole) {
  auto t = testutil::gaussian_table(25, 1, [](const DataTable&, std::size_t, Rng& r) { return r.normal(); });
  const std::vector<std::size_t> cluster{0, 3};
  const auto hot = operator_onehot(OpId::Mul);
  EXPECT_EQ(encode_state(t, Role::C1).values.size(), 49u);
  EXPECT_EQ(encode_state(t, Role::Op, std::span<const std::size_t>(cluster)).values.size(), 98u);
  const auto c2 = encode_state(t, Role::C2, std::span<const std::size_t>(cluster), std::span<const double>(hot));
  EXPECT_EQ(c2.values.size(), state_size(Role::C2));
  for (double v : c2.values) EXPECT_TRUE(std::isfinite(v));
}

TEST(State, DescriptorIsIndependentOfFeatureCount) {
  auto t = testutil::gaussian_table(25, 2, [](const DataTable&, std::size_t, Rng& r) { return r.normal(); });
  const auto before = encode_state(t, Role::C1).values.size();
  t.add_feature("extra", Column(25, 1e9), 1);
  EXPECT_EQ(encode_state(t, Role::C1).values.size(), before);
  for (double v : encode_state(t, Role::C1).values) EXPECT_TRUE(std::isfinite(v));
}

TEST(State, AllZeroTableGivesZeroVector) {
  DataTable t;
  t.target.assign(5, 1.0);
  for (int j = 0; j < 4; ++j) t.add_feature("f" + std::to_string(j), Column(5, 0.0), 0);
  for (double v : encode_state(t, Role::C1).values) EXPECT_EQ(v, 0.0);
}

TEST(State, OperatorOneHotSlot) {
  auto t = testutil::gaussian_table(10, 3, [](const DataTable&, std::size_t, Rng& r) { return r.normal(); });
  const std::vector<std::size_t> cluster{1};
  const auto hot = operator_onehot(op_from_index(3));
  const auto s = encode_state(t, Role::C2, std::span<const std::size_t>(cluster), std::span<const double>(hot));
  for (std::size_t i = 98; i < s.values.size(); ++i) EXPECT_EQ(s.values[i], i == 98 + 3 ? 1.0 : 0.0);
}

TEST(State, MissingContext) {
  auto t = testutil::gaussian_table(10, 3, [](const DataTable&, std::size_t, Rng& r) { return r.normal(); });
  const std::vector<std::size_t> cluster{1};
  try {
    encode_state(t, Role::Op);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MissingContext);
  }
  EXPECT_THROW(encode_state(t, Role::C2, std::span<const std::size_t>(cluster)), Error);
}

TEST(Select, UniformWhenFullyExploring) {
  QNetwork net(2, 6, {8}, Architecture::Plain, 3);
  std::vector<bool> mask{true, true, false, true, true, true};
  Rng rng(17);
  std::vector<std::size_t> counts(6, 0);
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) ++counts[select_action(net, state_of({0.3, -0.2}), mask, 1.0, rng)];
  EXPECT_EQ(counts[2], 0u);
  counts.erase(counts.begin() + 2);
  EXPECT_LT(chi_square(counts, draws / 5.0), 13.277);  // df 4, p = 0.01
}

TEST(Select, GreedyTieBreaksLow) {
  const std::vector<double> q{0.1, 0.9, 0.9};
  EXPECT_EQ(greedy_action(q, {}), 1u);
  EXPECT_EQ(greedy_action(q, {true, false, true}), 2u);
  auto net = linear_net(1, 3, {0, 0, 0, 0.1, 0.9, 0.9}, {0, 0, 0, 0, 0, 0});
  Rng rng(1);
  EXPECT_EQ(select_action(net, state_of({1.0}), {}, 0.0, rng), 1u);
}

TEST(Select, MaskOverridesQ) {
  auto net = linear_net(1, 3, {0, 0, 0, 5, -5, 5}, {0, 0, 0, 0, 0, 0});
  Rng rng(1);
  const std::vector<bool> mask{false, true, false};
  EXPECT_EQ(select_action(net, state_of({1.0}), mask, 0.0, rng), 1u);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(select_action(net, state_of({1.0}), mask, 1.0, rng), 1u);
  try {
    select_action(net, state_of({1.0}), {false, false, false}, 0.0, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NoValidAction);
  }
}

TEST(TdTarget, ZeroDiscountReturnsReward) {
  const auto tr = transition({1.0}, 0, 0.358 - 0.302, {1.0});
  for (Variant v : {Variant::DQN, Variant::DDQN, Variant::DuelingDQN, Variant::DuelingDDQN}) {
    QNetwork net(1, 2, {4}, architecture_of(v), 5);
    EXPECT_EQ(td_target(v, tr, net, 0.0), 0.358 - 0.302);
  }
}

TEST(TdTarget, TerminalReturnsReward) {
  auto net = linear_net(1, 2, {1, 2, 0, 0}, {5, 3, 0, 0});
  const auto tr = transition({1.0}, 0, 0.25, {1.0}, true);
  EXPECT_EQ(td_target(Variant::DQN, tr, net, 0.9), 0.25);
  EXPECT_EQ(td_target(Variant::DDQN, tr, net, 0.9), 0.25);
}

TEST(TdTarget, DoubleQDivergesOnHandSetTables) {
  // Online Q(s') = [1, 2] picks action 1; target Q(s') = [5, 3].
  auto net = linear_net(1, 2, {1, 2, 0, 0}, {5, 3, 0, 0});
  const double r = 0.5, gamma = 0.9;
  const auto tr = transition({1.0}, 0, r, {1.0});
  EXPECT_EQ(td_target(Variant::DQN, tr, net, gamma), r + gamma * 5.0);
  EXPECT_EQ(td_target(Variant::DDQN, tr, net, gamma), r + gamma * 3.0);
}

TEST(Loss, GradientMatchesFiniteDifferencesOnThreeParameters) {
  // Input 2, one action, no hidden layer: parameters w0, w1, b.
  auto net = linear_net(2, 1, {0.3, -0.7, 0.1}, {0.2, 0.4, -0.5});
  ASSERT_EQ(net.online().params().size(), 3u);
  const std::vector<Transition> data{transition({1.0, 2.0}, 0, 0.5, {0.5, -1.0}),
                                     transition({-0.5, 0.25}, 0, -1.0, {2.0, 1.0}),
                                     transition({3.0, -1.0}, 0, 0.2, {0.0, 0.0}, true)};
  std::vector<const Transition*> batch;
  for (const auto& t : data) batch.push_back(&t);
  for (Variant v : {Variant::DQN, Variant::DDQN}) {
    AgentConfig cfg;
    cfg.variant = v;
    std::vector<double> grad;
    batch_loss_and_gradient(net, batch, cfg, &grad);
    const auto theta = net.online().params().flatten();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double h = 1e-6;
      auto plus = theta, minus = theta;
      plus[i] += h;
      minus[i] -= h;
      QNetwork p = net, m = net;
      p.online().params().assign(plus);
      m.online().params().assign(minus);
      const double fd = (batch_loss_and_gradient(p, batch, cfg, nullptr) - batch_loss_and_gradient(m, batch, cfg, nullptr)) / (2 * h);
      EXPECT_NEAR(grad[i], fd, 1e-4 * std::max(1.0, std::abs(fd))) << i;
    }
  }
}

TEST(Loss, GradientMatchesFiniteDifferencesThroughHiddenLayers) {
  for (Variant v : {Variant::DQN, Variant::DuelingDDQN}) {
    QNetwork net(3, 4, {5, 4}, architecture_of(v), 11);
    Rng rng(3);
    std::vector<Transition> data;
    for (int i = 0; i < 6; ++i)
      data.push_back(transition({rng.normal(), rng.normal(), rng.normal()}, rng.below(4), rng.normal(),
                                {rng.normal(), rng.normal(), rng.normal()}, i == 5));
    std::vector<const Transition*> batch;
    for (const auto& t : data) batch.push_back(&t);
    AgentConfig cfg;
    cfg.variant = v;
    std::vector<double> grad;
    batch_loss_and_gradient(net, batch, cfg, &grad);
    const auto theta = net.online().params().flatten();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double h = 1e-6;
      auto plus = theta, minus = theta;
      plus[i] += h;
      minus[i] -= h;
      QNetwork p = net, m = net;
      p.online().params().assign(plus);
      m.online().params().assign(minus);
      const double fd = (batch_loss_and_gradient(p, batch, cfg, nullptr) - batch_loss_and_gradient(m, batch, cfg, nullptr)) / (2 * h);
      EXPECT_NEAR(grad[i], fd, 1e-4 * std::max(1.0, std::abs(fd))) << to_string(v) << ' ' << i;
    }
  }
}

TEST(Loss, IdenticalTransitionsGiveSquaredError) {
  auto net = linear_net(1, 2, {0.5, -1.0, 0.25, 0.0}, {0.5, -1.0, 0.25, 0.0});
  ReplayBuffer buf(64);
  for (int i = 0; i < 40; ++i) buf.store(transition({2.0}, 0, 1.0, {1.0}, true));
  AgentConfig cfg;
  Rng rng(1);
  const double q = 0.5 * 2.0 + 0.25;
  const double loss = train_step(net, buf, cfg, rng);
  EXPECT_NEAR(loss, (q - 1.0) * (q - 1.0), 1e-12);
}

TEST(Train, InsufficientSamples) {
  QNetwork net(1, 2, {4}, Architecture::Plain, 1);
  ReplayBuffer buf(64);
  buf.store(transition({1.0}, 0, 1.0, {1.0}));
  AgentConfig cfg;
  Rng rng(1);
  try {
    train_step(net, buf, cfg, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InsufficientSamples);
  }
}

TEST(Train, TargetSyncsOnPeriodOnly) {
  QNetwork net(1, 2, {4}, Architecture::Plain, 1);
  ReplayBuffer buf(64);
  for (int i = 0; i < 40; ++i) buf.store(transition({1.0}, i % 2, i % 2 ? 1.0 : 0.0, {1.0}));
  AgentConfig cfg;
  cfg.target_sync = 3;
  Rng rng(2);
  const auto initial_target = net.target().params().flatten();
  train_step(net, buf, cfg, rng);
  train_step(net, buf, cfg, rng);
  EXPECT_EQ(net.target().params().flatten(), initial_target);
  EXPECT_NE(net.online().params().flatten(), initial_target);
  train_step(net, buf, cfg, rng);
  EXPECT_EQ(net.updates(), 3u);
  EXPECT_EQ(net.target().params().flatten(), net.online().params().flatten());
}

TEST(Train, GradientIsClipped) {
  auto net = linear_net(1, 1, {0.0, 0.0}, {0.0, 0.0});
  ReplayBuffer buf(64);
  for (int i = 0; i < 32; ++i) buf.store(transition({1.0}, 0, 1000.0, {1.0}, true));
  AgentConfig cfg;
  cfg.learning_rate = 1.0;
  Rng rng(1);
  train_step(net, buf, cfg, rng);
  const auto p = net.online().params().flatten();
  EXPECT_NEAR(std::sqrt(p[0] * p[0] + p[1] * p[1]), cfg.grad_clip, 1e-9);
}

TEST(Buffer, FifoExamples) {
  ReplayBuffer b(2);
  b.store(transition({1}, 0, 1, {0}));
  EXPECT_EQ(b.size(), 1u);
  b.store(transition({2}, 0, 2, {0}));
  store(b, transition({3}, 0, 3, {0}));
  ASSERT_EQ(b.size(), 2u);
  EXPECT_EQ(b[0].reward, 2.0);
  EXPECT_EQ(b[1].reward, 3.0);

  ReplayBuffer big(128);
  for (int i = 0; i < 10000; ++i) big.store(transition({0}, 0, i, {0}));
  EXPECT_EQ(big.size(), 128u);
  EXPECT_EQ(big[0].reward, 10000.0 - 128.0);
  EXPECT_THROW(ReplayBuffer(0), Error);
}

TEST(Buffer, SamplingIsUniform) {
  ReplayBuffer b(10);
  for (int i = 0; i < 10; ++i) b.store(transition({0}, 0, i, {0}));
  Rng rng(9);
  std::vector<std::size_t> counts(10, 0);
  for (std::size_t i : b.sample_indices(20000, rng)) ++counts[i];
  EXPECT_LT(chi_square(counts, 2000.0), 21.666);  // df 9, p = 0.01
}

TEST(Config, EpsilonSchedule) {
  AgentConfig cfg;
  cfg.eps_decay_steps = 30;
  EXPECT_EQ(cfg.epsilon(0), 1.0);
  EXPECT_NEAR(cfg.epsilon(15), 0.525, 1e-12);
  EXPECT_EQ(cfg.epsilon(30), 0.05);
  EXPECT_EQ(cfg.epsilon(1000), 0.05);
  cfg.gamma = 1.0;
  EXPECT_THROW(cfg.validate(), Error);
}

TEST(Variants, NamesRoundTrip) {
  for (Variant v : {Variant::DQN, Variant::DDQN, Variant::DuelingDQN, Variant::DuelingDDQN})
    EXPECT_EQ(parse_variant(to_string(v)), v);
  EXPECT_EQ(parse_variant("duelingdqn"), Variant::DuelingDQN);
  EXPECT_THROW(parse_variant("a2c"), Error);
}

TEST(Dueling, QIsValuePlusCenteredAdvantage) {
  QNetwork net(2, 3, {4}, Architecture::Dueling, 8);
  auto& heads = net.online().params().heads;
  ASSERT_EQ(heads.size(), 2u);
  std::fill(heads[0].w.begin(), heads[0].w.end(), 0.0);
  std::fill(heads[1].w.begin(), heads[1].w.end(), 0.0);
  heads[0].b = {0.7};
  heads[1].b = {1.0, 2.0, 6.0};
  const auto q = net.q(std::vector<double>{0.4, -1.2});
  EXPECT_NEAR(q[0], 0.7 + 1.0 - 3.0, 1e-15);
  EXPECT_NEAR(q[1], 0.7 + 2.0 - 3.0, 1e-15);
  EXPECT_NEAR(q[2], 0.7 + 6.0 - 3.0, 1e-15);
}

TEST(Dueling, InvariantToAdvantageShift) {
  QNetwork net(2, 3, {4}, Architecture::Dueling, 8);
  const std::vector<double> s{0.4, -1.2};
  const auto before = net.q(s);
  for (double& b : net.online().params().heads[1].b) b += 3.5;
  const auto after = net.q(s);
  for (std::size_t a = 0; a < 3; ++a) EXPECT_NEAR(before[a], after[a], 1e-12);
}

TEST(Bandit, AllVariantsFindTheBetterArm) {
  for (Variant v : {Variant::DQN, Variant::DDQN, Variant::DuelingDQN, Variant::DuelingDDQN}) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      AgentConfig cfg;
      cfg.variant = v;
      cfg.gamma = 0.0;
      cfg.seed = seed;
      QNetwork net(1, 2, cfg.hidden, architecture_of(v), mix_seed(seed, 1));
      ReplayBuffer buf(cfg.buffer_capacity);
      Rng rng(mix_seed(seed, 2));
      const StateVector s = state_of({1.0});
      std::size_t trained = 0;
      while (trained < 2000) {
        const std::size_t a = select_action(net, s, {}, 0.3, rng);
        buf.store(Transition{s, a, a == 1 ? 1.0 : 0.0, s, true});
        if (buf.size() >= cfg.batch_size) {
          train_step(net, buf, cfg, rng);
          ++trained;
        }
      }
      EXPECT_EQ(greedy_action(net.q(s.values), {}), 1u) << to_string(v) << " seed " << seed;
    }
  }
}

TEST(Agents, ParametersAreIsolated) {
  AgentConfig cfg;
  cfg.batch_size = 4;
  Agent a(Role::C1, 5, cfg), b(Role::C1, 5, cfg);
  const auto b_before = b.network().online().params().flatten();
  EXPECT_EQ(a.network().online().params().flatten(), b_before);
  for (int i = 0; i < 8; ++i) a.remember(Transition{state_of(std::vector<double>(49, 0.1)), 2, 1.0, state_of(std::vector<double>(49, 0.2)), false});
  ASSERT_TRUE(a.learn().has_value());
  EXPECT_NE(a.network().online().params().flatten(), b_before);
  EXPECT_EQ(b.network().online().params().flatten(), b_before);
  EXPECT_FALSE(b.learn().has_value());
}

TEST(Checkpoint, RoundTrip) {
  const auto dir = testutil::scratch_dir("ckpt");
  for (Variant v : {Variant::DQN, Variant::DuelingDDQN}) {
    QNetwork net(6, 4, {8, 5}, architecture_of(v), 21);
    ReplayBuffer buf(64);
    Rng rng(4);
    for (int i = 0; i < 40; ++i) buf.store(transition(std::vector<double>(6, 0.1 * i), i % 4, 1.0, std::vector<double>(6, 0.2)));
    AgentConfig cfg;
    cfg.variant = v;
    for (int i = 0; i < 7; ++i) train_step(net, buf, cfg, rng);
    const std::string prefix = (dir / to_string(v)).string();
    save_checkpoint(net, v, prefix);
    const auto back = load_checkpoint(prefix);
    EXPECT_EQ(back.online().params().flatten(), net.online().params().flatten());
    EXPECT_EQ(back.target().params().flatten(), net.target().params().flatten());
    EXPECT_EQ(back.updates(), 7u);
    EXPECT_EQ(back.online().architecture(), architecture_of(v));
    EXPECT_EQ(std::filesystem::file_size(prefix + ".bin"), 2 * 8 * net.online().params().size());
  }
}
