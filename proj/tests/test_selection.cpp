#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "featgen/selection.hpp"
#include "test_util.hpp"

using namespace featgen;

namespace {

double sum(const ImportanceVector& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

// Target y = x1, plus a shuffled copy of y and six noise columns.
DataTable signal_and_shuffle(std::size_t n, std::uint64_t seed) {
  auto t = testutil::gaussian_table(n, seed, [](const DataTable& d, std::size_t i, Rng&) { return d.columns[0][i]; });
  Column shuffled = t.target;
  Rng rng(seed + 1);
  rng.shuffle(shuffled);
  t.columns[1] = shuffled;
  return t;
}

// `base` base features followed by `gen` generated ones, target driven by a few of each.
DataTable mixed_table(std::size_t base, std::size_t gen, std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t n = 120;
  DataTable t;
  t.target.assign(n, 0.0);
  for (std::size_t j = 0; j < base + gen; ++j) {
    Column c(n);
    for (auto& v : c) v = rng.normal();
    const bool is_base = j < base;
    t.add_feature(is_base ? "b" + std::to_string(j) : "g" + std::to_string(j), std::move(c), is_base ? 0 : 1 + static_cast<int>(j % 3));
  }
  for (std::size_t i = 0; i < n; ++i)
    t.target[i] = t.columns[0][i] + 2 * t.columns[base][i] - t.columns[base + 1][i] + 0.1 * rng.normal();
  return t;
}

std::set<std::string> base_names(const DataTable& t, std::size_t base) {
  return std::set<std::string>(t.feature_names.begin(), t.feature_names.begin() + static_cast<std::ptrdiff_t>(base));
}

}  // namespace

TEST(Selectors, NamesRoundTrip) {
  for (auto k : kAllSelectors) EXPECT_EQ(parse_selector(to_string(k)), k);
  EXPECT_EQ(std::string(to_string(SelectorKind::None)), "none");
  EXPECT_THROW(parse_selector("pca"), Error);
}

TEST(MutualInformation, IdenticalBalancedBinaryIsLn2) {
  std::vector<double> y(200);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<double>(i % 2);
  EXPECT_NEAR(mutual_information(y, y, TaskKind::Classification, kDefaultBins, 0), std::log(2.0), 1e-6);
}

TEST(MutualInformation, PluginMatchesHandTable) {
  // Joint counts {(0,0):2, (0,1):1, (1,1):1} over n = 4.
  const std::vector<int> a{0, 0, 0, 1}, b{0, 0, 1, 1};
  const double expected = 0.5 * std::log(0.5 / (0.75 * 0.5)) + 0.25 * std::log(0.25 / (0.75 * 0.5)) +
                          0.25 * std::log(0.25 / (0.25 * 0.5));
  EXPECT_NEAR(plugin_mutual_information(a, b), expected, 1e-15);
}

TEST(MutualInformation, ShuffledFeatureIsNearZero) {
  Rng rng(77);
  double worst = 0.0, total = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> y(1000);
    for (auto& v : y) v = rng.normal();
    auto x = y;
    rng.shuffle(x);
    const double mi = mutual_information(x, y, TaskKind::Regression, 10, 0);
    worst = std::max(worst, mi);
    total += mi;
  }
  // Plug-in bias for a 10x10 table is about 81 / 2000 = 0.0405 nats.
  EXPECT_LE(total / 100.0, 0.05);
  EXPECT_LE(worst, 0.08);
}

TEST(MutualInformation, ConstantFeatureIsZero) {
  std::vector<double> x(50, 3.0), y(50);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<double>(i);
  EXPECT_EQ(mutual_information(x, y, TaskKind::Regression, 10, 0), 0.0);
}

TEST(MutualInformation, Symmetric) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int> a(300), b(300);
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i] = static_cast<int>(rng.below(4));
      b[i] = rng.uniform() < 0.5 ? a[i] : static_cast<int>(rng.below(6));
    }
    EXPECT_NEAR(plugin_mutual_information(a, b), plugin_mutual_information(b, a), 1e-12);
  }
}

TEST(Bins, EqualFrequencyWithTies) {
  const std::vector<double> v{5, 1, 3, 2, 4, 6, 8, 7, 9, 10};
  const auto codes = equal_frequency_bins(v, 5);
  EXPECT_EQ(codes, (std::vector<int>{2, 0, 1, 0, 1, 2, 3, 3, 4, 4}));
  const auto tied = equal_frequency_bins(std::vector<double>{1, 1, 1, 1}, 2);
  EXPECT_TRUE(std::all_of(tied.begin(), tied.end(), [&](int c) { return c == tied[0]; }));
}

TEST(Rank, NoneIsUniform) {
  DataTable t;
  t.target = {1, 2, 3};
  for (int j = 0; j < 4; ++j) t.add_feature("f" + std::to_string(j), {1, 2, 3}, 0);
  EXPECT_EQ(rank_features(t, SelectorKind::None, 0), (ImportanceVector{0.25, 0.25, 0.25, 0.25}));
}

TEST(Rank, KBestPrefersSignalOverShuffle) {
  const auto t = signal_and_shuffle(500, 3);
  const auto imp = rank_features(t, SelectorKind::KBestMI, 0);
  EXPECT_GT(imp[0], 10 * imp[1]);
}

TEST(Rank, EveryKindIsNormalizedAndFindsTheSignal) {
  const auto t = mixed_table(4, 8, 1);
  for (auto kind : kAllSelectors) {
    const auto imp = rank_features(t, kind, 7);
    ASSERT_EQ(imp.size(), t.features()) << to_string(kind);
    for (double v : imp) EXPECT_GE(v, 0.0);
    EXPECT_NEAR(sum(imp), 1.0, 1e-9) << to_string(kind);
    if (kind == SelectorKind::None) continue;
    EXPECT_EQ(importance_order(imp)[0], 4u) << to_string(kind);
  }
}

TEST(Rank, DegenerateTarget) {
  DataTable t;
  t.target.assign(20, 1.0);
  t.add_feature("f", Column(20, 2.0), 0);
  for (auto kind : kAllSelectors) {
    if (kind == SelectorKind::None) continue;
    EXPECT_THROW(rank_features(t, kind, 0), Error) << to_string(kind);
  }
}

TEST(Rank, Deterministic) {
  const auto t = mixed_table(4, 8, 2);
  for (auto kind : kAllSelectors) EXPECT_EQ(rank_features(t, kind, 3), rank_features(t, kind, 3)) << to_string(kind);
}

TEST(Prune, UnderCapUnchanged) {
  const auto t = mixed_table(6, 2, 1);
  const auto r = prune(t, SelectorKind::KBestMI, 10, base_names(t, 6), 0);
  EXPECT_FALSE(r.active);
  EXPECT_EQ(r.table.feature_names, t.feature_names);
}

TEST(Prune, KeepsBasePlusTopGenerated) {
  const auto t = mixed_table(7, 5, 2);
  const auto r = prune(t, SelectorKind::KBestMI, 10, base_names(t, 7), 0);
  ASSERT_TRUE(r.active);
  EXPECT_EQ(r.table.features(), 10u);
  EXPECT_EQ(r.dropped.size(), 2u);
  for (std::size_t j = 0; j < 7; ++j) EXPECT_TRUE(r.table.has_feature(t.feature_names[j]));
  // The survivors are the three highest-ranked generated features.
  std::vector<std::size_t> gen{7, 8, 9, 10, 11};
  std::stable_sort(gen.begin(), gen.end(), [&](std::size_t a, std::size_t b) { return r.importance[a] > r.importance[b]; });
  for (std::size_t i = 0; i < 3; ++i) EXPECT_TRUE(r.table.has_feature(t.feature_names[gen[i]]));
}

TEST(Prune, NoneDisablesTheCap) {
  Rng rng(1);
  DataTable t;
  t.target.assign(20, 0.0);
  for (auto& v : t.target) v = rng.normal();
  for (int j = 0; j < 500; ++j) {
    Column c(20);
    for (auto& v : c) v = rng.normal();
    t.add_feature("f" + std::to_string(j), std::move(c), j < 8 ? 0 : 1);
  }
  const auto r = prune(t, SelectorKind::None, 50, {}, 0);
  EXPECT_EQ(r.table.features(), 500u);
  EXPECT_FALSE(r.active);
}

TEST(Prune, TiesPreferOlderThenSmallerName) {
  DataTable t;
  t.target = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  const Column same{1, 1, 1, 1, 1, 2, 2, 2, 2, 2};
  t.add_feature("base", {1, 2, 3, 4, 5, 6, 7, 8, 9, 10}, 0);
  t.add_feature("zeta", same, 1);
  t.add_feature("beta", same, 2);
  t.add_feature("alpha", same, 2);
  const auto r = prune(t, SelectorKind::KBestMI, 3, {"base"}, 0);
  EXPECT_EQ(r.table.feature_names, (std::vector<std::string>{"base", "zeta", "alpha"}));
  EXPECT_EQ(r.dropped, (std::vector<std::string>{"beta"}));
}

TEST(Prune, PropertiesAcrossKinds) {
  Rng rng(12);
  for (int trial = 0; trial < 6; ++trial) {
    const std::size_t base = 3 + rng.below(5), gen = 2 + rng.below(20);
    const auto t = mixed_table(base, gen, rng.next());
    const std::size_t cap = base + rng.below(gen);
    for (auto kind : kAllSelectors) {
      const auto r = prune(t, kind, cap, base_names(t, base), 4);
      if (kind != SelectorKind::None) {
        EXPECT_EQ(r.table.features(), std::min(cap, t.features())) << to_string(kind);
      }
      for (std::size_t j = 0; j < base; ++j) EXPECT_TRUE(r.table.has_feature(t.feature_names[j]));
      EXPECT_EQ(r.table.features() + r.dropped.size(), t.features());
    }
  }
}

TEST(Prune, CapBelowProtectedIsAConfigError) {
  const auto t = mixed_table(5, 5, 1);
  try {
    prune(t, SelectorKind::KBestMI, 4, base_names(t, 5), 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ConfigError);
  }
}

TEST(Utilization, Examples) {
  const std::set<std::string> base{"a", "b", "c"};
  const std::vector<std::string> top{"a", "g1", "b", "g2", "c"};
  const auto u = utilization(top, base, 0.0);
  EXPECT_NEAR(u.proportion, 0.4, 1e-8);
  EXPECT_EQ(u.proportion, 2.0 / (5.0 + 1e-8));
  EXPECT_EQ(u.weighted, 0.5 * u.proportion);

  const std::vector<std::string> all_gen{"g1", "g2"};
  const auto big = utilization(all_gen, base, 1e6);
  EXPECT_NEAR(big.weighted, big.proportion, 1e-12);
  EXPECT_LT(big.proportion, 1.0);
  EXPECT_EQ(utilization(std::vector<std::string>{}, base, 0.3).proportion, 0.0);
}

TEST(Utilization, TopKNames) {
  DataTable t;
  t.target = {1, 2};
  for (const char* n : {"a", "b", "c"}) t.add_feature(n, {1, 2}, 0);
  const ImportanceVector imp{0.2, 0.5, 0.3};
  EXPECT_EQ(top_k_names(t, imp, 2), (std::vector<std::string>{"b", "c"}));
  EXPECT_EQ(top_k_names(t, imp, 10).size(), 3u);
}
