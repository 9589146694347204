#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <vector>

#include "lbast/policy.hpp"

using namespace lbast;

namespace {

std::vector<Policy> all_policies() {
  return {Policy::random(), Policy::sq(),    Policy::sq_rtb(),  Policy::sq_re(2.0), Policy::sq_rtb_re(2.0),
          Policy::las(),    Policy::las_qtb(), Policy::re(2.0), Policy::lew()};
}

/// Indices of the minimum-score servers among observations.
std::vector<int> argmin_set(const ScoreTable& t, const std::vector<ServerObservation>& obs) {
  std::vector<int> out;
  AversionScore best;
  for (int i = 0; i < static_cast<int>(obs.size()); ++i) {
    const auto s = t(obs[static_cast<std::size_t>(i)].k, obs[static_cast<std::size_t>(i)].ell);
    if (out.empty() || s < best) {
      out = {i};
      best = s;
    } else if (s == best) {
      out.push_back(i);
    }
  }
  return out;
}

}  // namespace

TEST(LayerGrid, LayerOf) {
  const auto g = LayerGrid::uniform(0.1, 30);
  EXPECT_EQ(g.layer_of(1.0, false), 0);
  EXPECT_EQ(g.layer_of(0.0, true), 1);
  EXPECT_EQ(g.layer_of(0.05, true), 1);
  EXPECT_EQ(g.layer_of(0.1, true), 1);
  EXPECT_EQ(g.layer_of(0.1000001, true), 2);
  EXPECT_EQ(g.layer_of(0.3, true), 3);
  EXPECT_EQ(g.layer_of(3.0, true), 30);
  EXPECT_EQ(g.layer_of(3.01, true), 31);
  EXPECT_EQ(g.layer_of(1e9, true), 31);
}

TEST(LayerGrid, GeneralThresholds) {
  const LayerGrid g({0.5, 2.0, 7.0});
  EXPECT_EQ(g.r(), 3);
  EXPECT_EQ(g.layers(), 4);
  EXPECT_EQ(g.layer_of(0.5, true), 1);
  EXPECT_EQ(g.layer_of(0.6, true), 2);
  EXPECT_EQ(g.layer_of(7.0, true), 3);
  EXPECT_EQ(g.layer_of(7.5, true), 4);
  EXPECT_TRUE(std::isinf(g.width(4)));
  EXPECT_DOUBLE_EQ(g.width(2), 1.5);
  EXPECT_THROW(LayerGrid({1.0, 1.0}), ConfigError);
  EXPECT_THROW(LayerGrid({-1.0}), ConfigError);
}

TEST(LayerGrid, UniformMatchesGeneralOnRandomAges) {
  const auto u = LayerGrid::uniform(0.01, 400);
  const LayerGrid g(u.thresholds());
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> age(0.0, 5.0);
  for (int i = 0; i < 100000; ++i) {
    const double a = age(rng);
    ASSERT_EQ(u.layer_of(a, true), g.layer_of(a, true)) << a;
  }
  for (int k = 1; k <= 400; ++k) ASSERT_EQ(u.layer_of(u.threshold(k), true), k);
}

TEST(Aversion, ScoreTuples) {
  const auto g = LayerGrid::uniform(0.1, 30);
  EXPECT_EQ(aversion(Policy::sq_rtb(), {2, 3}, g), AversionScore::of(3, 2));
  // T = c_20 = 2.
  const auto p = Policy::sq_rtb_re(2.0);
  EXPECT_EQ(aversion(p, {20, 1}, g), AversionScore::of(0, 1, 20));
  EXPECT_EQ(aversion(p, {21, 1}, g), AversionScore::of(1, 1, 21));
  EXPECT_EQ(aversion(Policy::las(), {7, 4}, g), AversionScore::of(7));
  EXPECT_EQ(aversion(Policy::las_qtb(), {7, 4}, g), AversionScore::of(7, 4));
  EXPECT_EQ(aversion(Policy::sq(), {7, 4}, g), AversionScore::of(4));
  EXPECT_EQ(aversion(Policy::random(), {7, 4}, g), AversionScore::of(0));
}

TEST(Aversion, IdleIsZeroAndBusyIsNot) {
  const PhaseType ph = fit_merlang(10, 0.5, 1);
  const auto g = LayerGrid::uniform(0.5, 10);
  for (const auto& pol : all_policies()) {
    const auto grid = pol.single_threshold() ? LayerGrid({pol.threshold}) : g;
    const ScoreTable t(pol, grid, &ph);
    EXPECT_TRUE(t(0, 0).is_zero()) << to_string(pol);
    if (pol.kind == PolicyKind::Random) continue;
    for (int k = 1; k <= grid.layers(); ++k)
      for (int ell = 1; ell < 6; ++ell) {
        EXPECT_FALSE(t(k, ell).is_zero()) << to_string(pol);
        EXPECT_LT(t(0, 0), t(k, ell)) << to_string(pol);
      }
  }
}

TEST(Aversion, NondecreasingInLayer) {
  const PhaseType ph = fit_merlang(10, 0.5, 1);
  const auto g = LayerGrid::uniform(0.5, 10);
  for (const auto& pol : all_policies()) {
    const auto grid = pol.single_threshold() ? LayerGrid({pol.threshold}) : g;
    const ScoreTable t(pol, grid, &ph);
    for (int ell = 1; ell < 6; ++ell)
      for (int k = 1; k < grid.layers(); ++k) EXPECT_LE(t(k, ell), t(k + 1, ell)) << to_string(pol);
  }
}

TEST(Aversion, LewMemorylessIsQueueLength) {
  const PhaseType ph = exponential(1.0);
  const auto g = LayerGrid::uniform(0.2, 15);
  const ScoreTable t(Policy::lew(), g, &ph);
  for (int k = 1; k <= g.layers(); ++k)
    for (int ell = 1; ell < 8; ++ell) EXPECT_NEAR(t(k, ell).v[0], ell, 1e-12);
}

TEST(Aversion, LewUsesResidualAtUpperEdge) {
  const PhaseType ph = fit_merlang(10, 0.5, 1);
  const auto g = LayerGrid::uniform(0.5, 6);
  const ScoreTable t(Policy::lew(), g, &ph);
  for (int k = 1; k <= g.r(); ++k) EXPECT_NEAR(t.lew_residual(k), residual_mean(ph, g.threshold(k)), 1e-10);
  EXPECT_NEAR(t.lew_residual(g.layers()), residual_mean(ph, g.threshold(g.r())), 1e-10);
  EXPECT_NEAR(t(3, 2).v[0], 1.0 + residual_mean(ph, 1.5), 1e-10);
}

TEST(Aversion, LewNeedsJobSize) { EXPECT_THROW(ScoreTable(Policy::lew(), LayerGrid::uniform(0.1, 3)), ConfigError); }

TEST(Aversion, LewWithExponentialPicksLikeSq) {
  const PhaseType ph = exponential(1.0);
  const auto g = LayerGrid::uniform(0.3, 12);
  const ScoreTable lew(Policy::lew(), g, &ph);
  const ScoreTable sq(Policy::sq(), g, &ph);
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> kd(0, g.layers()), ld(1, 6);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<ServerObservation> obs(5);
    for (auto& o : obs) {
      o.k = kd(rng);
      o.ell = o.k == 0 ? 0 : ld(rng);
    }
    EXPECT_EQ(argmin_set(lew, obs), argmin_set(sq, obs));
  }
}

TEST(Aversion, SqReEqualsLasQtbWithOneLayer) {
  const LayerGrid g({2.0});
  const ScoreTable a(Policy::sq_re(2.0), g), b(Policy::las_qtb(), g);
  for (int k1 = 0; k1 <= 2; ++k1)
    for (int l1 = 0; l1 < 5; ++l1)
      for (int k2 = 0; k2 <= 2; ++k2)
        for (int l2 = 0; l2 < 5; ++l2) {
          if ((k1 == 0) != (l1 == 0) || (k2 == 0) != (l2 == 0)) continue;
          EXPECT_EQ(a(k1, l1) < a(k2, l2), b(k1, l1) < b(k2, l2));
          EXPECT_EQ(a(k1, l1) == a(k2, l2), b(k1, l1) == b(k2, l2));
        }
}

TEST(Aversion, ReIsLasWithOneLayer) {
  const LayerGrid g({2.0});
  const ScoreTable a(Policy::re(2.0), g), b(Policy::las(), g);
  EXPECT_EQ(a(0, 0), b(0, 0));
  for (int k = 1; k <= 2; ++k)
    for (int l = 1; l < 5; ++l) EXPECT_EQ(a(k, l), b(k, l));
}

TEST(Compare, Lexicographic) {
  EXPECT_EQ(compare(AversionScore::of(1, 2), AversionScore::of(1, 3)), std::weak_ordering::less);
  EXPECT_EQ(compare(AversionScore::of(0), AversionScore::of(0)), std::weak_ordering::equivalent);
  EXPECT_EQ(compare(AversionScore::of(1, 0, 5), AversionScore::of(0, 9, 9)), std::weak_ordering::greater);
  EXPECT_THROW(compare(AversionScore::of(1), AversionScore::of(1, 2)), std::invalid_argument);
}

TEST(PolicyStrings, RoundTrip) {
  for (const auto& p : all_policies()) EXPECT_EQ(parse_policy(to_string(p)), p);
  EXPECT_EQ(parse_policy("sq-re:2.5").threshold, 2.5);
}

TEST(PolicyStrings, Errors) {
  EXPECT_THROW(parse_policy("jsq"), ConfigError);
  EXPECT_THROW(parse_policy("sq-re"), ConfigError);
  EXPECT_THROW(parse_policy("sq-re:x"), ConfigError);
  EXPECT_THROW(parse_policy("sq-re:-1"), ConfigError);
  EXPECT_THROW(parse_policy("lew:2"), ConfigError);
}

TEST(GridFor, ShapesPerPolicy) {
  const PhaseType ph = fit_merlang(10, 0.5, 1);
  EXPECT_EQ(grid_for(Policy::sq(), ph, 0.1).r(), 0);
  EXPECT_EQ(grid_for(Policy::random(), ph, 0.1).r(), 0);
  const auto re = grid_for(Policy::re(2.0), ph, 0.1);
  EXPECT_EQ(re.r(), 1);
  EXPECT_DOUBLE_EQ(re.threshold(1), 2.0);
  const auto las = grid_for(Policy::las(), ph, 0.1);
  EXPECT_LE(survival(ph, las.threshold(las.r())), 1e-3);
  EXPECT_GT(survival(ph, las.threshold(las.r() - 1)), 1e-3);
  EXPECT_EQ(grid_for(Policy::las(), ph, 0.1, 7).r(), 7);
  EXPECT_EQ(grid_for(Policy::las(), ph, 0.1, std::nullopt, 12).r(), 12);
  // SQ-RTB-RE must reach its threshold even with a small override.
  EXPECT_EQ(grid_for(Policy::sq_rtb_re(2.0), ph, 0.1, 5).r(), 20);
  EXPECT_THROW(grid_for(Policy::sq_rtb_re(2.05), ph, 0.1), ConfigError);
}
