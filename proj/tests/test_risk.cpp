#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "oracles.hpp"
#include "riskgrad/mdp/random_instances.hpp"
#include "riskgrad/risk/cvar.hpp"
#include "riskgrad/risk/theorems.hpp"

using namespace riskgrad;
using namespace riskgrad::risk;

namespace {

WeightedSamples uniform(std::vector<double> v) { return WeightedSamples::uniform(std::move(v)); }

WeightedSamples random_samples(Rng& rng) {
  const std::size_t n = 1 + rng.index(30);
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform() < 0.2 ? std::round(rng.uniform(-3, 3)) : rng.uniform(-5, 5);
  if (rng.uniform() < 0.5) return uniform(std::move(v));
  return {std::move(v), mdp::random_distribution(rng, n)};
}

}  // namespace

TEST(RiskLevel, RejectsOutOfRange) {
  EXPECT_THROW(RiskLevel(0.0), std::invalid_argument);
  EXPECT_THROW(RiskLevel(1.0), std::invalid_argument);
  EXPECT_NO_THROW(RiskLevel(0.5));
}

TEST(EmpiricalVar, Examples) {
  EXPECT_EQ(empirical_var(uniform({1, 2, 3, 4}), RiskLevel(0.5)), 2.0);
  EXPECT_EQ(empirical_var(uniform({4, 3, 2, 1}), RiskLevel(0.75)), 3.0);
  for (double a : {0.01, 0.5, 0.99}) EXPECT_EQ(empirical_var(uniform({7, 7, 7}), RiskLevel(a)), 7.0);
  EXPECT_THROW(uniform({}), std::invalid_argument);
}

TEST(EmpiricalCvarTail, Examples) {
  EXPECT_DOUBLE_EQ(empirical_cvar_tail(uniform({1, 2, 3, 4}), RiskLevel(0.5)), 3.0);
  EXPECT_DOUBLE_EQ(empirical_cvar_tail(uniform({2.5, 2.5}), RiskLevel(0.3)), 2.5);
  EXPECT_DOUBLE_EQ(empirical_cvar_tail(uniform({1, 2, 3, 4}), RiskLevel(0.999)), 4.0);
}

TEST(CvarRu, Examples) {
  const auto c = cvar_ru(uniform({3.5, 3.5, 3.5}), RiskLevel(0.4));
  EXPECT_EQ(c.value, 3.5);
  EXPECT_EQ(c.eta_star, 3.5);

  const auto two = cvar_ru(uniform({0, 10}), RiskLevel(0.5));
  EXPECT_DOUBLE_EQ(two.value, 10.0);
  EXPECT_DOUBLE_EQ(two.eta_star, 10.0);
  EXPECT_NEAR(oracle::ru_grid_scan({0, 10}, {0.5, 0.5}, 0.5, -1, 11, 1e-3), 10.0, 1e-9);

  EXPECT_DOUBLE_EQ(cvar_ru(uniform({1, 2, 3, 4}), RiskLevel(0.75)).value, 4.0);
  EXPECT_NEAR(oracle::ru_grid_scan({1, 2, 3, 4}, {0.25, 0.25, 0.25, 0.25}, 0.75, 0, 5, 1e-3), 4.0, 1e-9);
}

TEST(CvarRu, MatchesObjectiveMinimumAtSamplePoints) {
  Rng rng(31);
  for (int i = 0; i < 300; ++i) {
    const auto s = random_samples(rng);
    const RiskLevel level(rng.uniform(0.01, 0.99));
    const auto c = cvar_ru(s, level);
    double best = 1e300;
    for (double eta : s.values()) best = std::min(best, ru_objective(s, level, eta));
    EXPECT_NEAR(c.value, best, 1e-12 * (1 + std::abs(best)));
    EXPECT_NEAR(ru_objective(s, level, c.eta_star), c.value, 1e-12 * (1 + std::abs(best)));
    EXPECT_GE(c.value, empirical_var(s, level) - 1e-12);
    EXPECT_GE(c.value, s.mean() - 1e-12);
  }
}

TEST(CvarRu, AgreesWithTailFormWithoutAtomAtQuantile) {
  // With n uniform atoms and alpha = k/n the quantile splits cleanly.
  const auto s = uniform({5, 1, 4, 2, 3});
  const RiskLevel level(0.6);
  EXPECT_NEAR(cvar_ru(s, level).value, 4.5, 1e-12);
  const auto t = tail_statistic(s, level);
  EXPECT_EQ(t.var, 3.0);
  EXPECT_GE(t.cvar_tail, t.var);
}

TEST(CvarRu, TranslationHomogeneityMonotonicity) {
  Rng rng(33);
  for (int i = 0; i < 500; ++i) {
    const auto s = random_samples(rng);
    const RiskLevel level(rng.uniform(0.01, 0.99));
    const double base = cvar_ru(s, level).value;

    const double c = rng.uniform(-10, 10);
    auto shifted = s.values();
    for (double& x : shifted) x += c;
    EXPECT_NEAR(cvar_ru(WeightedSamples(shifted, s.weights()), level).value, base + c, 1e-12 * 16);

    const double k = rng.uniform(0.1, 10);
    auto scaled = s.values();
    for (double& x : scaled) x *= k;
    EXPECT_NEAR(cvar_ru(WeightedSamples(scaled, s.weights()), level).value, k * base, 1e-12 * 16 * k);

    const RiskLevel higher(std::min(0.999, level.alpha() + rng.uniform(0, 0.3)));
    EXPECT_GE(cvar_ru(s, higher).value, base - 1e-12);
  }
}

TEST(CvarRu, HighAlphaLimitIsMaximum) {
  Rng rng(35);
  for (int i = 0; i < 200; ++i) {
    const auto s = random_samples(rng);
    const double w_min = *std::min_element(s.weights().begin(), s.weights().end());
    const double alpha = std::min(1.0 - 1e-9, 1.0 - w_min + 1e-9);
    const double mx = *std::max_element(s.values().begin(), s.values().end());
    EXPECT_NEAR(cvar_ru(s, RiskLevel(alpha)).value, mx, 1e-12);
  }
}

TEST(LowerTailReturnRisk, Examples) {
  EXPECT_DOUBLE_EQ(lower_tail_return_risk(uniform({2, 2}), RiskLevel(0.3)), 2.0);
  EXPECT_DOUBLE_EQ(lower_tail_return_risk(uniform({1, 3}), RiskLevel(0.5)), 1.0);
  const auto s = uniform({1, 4, 2, 8, -3});
  EXPECT_NEAR(lower_tail_return_risk(s, RiskLevel(1e-12)), s.mean(), 1e-9);
}

TEST(WorstFractionMean, Examples) {
  EXPECT_DOUBLE_EQ(worst_fraction_mean(std::vector<double>{10, 2, 8, 4}, 0.5), 3.0);
  EXPECT_DOUBLE_EQ(worst_fraction_mean(std::vector<double>{10, 2, 8, 4}, 1.0), 6.0);
  EXPECT_THROW(worst_fraction_mean(std::vector<double>{}, 0.5), std::invalid_argument);
}

TEST(Theorem3, DeterministicMdpGivesEquality) {
  const mdp::TabularMdp m(2, 1, {0, 1, 0, 1}, {0.5, 1.0}, 0.8, {1.0, 0.0});
  const auto r = check_theorem3(m, mdp::TabularPolicy::uniform(2, 1), RiskLevel(0.7), 12);
  EXPECT_NEAR(r.return_side, r.value_side, r.tolerance + 1e-12);
  EXPECT_TRUE(r.holds());
}

TEST(Theorem3, PointMassStartValueSideIsExpectedReturn) {
  Rng rng(41);
  mdp::RandomMdpOptions opt;
  opt.n_states = 3;
  opt.gamma = 0.7;
  opt.transition_support = 2;
  opt.point_mass_start = true;
  const auto m = mdp::random_mdp(rng, opt);
  const auto pi = mdp::TabularPolicy::deterministic(2, std::vector<std::size_t>{0, 1, 0});
  const auto r = check_theorem3(m, pi, RiskLevel(0.7), 10);
  EXPECT_NEAR(r.value_side, mdp::value_function(m, pi).expected_return, 1e-12);
  EXPECT_LT(r.return_side, r.value_side);
}

TEST(Theorem3, RandomInstancesHold) {
  Rng rng(43);
  for (int i = 0; i < 20; ++i) {
    mdp::RandomMdpOptions opt;
    opt.n_states = 2 + rng.index(2);
    opt.gamma = rng.uniform(0.5, 0.9);
    opt.transition_support = 2;
    const auto m = mdp::random_mdp(rng, opt);
    const auto pi = mdp::random_policy(rng, opt.n_states, 2);
    for (double a : {0.3, 0.7, 0.9}) EXPECT_TRUE(check_theorem3(m, pi, RiskLevel(a), 7).holds());
  }
}

TEST(Theorem4, VacuousConstraintRecoversUnconstrainedOptimum) {
  Rng rng(45);
  mdp::RandomMdpOptions opt;
  opt.n_states = 3;
  opt.gamma = 0.7;
  const auto m = mdp::random_mdp(rng, opt);
  const RiskLevel level(0.6);
  const auto r = check_theorem4(m, level, -m.return_bound(), 6);
  EXPECT_TRUE(r.feasible);
  EXPECT_EQ(r.j_constrained, r.j_star);
  EXPECT_TRUE(r.holds());
}

TEST(Theorem4, SmallAlphaBoundIsUnconstrainedValue) {
  Rng rng(47);
  mdp::RandomMdpOptions opt;
  opt.n_states = 3;
  const auto m = mdp::random_mdp(rng, opt);
  const RiskLevel level(1e-12);
  const auto profiles = deterministic_policy_profiles(m, level, 5);
  for (const auto& p : profiles) EXPECT_NEAR(p.lower_tail_risk, p.expected_return, 1e-9);
  const auto r = check_theorem4(profiles, m, level, -m.return_bound(), 5);
  EXPECT_NEAR(r.bound, r.j_star, 1e-9);
}

TEST(Theorem4, RandomInstancesOverBetaGrid) {
  Rng rng(49);
  for (int i = 0; i < 5; ++i) {
    mdp::RandomMdpOptions opt;
    opt.n_states = 3;
    opt.gamma = rng.uniform(0.5, 0.9);
    const auto m = mdp::random_mdp(rng, opt);
    const RiskLevel level(rng.uniform(0.1, 0.9));
    const auto profiles = deterministic_policy_profiles(m, level, 6);
    EXPECT_EQ(profiles.size(), 8u);
    const double M = m.return_bound();
    for (int b = 0; b <= 10; ++b) {
      const auto r = check_theorem4(profiles, m, level, -M + 2 * M * b / 10.0, 6);
      EXPECT_TRUE(r.holds()) << "beta index " << b;
      if (!r.feasible) {
        EXPECT_TRUE(std::isinf(r.j_constrained));
      }
    }
  }
}
