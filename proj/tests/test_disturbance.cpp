#include <gtest/gtest.h>

#include <cmath>

#include "riskgrad/disturbance/disturbance.hpp"

using namespace riskgrad;
using namespace riskgrad::disturbance;
using mdp::RandomMdpOptions;

namespace {

struct Instance {
  TabularMdp mdp;
  TabularPolicy policy;
};

Instance random_instance(Rng& rng) {
  RandomMdpOptions opt;
  opt.n_states = 2 + rng.index(5);
  opt.n_actions = 1 + rng.index(3);
  opt.gamma = rng.uniform(0.5, 0.95);
  auto m = mdp::random_mdp(rng, opt);
  auto pi = mdp::random_policy(rng, opt.n_states, opt.n_actions);
  return {std::move(m), std::move(pi)};
}

}  // namespace

TEST(TvDistance, Examples) {
  const std::vector<double> p{0.5, 0.5};
  EXPECT_DOUBLE_EQ(tv_distance(p, p), 0.0);
  EXPECT_DOUBLE_EQ(tv_distance(std::vector<double>{1, 0}, std::vector<double>{0, 1}), 1.0);
  EXPECT_DOUBLE_EQ(tv_distance(p, std::vector<double>{0.75, 0.25}), 0.25);
  EXPECT_THROW(tv_distance(p, std::vector<double>{1.0}), std::invalid_argument);
}

TEST(Lemma1, SingleAbsorbingState) {
  const TabularMdp m(1, 1, {1.0}, {1.0}, 0.3, {1.0});
  EXPECT_LE(check_lemma1(m, TabularPolicy::uniform(1, 1)), 1e-15);
}

TEST(Lemma1, RandomInstancesIncludingSmallGamma) {
  Rng rng(2);
  for (int i = 0; i < 100; ++i) {
    auto inst = random_instance(rng);
    EXPECT_LE(check_lemma1(inst.mdp, inst.policy), 1e-10);
  }
  for (int i = 0; i < 20; ++i) {
    RandomMdpOptions opt;
    opt.n_states = 5;
    opt.gamma = 0.01;
    const auto m = mdp::random_mdp(rng, opt);
    EXPECT_LE(check_lemma1(m, mdp::random_policy(rng, 5, 2)), 1e-10);
  }
}

TEST(TransitionTheorem, NoDisturbanceIsZero) {
  Rng rng(4);
  auto inst = random_instance(rng);
  const TransitionDisturbance same(inst.mdp, inst.mdp.transition_tensor());
  const auto r = check_transition_theorem(inst.mdp, inst.policy, same);
  EXPECT_NEAR(r.lhs_exact, 0.0, 1e-12);
  EXPECT_NEAR(r.rhs_exact, 0.0, 1e-12);
  EXPECT_EQ(r.bound, 0.0);
}

TEST(TransitionTheorem, ConstantRewardHasZeroVfrAndNoLoss) {
  Rng rng(5);
  auto inst = random_instance(rng);
  const auto m = inst.mdp.with_reward(std::vector<double>(inst.mdp.reward_tensor().size(), 0.7));
  const auto dist = random_transition_disturbance(rng, m, 0.8);
  const auto r = check_transition_theorem(m, inst.policy, dist);
  EXPECT_NEAR(r.lhs_exact, 0.0, 1e-12);
  EXPECT_NEAR(r.bound, 0.0, 1e-12);
}

TEST(TransitionTheorem, IdentityAndBoundOnRandomInstances) {
  Rng rng(6);
  for (int i = 0; i < 100; ++i) {
    auto inst = random_instance(rng);
    const auto dist = random_transition_disturbance(rng, inst.mdp, rng.uniform(0.01, 3.0));
    const auto r = check_transition_theorem(inst.mdp, inst.policy, dist);
    EXPECT_LE(r.identity_residual, 1e-8);
    EXPECT_GE(r.slack, -1e-10);
    EXPECT_LE(dist.eps_p(), 1.0);
  }
}

TEST(TransitionTheorem, SwappingRolesFlipsSign) {
  Rng rng(8);
  for (int i = 0; i < 20; ++i) {
    auto inst = random_instance(rng);
    const auto dist = random_transition_disturbance(rng, inst.mdp, 1.0);
    const auto forward = check_transition_theorem(inst.mdp, inst.policy, dist);
    const TransitionDisturbance back(dist.perturbed_mdp(), inst.mdp.transition_tensor());
    const auto reverse = check_transition_theorem(dist.perturbed_mdp(), inst.policy, back);
    EXPECT_NEAR(forward.lhs_exact, -reverse.lhs_exact, 1e-12);
    EXPECT_LE(reverse.identity_residual, 1e-8);
  }
}

TEST(TransitionTheorem, SupportViolationRejected) {
  const TabularMdp m(2, 1, {0.5, 0.5, 0.5, 0.5}, {0.0, 1.0}, 0.9, {1.0, 0.0});
  EXPECT_THROW(TransitionDisturbance(m, {1.0, 0.0, 0.5, 0.5}), SupportViolation);
}

TEST(ObservationTheorem, IdentityMapIsZero) {
  Rng rng(10);
  auto inst = random_instance(rng);
  std::vector<std::size_t> nu(inst.mdp.n_states());
  std::iota(nu.begin(), nu.end(), 0);
  const ObservationAdversary adv(inst.policy, nu);
  const auto r = check_observation_theorem(inst.mdp, inst.policy, adv);
  EXPECT_EQ(r.lhs_exact, 0.0);
  EXPECT_NEAR(r.rhs_exact, 0.0, 1e-15);
  EXPECT_EQ(r.bound, 0.0);
}

TEST(ObservationTheorem, StateIndependentPolicyIsImmune) {
  Rng rng(12);
  RandomMdpOptions opt;
  opt.n_states = 5;
  opt.n_actions = 3;
  const auto m = mdp::random_mdp(rng, opt);
  const auto row = mdp::random_distribution(rng, 3);
  std::vector<double> probs;
  for (int s = 0; s < 5; ++s) probs.insert(probs.end(), row.begin(), row.end());
  const TabularPolicy pi(5, 3, probs);
  const ObservationAdversary adv(pi, random_permutation_map(rng, 5));
  const auto r = check_observation_theorem(m, pi, adv);
  EXPECT_EQ(r.lhs_exact, 0.0);
  EXPECT_EQ(r.bound, 0.0);
}

TEST(ObservationTheorem, IdentityAndBoundOnRandomInstances) {
  Rng rng(14);
  for (int i = 0; i < 100; ++i) {
    auto inst = random_instance(rng);
    const std::size_t S = inst.mdp.n_states();
    const auto nu = i % 2 == 0 ? random_permutation_map(rng, S) : random_local_map(rng, S, 0.5);
    const ObservationAdversary adv(inst.policy, nu);
    const auto r = check_observation_theorem(inst.mdp, inst.policy, adv);
    EXPECT_LE(r.identity_residual, 1e-8);
    EXPECT_GE(r.slack, -1e-10);
    const auto dom = check_bound_dominance(inst.mdp, inst.policy, adv);
    EXPECT_NEAR(dom.ours, r.bound, 1e-15);
    EXPECT_LE(dom.ours, dom.samdp + 1e-12);
  }
}

TEST(ObservationTheorem, SupportViolationRejected) {
  const TabularMdp m(2, 2, {1, 0, 0, 1, 1, 0, 0, 1}, {0, 1, 1, 0}, 0.9, {0.5, 0.5});
  const TabularPolicy pi(2, 2, {1.0, 0.0, 0.5, 0.5});
  EXPECT_FALSE(observation_support_ok(pi, std::vector<std::size_t>{1, 0}));
  const ObservationAdversary adv(pi, {1, 0});
  EXPECT_THROW(check_observation_theorem(m, pi, adv), SupportViolation);
}

TEST(BoundDominance, ZeroEpsilonGivesZero) {
  Rng rng(16);
  auto inst = random_instance(rng);
  std::vector<std::size_t> nu(inst.mdp.n_states());
  std::iota(nu.begin(), nu.end(), 0);
  const auto dom = check_bound_dominance(inst.mdp, inst.policy, ObservationAdversary(inst.policy, nu));
  EXPECT_EQ(dom.ours, 0.0);
  EXPECT_EQ(dom.samdp, 0.0);
}

TEST(BoundDominance, WorstCaseVfrAttainsEquality) {
  // Two absorbing states with rewards +1 and -1: V = +-1/(1-gamma), VFR = 2 R_max/(1-gamma).
  const double g = 0.8;
  const TabularMdp m(2, 2, {1, 0, 1, 0, 0, 1, 0, 1}, {1, 1, -1, -1}, g, {0.5, 0.5});
  const TabularPolicy pi(2, 2, {0.7, 0.3, 0.3, 0.7});
  const ObservationAdversary adv(pi, {1, 0});
  EXPECT_NEAR(mdp::value_function(m, pi).vfr, 2.0 / (1.0 - g), 1e-12);
  const auto dom = check_bound_dominance(m, pi, adv);
  EXPECT_NEAR(dom.ours, dom.samdp, 1e-12);
  EXPECT_GT(dom.ours, 0.0);
}

TEST(JointBounds, UnitRewardScaleMatchesClosedForm) {
  Rng rng(18);
  for (int i = 0; i < 20; ++i) {
    auto inst = random_instance(rng);
    auto rewards = inst.mdp.reward_tensor();
    const double scale = inst.mdp.reward_bound();
    for (double& r : rewards) r /= scale;
    const auto m = inst.mdp.with_reward(rewards);
    ASSERT_NEAR(m.reward_bound(), 1.0, 1e-15);
    const ObservationAdversary adv(inst.policy, random_permutation_map(rng, m.n_states()));
    const auto r = check_observation_theorem(m, inst.policy, adv);
    const double g = m.gamma();
    const double vfr = mdp::value_function(m, inst.policy).vfr;
    EXPECT_DOUBLE_EQ(r.bound, g / (1 - g) * adv.eps_pi() * vfr + 2 / (1 - g) * adv.eps_pi());
  }
}
