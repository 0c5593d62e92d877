#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "riskgrad/mdp/exact.hpp"
#include "riskgrad/risk/cvar.hpp"

namespace riskgrad::risk {

using mdp::TabularMdp;
using mdp::TabularPolicy;

/// gamma^horizon * R_max / (1 - gamma): the most a truncated return can miss.
inline double truncation_tolerance(const TabularMdp& mdp, std::size_t horizon) {
  return std::pow(mdp.gamma(), static_cast<double>(horizon)) * mdp.return_bound();
}

/// Exact truncated return distribution as weighted samples.
///
/// Mass pruned by the enumeration floor is placed at +R_max/(1-gamma), which
/// can only raise the lower-tail risk, so inequality checks stay sound.
inline WeightedSamples enumerated_returns(const TabularMdp& mdp, const TabularPolicy& policy,
                                          std::size_t horizon, const mdp::EnumerationOptions& options) {
  auto dist = mdp::return_distribution(mdp, policy, horizon, options);
  if (dist.stats.dropped_mass > 0.0) {
    dist.returns.push_back(mdp.return_bound());
    dist.probabilities.push_back(dist.stats.dropped_mass);
  }
  return {std::move(dist.returns), std::move(dist.probabilities)};
}

/// Exact enumeration: nothing pruned.
inline mdp::EnumerationOptions exact_enumeration() { return {0.0, 10'000'000}; }

struct Theorem3Check {
  /// -CVaR_alpha(-D) over enumerated trajectory returns.
  double return_side = 0.0;
  /// -CVaR_alpha(-V(s0)) with s0 ~ mu and exact values.
  double value_side = 0.0;
  double tolerance = 0.0;
  bool holds() const { return return_side <= value_side + tolerance; }
};

inline Theorem3Check check_theorem3(const TabularMdp& mdp, const TabularPolicy& policy,
                                    const RiskLevel& level, std::size_t horizon,
                                    const mdp::EnumerationOptions& options = exact_enumeration()) {
  const auto returns = enumerated_returns(mdp, policy, horizon, options);
  const auto values = mdp::value_function(mdp, policy);
  std::vector<double> mu(mdp.initial_dist().begin(), mdp.initial_dist().end());
  const WeightedSamples start_values(values.values, std::move(mu));
  return {lower_tail_return_risk(returns, level), lower_tail_return_risk(start_values, level),
          truncation_tolerance(mdp, horizon)};
}

/// Truncated expected return and lower-tail risk of one policy.
struct PolicyRiskProfile {
  std::vector<std::size_t> actions;
  double expected_return = 0.0;
  double lower_tail_risk = 0.0;
};

/// Every deterministic policy of the MDP with its exact truncated statistics.
inline std::vector<PolicyRiskProfile> deterministic_policy_profiles(
    const TabularMdp& mdp, const RiskLevel& level, std::size_t horizon,
    const mdp::EnumerationOptions& options = exact_enumeration()) {
  const std::size_t S = mdp.n_states();
  const std::size_t A = mdp.n_actions();
  double count = std::pow(static_cast<double>(A), static_cast<double>(S));
  if (count > static_cast<double>(options.node_budget)) throw mdp::EnumerationBudgetExceeded(options.node_budget);

  std::vector<PolicyRiskProfile> out;
  std::vector<std::size_t> choice(S, 0);
  while (true) {
    const auto policy = TabularPolicy::deterministic(A, choice);
    const auto returns = enumerated_returns(mdp, policy, horizon, options);
    out.push_back({choice, returns.mean(), lower_tail_return_risk(returns, level)});
    std::size_t pos = 0;
    while (pos < S && ++choice[pos] == A) choice[pos++] = 0;
    if (pos == S) break;
  }
  return out;
}

struct Theorem4Check {
  /// Best truncated J among policies with lower-tail risk >= beta; -inf if none.
  double j_constrained = -std::numeric_limits<double>::infinity();
  double j_star = 0.0;
  /// (j_star - alpha M) / (1 - alpha).
  double bound = 0.0;
  double tolerance = 0.0;
  bool feasible = false;
  bool holds() const { return !feasible || j_constrained >= bound - tolerance; }
};

inline Theorem4Check check_theorem4(const std::vector<PolicyRiskProfile>& profiles,
                                    const TabularMdp& mdp, const RiskLevel& level, double beta,
                                    std::size_t horizon) {
  Theorem4Check out;
  out.j_star = -std::numeric_limits<double>::infinity();
  for (const auto& p : profiles) {
    out.j_star = std::max(out.j_star, p.expected_return);
    if (p.lower_tail_risk >= beta) {
      out.feasible = true;
      out.j_constrained = std::max(out.j_constrained, p.expected_return);
    }
  }
  const double m = mdp.return_bound();
  out.bound = (out.j_star - level.alpha() * m) / (1.0 - level.alpha());
  out.tolerance = truncation_tolerance(mdp, horizon);
  return out;
}

inline Theorem4Check check_theorem4(const TabularMdp& mdp, const RiskLevel& level, double beta,
                                    std::size_t horizon) {
  return check_theorem4(deterministic_policy_profiles(mdp, level, horizon), mdp, level, beta, horizon);
}

}  // namespace riskgrad::risk
