#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "riskgrad/core/random.hpp"
#include "riskgrad/mdp/exact.hpp"
#include "riskgrad/mdp/random_instances.hpp"
#include "riskgrad/mdp/tabular_mdp.hpp"

namespace riskgrad::disturbance {

using mdp::TabularMdp;
using mdp::TabularPolicy;

class SupportViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Total variation distance, half the L1 distance.
inline double tv_distance(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw std::invalid_argument("tv_distance: dimension mismatch");
  double l1 = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) l1 += std::abs(p[i] - q[i]);
  return std::clamp(0.5 * l1, 0.0, 1.0);
}

/// Alternative transition kernel P-hat for the same state/action spaces.
class TransitionDisturbance {
 public:
  /// Validates P-hat and the support condition supp P(.|s,a) within supp P-hat(.|s,a).
  TransitionDisturbance(const TabularMdp& nominal, std::vector<double> perturbed)
      : perturbed_(nominal.with_transition(std::move(perturbed))) {
    for (std::size_t s = 0; s < nominal.n_states(); ++s)
      for (std::size_t a = 0; a < nominal.n_actions(); ++a) {
        const auto p = nominal.next_state_dist(s, a);
        const auto q = perturbed_.next_state_dist(s, a);
        for (std::size_t next = 0; next < p.size(); ++next)
          if (p[next] > 0.0 && q[next] == 0.0)
            throw SupportViolation("TransitionDisturbance: P-hat misses support of P at (" +
                                   std::to_string(s) + ", " + std::to_string(a) + ")");
        eps_p_ = std::max(eps_p_, tv_distance(p, q));
      }
  }

  /// The disturbed MDP M-hat (same R, gamma, mu).
  const TabularMdp& perturbed_mdp() const { return perturbed_; }
  const std::vector<double>& perturbed_transition() const { return perturbed_.transition_tensor(); }
  /// max_{s,a} D_TV(P(.|s,a), P-hat(.|s,a)).
  double eps_p() const { return eps_p_; }

 private:
  TabularMdp perturbed_;
  double eps_p_ = 0.0;
};

/// pi-hat_nu(.|s) = pi(.|nu(s)).
inline TabularPolicy disturbed_policy(const TabularPolicy& policy, std::span<const std::size_t> nu) {
  std::vector<double> probs(policy.table().size());
  for (std::size_t s = 0; s < policy.n_states(); ++s) {
    const auto row = policy.action_dist(nu[s]);
    std::copy(row.begin(), row.end(), probs.begin() + static_cast<std::ptrdiff_t>(s * policy.n_actions()));
  }
  return {policy.n_states(), policy.n_actions(), std::move(probs)};
}

/// State-observation adversary nu: S -> S, bound to a policy for eps_pi.
class ObservationAdversary {
 public:
  ObservationAdversary(const TabularPolicy& policy, std::vector<std::size_t> nu) : nu_(std::move(nu)) {
    if (nu_.size() != policy.n_states())
      throw std::invalid_argument("ObservationAdversary: map has wrong size");
    for (std::size_t s = 0; s < nu_.size(); ++s) {
      if (nu_[s] >= policy.n_states())
        throw std::invalid_argument("ObservationAdversary: map leaves the state set");
      eps_pi_ = std::max(eps_pi_, tv_distance(policy.action_dist(s), policy.action_dist(nu_[s])));
    }
  }

  const std::vector<std::size_t>& nu() const { return nu_; }
  /// max_s D_TV(pi(.|s), pi(.|nu(s))).
  double eps_pi() const { return eps_pi_; }

 private:
  std::vector<std::size_t> nu_;
  double eps_pi_ = 0.0;
};

/// True when pi(a|nu(s)) > 0 wherever pi(a|s) > 0, the condition under which
/// the importance-ratio form of the observation identity is exact.
inline bool observation_support_ok(const TabularPolicy& policy, std::span<const std::size_t> nu) {
  for (std::size_t s = 0; s < policy.n_states(); ++s)
    for (std::size_t a = 0; a < policy.n_actions(); ++a)
      if (policy.prob(s, a) > 0.0 && policy.prob(nu[s], a) == 0.0) return false;
  return true;
}

struct BoundReport {
  double lhs_exact = 0.0;
  double rhs_exact = 0.0;
  double bound = 0.0;
  double identity_residual = 0.0;
  /// bound - |lhs_exact|.
  double slack = 0.0;
};

inline BoundReport make_report(double lhs, double rhs, double bound) {
  return {lhs, rhs, bound, std::abs(lhs - rhs), bound - std::abs(lhs)};
}

/// Max over s of |d(s) - (1-gamma) mu(s) - gamma sum_s' d(s') sum_a pi(a|s') P(s|s',a)|.
inline double check_lemma1(const TabularMdp& mdp, const TabularPolicy& policy) {
  const auto d = mdp::discounted_state_distribution(mdp, policy);
  const std::size_t S = mdp.n_states();
  double worst = 0.0;
  for (std::size_t s = 0; s < S; ++s) {
    const double lhs = d[s] - (1.0 - mdp.gamma()) * mdp.initial_dist()[s];
    double inflow = 0.0;
    for (std::size_t prev = 0; prev < S; ++prev)
      for (std::size_t a = 0; a < mdp.n_actions(); ++a)
        inflow += d[prev] * policy.prob(prev, a) * mdp.transition(prev, a, s);
    worst = std::max(worst, std::abs(lhs - mdp.gamma() * inflow));
  }
  return worst;
}

/// Performance difference under a transition disturbance.
///
/// lhs = J_{M-hat}(pi) - J_M(pi) from two exact solves. rhs is the importance
/// ratio identity
///   gamma/(1-gamma) E_{s~d_{M-hat}} E_{a~pi} E_{s'~P-hat} (1 - P/P-hat) V_M(s'),
/// with P-hat(s'|s,a) = 0 terms skipped. bound = 2 gamma/(1-gamma) eps_P VFR.
inline BoundReport check_transition_theorem(const TabularMdp& mdp, const TabularPolicy& policy,
                                            const TransitionDisturbance& dist) {
  mdp::check_dimensions(mdp, policy);
  const TabularMdp& perturbed = dist.perturbed_mdp();
  if (perturbed.n_states() != mdp.n_states() || perturbed.n_actions() != mdp.n_actions())
    throw std::invalid_argument("check_transition_theorem: disturbance dimension mismatch");

  const auto nominal = mdp::value_function(mdp, policy);
  const auto disturbed = mdp::value_function(perturbed, policy);
  const auto d_hat = mdp::discounted_state_distribution(perturbed, policy);
  const double g = mdp.gamma();

  double expectation = 0.0;
  for (std::size_t s = 0; s < mdp.n_states(); ++s)
    for (std::size_t a = 0; a < mdp.n_actions(); ++a) {
      const double weight = d_hat[s] * policy.prob(s, a);
      if (weight == 0.0) continue;
      for (std::size_t next = 0; next < mdp.n_states(); ++next) {
        const double q = perturbed.transition(s, a, next);
        if (q == 0.0) continue;
        const double p = mdp.transition(s, a, next);
        expectation += weight * q * (1.0 - p / q) * nominal.values[next];
      }
    }

  const double lhs = disturbed.expected_return - nominal.expected_return;
  const double rhs = g / (1.0 - g) * expectation;
  const double bound = 2.0 * g / (1.0 - g) * dist.eps_p() * nominal.vfr;
  return make_report(lhs, rhs, bound);
}

/// max_s D_TV-weighted bound for an observation adversary:
///   gamma/(1-gamma) eps_pi VFR + 2/(1-gamma) eps_pi max|R|.
inline double observation_bound(double gamma, double eps_pi, double vfr, double reward_bound) {
  return gamma / (1.0 - gamma) * eps_pi * vfr + 2.0 / (1.0 - gamma) * eps_pi * reward_bound;
}

/// Performance difference under an observation adversary.
///
/// lhs = J_M(pi-hat_nu) - J_M(pi). rhs is the two-term identity with expectations
/// under s ~ d_M^{pi-hat_nu}, a ~ pi(.|nu(s)) and ratio pi(a|s)/pi(a|nu(s)).
inline BoundReport check_observation_theorem(const TabularMdp& mdp, const TabularPolicy& policy,
                                             const ObservationAdversary& adv) {
  mdp::check_dimensions(mdp, policy);
  if (!observation_support_ok(policy, adv.nu()))
    throw SupportViolation("check_observation_theorem: pi(.|nu(s)) misses support of pi(.|s)");

  const TabularPolicy perturbed = disturbed_policy(policy, adv.nu());
  const auto nominal = mdp::value_function(mdp, policy);
  const auto disturbed = mdp::value_function(mdp, perturbed);
  const auto d_hat = mdp::discounted_state_distribution(mdp, perturbed);
  const double g = mdp.gamma();

  double value_term = 0.0;
  double reward_term = 0.0;
  for (std::size_t s = 0; s < mdp.n_states(); ++s) {
    const std::size_t seen = adv.nu()[s];
    for (std::size_t a = 0; a < mdp.n_actions(); ++a) {
      const double q = policy.prob(seen, a);
      if (q == 0.0) continue;
      const double weight = d_hat[s] * q * (1.0 - policy.prob(s, a) / q);
      double next_value = 0.0;
      for (std::size_t next = 0; next < mdp.n_states(); ++next)
        next_value += mdp.transition(s, a, next) * nominal.values[next];
      value_term += weight * next_value;
      reward_term += weight * mdp.reward(s, a);
    }
  }

  const double lhs = disturbed.expected_return - nominal.expected_return;
  const double rhs = g / (1.0 - g) * value_term + 1.0 / (1.0 - g) * reward_term;
  const double bound = observation_bound(g, adv.eps_pi(), nominal.vfr, mdp.reward_bound());
  return make_report(lhs, rhs, bound);
}

struct BoundDominance {
  double ours = 0.0;
  /// (2 gamma/(1-gamma)^2 + 2/(1-gamma)) eps_pi max|R|.
  double samdp = 0.0;
};

inline BoundDominance check_bound_dominance(const TabularMdp& mdp, const TabularPolicy& policy,
                                            const ObservationAdversary& adv) {
  const auto nominal = mdp::value_function(mdp, policy);
  const double g = mdp.gamma();
  const double r = mdp.reward_bound();
  return {observation_bound(g, adv.eps_pi(), nominal.vfr, r),
          (2.0 * g / ((1.0 - g) * (1.0 - g)) + 2.0 / (1.0 - g)) * adv.eps_pi() * r};
}

// Random adversaries.

/// P-hat = normalize(P + delta * Dirichlet noise). Full-support noise keeps
/// supp P inside supp P-hat for any delta > 0.
inline TransitionDisturbance random_transition_disturbance(Rng& rng, const TabularMdp& mdp,
                                                           double delta) {
  const std::size_t S = mdp.n_states();
  std::vector<double> perturbed(mdp.transition_tensor());
  for (std::size_t sa = 0; sa < S * mdp.n_actions(); ++sa) {
    const auto noise = mdp::random_distribution(rng, S);
    double total = 0.0;
    for (std::size_t next = 0; next < S; ++next) {
      perturbed[sa * S + next] += delta * noise[next];
      total += perturbed[sa * S + next];
    }
    for (std::size_t next = 0; next < S; ++next) perturbed[sa * S + next] /= total;
  }
  return {mdp, std::move(perturbed)};
}

inline std::vector<std::size_t> random_permutation_map(Rng& rng, std::size_t n_states) {
  std::vector<std::size_t> nu(n_states);
  std::iota(nu.begin(), nu.end(), 0);
  for (std::size_t i = n_states; i > 1; --i) std::swap(nu[i - 1], nu[rng.index(i)]);
  return nu;
}

/// Each state is remapped to a uniformly random state with probability `rate`.
inline std::vector<std::size_t> random_local_map(Rng& rng, std::size_t n_states, double rate) {
  std::vector<std::size_t> nu(n_states);
  for (std::size_t s = 0; s < n_states; ++s) nu[s] = rng.uniform() < rate ? rng.index(n_states) : s;
  return nu;
}

}  // namespace riskgrad::disturbance
