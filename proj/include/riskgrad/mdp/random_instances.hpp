#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "riskgrad/core/random.hpp"
#include "riskgrad/mdp/tabular_mdp.hpp"

namespace riskgrad::mdp {

/// Dirichlet(concentration) draw over `n` entries restricted to a random
/// support of `support` entries (0 means full support).
inline std::vector<double> random_distribution(Rng& rng, std::size_t n, std::size_t support = 0,
                                               double concentration = 1.0) {
  if (support == 0 || support > n) support = n;
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < support; ++i) std::swap(idx[i], idx[i + rng.index(n - i)]);
  std::vector<double> p(n, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < support; ++i) {
    const double g = std::max(rng.gamma(concentration), 1e-300);
    p[idx[i]] = g;
    total += g;
  }
  for (double& x : p) x /= total;
  return p;
}

struct RandomMdpOptions {
  std::size_t n_states = 4;
  std::size_t n_actions = 2;
  double gamma = 0.9;
  /// Number of reachable successors per (s, a); 0 = all states.
  std::size_t transition_support = 0;
  double reward_lo = -1.0;
  double reward_hi = 1.0;
  /// Start from state 0 deterministically instead of a random distribution.
  bool point_mass_start = false;
};

inline TabularMdp random_mdp(Rng& rng, const RandomMdpOptions& opt) {
  const std::size_t S = opt.n_states;
  const std::size_t A = opt.n_actions;
  std::vector<double> transition;
  transition.reserve(S * A * S);
  for (std::size_t sa = 0; sa < S * A; ++sa) {
    const auto row = random_distribution(rng, S, opt.transition_support);
    transition.insert(transition.end(), row.begin(), row.end());
  }
  std::vector<double> reward(S * A);
  for (double& r : reward) r = rng.uniform(opt.reward_lo, opt.reward_hi);
  std::vector<double> mu(S, 0.0);
  if (opt.point_mass_start)
    mu[0] = 1.0;
  else
    mu = random_distribution(rng, S);
  return {S, A, std::move(transition), std::move(reward), opt.gamma, std::move(mu)};
}

inline TabularPolicy random_policy(Rng& rng, std::size_t n_states, std::size_t n_actions,
                                   std::size_t support = 0) {
  std::vector<double> probs;
  probs.reserve(n_states * n_actions);
  for (std::size_t s = 0; s < n_states; ++s) {
    const auto row = random_distribution(rng, n_actions, support);
    probs.insert(probs.end(), row.begin(), row.end());
  }
  return {n_states, n_actions, std::move(probs)};
}

}  // namespace riskgrad::mdp
