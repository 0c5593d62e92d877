#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "riskgrad/mdp/tabular_mdp.hpp"

namespace riskgrad::mdp {

struct ValueProfile {
  std::vector<double> values;
  double expected_return = 0.0;
  /// max_s V(s) - min_s V(s).
  double vfr = 0.0;
  /// (max_s V(s) + min_s V(s)) / 2.
  double mid_value = 0.0;
};

namespace detail {

inline Eigen::MatrixXd policy_transition(const TabularMdp& mdp, const TabularPolicy& policy) {
  const auto n = static_cast<Eigen::Index>(mdp.n_states());
  Eigen::MatrixXd p_pi = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t s = 0; s < mdp.n_states(); ++s)
    for (std::size_t a = 0; a < mdp.n_actions(); ++a) {
      const double pa = policy.prob(s, a);
      if (pa == 0.0) continue;
      for (std::size_t next = 0; next < mdp.n_states(); ++next)
        p_pi(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(next)) +=
            pa * mdp.transition(s, a, next);
    }
  return p_pi;
}

inline Eigen::VectorXd policy_reward(const TabularMdp& mdp, const TabularPolicy& policy) {
  Eigen::VectorXd r(static_cast<Eigen::Index>(mdp.n_states()));
  for (std::size_t s = 0; s < mdp.n_states(); ++s) {
    double acc = 0.0;
    for (std::size_t a = 0; a < mdp.n_actions(); ++a) acc += policy.prob(s, a) * mdp.reward(s, a);
    r(static_cast<Eigen::Index>(s)) = acc;
  }
  return r;
}

}  // namespace detail

inline ValueProfile make_value_profile(const TabularMdp& mdp, std::vector<double> values) {
  ValueProfile out;
  out.values = std::move(values);
  const auto [lo, hi] = std::minmax_element(out.values.begin(), out.values.end());
  out.vfr = *hi - *lo;
  out.mid_value = 0.5 * (*hi + *lo);
  for (std::size_t s = 0; s < mdp.n_states(); ++s)
    out.expected_return += mdp.initial_dist()[s] * out.values[s];
  return out;
}

/// Exact policy evaluation: solves (I - gamma P_pi) V = R_pi.
inline ValueProfile value_function(const TabularMdp& mdp, const TabularPolicy& policy) {
  check_dimensions(mdp, policy);
  const auto n = static_cast<Eigen::Index>(mdp.n_states());
  const Eigen::MatrixXd system =
      Eigen::MatrixXd::Identity(n, n) - mdp.gamma() * detail::policy_transition(mdp, policy);
  const Eigen::VectorXd v = system.partialPivLu().solve(detail::policy_reward(mdp, policy));
  return make_value_profile(mdp, std::vector<double>(v.data(), v.data() + n));
}

/// Max over states of |V(s) - sum_a pi(a|s)[R(s,a) + gamma sum_s' P(s'|s,a) V(s')]|.
inline double bellman_residual(const TabularMdp& mdp, const TabularPolicy& policy,
                               const std::vector<double>& values) {
  double worst = 0.0;
  for (std::size_t s = 0; s < mdp.n_states(); ++s) {
    double backup = 0.0;
    for (std::size_t a = 0; a < mdp.n_actions(); ++a) {
      double future = 0.0;
      for (std::size_t next = 0; next < mdp.n_states(); ++next)
        future += mdp.transition(s, a, next) * values[next];
      backup += policy.prob(s, a) * (mdp.reward(s, a) + mdp.gamma() * future);
    }
    worst = std::max(worst, std::abs(values[s] - backup));
  }
  return worst;
}

/// d(s) = (1 - gamma) sum_t gamma^t P(s_t = s), from d = (1 - gamma) mu + gamma P_pi^T d.
inline std::vector<double> discounted_state_distribution(const TabularMdp& mdp,
                                                         const TabularPolicy& policy) {
  check_dimensions(mdp, policy);
  const auto n = static_cast<Eigen::Index>(mdp.n_states());
  const Eigen::MatrixXd system = Eigen::MatrixXd::Identity(n, n) -
                                 mdp.gamma() * detail::policy_transition(mdp, policy).transpose();
  Eigen::VectorXd rhs(n);
  for (Eigen::Index s = 0; s < n; ++s)
    rhs(s) = (1.0 - mdp.gamma()) * mdp.initial_dist()[static_cast<std::size_t>(s)];
  const Eigen::VectorXd d = system.partialPivLu().solve(rhs);
  return {d.data(), d.data() + n};
}

/// Exact expected H-step return sum_{t<H} gamma^t E[r_t], by propagating the state distribution.
inline double finite_horizon_return(const TabularMdp& mdp, const TabularPolicy& policy, std::size_t horizon) {
  check_dimensions(mdp, policy);
  const auto n = static_cast<Eigen::Index>(mdp.n_states());
  const Eigen::MatrixXd p_t = detail::policy_transition(mdp, policy).transpose();
  const Eigen::VectorXd r = detail::policy_reward(mdp, policy);
  Eigen::VectorXd d(n);
  for (Eigen::Index s = 0; s < n; ++s) d(s) = mdp.initial_dist()[static_cast<std::size_t>(s)];
  double total = 0.0;
  double discount = 1.0;
  for (std::size_t t = 0; t < horizon; ++t) {
    total += discount * d.dot(r);
    d = p_t * d;
    discount *= mdp.gamma();
  }
  return total;
}

struct WeightedTrajectory {
  std::vector<std::size_t> states;
  std::vector<std::size_t> actions;
  std::vector<double> rewards;
  double probability = 0.0;
  double discounted_return = 0.0;
};

struct EnumerationOptions {
  double prob_floor = 1e-12;
  std::size_t node_budget = 10'000'000;
};

class EnumerationBudgetExceeded : public std::runtime_error {
 public:
  explicit EnumerationBudgetExceeded(std::size_t budget)
      : std::runtime_error("trajectory enumeration exceeded node budget of " +
                           std::to_string(budget)) {}
};

struct EnumerationStats {
  /// Probability mass of pruned branches (probability <= prob_floor).
  double dropped_mass = 0.0;
  std::size_t nodes = 0;
  std::size_t trajectories = 0;
};

/// Depth-first enumeration of all length-`horizon` trajectories.
///
/// The visitor receives each surviving trajectory; its vectors are reused
/// between calls, so copy what must outlive the callback. A trajectory of
/// length T carries T rewards r_0..r_{T-1}; the final transition is
/// marginalized out.
template <typename Visitor>
EnumerationStats for_each_trajectory(const TabularMdp& mdp, const TabularPolicy& policy,
                                     std::size_t horizon, const EnumerationOptions& options,
                                     Visitor&& visit) {
  check_dimensions(mdp, policy);
  if (horizon == 0) throw std::invalid_argument("enumerate_trajectories: horizon must be >= 1");
  if (!(options.prob_floor >= 0.0))
    throw std::invalid_argument("enumerate_trajectories: prob_floor must be >= 0");

  EnumerationStats stats;
  WeightedTrajectory current;
  current.states.reserve(horizon);
  current.actions.reserve(horizon);
  current.rewards.reserve(horizon);

  const auto charge = [&] {
    if (++stats.nodes > options.node_budget) throw EnumerationBudgetExceeded(options.node_budget);
  };

  std::function<void(std::size_t, double, double, double)> expand =
      [&](std::size_t s, double prob, double ret, double discount) {
        charge();
        const std::size_t t = current.states.size();
        current.states.push_back(s);
        for (std::size_t a = 0; a < mdp.n_actions(); ++a) {
          const double pa = policy.prob(s, a);
          if (pa == 0.0) continue;
          const double branch = prob * pa;
          if (branch <= options.prob_floor) {
            stats.dropped_mass += branch;
            continue;
          }
          const double r = mdp.reward(s, a);
          current.actions.push_back(a);
          current.rewards.push_back(r);
          const double new_ret = ret + discount * r;
          if (t + 1 == horizon) {
            current.probability = branch;
            current.discounted_return = new_ret;
            ++stats.trajectories;
            visit(static_cast<const WeightedTrajectory&>(current));
          } else {
            for (std::size_t next = 0; next < mdp.n_states(); ++next) {
              const double pn = mdp.transition(s, a, next);
              if (pn == 0.0) continue;
              const double child = branch * pn;
              if (child <= options.prob_floor) {
                stats.dropped_mass += child;
                continue;
              }
              expand(next, child, new_ret, discount * mdp.gamma());
            }
          }
          current.actions.pop_back();
          current.rewards.pop_back();
        }
        current.states.pop_back();
      };

  for (std::size_t s0 = 0; s0 < mdp.n_states(); ++s0) {
    const double p0 = mdp.initial_dist()[s0];
    if (p0 == 0.0) continue;
    if (p0 <= options.prob_floor) {
      stats.dropped_mass += p0;
      continue;
    }
    expand(s0, p0, 0.0, 1.0);
  }
  return stats;
}

struct TrajectoryEnumeration {
  std::vector<WeightedTrajectory> trajectories;
  EnumerationStats stats;
};

inline TrajectoryEnumeration enumerate_trajectories(const TabularMdp& mdp,
                                                    const TabularPolicy& policy,
                                                    std::size_t horizon,
                                                    const EnumerationOptions& options = {}) {
  TrajectoryEnumeration out;
  out.stats = for_each_trajectory(mdp, policy, horizon, options,
                                  [&](const WeightedTrajectory& tr) { out.trajectories.push_back(tr); });
  return out;
}

/// Exact distribution of truncated discounted returns as (return, probability) pairs.
struct ReturnDistribution {
  std::vector<double> returns;
  std::vector<double> probabilities;
  EnumerationStats stats;
};

inline ReturnDistribution return_distribution(const TabularMdp& mdp, const TabularPolicy& policy,
                                              std::size_t horizon,
                                              const EnumerationOptions& options = {}) {
  ReturnDistribution out;
  out.stats = for_each_trajectory(mdp, policy, horizon, options, [&](const WeightedTrajectory& tr) {
    out.returns.push_back(tr.discounted_return);
    out.probabilities.push_back(tr.probability);
  });
  return out;
}

}  // namespace riskgrad::mdp
