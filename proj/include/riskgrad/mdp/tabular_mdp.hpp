#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace riskgrad::mdp {

inline constexpr double kProbabilityTolerance = 1e-12;

namespace detail {

inline void check_distribution(std::span<const double> p, const std::string& what) {
  double total = 0.0;
  for (double x : p) {
    if (!std::isfinite(x) || x < 0.0)
      throw std::invalid_argument(what + ": negative or non-finite probability");
    total += x;
  }
  if (std::abs(total - 1.0) > kProbabilityTolerance)
    throw std::invalid_argument(what + ": probabilities sum to " + std::to_string(total));
}

}  // namespace detail

/// Finite discounted MDP (S, A, P, R, gamma, mu).
///
/// Tensors are stored row-major: transition(s, a, s') at (s * A + a) * S + s',
/// reward(s, a) at s * A + a. All invariants are checked on construction and
/// the object is immutable afterwards.
class TabularMdp {
 public:
  TabularMdp(std::size_t n_states, std::size_t n_actions, std::vector<double> transition,
             std::vector<double> reward, double gamma, std::vector<double> initial_dist)
      : n_states_(n_states),
        n_actions_(n_actions),
        transition_(std::move(transition)),
        reward_(std::move(reward)),
        gamma_(gamma),
        initial_dist_(std::move(initial_dist)) {
    if (n_states_ == 0 || n_actions_ == 0)
      throw std::invalid_argument("TabularMdp: empty state or action set");
    if (transition_.size() != n_states_ * n_actions_ * n_states_)
      throw std::invalid_argument("TabularMdp: transition tensor has wrong size");
    if (reward_.size() != n_states_ * n_actions_)
      throw std::invalid_argument("TabularMdp: reward tensor has wrong size");
    if (initial_dist_.size() != n_states_)
      throw std::invalid_argument("TabularMdp: initial distribution has wrong size");
    if (!(gamma_ > 0.0 && gamma_ < 1.0))
      throw std::invalid_argument("TabularMdp: gamma must lie in (0, 1)");
    for (std::size_t s = 0; s < n_states_; ++s)
      for (std::size_t a = 0; a < n_actions_; ++a)
        detail::check_distribution(next_state_dist(s, a), "TabularMdp: transition row");
    detail::check_distribution(initial_dist_, "TabularMdp: initial distribution");
    for (double r : reward_) {
      if (!std::isfinite(r)) throw std::invalid_argument("TabularMdp: non-finite reward");
      reward_bound_ = std::max(reward_bound_, std::abs(r));
    }
  }

  std::size_t n_states() const { return n_states_; }
  std::size_t n_actions() const { return n_actions_; }
  double gamma() const { return gamma_; }

  double transition(std::size_t s, std::size_t a, std::size_t next) const {
    return transition_[(s * n_actions_ + a) * n_states_ + next];
  }
  std::span<const double> next_state_dist(std::size_t s, std::size_t a) const {
    return {transition_.data() + (s * n_actions_ + a) * n_states_, n_states_};
  }
  double reward(std::size_t s, std::size_t a) const { return reward_[s * n_actions_ + a]; }
  std::span<const double> initial_dist() const { return initial_dist_; }

  /// max_{s,a} |R(s, a)|.
  double reward_bound() const { return reward_bound_; }

  /// Bound on the magnitude of any discounted return: R_max / (1 - gamma).
  double return_bound() const { return reward_bound_ / (1.0 - gamma_); }

  const std::vector<double>& transition_tensor() const { return transition_; }
  const std::vector<double>& reward_tensor() const { return reward_; }

  /// Same MDP with another transition kernel (revalidated).
  TabularMdp with_transition(std::vector<double> transition) const {
    return {n_states_, n_actions_, std::move(transition), reward_, gamma_, initial_dist_};
  }
  TabularMdp with_reward(std::vector<double> reward) const {
    return {n_states_, n_actions_, transition_, std::move(reward), gamma_, initial_dist_};
  }

 private:
  std::size_t n_states_;
  std::size_t n_actions_;
  std::vector<double> transition_;
  std::vector<double> reward_;
  double gamma_;
  std::vector<double> initial_dist_;
  double reward_bound_ = 0.0;
};

/// Stationary stochastic policy pi(a | s), row-major (s, a).
class TabularPolicy {
 public:
  TabularPolicy(std::size_t n_states, std::size_t n_actions, std::vector<double> probs)
      : n_states_(n_states), n_actions_(n_actions), probs_(std::move(probs)) {
    if (probs_.size() != n_states_ * n_actions_)
      throw std::invalid_argument("TabularPolicy: probability table has wrong size");
    for (std::size_t s = 0; s < n_states_; ++s)
      detail::check_distribution(action_dist(s), "TabularPolicy: row");
  }

  static TabularPolicy uniform(std::size_t n_states, std::size_t n_actions) {
    return {n_states, n_actions,
            std::vector<double>(n_states * n_actions, 1.0 / static_cast<double>(n_actions))};
  }

  static TabularPolicy deterministic(std::size_t n_actions, std::span<const std::size_t> choice) {
    std::vector<double> probs(choice.size() * n_actions, 0.0);
    for (std::size_t s = 0; s < choice.size(); ++s) {
      if (choice[s] >= n_actions) throw std::invalid_argument("TabularPolicy: action out of range");
      probs[s * n_actions + choice[s]] = 1.0;
    }
    return {choice.size(), n_actions, std::move(probs)};
  }

  std::size_t n_states() const { return n_states_; }
  std::size_t n_actions() const { return n_actions_; }
  double prob(std::size_t s, std::size_t a) const { return probs_[s * n_actions_ + a]; }
  std::span<const double> action_dist(std::size_t s) const {
    return {probs_.data() + s * n_actions_, n_actions_};
  }
  const std::vector<double>& table() const { return probs_; }

 private:
  std::size_t n_states_;
  std::size_t n_actions_;
  std::vector<double> probs_;
};

inline void check_dimensions(const TabularMdp& mdp, const TabularPolicy& policy) {
  if (mdp.n_states() != policy.n_states() || mdp.n_actions() != policy.n_actions())
    throw std::invalid_argument("policy dimensions do not match the MDP");
}

/// Sum_t gamma^t r_t with t starting at 0.
inline double trajectory_return(std::span<const double> rewards, double gamma) {
  double total = 0.0;
  double discount = 1.0;
  for (double r : rewards) {
    total += discount * r;
    discount *= gamma;
  }
  return total;
}

}  // namespace riskgrad::mdp
