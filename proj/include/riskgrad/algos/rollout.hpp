#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "riskgrad/core/random.hpp"
#include "riskgrad/envs/env.hpp"
#include "riskgrad/envs/observation.hpp"
#include "riskgrad/mdp/tabular_mdp.hpp"
#include "riskgrad/nn/mlp.hpp"
#include "riskgrad/nn/policy.hpp"

namespace riskgrad::algos {

struct Trajectory {
  /// Observations as seen by the agent (after any disturbance).
  std::vector<std::vector<double>> observations;
  std::vector<nn::Action> actions;
  std::vector<double> rewards;
  std::vector<double> logprob_old;
  std::vector<double> value_old;
  std::vector<bool> dones;
  /// V of the observation after the last step; zero when the episode terminated.
  double bootstrap_value = 0.0;
  /// Discounted return D(xi) = sum_t gamma^t r_t.
  double discounted_return = 0.0;
  double undiscounted_return = 0.0;
  std::vector<double> advantages;
  std::vector<double> reward_to_go;

  std::size_t size() const { return rewards.size(); }
};

struct RolloutBatch {
  std::vector<Trajectory> trajectories;
  double gamma = 0.99;
  /// Version of the policy parameters the batch was collected under.
  std::uint64_t policy_version = 0;
  bool has_advantages = false;

  std::size_t n_trajectories() const { return trajectories.size(); }
  std::size_t total_steps() const {
    std::size_t n = 0;
    for (const auto& t : trajectories) n += t.size();
    return n;
  }
  std::vector<double> returns() const {
    std::vector<double> out;
    out.reserve(trajectories.size());
    for (const auto& t : trajectories) out.push_back(t.discounted_return);
    return out;
  }
  std::vector<double> undiscounted_returns() const {
    std::vector<double> out;
    out.reserve(trajectories.size());
    for (const auto& t : trajectories) out.push_back(t.undiscounted_return);
    return out;
  }
};

class RolloutFault : public std::runtime_error {
 public:
  RolloutFault(std::size_t trajectory, const std::string& what)
      : std::runtime_error("trajectory " + std::to_string(trajectory) + ": " + what), trajectory_(trajectory) {}
  std::size_t trajectory() const { return trajectory_; }

 private:
  std::size_t trajectory_;
};

struct RolloutOptions {
  double gamma = 0.99;
  envs::ObsDisturbance disturbance;
  /// Act greedily (policy mode) instead of sampling.
  bool greedy = false;
  std::uint64_t policy_version = 0;
};

/// Streams of trajectory i: environment, action sampling and observation noise
/// are independent, so disturbing observations never shifts the env's draws.
inline Rng env_stream(std::uint64_t seed, std::size_t i) { return Rng(derive_seed(seed, 3 * i)); }
inline Rng action_stream(std::uint64_t seed, std::size_t i) { return Rng(derive_seed(seed, 3 * i + 1)); }
inline Rng noise_stream(std::uint64_t seed, std::size_t i) { return Rng(derive_seed(seed, 3 * i + 2)); }

/// Samples N trajectories of at most spec.horizon steps.
inline RolloutBatch collect_rollouts(const envs::EnvSpec& spec, const nn::PolicyNet& policy,
                                     const nn::MlpParams& value, std::size_t n, std::uint64_t seed,
                                     const RolloutOptions& options = {}) {
  if (n < 2) throw std::invalid_argument("collect_rollouts: need at least 2 trajectories");
  spec.validate();
  const envs::AttackContext attack{&policy, &value};
  RolloutBatch batch;
  batch.gamma = options.gamma;
  batch.policy_version = options.policy_version;
  batch.trajectories.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng env_rng = env_stream(seed, i);
    Rng act_rng = action_stream(seed, i);
    Rng noise_rng = noise_stream(seed, i);
    Trajectory& tr = batch.trajectories[i];
    tr.observations.reserve(spec.horizon);
    auto cur = envs::reset(spec, env_rng);
    bool terminated = false;
    for (std::size_t t = 0; t < spec.horizon; ++t) {
      auto seen = envs::disturb_observation(cur.observation, options.disturbance, attack, noise_rng);
      nn::Action action = options.greedy ? policy.mode(seen) : policy.sample(seen, act_rng);
      const double lp = policy.log_prob(seen, action);
      if (!std::isfinite(lp)) throw RolloutFault(i, "non-finite log-probability");
      const double v = value.evaluate(seen)[0];
      auto next = envs::step(spec, cur.true_state, action, env_rng);
      if (!next.fault.empty()) throw RolloutFault(i, next.fault);
      tr.observations.push_back(std::move(seen));
      tr.actions.push_back(std::move(action));
      tr.rewards.push_back(next.reward);
      tr.logprob_old.push_back(lp);
      tr.value_old.push_back(v);
      tr.dones.push_back(next.done);
      cur = std::move(next);
      if (cur.done) {
        terminated = true;
        break;
      }
    }
    if (!terminated) {
      const auto seen = envs::disturb_observation(cur.observation, options.disturbance, attack, noise_rng);
      tr.bootstrap_value = value.evaluate(seen)[0];
    }
    tr.discounted_return = mdp::trajectory_return(tr.rewards, options.gamma);
    for (double r : tr.rewards) tr.undiscounted_return += r;
  }
  return batch;
}

/// GAE: A_t = sum_l (gamma lambda)^l delta_{t+l},
/// delta_t = r_t + gamma V(s_{t+1}) (1 - done_t) - V(s_t); reward-to-go R_t = A_t + V(s_t).
/// Uses the values recorded at collection time.
inline void gae_advantages(RolloutBatch& batch, double gamma, double lambda_gae) {
  for (auto& tr : batch.trajectories) {
    const std::size_t n = tr.size();
    tr.advantages.assign(n, 0.0);
    tr.reward_to_go.assign(n, 0.0);
    double running = 0.0;
    for (std::size_t k = n; k-- > 0;) {
      const double next_v = k + 1 < n ? tr.value_old[k + 1] : tr.bootstrap_value;
      const double delta = tr.rewards[k] + gamma * next_v * (tr.dones[k] ? 0.0 : 1.0) - tr.value_old[k];
      running = delta + gamma * lambda_gae * (tr.dones[k] ? 0.0 : 1.0) * running;
      tr.advantages[k] = running;
      tr.reward_to_go[k] = running + tr.value_old[k];
    }
  }
  batch.has_advantages = true;
}

}  // namespace riskgrad::algos
