#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "riskgrad/core/random.hpp"
#include "riskgrad/nn/graph.hpp"
#include "riskgrad/nn/mlp.hpp"
#include "riskgrad/nn/policy.hpp"

namespace riskgrad::envs {

enum class ObsMode { None, Gaussian, Fgsm };

/// Loss the FGSM attack ascends.
enum class FgsmObjective {
  /// -log pi(a* | x), a* the greedy action at the clean observation.
  NegLogProb,
  /// -V(x) under the critic.
  Value,
};

inline std::string to_string(ObsMode m) {
  switch (m) {
    case ObsMode::None: return "none";
    case ObsMode::Gaussian: return "gaussian";
    case ObsMode::Fgsm: return "fgsm";
  }
  return "?";
}

inline ObsMode obs_mode_from_string(const std::string& s) {
  if (s == "none") return ObsMode::None;
  if (s == "gaussian") return ObsMode::Gaussian;
  if (s == "fgsm") return ObsMode::Fgsm;
  throw std::invalid_argument("unknown observation disturbance: " + s);
}

inline std::string to_string(FgsmObjective o) { return o == FgsmObjective::NegLogProb ? "neglogprob" : "value"; }

inline FgsmObjective fgsm_objective_from_string(const std::string& s) {
  if (s == "neglogprob") return FgsmObjective::NegLogProb;
  if (s == "value") return FgsmObjective::Value;
  throw std::invalid_argument("unknown fgsm objective: " + s);
}

struct ObsDisturbance {
  ObsMode mode = ObsMode::None;
  double sigma = 0.0;
  double epsilon = 0.0;
  FgsmObjective objective = FgsmObjective::NegLogProb;

  static ObsDisturbance none() { return {}; }
  static ObsDisturbance gaussian(double sigma) { return {ObsMode::Gaussian, sigma, 0.0}; }
  static ObsDisturbance fgsm(double epsilon, FgsmObjective objective = FgsmObjective::NegLogProb) {
    return {ObsMode::Fgsm, 0.0, epsilon, objective};
  }

  void validate() const {
    if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw std::invalid_argument("ObsDisturbance: sigma must be >= 0");
    if (!(epsilon >= 0.0) || !std::isfinite(epsilon))
      throw std::invalid_argument("ObsDisturbance: epsilon must be >= 0");
  }
};

/// Networks the FGSM attack differentiates through.
struct AttackContext {
  const nn::PolicyNet* policy = nullptr;
  const nn::MlpParams* value = nullptr;
};

/// Gradient of the attack loss with respect to the observation, evaluated at `at`.
inline std::vector<double> attack_gradient(std::span<const double> clean, std::span<const double> at,
                                           FgsmObjective objective, const AttackContext& ctx) {
  nn::CompGraph g;
  const auto x = g.leaves(at);
  nn::Var loss;
  if (objective == FgsmObjective::NegLogProb) {
    if (ctx.policy == nullptr) throw std::invalid_argument("fgsm: a differentiable policy is required");
    const auto theta = g.leaves(ctx.policy->flat());
    const nn::Action greedy = ctx.policy->mode(clean);
    loss = g.neg(ctx.policy->forward_logprob(g, std::span<const nn::Var>(theta), std::span<const nn::Var>(x), greedy));
  } else {
    if (ctx.value == nullptr) throw std::invalid_argument("fgsm: a differentiable value network is required");
    const auto theta = g.leaves(ctx.value->params);
    loss = g.neg(ctx.value->forward(g, std::span<const nn::Var>(theta), std::span<const nn::Var>(x))[0]);
  }
  g.backward(loss);
  std::vector<double> grad(at.size(), 0.0);
  g.accumulate_adjoints(x, grad);
  return grad;
}

/// Perturbs what the agent perceives; the true state is never touched.
///
/// gaussian: obs + sigma * N(0, I). fgsm: obs + epsilon * sign(grad L_adv).
/// For a Gaussian policy the log-probability of its own mean is stationary at
/// the clean observation, so that gradient is taken at a random start
/// obs + (epsilon / 2) * U[-1, 1]^d; the step is still applied to obs.
inline std::vector<double> disturb_observation(std::span<const double> obs, const ObsDisturbance& mode,
                                               const AttackContext& ctx, Rng& rng) {
  mode.validate();
  std::vector<double> out(obs.begin(), obs.end());
  switch (mode.mode) {
    case ObsMode::None: return out;
    case ObsMode::Gaussian:
      if (mode.sigma == 0.0) return out;
      for (double& x : out) x += mode.sigma * rng.normal();
      return out;
    case ObsMode::Fgsm: {
      if (mode.objective == FgsmObjective::NegLogProb && ctx.policy == nullptr)
        throw std::invalid_argument("fgsm: a differentiable policy is required");
      if (mode.objective == FgsmObjective::Value && ctx.value == nullptr)
        throw std::invalid_argument("fgsm: a differentiable value network is required");
      if (mode.epsilon == 0.0) return out;
      std::vector<double> start(obs.begin(), obs.end());
      if (mode.objective == FgsmObjective::NegLogProb && ctx.policy->head() == nn::HeadKind::Gaussian)
        for (double& x : start) x += 0.5 * mode.epsilon * rng.uniform(-1.0, 1.0);
      const auto grad = attack_gradient(obs, start, mode.objective, ctx);
      for (std::size_t i = 0; i < out.size(); ++i) {
        const double sign = grad[i] > 0.0 ? 1.0 : (grad[i] < 0.0 ? -1.0 : 0.0);
        out[i] += mode.epsilon * sign;
      }
      return out;
    }
  }
  return out;
}

}  // namespace riskgrad::envs
