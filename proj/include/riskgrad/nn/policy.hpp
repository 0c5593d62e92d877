#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "riskgrad/core/random.hpp"
#include "riskgrad/nn/graph.hpp"
#include "riskgrad/nn/mlp.hpp"

namespace riskgrad::nn {

enum class HeadKind { Categorical, Gaussian };

inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 2.0;

inline std::string to_string(HeadKind k) { return k == HeadKind::Categorical ? "categorical" : "gaussian"; }
inline HeadKind head_from_string(const std::string& s) {
  if (s == "categorical") return HeadKind::Categorical;
  if (s == "gaussian") return HeadKind::Gaussian;
  throw std::invalid_argument("unknown policy head: " + s);
}

/// Actions are real vectors; a categorical action is a single entry holding the index.
using Action = std::vector<double>;

/// Stochastic policy: an MLP followed by a categorical or diagonal Gaussian head.
///
/// The flat parameter vector theta is the MLP parameters followed (Gaussian
/// only) by a state-independent log-std vector, clamped to [-5, 2] when used.
class PolicyNet {
 public:
  PolicyNet() = default;
  PolicyNet(HeadKind head, MlpParams net, std::vector<double> log_std = {})
      : head_(head), net_(std::move(net)), log_std_(std::move(log_std)) {
    net_.validate();
    if (head_ == HeadKind::Gaussian && log_std_.size() != net_.output_size())
      throw std::invalid_argument("PolicyNet: log-std size must match action dimension");
    if (head_ == HeadKind::Categorical && !log_std_.empty())
      throw std::invalid_argument("PolicyNet: categorical head has no log-std");
  }

  /// Hidden layers `hidden`, final layer scaled by 0.01.
  static PolicyNet create(HeadKind head, std::size_t obs_dim, std::size_t action_dim,
                          const std::vector<std::size_t>& hidden, Rng& rng, double init_log_std = -0.5) {
    std::vector<std::size_t> sizes{obs_dim};
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(action_dim);
    auto net = MlpParams::init(sizes, rng, 0.01);
    std::vector<double> ls;
    if (head == HeadKind::Gaussian) ls.assign(action_dim, init_log_std);
    return {head, std::move(net), std::move(ls)};
  }

  HeadKind head() const { return head_; }
  const MlpParams& net() const { return net_; }
  std::size_t obs_dim() const { return net_.input_size(); }
  /// Number of discrete actions (categorical) or action dimension (Gaussian).
  std::size_t action_dim() const { return net_.output_size(); }
  std::size_t param_count() const { return net_.params.size() + log_std_.size(); }

  std::vector<double> flat() const {
    std::vector<double> theta(net_.params);
    theta.insert(theta.end(), log_std_.begin(), log_std_.end());
    return theta;
  }

  void set_flat(std::span<const double> theta) {
    if (theta.size() != param_count()) throw std::invalid_argument("PolicyNet: parameter count mismatch");
    std::copy(theta.begin(), theta.begin() + static_cast<std::ptrdiff_t>(net_.params.size()), net_.params.begin());
    std::copy(theta.begin() + static_cast<std::ptrdiff_t>(net_.params.size()), theta.end(), log_std_.begin());
  }

  std::vector<double> clamped_log_std() const {
    std::vector<double> ls(log_std_);
    for (double& x : ls) x = std::min(std::max(x, kLogStdMin), kLogStdMax);
    return ls;
  }

  /// log pi(a | obs) without a graph, in the same operation order as forward_logprob.
  double log_prob(std::span<const double> obs, const Action& action) const {
    const auto out = net_.evaluate(obs);
    if (head_ == HeadKind::Categorical) {
      const std::size_t a = checked_index(action);
      const double m = *std::max_element(out.begin(), out.end());
      double total = 0.0;
      for (double z : out) total += std::exp(z - m);
      return out[a] - (std::log(total) + m);
    }
    check_continuous(action);
    const auto ls = clamped_log_std();
    double sq = 0.0;
    double ls_sum = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double z = (action[i] + -out[i]) * std::exp(-ls[i]);
      sq += z * z;
      ls_sum += ls[i];
    }
    return -0.5 * sq - ls_sum - gaussian_const();
  }

  /// log pi_theta(a | obs) as a graph node. `theta` are leaves for flat().
  template <typename Input>
  Var forward_logprob(CompGraph& g, std::span<const Var> theta, std::span<const Input> obs,
                      const Action& action) const {
    if (theta.size() != param_count()) throw std::invalid_argument("PolicyNet: parameter handles mismatch");
    for (const auto& x : obs)
      if (!std::isfinite(scalar_value(x))) throw std::invalid_argument("PolicyNet: non-finite observation");
    const auto out = net_.forward(g, theta, obs);
    if (head_ == HeadKind::Categorical) {
      const std::size_t a = checked_index(action);
      double m = out[0].value();
      for (const Var& z : out) m = std::max(m, z.value());
      std::vector<Var> terms;
      terms.reserve(out.size());
      for (const Var& z : out) terms.push_back(g.exp(g.add_const(z, -m)));
      const Var lse = g.add_const(g.log(g.sum(terms)), m);
      return g.sub(out[a], lse);
    }
    check_continuous(action);
    const std::size_t d = out.size();
    std::vector<Var> squares;
    std::vector<Var> log_stds;
    for (std::size_t i = 0; i < d; ++i) {
      const Var ls = g.clamp(theta[net_.params.size() + i], kLogStdMin, kLogStdMax);
      const Var z = g.mul(g.add_const(g.neg(out[i]), action[i]), g.exp(g.neg(ls)));
      squares.push_back(g.mul(z, z));
      log_stds.push_back(ls);
    }
    return g.add_const(g.sub(g.mul_const(g.sum(squares), -0.5), g.sum(log_stds)), -gaussian_const());
  }

  /// Categorical probabilities at obs.
  std::vector<double> action_probs(std::span<const double> obs) const {
    if (head_ != HeadKind::Categorical) throw std::logic_error("action_probs: not a categorical policy");
    auto out = net_.evaluate(obs);
    const double m = *std::max_element(out.begin(), out.end());
    double total = 0.0;
    for (double& z : out) total += (z = std::exp(z - m));
    for (double& z : out) z /= total;
    return out;
  }

  Action sample(std::span<const double> obs, Rng& rng) const {
    if (head_ == HeadKind::Categorical) {
      const auto p = action_probs(obs);
      return {static_cast<double>(rng.categorical(p))};
    }
    auto mean = net_.evaluate(obs);
    const auto ls = clamped_log_std();
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += std::exp(ls[i]) * rng.normal();
    return mean;
  }

  /// Greedy action: argmax logit or Gaussian mean.
  Action mode(std::span<const double> obs) const {
    const auto out = net_.evaluate(obs);
    if (head_ == HeadKind::Categorical)
      return {static_cast<double>(std::max_element(out.begin(), out.end()) - out.begin())};
    return out;
  }

 private:
  static double scalar_value(double x) { return x; }
  static double scalar_value(const Var& v) { return v.value(); }

  double gaussian_const() const {
    return 0.5 * static_cast<double>(action_dim()) * std::log(2.0 * std::numbers::pi);
  }

  std::size_t checked_index(const Action& action) const {
    if (action.size() != 1 || !(action[0] >= 0.0) || action[0] >= static_cast<double>(action_dim()))
      throw std::invalid_argument("PolicyNet: categorical action out of range");
    return static_cast<std::size_t>(action[0]);
  }

  void check_continuous(const Action& action) const {
    if (action.size() != action_dim()) throw std::invalid_argument("PolicyNet: action dimension mismatch");
    for (double a : action)
      if (!std::isfinite(a)) throw std::invalid_argument("PolicyNet: non-finite action");
  }

  HeadKind head_ = HeadKind::Categorical;
  MlpParams net_;
  std::vector<double> log_std_;
};

}  // namespace riskgrad::nn
