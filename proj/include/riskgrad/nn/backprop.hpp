#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

#include "riskgrad/nn/mlp.hpp"
#include "riskgrad/nn/policy.hpp"

namespace riskgrad::nn {

/// Hand-written reverse pass for MlpParams, used on the hot training path.
/// Forward arithmetic follows MlpParams::evaluate_with exactly, so outputs are
/// bit-identical to the plain forward; gradients agree with the graph to rounding.
class MlpBackprop {
 public:
  explicit MlpBackprop(const MlpParams& net) : net_(&net) {
    acts_.resize(net.sizes.size());
    for (std::size_t l = 0; l < net.sizes.size(); ++l) acts_[l].assign(net.sizes[l], 0.0);
    std::size_t widest = 0;
    for (auto s : net.sizes) widest = std::max(widest, s);
    delta_.assign(widest, 0.0);
    next_delta_.assign(widest, 0.0);
  }

  /// Caches activations; returns the output layer.
  std::span<const double> forward(std::span<const double> input) {
    const auto& sizes = net_->sizes;
    if (input.size() != sizes.front()) throw std::invalid_argument("MlpBackprop: input dimension mismatch");
    std::copy(input.begin(), input.end(), acts_[0].begin());
    const double* theta = net_->params.data();
    std::size_t offset = 0;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
      const std::size_t in = sizes[l];
      const std::size_t out = sizes[l + 1];
      const bool last = l + 2 == sizes.size();
      const double* w = theta + offset;
      const double* b = w + out * in;
      const double* x = acts_[l].data();
      double* y = acts_[l + 1].data();
      for (std::size_t o = 0; o < out; ++o) {
        double total = b[o];
        for (std::size_t i = 0; i < in; ++i) total += w[o * in + i] * x[i];
        y[o] = last ? total : std::tanh(total);
      }
      offset += out * (in + 1);
    }
    return acts_.back();
  }

  /// Adds d(sum_k dout_k * out_k)/d(params) into grad (first params.size() entries)
  /// for the most recent forward(). Optionally writes the input gradient.
  void backward(std::span<const double> dout, std::span<double> grad, std::span<double> dinput = {}) {
    const auto& sizes = net_->sizes;
    const std::size_t layers = sizes.size() - 1;
    if (dout.size() != sizes.back() || grad.size() < net_->params.size())
      throw std::invalid_argument("MlpBackprop: gradient size mismatch");
    std::copy(dout.begin(), dout.end(), delta_.begin());
    const double* theta = net_->params.data();
    std::size_t offset = net_->params.size();
    for (std::size_t l = layers; l-- > 0;) {
      const std::size_t in = sizes[l];
      const std::size_t out = sizes[l + 1];
      offset -= out * (in + 1);
      const double* w = theta + offset;
      double* gw = grad.data() + offset;
      double* gb = gw + out * in;
      const double* x = acts_[l].data();
      // delta_ holds d/d(pre-activation) of layer l+1.
      std::fill(next_delta_.begin(), next_delta_.begin() + static_cast<std::ptrdiff_t>(in), 0.0);
      for (std::size_t o = 0; o < out; ++o) {
        const double d = delta_[o];
        if (d == 0.0) continue;
        gb[o] += d;
        for (std::size_t i = 0; i < in; ++i) {
          gw[o * in + i] += d * x[i];
          next_delta_[i] += d * w[o * in + i];
        }
      }
      if (l > 0)
        for (std::size_t i = 0; i < in; ++i) next_delta_[i] *= 1.0 - x[i] * x[i];
      std::swap(delta_, next_delta_);
    }
    if (!dinput.empty()) {
      if (dinput.size() != sizes.front()) throw std::invalid_argument("MlpBackprop: input gradient size mismatch");
      std::copy(delta_.begin(), delta_.begin() + static_cast<std::ptrdiff_t>(sizes.front()), dinput.begin());
    }
  }

 private:
  const MlpParams* net_;
  std::vector<std::vector<double>> acts_;
  std::vector<double> delta_;
  std::vector<double> next_delta_;
};

/// log pi(a|s) and its gradient with respect to PolicyNet::flat().
class PolicyBackprop {
 public:
  explicit PolicyBackprop(const PolicyNet& policy)
      : policy_(&policy), mlp_(policy.net()), dout_(policy.action_dim(), 0.0), z_(policy.action_dim(), 0.0) {
    refresh();
  }

  /// Call after the policy parameters change.
  void refresh() {
    log_std_ = policy_->clamped_log_std();
    const auto theta = policy_->flat();
    raw_log_std_.assign(theta.begin() + static_cast<std::ptrdiff_t>(policy_->net().params.size()), theta.end());
  }

  /// log pi(a | obs), same value as PolicyNet::log_prob.
  double forward(std::span<const double> obs, const Action& action) {
    for (double x : obs)
      if (!std::isfinite(x)) throw std::invalid_argument("PolicyNet: non-finite observation");
    const auto out = mlp_.forward(obs);
    if (policy_->head() == HeadKind::Categorical) {
      if (action.size() != 1 || !(action[0] >= 0.0) || action[0] >= static_cast<double>(out.size()))
        throw std::invalid_argument("PolicyNet: categorical action out of range");
      const auto a = static_cast<std::size_t>(action[0]);
      const double m = *std::max_element(out.begin(), out.end());
      double total = 0.0;
      for (double z : out) total += std::exp(z - m);
      const double lse = std::log(total) + m;
      for (std::size_t j = 0; j < out.size(); ++j) dout_[j] = (j == a ? 1.0 : 0.0) - std::exp(out[j] - lse);
      return out[a] - lse;
    }
    if (action.size() != out.size()) throw std::invalid_argument("PolicyNet: action dimension mismatch");
    double sq = 0.0;
    double ls_sum = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (!std::isfinite(action[i])) throw std::invalid_argument("PolicyNet: non-finite action");
      const double inv_std = std::exp(-log_std_[i]);
      const double z = (action[i] + -out[i]) * inv_std;
      dout_[i] = z * inv_std;
      z_[i] = z;
      sq += z * z;
      ls_sum += log_std_[i];
    }
    return -0.5 * sq - ls_sum - 0.5 * static_cast<double>(out.size()) * std::log(2.0 * std::numbers::pi);
  }

  /// Adds scale * grad log pi(a | obs) of the last forward() into grad.
  void backward(double scale, std::span<double> grad) {
    if (grad.size() != policy_->param_count()) throw std::invalid_argument("PolicyBackprop: gradient size mismatch");
    if (scale == 0.0) return;
    scaled_.resize(dout_.size());
    for (std::size_t j = 0; j < dout_.size(); ++j) scaled_[j] = scale * dout_[j];
    mlp_.backward(scaled_, grad);
    if (policy_->head() == HeadKind::Gaussian) {
      const std::size_t base = policy_->net().params.size();
      for (std::size_t i = 0; i < dout_.size(); ++i) {
        const double ls = raw_log_std_[i];
        if (ls < kLogStdMin || ls > kLogStdMax) continue;
        grad[base + i] += scale * (z_[i] * z_[i] - 1.0);
      }
    }
  }

 private:
  const PolicyNet* policy_;
  MlpBackprop mlp_;
  std::vector<double> dout_;
  std::vector<double> z_;
  std::vector<double> log_std_;
  std::vector<double> raw_log_std_;
  std::vector<double> scaled_;
};

}  // namespace riskgrad::nn
