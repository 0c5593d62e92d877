#pragma once

#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "riskgrad/core/random.hpp"
#include "riskgrad/nn/graph.hpp"

namespace riskgrad::nn {

/// Fully connected network with tanh hidden layers and a linear output layer.
///
/// Parameters are one flat vector; layer l stores its weight matrix
/// (out x in, row-major) followed by its bias vector.
struct MlpParams {
  std::vector<std::size_t> sizes;
  std::vector<double> params;

  static std::size_t param_count(std::span<const std::size_t> sizes) {
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) n += sizes[l + 1] * (sizes[l] + 1);
    return n;
  }

  /// Scaled uniform fan-in init (variance gain^2 / fan_in), zero biases; the
  /// output layer is additionally multiplied by `output_scale`.
  static MlpParams init(std::vector<std::size_t> sizes, Rng& rng, double output_scale = 1.0,
                        double gain = 1.0) {
    if (sizes.size() < 2) throw std::invalid_argument("MlpParams: need input and output sizes");
    for (auto s : sizes)
      if (s == 0) throw std::invalid_argument("MlpParams: zero-width layer");
    MlpParams p{std::move(sizes), {}};
    p.params.reserve(param_count(p.sizes));
    for (std::size_t l = 0; l + 1 < p.sizes.size(); ++l) {
      const std::size_t in = p.sizes[l];
      const std::size_t out = p.sizes[l + 1];
      const bool last = l + 2 == p.sizes.size();
      const double limit = gain * std::sqrt(3.0 / static_cast<double>(in)) * (last ? output_scale : 1.0);
      for (std::size_t k = 0; k < out * in; ++k) p.params.push_back(rng.uniform(-limit, limit));
      p.params.insert(p.params.end(), out, 0.0);
    }
    return p;
  }

  static MlpParams zeros(std::vector<std::size_t> sizes) {
    MlpParams p{std::move(sizes), {}};
    p.params.assign(param_count(p.sizes), 0.0);
    return p;
  }

  std::size_t input_size() const { return sizes.front(); }
  std::size_t output_size() const { return sizes.back(); }

  void validate() const {
    if (params.size() != param_count(sizes)) throw std::invalid_argument("MlpParams: parameter count mismatch");
    for (double x : params)
      if (!std::isfinite(x)) throw std::invalid_argument("MlpParams: non-finite parameter");
  }

  /// Plain forward pass.
  std::vector<double> evaluate(std::span<const double> input) const {
    return evaluate_with(params, input);
  }

  std::vector<double> evaluate_with(std::span<const double> theta, std::span<const double> input) const {
    if (input.size() != input_size()) throw std::invalid_argument("MlpParams: input dimension mismatch");
    std::vector<double> x(input.begin(), input.end());
    std::vector<double> y;
    std::size_t offset = 0;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
      const std::size_t in = sizes[l];
      const std::size_t out = sizes[l + 1];
      const bool last = l + 2 == sizes.size();
      const double* w = theta.data() + offset;
      const double* b = w + out * in;
      y.assign(out, 0.0);
      for (std::size_t o = 0; o < out; ++o) {
        double total = b[o];
        for (std::size_t i = 0; i < in; ++i) total += w[o * in + i] * x[i];
        y[o] = last ? total : std::tanh(total);
      }
      offset += out * (in + 1);
      x.swap(y);
    }
    return x;
  }

  /// Forward pass on a graph; `theta` are the parameter leaves, in layout order.
  /// Inputs may be constants (double) or graph nodes (Var).
  template <typename Input>
  std::vector<Var> forward(CompGraph& g, std::span<const Var> theta, std::span<const Input> input) const {
    if (input.size() != input_size()) throw std::invalid_argument("MlpParams: input dimension mismatch");
    if (theta.size() < param_count(sizes)) throw std::invalid_argument("MlpParams: parameter handles missing");
    std::vector<Var> hidden;
    std::vector<Var> next;
    std::size_t offset = 0;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
      const std::size_t in = sizes[l];
      const std::size_t out = sizes[l + 1];
      const bool last = l + 2 == sizes.size();
      next.clear();
      for (std::size_t o = 0; o < out; ++o) {
        const auto weights = theta.subspan(offset + o * in, in);
        const Var bias = theta[offset + out * in + o];
        const Var pre = l == 0 ? g.affine(bias, weights, input)
                               : g.affine(bias, weights, std::span<const Var>(hidden));
        next.push_back(last ? pre : g.tanh(pre));
      }
      offset += out * (in + 1);
      hidden.swap(next);
    }
    return hidden;
  }
};

}  // namespace riskgrad::nn
