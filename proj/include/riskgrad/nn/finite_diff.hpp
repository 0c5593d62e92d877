#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "riskgrad/nn/graph.hpp"

namespace riskgrad::nn {

/// Central-difference gradient of f at x.
inline std::vector<double> central_difference(const std::function<double(std::span<const double>)>& f,
                                              std::span<const double> x, double h) {
  std::vector<double> probe(x.begin(), x.end());
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + h;
    const double up = f(probe);
    probe[i] = saved - h;
    const double down = f(probe);
    probe[i] = saved;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

/// |a - b| / max(|a|, |b|, floor). The floor keeps near-zero components from
/// reporting rounding noise as relative error.
inline double relative_error(double a, double b, double floor = 1e-2) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// A scalar function built on a graph from parameter leaves.
using GraphFunction = std::function<Var(CompGraph&, std::span<const Var>)>;

inline std::vector<double> autodiff_gradient(const GraphFunction& f, std::span<const double> x) {
  CompGraph g;
  const auto leaves = g.leaves(x);
  const Var out = f(g, leaves);
  g.backward(out);
  std::vector<double> grad(x.size(), 0.0);
  g.accumulate_adjoints(leaves, grad);
  return grad;
}

/// Max per-coordinate relative error between reverse-mode and central differences.
inline double finite_diff_check(const GraphFunction& f, std::span<const double> x, double h = 1e-5) {
  const auto ad = autodiff_gradient(f, x);
  const auto fd = central_difference(
      [&](std::span<const double> p) {
        CompGraph g;
        const auto leaves = g.leaves(p);
        return f(g, leaves).value();
      },
      x, h);
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) worst = std::max(worst, relative_error(ad[i], fd[i]));
  return worst;
}

}  // namespace riskgrad::nn
