#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace riskgrad::risk {

/// Confidence level alpha in (0, 1).
class RiskLevel {
 public:
  explicit RiskLevel(double alpha) : alpha_(alpha) {
    if (!(alpha > 0.0 && alpha < 1.0))
      throw std::invalid_argument("RiskLevel: alpha must lie in (0, 1), got " + std::to_string(alpha));
  }
  double alpha() const { return alpha_; }
  /// Mass of the tail that CVaR averages over.
  double tail_mass() const { return 1.0 - alpha_; }

 private:
  double alpha_;
};

/// Real samples with probability weights summing to one.
///
/// Monte Carlo batches use uniform weights; exact enumerations use trajectory
/// probabilities. Both go through the same estimators.
class WeightedSamples {
 public:
  static constexpr double kWeightTolerance = 1e-9;

  WeightedSamples(std::vector<double> values, std::vector<double> weights)
      : values_(std::move(values)), weights_(std::move(weights)) {
    if (values_.empty()) throw std::invalid_argument("WeightedSamples: empty input");
    if (values_.size() != weights_.size())
      throw std::invalid_argument("WeightedSamples: values and weights differ in length");
    double total = 0.0;
    for (std::size_t i = 0; i < values_.size(); ++i) {
      if (!std::isfinite(values_[i]) || !std::isfinite(weights_[i]) || weights_[i] < 0.0)
        throw std::invalid_argument("WeightedSamples: non-finite value or negative weight");
      total += weights_[i];
    }
    if (std::abs(total - 1.0) > kWeightTolerance)
      throw std::invalid_argument("WeightedSamples: weights sum to " + std::to_string(total));
    build_order();
  }

  static WeightedSamples uniform(std::vector<double> values) {
    if (values.empty()) throw std::invalid_argument("WeightedSamples: empty input");
    const double w = 1.0 / static_cast<double>(values.size());
    std::vector<double> weights(values.size(), w);
    return {std::move(values), std::move(weights)};
  }

  std::size_t size() const { return values_.size(); }
  const std::vector<double>& values() const { return values_; }
  const std::vector<double>& weights() const { return weights_; }
  /// Indices sorted by value, ties in input order.
  const std::vector<std::size_t>& order() const { return order_; }

  double mean() const {
    double m = 0.0;
    for (std::size_t i = 0; i < values_.size(); ++i) m += weights_[i] * values_[i];
    return m;
  }

  WeightedSamples negated() const {
    std::vector<double> v(values_);
    for (double& x : v) x = -x;
    return {std::move(v), weights_};
  }

 private:
  void build_order() {
    order_.resize(values_.size());
    std::iota(order_.begin(), order_.end(), 0);
    std::stable_sort(order_.begin(), order_.end(),
                     [&](std::size_t a, std::size_t b) { return values_[a] < values_[b]; });
  }

  std::vector<double> values_;
  std::vector<double> weights_;
  std::vector<std::size_t> order_;
};

namespace detail {
// Cumulative weights that land within this distance of alpha count as reaching it.
inline constexpr double kCdfSlack = 1e-12;
}  // namespace detail

/// VaR_alpha(Z) = min {z : F(z) >= alpha}.
inline double empirical_var(const WeightedSamples& samples, const RiskLevel& level) {
  double cumulative = 0.0;
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const std::size_t i = samples.order()[k];
    cumulative += samples.weights()[i];
    const bool last_of_value = k + 1 == samples.size() ||
                               samples.values()[samples.order()[k + 1]] != samples.values()[i];
    if (last_of_value && cumulative >= level.alpha() - detail::kCdfSlack) return samples.values()[i];
  }
  return samples.values()[samples.order().back()];
}

/// Conditional tail expectation E[Z | Z >= VaR_alpha(Z)]. Reporting only.
inline double empirical_cvar_tail(const WeightedSamples& samples, const RiskLevel& level) {
  const double var = empirical_var(samples, level);
  double mass = 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (samples.values()[i] >= var) {
      mass += samples.weights()[i];
      acc += samples.weights()[i] * samples.values()[i];
    }
  return mass > 0.0 ? acc / mass : var;
}

/// eta + E[(Z - eta)^+] / (1 - alpha).
inline double ru_objective(const WeightedSamples& samples, const RiskLevel& level, double eta) {
  double excess = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i)
    excess += samples.weights()[i] * std::max(samples.values()[i] - eta, 0.0);
  return eta + excess / level.tail_mass();
}

struct RuResult {
  double value = 0.0;
  /// Largest minimizing sample point.
  double eta_star = 0.0;
};

/// Rockafellar-Uryasev CVaR: min_eta {eta + E[(Z - eta)^+] / (1 - alpha)}.
///
/// The objective is piecewise linear with kinks at the samples, so it is
/// evaluated exactly at every distinct sample value. The excess term is
/// accumulated from the top through nonnegative gaps between consecutive
/// sorted values, which keeps it translation-stable.
inline RuResult cvar_ru(const WeightedSamples& samples, const RiskLevel& level) {
  const auto& order = samples.order();
  const auto& z = samples.values();
  const auto& w = samples.weights();
  const std::size_t n = samples.size();

  RuResult best{z[order[n - 1]], z[order[n - 1]]};
  double excess = 0.0;      // sum_{j above k} w_j (z_j - z_k)
  double mass_above = 0.0;  // sum_{j above k} w_j
  for (std::size_t k = n - 1; k-- > 0;) {
    const std::size_t hi = order[k + 1];
    const std::size_t lo = order[k];
    mass_above += w[hi];
    excess += (z[hi] - z[lo]) * mass_above;
    if (z[lo] == z[hi]) continue;
    const double objective = z[lo] + excess / level.tail_mass();
    if (objective < best.value) best = {objective, z[lo]};
  }
  return best;
}

/// -CVaR_alpha(-D): mean of the worst (1 - alpha) probability mass of returns.
inline double lower_tail_return_risk(const WeightedSamples& returns, const RiskLevel& level) {
  return -cvar_ru(returns.negated(), level).value;
}

struct TailStatistic {
  double var = 0.0;
  double cvar_tail = 0.0;
  double cvar_ru = 0.0;
  double eta_star = 0.0;
};

inline TailStatistic tail_statistic(const WeightedSamples& samples, const RiskLevel& level) {
  const auto ru = cvar_ru(samples, level);
  return {empirical_var(samples, level), empirical_cvar_tail(samples, level), ru.value, ru.eta_star};
}

/// Mean of the ceil(fraction * n) smallest values (uniform weights).
inline double worst_fraction_mean(std::span<const double> values, double fraction) {
  if (values.empty()) throw std::invalid_argument("worst_fraction_mean: empty input");
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw std::invalid_argument("worst_fraction_mean: fraction must lie in (0, 1]");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  auto k = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(sorted.size()) - 1e-9));
  k = std::clamp<std::size_t>(k, 1, sorted.size());
  return std::accumulate(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k), 0.0) /
         static_cast<double>(k);
}

}  // namespace riskgrad::risk
