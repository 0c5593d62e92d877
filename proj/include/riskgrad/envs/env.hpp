#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "riskgrad/core/random.hpp"
#include "riskgrad/mdp/tabular_mdp.hpp"

namespace riskgrad::envs {

enum class EnvKind { ChainMdp, CliffGrid, PendulumSwingup, CartBalance };

inline std::string to_string(EnvKind k) {
  switch (k) {
    case EnvKind::ChainMdp: return "chain-mdp";
    case EnvKind::CliffGrid: return "cliff-grid";
    case EnvKind::PendulumSwingup: return "pendulum-swingup";
    case EnvKind::CartBalance: return "cart-balance";
  }
  return "?";
}

inline EnvKind env_kind_from_string(const std::string& s) {
  for (auto k : {EnvKind::ChainMdp, EnvKind::CliffGrid, EnvKind::PendulumSwingup, EnvKind::CartBalance})
    if (to_string(k) == s) return k;
  throw std::invalid_argument("unknown env kind: " + s);
}

struct Physics {
  double mass_scale = 1.0;
  double dt = 0.05;
  double gravity = 10.0;
  double damping = 0.0;
};

struct EnvSpec {
  EnvKind kind = EnvKind::PendulumSwingup;
  std::size_t horizon = 200;
  Physics physics;
  double reward_scale = 1.0;

  static EnvSpec defaults(EnvKind kind) {
    EnvSpec s;
    s.kind = kind;
    switch (kind) {
      case EnvKind::ChainMdp:
        s.horizon = 50;
        s.physics = {1.0, 1.0, 0.0, 0.0};
        break;
      case EnvKind::CliffGrid:
        s.horizon = 50;
        s.physics = {1.0, 1.0, 0.0, 0.0};
        break;
      case EnvKind::PendulumSwingup:
        s.horizon = 200;
        s.physics = {1.0, 0.05, 10.0, 0.0};
        break;
      case EnvKind::CartBalance:
        s.horizon = 500;
        s.physics = {1.0, 0.02, 9.8, 0.0};
        break;
    }
    return s;
  }

  void validate() const {
    if (!(physics.mass_scale > 0.0) || !std::isfinite(physics.mass_scale))
      throw std::invalid_argument("EnvSpec: mass_scale must be positive");
    if (horizon < 1) throw std::invalid_argument("EnvSpec: horizon must be at least 1");
    if (!(physics.dt > 0.0) || !std::isfinite(physics.dt)) throw std::invalid_argument("EnvSpec: dt must be positive");
    if (!(physics.gravity >= 0.0) || !std::isfinite(physics.gravity))
      throw std::invalid_argument("EnvSpec: gravity must be nonnegative");
    if (!(physics.damping >= 0.0) || !std::isfinite(physics.damping))
      throw std::invalid_argument("EnvSpec: damping must be nonnegative");
    if (!(reward_scale > 0.0) || !std::isfinite(reward_scale))
      throw std::invalid_argument("EnvSpec: reward_scale must be positive");
  }
};

/// Fixed constants of each environment.
namespace constants {
inline constexpr std::size_t kChainLength = 8;
inline constexpr double kChainBaseSlip = 0.1;
inline constexpr double kChainSafeReward = 0.05;
inline constexpr double kChainGoalReward = 1.0;

inline constexpr std::size_t kCliffRows = 4;
inline constexpr std::size_t kCliffCols = 6;
inline constexpr double kCliffBaseSlip = 0.1;
inline constexpr double kCliffStepReward = -1.0;
inline constexpr double kCliffFallReward = -20.0;

inline constexpr double kPendulumLength = 1.0;
inline constexpr double kPendulumMass = 1.0;
inline constexpr double kPendulumMaxTorque = 4.0;
inline constexpr double kPendulumMaxSpeed = 8.0;

inline constexpr double kCartMass = 1.0;
inline constexpr double kPoleMass = 0.1;
inline constexpr double kPoleHalfLength = 0.5;
inline constexpr double kCartMaxForce = 10.0;
inline constexpr double kCartPositionLimit = 2.4;
inline constexpr double kPoleAngleLimit = 12.0 * std::numbers::pi / 180.0;
}  // namespace constants

struct EnvInfo {
  std::size_t obs_dim = 0;
  bool discrete = false;
  /// Number of actions (discrete) or action dimension (continuous).
  std::size_t action_dim = 0;
  /// Continuous actions are clamped to [-action_limit, action_limit].
  double action_limit = 0.0;
  /// Bound on |reward| for every step.
  double reward_bound = 0.0;
  /// Mean undiscounted episode return regarded as solving the task.
  double solved_threshold = 0.0;
};

inline EnvInfo info(const EnvSpec& spec) {
  using namespace constants;
  const double k = spec.reward_scale;
  switch (spec.kind) {
    case EnvKind::ChainMdp:
      return {kChainLength, true, 2, 0.0, k * kChainGoalReward, k * 20.0};
    case EnvKind::CliffGrid:
      return {kCliffRows * kCliffCols, true, 4, 0.0, k * std::abs(kCliffFallReward), k * -12.0};
    case EnvKind::PendulumSwingup: {
      const double bound = std::numbers::pi * std::numbers::pi + 0.1 * kPendulumMaxSpeed * kPendulumMaxSpeed +
                           0.001 * kPendulumMaxTorque * kPendulumMaxTorque;
      return {3, false, 1, kPendulumMaxTorque, k * bound, k * -500.0};
    }
    case EnvKind::CartBalance:
      return {4, false, 1, kCartMaxForce, k * 1.0, k * 450.0};
  }
  throw std::logic_error("info: unknown env kind");
}

struct StepResult {
  std::vector<double> observation;
  double reward = 0.0;
  bool done = false;
  /// Hidden state driving the dynamics; for diagnostics and for the next step.
  std::vector<double> true_state;
  /// Non-empty when the step hit a numerical fault; the episode is then over.
  std::string fault;
};

namespace detail {

inline double slip_probability(const EnvSpec& spec, double base, double cap) {
  return std::min(cap, base * spec.physics.mass_scale);
}

inline std::vector<double> one_hot(std::size_t i, std::size_t n) {
  std::vector<double> v(n, 0.0);
  v[i] = 1.0;
  return v;
}

inline double angle_normalize(double x) {
  const double two_pi = 2.0 * std::numbers::pi;
  double y = std::fmod(x + std::numbers::pi, two_pi);
  if (y < 0.0) y += two_pi;
  return y - std::numbers::pi;
}

inline bool all_finite(std::span<const double> x) {
  return std::all_of(x.begin(), x.end(), [](double v) { return std::isfinite(v); });
}

// Cliff layout: start bottom-left, goal bottom-right, cliff cells between them.
inline std::size_t cliff_cell(std::size_t row, std::size_t col) { return row * constants::kCliffCols + col; }
inline bool cliff_is_fall(std::size_t cell) {
  const std::size_t row = cell / constants::kCliffCols;
  const std::size_t col = cell % constants::kCliffCols;
  return row == constants::kCliffRows - 1 && col > 0 && col + 1 < constants::kCliffCols;
}
inline bool cliff_is_goal(std::size_t cell) {
  return cell == cliff_cell(constants::kCliffRows - 1, constants::kCliffCols - 1);
}
inline std::size_t cliff_move(std::size_t cell, std::size_t dir) {
  std::size_t row = cell / constants::kCliffCols;
  std::size_t col = cell % constants::kCliffCols;
  switch (dir) {
    case 0: row = row > 0 ? row - 1 : row; break;                                   // up
    case 1: col = col + 1 < constants::kCliffCols ? col + 1 : col; break;           // right
    case 2: row = row + 1 < constants::kCliffRows ? row + 1 : row; break;           // down
    default: col = col > 0 ? col - 1 : col; break;                                  // left
  }
  return cliff_cell(row, col);
}
inline double cliff_reward(std::size_t next) {
  return cliff_is_fall(next) ? constants::kCliffFallReward : constants::kCliffStepReward;
}

// Chain: action 1 moves right, 0 moves left; a slip reverses the move.
inline std::size_t chain_move(std::size_t s, bool right) {
  if (right) return std::min(s + 1, constants::kChainLength - 1);
  return s > 0 ? s - 1 : 0;
}
inline double chain_reward(std::size_t s, std::size_t a) {
  if (s == 0 && a == 0) return constants::kChainSafeReward;
  if (s == constants::kChainLength - 1 && a == 1) return constants::kChainGoalReward;
  return 0.0;
}

inline std::size_t discrete_action(const std::vector<double>& action, std::size_t n) {
  if (action.size() != 1 || !std::isfinite(action[0]))
    throw std::invalid_argument("step: discrete action must be a single finite index");
  if (action[0] < 0.0 || action[0] >= static_cast<double>(n) || action[0] != std::floor(action[0]))
    throw std::invalid_argument("step: discrete action out of range");
  return static_cast<std::size_t>(action[0]);
}

inline double continuous_action(const std::vector<double>& action, double limit) {
  if (action.size() != 1 || !std::isfinite(action[0]))
    throw std::invalid_argument("step: continuous action must be one finite value");
  return std::clamp(action[0], -limit, limit);
}

}  // namespace detail

/// Observation the agent perceives for a true state.
inline std::vector<double> observe(const EnvSpec& spec, std::span<const double> state) {
  switch (spec.kind) {
    case EnvKind::ChainMdp:
      return detail::one_hot(static_cast<std::size_t>(state[0]), constants::kChainLength);
    case EnvKind::CliffGrid:
      return detail::one_hot(static_cast<std::size_t>(state[0]), constants::kCliffRows * constants::kCliffCols);
    case EnvKind::PendulumSwingup:
      return {std::cos(state[0]), std::sin(state[0]), state[1]};
    case EnvKind::CartBalance:
      return {state.begin(), state.end()};
  }
  throw std::logic_error("observe: unknown env kind");
}

/// Initial state: chain and cliff start at fixed cells; the pendulum hangs
/// near the bottom with angle in [pi - 0.1, pi + 0.1] and speed in [-0.1, 0.1];
/// the cart starts with every coordinate in [-0.05, 0.05].
inline StepResult reset(const EnvSpec& spec, Rng& rng) {
  spec.validate();
  StepResult out;
  switch (spec.kind) {
    case EnvKind::ChainMdp: out.true_state = {0.0}; break;
    case EnvKind::CliffGrid:
      out.true_state = {static_cast<double>(detail::cliff_cell(constants::kCliffRows - 1, 0))};
      break;
    case EnvKind::PendulumSwingup: {
      const double theta = rng.uniform(std::numbers::pi - 0.1, std::numbers::pi + 0.1);
      const double omega = rng.uniform(-0.1, 0.1);
      out.true_state = {theta, omega};
      break;
    }
    case EnvKind::CartBalance:
      out.true_state.resize(4);
      for (double& x : out.true_state) x = rng.uniform(-0.05, 0.05);
      break;
  }
  out.observation = observe(spec, out.true_state);
  return out;
}

/// One transition from `state`. Physics envs use semi-implicit Euler: the
/// velocity is updated first and the new velocity moves the position.
inline StepResult step(const EnvSpec& spec, std::span<const double> state, const std::vector<double>& action,
                       Rng& rng) {
  using namespace constants;
  StepResult out;
  const auto fault = [&](std::vector<double> s) {
    out.true_state = std::move(s);
    out.observation.assign(info(spec).obs_dim, 0.0);
    out.reward = 0.0;
    out.done = true;
    out.fault = "non-finite state";
    return out;
  };
  if (!detail::all_finite(state)) return fault({state.begin(), state.end()});
  const Physics& ph = spec.physics;

  switch (spec.kind) {
    case EnvKind::ChainMdp: {
      const std::size_t a = detail::discrete_action(action, 2);
      const auto s = static_cast<std::size_t>(state[0]);
      const bool slip = rng.uniform() < detail::slip_probability(spec, kChainBaseSlip, 0.45);
      const bool right = (a == 1) != slip;
      out.reward = spec.reward_scale * detail::chain_reward(s, a);
      out.true_state = {static_cast<double>(detail::chain_move(s, right))};
      break;
    }
    case EnvKind::CliffGrid: {
      const std::size_t a = detail::discrete_action(action, 4);
      const auto s = static_cast<std::size_t>(state[0]);
      std::size_t dir = a;
      if (rng.uniform() < detail::slip_probability(spec, kCliffBaseSlip, 0.5)) dir = (a + 1 + rng.index(3)) % 4;
      const std::size_t next = detail::cliff_move(s, dir);
      out.reward = spec.reward_scale * detail::cliff_reward(next);
      out.done = detail::cliff_is_fall(next) || detail::cliff_is_goal(next);
      out.true_state = {static_cast<double>(next)};
      break;
    }
    case EnvKind::PendulumSwingup: {
      const double torque = detail::continuous_action(action, kPendulumMaxTorque);
      const double theta = state[0];
      const double omega = state[1];
      const double inertia = ph.mass_scale * kPendulumMass * kPendulumLength * kPendulumLength;
      const double accel = ph.gravity / kPendulumLength * std::sin(theta) + (torque - ph.damping * omega) / inertia;
      const double new_omega = std::clamp(omega + accel * ph.dt, -kPendulumMaxSpeed, kPendulumMaxSpeed);
      const double new_theta = theta + new_omega * ph.dt;
      const double th = detail::angle_normalize(theta);
      out.reward = -spec.reward_scale * (th * th + 0.1 * omega * omega + 0.001 * torque * torque);
      out.true_state = {new_theta, new_omega};
      break;
    }
    case EnvKind::CartBalance: {
      const double force = detail::continuous_action(action, kCartMaxForce);
      const double x = state[0];
      const double x_dot = state[1];
      const double theta = state[2];
      const double theta_dot = state[3];
      const double m_cart = ph.mass_scale * kCartMass;
      const double m_pole = ph.mass_scale * kPoleMass;
      const double total = m_cart + m_pole;
      const double pole_moment = m_pole * kPoleHalfLength;
      const double c = std::cos(theta);
      const double s = std::sin(theta);
      const double temp = (force - ph.damping * x_dot + pole_moment * theta_dot * theta_dot * s) / total;
      const double theta_acc =
          (ph.gravity * s - c * temp) / (kPoleHalfLength * (4.0 / 3.0 - m_pole * c * c / total));
      const double x_acc = temp - pole_moment * theta_acc * c / total;
      const double new_x_dot = x_dot + ph.dt * x_acc;
      const double new_x = x + ph.dt * new_x_dot;
      const double new_theta_dot = theta_dot + ph.dt * theta_acc;
      const double new_theta = theta + ph.dt * new_theta_dot;
      out.true_state = {new_x, new_x_dot, new_theta, new_theta_dot};
      out.reward = spec.reward_scale;
      out.done = std::abs(new_x) > kCartPositionLimit || std::abs(new_theta) > kPoleAngleLimit;
      break;
    }
  }
  if (!detail::all_finite(out.true_state)) return fault(std::move(out.true_state));
  out.observation = observe(spec, out.true_state);
  return out;
}

/// Exact tabular model of a discrete env, with the given discount.
/// The cliff grid gets one extra absorbing zero-reward state for termination;
/// its rewards are expectations over the next cell.
inline mdp::TabularMdp tabular_model(const EnvSpec& spec, double gamma) {
  using namespace constants;
  spec.validate();
  if (spec.kind == EnvKind::ChainMdp) {
    const std::size_t n = kChainLength;
    const double slip = detail::slip_probability(spec, kChainBaseSlip, 0.45);
    std::vector<double> p(n * 2 * n, 0.0);
    std::vector<double> r(n * 2, 0.0);
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t a = 0; a < 2; ++a) {
        p[(s * 2 + a) * n + detail::chain_move(s, a == 1)] += 1.0 - slip;
        p[(s * 2 + a) * n + detail::chain_move(s, a != 1)] += slip;
        r[s * 2 + a] = spec.reward_scale * detail::chain_reward(s, a);
      }
    return {n, 2, std::move(p), std::move(r), gamma, detail::one_hot(0, n)};
  }
  if (spec.kind == EnvKind::CliffGrid) {
    const std::size_t cells = kCliffRows * kCliffCols;
    const std::size_t n = cells + 1;
    const std::size_t absorbing = cells;
    const double slip = detail::slip_probability(spec, kCliffBaseSlip, 0.5);
    std::vector<double> p(n * 4 * n, 0.0);
    std::vector<double> r(n * 4, 0.0);
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t a = 0; a < 4; ++a) {
        const std::size_t row = (s * 4 + a) * n;
        if (s == absorbing || detail::cliff_is_fall(s) || detail::cliff_is_goal(s)) {
          p[row + absorbing] = 1.0;
          continue;
        }
        for (std::size_t dir = 0; dir < 4; ++dir) {
          const double w = dir == a ? 1.0 - slip : slip / 3.0;
          const std::size_t next = detail::cliff_move(s, dir);
          p[row + next] += w;
          r[s * 4 + a] += w * spec.reward_scale * detail::cliff_reward(next);
        }
      }
    return {n, 4, std::move(p), std::move(r), gamma,
            detail::one_hot(detail::cliff_cell(kCliffRows - 1, 0), n)};
  }
  throw std::invalid_argument("tabular_model: env has no tabular form");
}

}  // namespace riskgrad::envs
