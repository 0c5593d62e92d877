#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "riskgrad/algos/rollout.hpp"
#include "riskgrad/core/random.hpp"
#include "riskgrad/nn/adam.hpp"
#include "riskgrad/nn/backprop.hpp"
#include "riskgrad/nn/graph.hpp"
#include "riskgrad/nn/mlp.hpp"
#include "riskgrad/nn/policy.hpp"
#include "riskgrad/risk/cvar.hpp"

namespace riskgrad::algos {

// ---------------------------------------------------------------------------
// Dual-variable gradients of the empirical Lagrangian
//   L(theta, eta, lam) = -mean(D) + lam * (mean((eta - D)^+) / (1 - alpha) - eta + beta).

/// (lam / (1 - alpha)) * mean(1{eta >= D}) - lam; ties count as 1.
inline double grad_eta(std::span<const double> returns, double eta, double lam, const risk::RiskLevel& level) {
  if (returns.empty()) throw std::invalid_argument("grad_eta: empty batch");
  if (!(lam >= 0.0)) throw std::invalid_argument("grad_eta: lambda must be nonnegative");
  std::size_t below = 0;
  for (double d : returns)
    if (eta >= d) ++below;
  const double frac = static_cast<double>(below) / static_cast<double>(returns.size());
  return lam / level.tail_mass() * frac - lam;
}

/// mean((eta - D)^+) / (1 - alpha) + beta - eta.
inline double grad_lambda(std::span<const double> returns, double eta, const risk::RiskLevel& level, double beta) {
  if (returns.empty()) throw std::invalid_argument("grad_lambda: empty batch");
  double excess = 0.0;
  for (double d : returns) excess += std::max(eta - d, 0.0);
  return excess / static_cast<double>(returns.size()) / level.tail_mass() + beta - eta;
}

/// Empirical Lagrangian on a frozen batch.
inline double empirical_lagrangian(std::span<const double> returns, double eta, double lam,
                                   const risk::RiskLevel& level, double beta) {
  if (returns.empty()) throw std::invalid_argument("empirical_lagrangian: empty batch");
  double mean = 0.0;
  double excess = 0.0;
  for (double d : returns) {
    mean += d;
    excess += std::max(eta - d, 0.0);
  }
  const double n = static_cast<double>(returns.size());
  return -mean / n + lam * (excess / n / level.tail_mass() - eta + beta);
}

/// Mean of the K = ceil(worst_fraction * N) smallest returns.
inline double update_beta(std::span<const double> returns, double worst_fraction) {
  if (returns.empty()) throw std::invalid_argument("update_beta: empty batch");
  return risk::worst_fraction_mean(returns, worst_fraction);
}

// ---------------------------------------------------------------------------

enum class Algo { Vpg, Ppo, Cppo };

inline std::string to_string(Algo a) {
  switch (a) {
    case Algo::Vpg: return "vpg";
    case Algo::Ppo: return "ppo";
    case Algo::Cppo: return "cppo";
  }
  return "?";
}

inline Algo algo_from_string(const std::string& s) {
  if (s == "vpg") return Algo::Vpg;
  if (s == "ppo") return Algo::Ppo;
  if (s == "cppo") return Algo::Cppo;
  throw std::invalid_argument("unknown algorithm: " + s);
}

/// How the trajectory penalty is weighted against the surrogate.
enum class PenaltyNormalization {
  /// (1/N) sum_i c_i sum_t log pi: the per-trajectory average.
  Trajectory,
  /// (1/(N T)) sum_i c_i sum_t log pi, divided by the advantage scale: the
  /// same normalization as the surrogate.
  Step,
};

/// How the penalty enters the per-step loss.
enum class PenaltyMode {
  /// Shifts the step's advantage by -w_pen / w_surr inside the clipped surrogate.
  /// Same gradient as Score while the ratio is 1, but bounded by the clip afterwards.
  Clipped,
  /// Adds w_pen * log pi(a|s) with no clipping.
  Score,
};

inline std::string to_string(PenaltyMode m) { return m == PenaltyMode::Clipped ? "clipped" : "score"; }

inline PenaltyMode penalty_mode_from_string(const std::string& s) {
  if (s == "clipped") return PenaltyMode::Clipped;
  if (s == "score") return PenaltyMode::Score;
  throw std::invalid_argument("unknown penalty mode: " + s);
}

inline std::string to_string(PenaltyNormalization p) {
  return p == PenaltyNormalization::Trajectory ? "trajectory" : "step";
}

inline PenaltyNormalization penalty_normalization_from_string(const std::string& s) {
  if (s == "trajectory") return PenaltyNormalization::Trajectory;
  if (s == "step") return PenaltyNormalization::Step;
  throw std::invalid_argument("unknown penalty normalization: " + s);
}

struct TrainerConfig {
  Algo algo = Algo::Cppo;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  bool clip = true;
  double clip_eps = 0.2;
  std::size_t update_epochs = 10;
  std::size_t minibatches = 4;
  double lr_theta = 3e-4;
  double lr_phi = 1e-3;
  double lr_eta = 1.0;
  double lr_lambda = 0.01;
  double alpha = 0.9;
  /// K/N for beta adaptation; 0 selects min(1, 1.5 (1 - alpha)).
  double worst_fraction = 0.0;
  double lambda_init = 1.0;
  double lambda_max = 100.0;
  bool freeze_lambda = false;
  bool normalize_advantages = true;
  /// Divide the eta step by lambda. The minimizing eta does not depend on lambda,
  /// so this only rescales the step: eta tracks the tail quantile at a rate set by lr_eta alone.
  bool normalize_eta_step = true;
  /// Global gradient-norm clip for theta and phi steps; <= 0 disables.
  double max_grad_norm = 0.5;
  PenaltyNormalization penalty_normalization = PenaltyNormalization::Step;
  PenaltyMode penalty_mode = PenaltyMode::Clipped;

  double resolved_worst_fraction() const {
    return worst_fraction > 0.0 ? worst_fraction : std::min(1.0, 1.5 * (1.0 - alpha));
  }

  void validate() const {
    if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("config: gamma must lie in (0, 1)");
    if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) throw std::invalid_argument("config: gae_lambda must lie in [0, 1]");
    if (clip && !(clip_eps > 0.0 && clip_eps < 1.0)) throw std::invalid_argument("config: clip_eps must lie in (0, 1)");
    if (update_epochs < 1 || minibatches < 1) throw std::invalid_argument("config: epochs and minibatches must be >= 1");
    for (double lr : {lr_theta, lr_phi})
      if (!(lr > 0.0) || !std::isfinite(lr)) throw std::invalid_argument("config: learning rates must be positive");
    for (double lr : {lr_eta, lr_lambda})
      if (!(lr >= 0.0) || !std::isfinite(lr)) throw std::invalid_argument("config: dual learning rates must be >= 0");
    risk::RiskLevel check(alpha);
    const double wf = resolved_worst_fraction();
    if (!(wf > 0.0 && wf <= 1.0)) throw std::invalid_argument("config: worst_fraction must lie in (0, 1]");
    if (algo == Algo::Cppo && !(wf > 1.0 - alpha))
      throw std::invalid_argument("config: worst_fraction must exceed 1 - alpha");
    if (!(lambda_init >= 0.0) || !(lambda_max >= lambda_init))
      throw std::invalid_argument("config: need 0 <= lambda_init <= lambda_max");
  }

  /// Named presets: "cppo", "ppo", "vpg", and "pg-cmdp-like" (CPPO with
  /// clipping disabled and a single full-batch epoch).
  static TrainerConfig preset(const std::string& name) {
    TrainerConfig c;
    if (name == "cppo") return c;
    if (name == "ppo") {
      c.algo = Algo::Ppo;
      return c;
    }
    if (name == "vpg") {
      c.algo = Algo::Vpg;
      return c;
    }
    if (name == "pg-cmdp-like") {
      c.clip = false;
      c.update_epochs = 1;
      c.minibatches = 1;
      return c;
    }
    throw std::invalid_argument("unknown trainer preset: " + name);
  }
};

struct CppoState {
  nn::PolicyNet policy;
  nn::MlpParams value;
  nn::AdamState adam_theta;
  nn::AdamState adam_phi;
  double eta = 0.0;
  double lam = 1.0;
  double beta = 0.0;
  risk::RiskLevel level{0.9};
  double lr_eta = 1.0;
  double lr_lambda = 0.01;
  double lambda_max = 100.0;
  double worst_fraction = 0.15;
  /// eta, lam and beta are set from the first batch.
  bool initialized = false;
  /// Incremented on every policy update; batches carry the version they were collected under.
  std::uint64_t version = 0;
  /// Minibatch shuffling.
  Rng rng;

  static CppoState create(nn::PolicyNet policy, nn::MlpParams value, const TrainerConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    CppoState s;
    s.adam_theta = nn::AdamState::for_params(policy.param_count(), cfg.lr_theta);
    s.adam_phi = nn::AdamState::for_params(value.params.size(), cfg.lr_phi);
    s.policy = std::move(policy);
    s.value = std::move(value);
    s.level = risk::RiskLevel(cfg.alpha);
    s.lr_eta = cfg.lr_eta;
    s.lr_lambda = cfg.lr_lambda;
    s.lambda_max = cfg.lambda_max;
    s.lam = cfg.lambda_init;
    s.worst_fraction = cfg.resolved_worst_fraction();
    s.rng = Rng(derive_seed(seed, 0x5eed));
    return s;
  }
};

struct UpdateDiagnostics {
  double surrogate = 0.0;
  double clip_fraction = 0.0;
  /// Mean over trajectories of (lam / (1 - alpha)) (eta - D)^+.
  double penalty = 0.0;
  double grad_eta = 0.0;
  double grad_lambda = 0.0;
  double lower_tail_risk = 0.0;
  double beta = 0.0;
  double value_loss = 0.0;
  double eta = 0.0;
  double lambda = 0.0;
  double mean_return = 0.0;

  bool all_finite() const {
    for (double x : {surrogate, clip_fraction, penalty, grad_eta, grad_lambda, lower_tail_risk, beta, value_loss, eta,
                     lambda, mean_return})
      if (!std::isfinite(x)) return false;
    return true;
  }
};

class StaleBatch : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class UpdateAborted : public std::runtime_error {
 public:
  UpdateAborted(const std::string& what, UpdateDiagnostics diag) : std::runtime_error(what), diagnostics(diag) {}
  UpdateDiagnostics diagnostics;
};

// ---------------------------------------------------------------------------
// Policy loss

/// Per-step advantages and per-trajectory penalty weights of the full-batch loss
///   sum_t [ -surr_t / S + penalty_i * log pi(a_t | s_t) ],  S = total steps.
struct PolicyLossTerms {
  std::vector<std::vector<double>> advantages;
  std::vector<double> penalty;
  /// Mean of (lam / (1 - alpha)) (eta - D_i)^+.
  double mean_coefficient = 0.0;
  std::size_t total_steps = 0;
};

inline PolicyLossTerms policy_loss_terms(const RolloutBatch& batch, const CppoState& state, const TrainerConfig& cfg,
                                         bool with_penalty) {
  if (!batch.has_advantages) throw std::invalid_argument("policy loss: advantages not computed");
  PolicyLossTerms out;
  out.total_steps = batch.total_steps();
  if (out.total_steps == 0) throw std::invalid_argument("policy loss: empty batch");
  double mean = 0.0;
  double sq = 0.0;
  for (const auto& tr : batch.trajectories)
    for (double a : tr.advantages) {
      mean += a;
      sq += a * a;
    }
  const double s = static_cast<double>(out.total_steps);
  mean /= s;
  double scale = 1.0;
  double shift = 0.0;
  if (cfg.normalize_advantages) {
    const double var = std::max(sq / s - mean * mean, 0.0);
    scale = std::sqrt(var) + 1e-8;
    shift = mean;
  }
  for (const auto& tr : batch.trajectories) {
    std::vector<double> adv(tr.advantages);
    if (cfg.normalize_advantages)
      for (double& a : adv) a = (a - shift) / scale;
    out.advantages.push_back(std::move(adv));
  }
  const double n = static_cast<double>(batch.n_trajectories());
  out.penalty.assign(batch.n_trajectories(), 0.0);
  if (with_penalty) {
    for (std::size_t i = 0; i < batch.n_trajectories(); ++i) {
      const double c =
          state.lam / state.level.tail_mass() * std::max(state.eta - batch.trajectories[i].discounted_return, 0.0);
      out.mean_coefficient += c / n;
      out.penalty[i] = cfg.penalty_normalization == PenaltyNormalization::Trajectory ? c / n : c / (s * scale);
    }
  }
  return out;
}

/// One step's contribution: -w_surr * surr_t + w_pen * log pi(a_t | s_t) (Score mode),
/// or -w_surr * surr_t with the advantage shifted by -w_pen / w_surr (Clipped mode).
inline nn::Var step_policy_loss(nn::CompGraph& g, std::span<const nn::Var> theta, const nn::PolicyNet& policy,
                                const Trajectory& tr, std::size_t t, double advantage, double w_surr, double w_pen,
                                const TrainerConfig& cfg, double* ratio_out = nullptr) {
  if (cfg.penalty_mode == PenaltyMode::Clipped && w_pen != 0.0 && w_surr > 0.0) {
    advantage -= w_pen / w_surr;
    w_pen = 0.0;
  }
  const nn::Var lp =
      policy.forward_logprob(g, theta, std::span<const double>(tr.observations[t]), tr.actions[t]);
  const nn::Var ratio = g.exp(g.add_const(lp, -tr.logprob_old[t]));
  if (ratio_out != nullptr) *ratio_out = ratio.value();
  nn::Var surr = g.mul_const(ratio, advantage);
  if (cfg.clip) surr = g.min(surr, g.mul_const(g.clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps), advantage));
  nn::Var loss = g.mul_const(surr, -w_surr);
  if (w_pen != 0.0) loss = g.add(loss, g.mul_const(lp, w_pen));
  return loss;
}

/// d(step loss)/d(log pi) for the loss of step_policy_loss, evaluated at log pi = lp.
inline double step_loss_dlogprob(double lp, double logprob_old, double advantage, double w_surr, double w_pen,
                                 const TrainerConfig& cfg, double* ratio_out = nullptr) {
  if (cfg.penalty_mode == PenaltyMode::Clipped && w_pen != 0.0 && w_surr > 0.0) {
    advantage -= w_pen / w_surr;
    w_pen = 0.0;
  }
  const double ratio = std::exp(lp + -logprob_old);
  if (ratio_out != nullptr) *ratio_out = ratio;
  double dsurr = advantage;
  if (cfg.clip) {
    const double lo = 1.0 - cfg.clip_eps;
    const double hi = 1.0 + cfg.clip_eps;
    const double clipped = std::min(std::max(ratio, lo), hi) * advantage;
    if (ratio * advantage - clipped >= 0.0) dsurr = ratio >= lo && ratio <= hi ? advantage : 0.0;
  }
  return -w_surr * dsurr * ratio + w_pen;
}

/// Full-batch CPPO policy loss as one graph node over leaves `theta` for state.policy.flat().
/// Its gradient is the clipped-surrogate gradient averaged over all steps plus
/// the score-function penalty term.
inline nn::Var cppo_policy_loss(nn::CompGraph& g, std::span<const nn::Var> theta, const RolloutBatch& batch,
                                const CppoState& state, const TrainerConfig& cfg) {
  if (batch.policy_version != state.version)
    throw StaleBatch("cppo_policy_loss: batch was collected under an older policy");
  const auto terms = policy_loss_terms(batch, state, cfg, true);
  const double inv_s = 1.0 / static_cast<double>(terms.total_steps);
  std::vector<nn::Var> parts;
  for (std::size_t i = 0; i < batch.n_trajectories(); ++i) {
    const auto& tr = batch.trajectories[i];
    for (std::size_t t = 0; t < tr.size(); ++t)
      parts.push_back(step_policy_loss(g, theta, state.policy, tr, t, terms.advantages[i][t], inv_s, terms.penalty[i], cfg));
  }
  return g.sum(parts);
}

namespace detail {

struct StepRef {
  std::uint32_t traj;
  std::uint32_t step;
};

inline std::vector<StepRef> step_refs(const RolloutBatch& batch) {
  std::vector<StepRef> refs;
  refs.reserve(batch.total_steps());
  for (std::size_t i = 0; i < batch.n_trajectories(); ++i)
    for (std::size_t t = 0; t < batch.trajectories[i].size(); ++t)
      refs.push_back({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(t)});
  return refs;
}

inline void shuffle(std::vector<StepRef>& refs, Rng& rng) {
  for (std::size_t k = refs.size(); k > 1; --k) std::swap(refs[k - 1], refs[rng.index(k)]);
}

inline void clip_gradient(std::vector<double>& grad, double max_norm) {
  if (max_norm <= 0.0) return;
  double sq = 0.0;
  for (double x : grad) sq += x * x;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double k = max_norm / norm;
    for (double& x : grad) x *= k;
  }
}

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

struct EpochStats {
  double surrogate = 0.0;
  double clip_fraction = 0.0;
  double value_loss = 0.0;
};

/// PPO-style minibatch epochs on theta. Returns surrogate/clip statistics of the last epoch.
inline EpochStats policy_epochs(CppoState& s, const RolloutBatch& batch, const PolicyLossTerms& terms,
                                const TrainerConfig& cfg) {
  auto refs = step_refs(batch);
  const double total = static_cast<double>(terms.total_steps);
  nn::PolicyBackprop bp(s.policy);
  std::vector<double> theta = s.policy.flat();
  std::vector<double> grad(theta.size());
  EpochStats stats;
  for (std::size_t epoch = 0; epoch < cfg.update_epochs; ++epoch) {
    shuffle(refs, s.rng);
    double surr_sum = 0.0;
    std::size_t clipped = 0;
    const std::size_t n_mb = std::min(cfg.minibatches, refs.size());
    for (std::size_t mb = 0; mb < n_mb; ++mb) {
      const std::size_t lo = refs.size() * mb / n_mb;
      const std::size_t hi = refs.size() * (mb + 1) / n_mb;
      const double inv_b = 1.0 / static_cast<double>(hi - lo);
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t k = lo; k < hi; ++k) {
        const auto [i, t] = refs[k];
        const auto& tr = batch.trajectories[i];
        const double adv = terms.advantages[i][t];
        const double lp = bp.forward(tr.observations[t], tr.actions[t]);
        double ratio = 1.0;
        const double dlp =
            step_loss_dlogprob(lp, tr.logprob_old[t], adv, inv_b, terms.penalty[i] * total * inv_b, cfg, &ratio);
        bp.backward(dlp, grad);
        const double clipped_ratio =
            cfg.clip ? std::clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) : ratio;
        surr_sum += std::min(ratio * adv, clipped_ratio * adv);
        if (cfg.clip && std::abs(ratio - 1.0) > cfg.clip_eps) ++clipped;
      }
      if (!all_finite(grad)) throw std::domain_error("policy gradient is not finite");
      clip_gradient(grad, cfg.max_grad_norm);
      nn::adam_step(s.adam_theta, theta, grad);
      s.policy.set_flat(theta);
      bp.refresh();
    }
    stats.surrogate = surr_sum / total;
    stats.clip_fraction = static_cast<double>(clipped) / total;
  }
  return stats;
}

/// Minibatch epochs on phi minimizing mean (V(s) - R_hat)^2. Returns the last epoch's mean loss.
inline double value_epochs(CppoState& s, const RolloutBatch& batch, const TrainerConfig& cfg) {
  auto refs = step_refs(batch);
  nn::MlpBackprop bp(s.value);
  std::vector<double> grad(s.value.params.size());
  double last = 0.0;
  for (std::size_t epoch = 0; epoch < cfg.update_epochs; ++epoch) {
    shuffle(refs, s.rng);
    double loss_sum = 0.0;
    const std::size_t n_mb = std::min(cfg.minibatches, refs.size());
    for (std::size_t mb = 0; mb < n_mb; ++mb) {
      const std::size_t lo = refs.size() * mb / n_mb;
      const std::size_t hi = refs.size() * (mb + 1) / n_mb;
      const double inv_b = 1.0 / static_cast<double>(hi - lo);
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t k = lo; k < hi; ++k) {
        const auto [i, t] = refs[k];
        const auto& tr = batch.trajectories[i];
        const double diff = bp.forward(tr.observations[t])[0] + -tr.reward_to_go[t];
        loss_sum += diff * diff;
        const double dv = 2.0 * diff * inv_b;
        bp.backward(std::span<const double>(&dv, 1), grad);
      }
      if (!all_finite(grad)) throw std::domain_error("value gradient is not finite");
      clip_gradient(grad, cfg.max_grad_norm);
      nn::adam_step(s.adam_phi, s.value.params, grad);
    }
    last = loss_sum / static_cast<double>(refs.size());
  }
  return last;
}

inline void check_batch(const RolloutBatch& batch, const CppoState& state) {
  if (batch.policy_version != state.version) throw StaleBatch("update: batch was collected under an older policy");
  if (!batch.has_advantages) throw std::invalid_argument("update: advantages not computed");
  if (batch.n_trajectories() < 2) throw std::invalid_argument("update: need at least 2 trajectories");
}

inline void fill_return_stats(UpdateDiagnostics& d, const std::vector<double>& returns, const CppoState& s) {
  d.lower_tail_risk = risk::lower_tail_return_risk(risk::WeightedSamples::uniform(returns), s.level);
  d.mean_return = std::accumulate(returns.begin(), returns.end(), 0.0) / static_cast<double>(returns.size());
}

template <typename Body>
UpdateDiagnostics guarded_update(CppoState& state, const RolloutBatch& batch, Body body) {
  check_batch(batch, state);
  CppoState work = state;
  UpdateDiagnostics diag;
  try {
    body(work, diag);
  } catch (const std::domain_error& e) {
    throw UpdateAborted(std::string("update aborted: ") + e.what(), diag);
  }
  if (!diag.all_finite() || !all_finite(work.policy.flat()) || !all_finite(work.value.params))
    throw UpdateAborted("update aborted: non-finite result", diag);
  ++work.version;
  state = std::move(work);
  return diag;
}

}  // namespace detail

/// eta, theta, lam, phi updates in that order, then beta adaptation.
/// On the first call eta starts at the empirical (1 - alpha)-quantile of the
/// returns, beta at the worst-K mean and lam at its configured initial value.
inline UpdateDiagnostics cppo_update(CppoState& state, const RolloutBatch& batch, const TrainerConfig& cfg) {
  return detail::guarded_update(state, batch, [&](CppoState& s, UpdateDiagnostics& d) {
    const auto returns = batch.returns();
    if (!s.initialized) {
      const risk::RiskLevel lower(s.level.tail_mass());
      s.eta = risk::empirical_var(risk::WeightedSamples::uniform(returns), lower);
      s.beta = update_beta(returns, s.worst_fraction);
      s.initialized = true;
    }
    d.grad_eta = grad_eta(returns, s.eta, s.lam, s.level);
    if (!cfg.normalize_eta_step) s.eta -= s.lr_eta * d.grad_eta;
    else if (s.lam > 0.0) s.eta -= s.lr_eta * (d.grad_eta / s.lam);

    const auto terms = policy_loss_terms(batch, s, cfg, true);
    d.penalty = terms.mean_coefficient;
    const auto stats = detail::policy_epochs(s, batch, terms, cfg);
    d.surrogate = stats.surrogate;
    d.clip_fraction = stats.clip_fraction;

    d.grad_lambda = grad_lambda(returns, s.eta, s.level, s.beta);
    if (!cfg.freeze_lambda) s.lam = std::clamp(s.lam + s.lr_lambda * d.grad_lambda, 0.0, s.lambda_max);

    d.value_loss = detail::value_epochs(s, batch, cfg);
    s.beta = update_beta(returns, s.worst_fraction);
    d.beta = s.beta;
    d.eta = s.eta;
    d.lambda = s.lam;
    detail::fill_return_stats(d, returns, s);
  });
}

/// Clipped-surrogate epochs on theta then value epochs on phi; no eta, lam or beta.
inline UpdateDiagnostics ppo_update(CppoState& state, const RolloutBatch& batch, const TrainerConfig& cfg) {
  return detail::guarded_update(state, batch, [&](CppoState& s, UpdateDiagnostics& d) {
    const auto terms = policy_loss_terms(batch, s, cfg, false);
    const auto stats = detail::policy_epochs(s, batch, terms, cfg);
    d.surrogate = stats.surrogate;
    d.clip_fraction = stats.clip_fraction;
    d.value_loss = detail::value_epochs(s, batch, cfg);
    d.eta = s.eta;
    d.lambda = s.lam;
    d.beta = s.beta;
    detail::fill_return_stats(d, batch.returns(), s);
  });
}

/// Gradient of -(1/S) sum_t log pi(a_t | s_t) A_t at the current policy.
inline std::vector<double> vpg_gradient(const CppoState& state, const RolloutBatch& batch, const TrainerConfig& cfg) {
  const auto terms = policy_loss_terms(batch, state, cfg, false);
  const double inv_s = 1.0 / static_cast<double>(terms.total_steps);
  std::vector<double> grad(state.policy.param_count(), 0.0);
  nn::PolicyBackprop bp(state.policy);
  for (std::size_t i = 0; i < batch.n_trajectories(); ++i) {
    const auto& tr = batch.trajectories[i];
    for (std::size_t t = 0; t < tr.size(); ++t) {
      bp.forward(tr.observations[t], tr.actions[t]);
      bp.backward(-terms.advantages[i][t] * inv_s, grad);
    }
  }
  return grad;
}

/// Full-batch gradient of the policy loss (surrogate plus optional penalty) at the current policy.
inline std::vector<double> policy_loss_gradient(const CppoState& state, const RolloutBatch& batch,
                                                const TrainerConfig& cfg, bool with_penalty) {
  const auto terms = policy_loss_terms(batch, state, cfg, with_penalty);
  const double inv_s = 1.0 / static_cast<double>(terms.total_steps);
  std::vector<double> grad(state.policy.param_count(), 0.0);
  nn::PolicyBackprop bp(state.policy);
  for (std::size_t i = 0; i < batch.n_trajectories(); ++i) {
    const auto& tr = batch.trajectories[i];
    for (std::size_t t = 0; t < tr.size(); ++t) {
      const double lp = bp.forward(tr.observations[t], tr.actions[t]);
      bp.backward(step_loss_dlogprob(lp, tr.logprob_old[t], terms.advantages[i][t], inv_s, terms.penalty[i], cfg), grad);
    }
  }
  return grad;
}

/// One full-batch Adam step on the vanilla policy-gradient loss, then value epochs.
inline UpdateDiagnostics vpg_update(CppoState& state, const RolloutBatch& batch, const TrainerConfig& cfg) {
  return detail::guarded_update(state, batch, [&](CppoState& s, UpdateDiagnostics& d) {
    auto grad = vpg_gradient(s, batch, cfg);
    if (!detail::all_finite(grad)) throw std::domain_error("policy gradient is not finite");
    detail::clip_gradient(grad, cfg.max_grad_norm);
    auto theta = s.policy.flat();
    nn::adam_step(s.adam_theta, theta, grad);
    s.policy.set_flat(theta);
    d.value_loss = detail::value_epochs(s, batch, cfg);
    d.eta = s.eta;
    d.lambda = s.lam;
    d.beta = s.beta;
    detail::fill_return_stats(d, batch.returns(), s);
  });
}

inline UpdateDiagnostics update(CppoState& state, const RolloutBatch& batch, const TrainerConfig& cfg) {
  switch (cfg.algo) {
    case Algo::Vpg: return vpg_update(state, batch, cfg);
    case Algo::Ppo: return ppo_update(state, batch, cfg);
    case Algo::Cppo: return cppo_update(state, batch, cfg);
  }
  throw std::logic_error("update: unknown algorithm");
}

// ---------------------------------------------------------------------------
// Checkpoints. nlohmann/json writes shortest round-trip doubles, so every
// parameter survives a save/load cycle bit-exactly.

inline nlohmann::json adam_to_json(const nn::AdamState& a) {
  return {{"m", a.m}, {"v", a.v}, {"step", a.step}, {"lr", a.lr},
          {"beta1", a.beta1}, {"beta2", a.beta2}, {"eps", a.eps}};
}

inline nn::AdamState adam_from_json(const nlohmann::json& j) {
  nn::AdamState a;
  a.m = j.at("m").get<std::vector<double>>();
  a.v = j.at("v").get<std::vector<double>>();
  a.step = j.at("step").get<std::uint64_t>();
  a.lr = j.at("lr").get<double>();
  a.beta1 = j.at("beta1").get<double>();
  a.beta2 = j.at("beta2").get<double>();
  a.eps = j.at("eps").get<double>();
  return a;
}

inline nlohmann::json checkpoint_to_json(const CppoState& s) {
  const auto& net = s.policy.net();
  const auto theta = s.policy.flat();
  return {{"format", "riskgrad-checkpoint"},
          {"version", 1},
          {"policy",
           {{"head", nn::to_string(s.policy.head())},
            {"sizes", net.sizes},
            {"params", net.params},
            {"log_std", std::vector<double>(theta.begin() + static_cast<std::ptrdiff_t>(net.params.size()), theta.end())}}},
          {"value", {{"sizes", s.value.sizes}, {"params", s.value.params}}},
          {"adam_theta", adam_to_json(s.adam_theta)},
          {"adam_phi", adam_to_json(s.adam_phi)},
          {"eta", s.eta},
          {"lambda", s.lam},
          {"beta", s.beta},
          {"alpha", s.level.alpha()},
          {"lr_eta", s.lr_eta},
          {"lr_lambda", s.lr_lambda},
          {"lambda_max", s.lambda_max},
          {"worst_fraction", s.worst_fraction},
          {"initialized", s.initialized},
          {"policy_version", s.version},
          {"rng", s.rng.serialize()}};
}

inline CppoState checkpoint_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "riskgrad-checkpoint" || j.value("version", 0) != 1)
    throw std::runtime_error("unsupported checkpoint format");
  CppoState s;
  const auto& p = j.at("policy");
  s.policy = nn::PolicyNet(nn::head_from_string(p.at("head").get<std::string>()),
                           nn::MlpParams{p.at("sizes").get<std::vector<std::size_t>>(),
                                         p.at("params").get<std::vector<double>>()},
                           p.at("log_std").get<std::vector<double>>());
  s.value = nn::MlpParams{j.at("value").at("sizes").get<std::vector<std::size_t>>(),
                          j.at("value").at("params").get<std::vector<double>>()};
  s.value.validate();
  s.adam_theta = adam_from_json(j.at("adam_theta"));
  s.adam_phi = adam_from_json(j.at("adam_phi"));
  s.eta = j.at("eta").get<double>();
  s.lam = j.at("lambda").get<double>();
  s.beta = j.at("beta").get<double>();
  s.level = risk::RiskLevel(j.at("alpha").get<double>());
  s.lr_eta = j.at("lr_eta").get<double>();
  s.lr_lambda = j.at("lr_lambda").get<double>();
  s.lambda_max = j.at("lambda_max").get<double>();
  s.worst_fraction = j.at("worst_fraction").get<double>();
  s.initialized = j.at("initialized").get<bool>();
  s.version = j.at("policy_version").get<std::uint64_t>();
  s.rng = Rng::deserialize(j.at("rng").get<std::string>());
  if (s.lam < 0.0) throw std::runtime_error("checkpoint: negative lambda");
  return s;
}

}  // namespace riskgrad::algos
