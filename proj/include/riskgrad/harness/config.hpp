#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "riskgrad/algos/cppo.hpp"
#include "riskgrad/envs/env.hpp"
#include "riskgrad/envs/observation.hpp"

#ifndef RISKGRAD_VERSION
#define RISKGRAD_VERSION "0.1.0"
#endif
#ifndef RISKGRAD_GIT_REVISION
#define RISKGRAD_GIT_REVISION "unknown"
#endif

namespace riskgrad::harness {

using nlohmann::json;

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline json version_stamp() {
  return {{"riskgrad", RISKGRAD_VERSION}, {"revision", RISKGRAD_GIT_REVISION}};
}

/// Every accepted key with its default. null means "take the value from the
/// env defaults or the algorithm preset".
inline json default_config_tree() {
  return {
      {"env",
       {{"kind", "pendulum-swingup"},
        {"horizon", nullptr},
        {"mass_scale", 1.0},
        {"dt", nullptr},
        {"gravity", nullptr},
        {"damping", nullptr},
        {"reward_scale", 1.0}}},
      {"algo", "cppo"},
      {"trainer",
       {{"gamma", nullptr},
        {"gae_lambda", nullptr},
        {"clip", nullptr},
        {"clip_eps", nullptr},
        {"update_epochs", nullptr},
        {"minibatches", nullptr},
        {"lr_theta", nullptr},
        {"lr_phi", nullptr},
        {"lr_eta", nullptr},
        {"lr_lambda", nullptr},
        {"alpha", nullptr},
        {"worst_fraction", nullptr},
        {"lambda_init", nullptr},
        {"lambda_max", nullptr},
        {"freeze_lambda", nullptr},
        {"normalize_advantages", nullptr},
        {"normalize_eta_step", nullptr},
        {"max_grad_norm", nullptr},
        {"penalty_normalization", nullptr},
        {"penalty_mode", nullptr}}},
      {"network", {{"policy_hidden", {64, 64}}, {"value_hidden", {64, 64}}, {"init_log_std", -0.5}}},
      {"seeds", {0}},
      {"total_steps", 300000},
      {"batch_trajectories", 10},
      {"eval_every", 10},
      {"eval_episodes", 20},
      {"risk_episodes", 100},
      {"workers", 1},
      {"resume", false},
      {"out", "runs/train"},
      {"sweep",
       {{"checkpoints", json::array()},
        {"mass_scale", {0.5, 0.7, 0.85, 1.0, 1.15, 1.3, 1.5}},
        {"sigma", {0.0, 0.05, 0.1, 0.2, 0.4}},
        {"epsilon", {0.0, 0.01, 0.03, 0.1}},
        {"axes", {"mass_scale", "sigma", "epsilon"}},
        {"episodes", 50},
        {"seeds", {0}},
        {"fgsm_objective", "neglogprob"}}},
      {"verify",
       {{"instances", 100},
        {"theorem3_instances", 50},
        {"theorem3_horizon", 12},
        {"theorem4_instances", 20},
        {"theorem4_horizon", 10},
        {"beta_points", 11},
        {"identity_tol", 1e-8},
        {"bound_tol", 1e-10},
        {"lemma_tol", 1e-10},
        {"risk_tol", 1e-9}}},
  };
}

/// Recursively overlays `user` onto `base`; keys absent from `base` are rejected.
inline void merge_checked(json& base, const json& user, const std::string& path) {
  if (!user.is_object()) throw ConfigError("config: " + (path.empty() ? std::string("root") : path) + " must be an object");
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("config: unknown key '" + key + "'");
    json& slot = base[it.key()];
    if (slot.is_object() && !slot.empty()) merge_checked(slot, it.value(), key);
    else slot = it.value();
  }
}

/// Parses "a.b.c=value"; value is read as JSON when possible, else as a string.
inline void apply_override(json& user, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key=value: " + assignment);
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json* node = &user;
  std::stringstream ss(path);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) {
    if (part.empty()) throw ConfigError("override: empty key segment in " + path);
    parts.push_back(part);
  }
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->contains(parts[i])) (*node)[parts[i]] = json::object();
    node = &(*node)[parts[i]];
    if (!node->is_object()) throw ConfigError("override: " + parts[i] + " is not a section");
  }
  (*node)[parts.back()] = value;
}

struct SweepSource {
  std::string label;
  std::string path;
};

struct SweepSpec {
  std::vector<SweepSource> checkpoints;
  std::vector<double> mass_scale;
  std::vector<double> sigma;
  std::vector<double> epsilon;
  std::vector<std::string> axes;
  std::size_t episodes = 50;
  std::vector<std::uint64_t> seeds;
  envs::FgsmObjective fgsm_objective = envs::FgsmObjective::NegLogProb;

  const std::vector<double>& grid(const std::string& axis) const {
    if (axis == "mass_scale") return mass_scale;
    if (axis == "sigma") return sigma;
    if (axis == "epsilon") return epsilon;
    throw ConfigError("sweep: unknown axis " + axis);
  }

  void validate() const {
    if (axes.empty()) throw ConfigError("sweep: no axes selected");
    for (const auto& a : axes) {
      const auto& g = grid(a);
      if (g.empty()) throw ConfigError("sweep: grid '" + a + "' is empty");
      if (!std::is_sorted(g.begin(), g.end())) throw ConfigError("sweep: grid '" + a + "' must be sorted");
      for (double v : g)
        if (!std::isfinite(v) || (a == "mass_scale" ? v <= 0.0 : v < 0.0))
          throw ConfigError("sweep: grid '" + a + "' has an invalid value");
    }
    if (episodes < 10) throw ConfigError("sweep: episodes must be at least 10");
    if (seeds.empty()) throw ConfigError("sweep: seeds must be nonempty");
  }
};

struct VerifySettings {
  std::size_t instances = 100;
  std::size_t theorem3_instances = 50;
  std::size_t theorem3_horizon = 12;
  std::size_t theorem4_instances = 20;
  std::size_t theorem4_horizon = 10;
  std::size_t beta_points = 11;
  double identity_tol = 1e-8;
  double bound_tol = 1e-10;
  double lemma_tol = 1e-10;
  double risk_tol = 1e-9;
};

struct RunConfig {
  envs::EnvSpec env;
  algos::TrainerConfig trainer;
  std::vector<std::size_t> policy_hidden{64, 64};
  std::vector<std::size_t> value_hidden{64, 64};
  double init_log_std = -0.5;
  std::vector<std::uint64_t> seeds{0};
  std::size_t total_steps = 300000;
  std::size_t batch_trajectories = 10;
  std::size_t eval_every = 10;
  std::size_t eval_episodes = 20;
  /// Stochastic episodes sampled from the final policy to measure its tail risk.
  std::size_t risk_episodes = 100;
  std::size_t workers = 1;
  bool resume = false;
  std::string out = "runs/train";
  SweepSpec sweep;
  VerifySettings verify;
  /// Fully resolved tree, written next to outputs.
  json resolved;
};

namespace detail {

template <typename T>
void take(const json& j, const char* key, T& out) {
  if (!j.contains(key) || j.at(key).is_null()) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: bad value for '") + key + "': " + e.what());
  }
}

inline json trainer_to_json(const algos::TrainerConfig& c) {
  return {{"gamma", c.gamma},
          {"gae_lambda", c.gae_lambda},
          {"clip", c.clip},
          {"clip_eps", c.clip_eps},
          {"update_epochs", c.update_epochs},
          {"minibatches", c.minibatches},
          {"lr_theta", c.lr_theta},
          {"lr_phi", c.lr_phi},
          {"lr_eta", c.lr_eta},
          {"lr_lambda", c.lr_lambda},
          {"alpha", c.alpha},
          {"worst_fraction", c.resolved_worst_fraction()},
          {"lambda_init", c.lambda_init},
          {"lambda_max", c.lambda_max},
          {"freeze_lambda", c.freeze_lambda},
          {"normalize_advantages", c.normalize_advantages},
          {"normalize_eta_step", c.normalize_eta_step},
          {"max_grad_norm", c.max_grad_norm},
          {"penalty_normalization", algos::to_string(c.penalty_normalization)},
          {"penalty_mode", algos::to_string(c.penalty_mode)}};
}

}  // namespace detail

/// Builds a RunConfig from a user tree (possibly partial). Throws ConfigError.
inline RunConfig resolve_config(const json& user) {
  json tree = default_config_tree();
  merge_checked(tree, user, "");
  RunConfig c;
  try {
    const json& e = tree.at("env");
    c.env = envs::EnvSpec::defaults(envs::env_kind_from_string(e.at("kind").get<std::string>()));
    detail::take(e, "horizon", c.env.horizon);
    detail::take(e, "mass_scale", c.env.physics.mass_scale);
    detail::take(e, "dt", c.env.physics.dt);
    detail::take(e, "gravity", c.env.physics.gravity);
    detail::take(e, "damping", c.env.physics.damping);
    detail::take(e, "reward_scale", c.env.reward_scale);
    c.env.validate();

    c.trainer = algos::TrainerConfig::preset(tree.at("algo").get<std::string>());
    const json& t = tree.at("trainer");
    auto& tc = c.trainer;
    detail::take(t, "gamma", tc.gamma);
    detail::take(t, "gae_lambda", tc.gae_lambda);
    detail::take(t, "clip", tc.clip);
    detail::take(t, "clip_eps", tc.clip_eps);
    detail::take(t, "update_epochs", tc.update_epochs);
    detail::take(t, "minibatches", tc.minibatches);
    detail::take(t, "lr_theta", tc.lr_theta);
    detail::take(t, "lr_phi", tc.lr_phi);
    detail::take(t, "lr_eta", tc.lr_eta);
    detail::take(t, "lr_lambda", tc.lr_lambda);
    detail::take(t, "alpha", tc.alpha);
    detail::take(t, "worst_fraction", tc.worst_fraction);
    detail::take(t, "lambda_init", tc.lambda_init);
    detail::take(t, "lambda_max", tc.lambda_max);
    detail::take(t, "freeze_lambda", tc.freeze_lambda);
    detail::take(t, "normalize_advantages", tc.normalize_advantages);
    detail::take(t, "normalize_eta_step", tc.normalize_eta_step);
    detail::take(t, "max_grad_norm", tc.max_grad_norm);
    if (!t.at("penalty_normalization").is_null())
      tc.penalty_normalization = algos::penalty_normalization_from_string(t.at("penalty_normalization").get<std::string>());
    if (!t.at("penalty_mode").is_null())
      tc.penalty_mode = algos::penalty_mode_from_string(t.at("penalty_mode").get<std::string>());
    tc.validate();

    const json& n = tree.at("network");
    detail::take(n, "policy_hidden", c.policy_hidden);
    detail::take(n, "value_hidden", c.value_hidden);
    detail::take(n, "init_log_std", c.init_log_std);
    detail::take(tree, "seeds", c.seeds);
    detail::take(tree, "total_steps", c.total_steps);
    detail::take(tree, "batch_trajectories", c.batch_trajectories);
    detail::take(tree, "eval_every", c.eval_every);
    detail::take(tree, "eval_episodes", c.eval_episodes);
    detail::take(tree, "risk_episodes", c.risk_episodes);
    detail::take(tree, "workers", c.workers);
    detail::take(tree, "resume", c.resume);
    detail::take(tree, "out", c.out);

    const json& s = tree.at("sweep");
    for (const auto& item : s.at("checkpoints")) {
      if (item.is_string()) c.sweep.checkpoints.push_back({item.get<std::string>(), item.get<std::string>()});
      else c.sweep.checkpoints.push_back({item.at("label").get<std::string>(), item.at("path").get<std::string>()});
    }
    detail::take(s, "mass_scale", c.sweep.mass_scale);
    detail::take(s, "sigma", c.sweep.sigma);
    detail::take(s, "epsilon", c.sweep.epsilon);
    detail::take(s, "axes", c.sweep.axes);
    detail::take(s, "episodes", c.sweep.episodes);
    detail::take(s, "seeds", c.sweep.seeds);
    c.sweep.fgsm_objective = envs::fgsm_objective_from_string(s.at("fgsm_objective").get<std::string>());

    const json& v = tree.at("verify");
    auto& vs = c.verify;
    detail::take(v, "instances", vs.instances);
    detail::take(v, "theorem3_instances", vs.theorem3_instances);
    detail::take(v, "theorem3_horizon", vs.theorem3_horizon);
    detail::take(v, "theorem4_instances", vs.theorem4_instances);
    detail::take(v, "theorem4_horizon", vs.theorem4_horizon);
    detail::take(v, "beta_points", vs.beta_points);
    detail::take(v, "identity_tol", vs.identity_tol);
    detail::take(v, "bound_tol", vs.bound_tol);
    detail::take(v, "lemma_tol", vs.lemma_tol);
    detail::take(v, "risk_tol", vs.risk_tol);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (c.seeds.empty()) throw ConfigError("config: seeds must be nonempty");
  if (c.batch_trajectories < 2) throw ConfigError("config: batch_trajectories must be at least 2");
  if (c.total_steps < 1 || c.eval_every < 1 || c.eval_episodes < 1 || c.workers < 1)
    throw ConfigError("config: total_steps, eval_every, eval_episodes and workers must be positive");
  if (c.risk_episodes < 10) throw ConfigError("config: risk_episodes must be at least 10");
  if (c.policy_hidden.empty() || c.value_hidden.empty()) throw ConfigError("config: hidden layer lists must be nonempty");
  const auto& vs = c.verify;
  if (vs.instances < 1 || vs.theorem3_instances < 1 || vs.theorem4_instances < 1 || vs.theorem3_horizon < 1 ||
      vs.theorem4_horizon < 1 || vs.beta_points < 2)
    throw ConfigError("config: verify counts must be positive and beta_points at least 2");
  if (!(vs.identity_tol >= 0.0 && vs.bound_tol >= 0.0 && vs.lemma_tol >= 0.0 && vs.risk_tol >= 0.0))
    throw ConfigError("config: verify tolerances must be nonnegative");

  tree["env"] = {{"kind", envs::to_string(c.env.kind)},
                 {"horizon", c.env.horizon},
                 {"mass_scale", c.env.physics.mass_scale},
                 {"dt", c.env.physics.dt},
                 {"gravity", c.env.physics.gravity},
                 {"damping", c.env.physics.damping},
                 {"reward_scale", c.env.reward_scale}};
  tree["trainer"] = detail::trainer_to_json(c.trainer);
  c.resolved = tree;
  return c;
}

inline json read_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file " + path);
  json j = json::parse(f, nullptr, false, true);
  if (j.is_discarded()) throw ConfigError("config file is not valid JSON: " + path);
  return j;
}

/// Loads `path` (empty: defaults), applies overrides, resolves.
inline RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  json user = path.empty() ? json::object() : read_json_file(path);
  for (const auto& o : overrides) apply_override(user, o);
  return resolve_config(user);
}

}  // namespace riskgrad::harness
