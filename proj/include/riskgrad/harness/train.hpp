#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <numeric>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "riskgrad/algos/cppo.hpp"
#include "riskgrad/algos/rollout.hpp"
#include "riskgrad/harness/config.hpp"
#include "riskgrad/harness/csv.hpp"
#include "riskgrad/risk/cvar.hpp"

namespace riskgrad::harness {

namespace fs = std::filesystem;

/// Runs jobs 0..n-1 on `workers` threads. Jobs must not share mutable state.
inline void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& job) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex m;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          job(i);
        } catch (...) {
          std::lock_guard lock(m);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
}

inline std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

/// Writes the resolved config with the version stamp into `dir`.
inline void write_resolved_config(const fs::path& dir, const RunConfig& cfg, const std::string& command) {
  json doc = cfg.resolved;
  doc["command"] = command;
  doc["stamp"] = version_stamp();
  write_text(dir / "config.json", doc.dump(2) + "\n");
}

inline algos::CppoState initial_state(const RunConfig& cfg, std::uint64_t seed) {
  const auto inf = envs::info(cfg.env);
  Rng rng(derive_seed(seed, 0x1417));
  const auto head = inf.discrete ? nn::HeadKind::Categorical : nn::HeadKind::Gaussian;
  auto policy = nn::PolicyNet::create(head, inf.obs_dim, inf.action_dim, cfg.policy_hidden, rng, cfg.init_log_std);
  std::vector<std::size_t> sizes{inf.obs_dim};
  sizes.insert(sizes.end(), cfg.value_hidden.begin(), cfg.value_hidden.end());
  sizes.push_back(1);
  auto value = nn::MlpParams::init(sizes, rng);
  return algos::CppoState::create(std::move(policy), std::move(value), cfg.trainer, seed);
}

struct EpisodeStats {
  std::vector<double> returns;
  std::vector<double> discounted;
  double mean = 0.0;
  double std = 0.0;
  /// Mean of the worst ceil(10%) undiscounted returns.
  double worst10 = 0.0;
};

inline EpisodeStats summarize_returns(std::vector<double> returns, std::vector<double> discounted = {}) {
  EpisodeStats s;
  const double n = static_cast<double>(returns.size());
  s.mean = std::accumulate(returns.begin(), returns.end(), 0.0) / n;
  double sq = 0.0;
  for (double r : returns) sq += (r - s.mean) * (r - s.mean);
  s.std = returns.size() > 1 ? std::sqrt(sq / (n - 1.0)) : 0.0;
  s.worst10 = risk::worst_fraction_mean(returns, 0.1);
  s.returns = std::move(returns);
  s.discounted = std::move(discounted);
  return s;
}

/// Deterministic-action evaluation of `episodes` episodes.
inline EpisodeStats evaluate_policy(const envs::EnvSpec& spec, const nn::PolicyNet& policy, const nn::MlpParams& value,
                                    std::size_t episodes, std::uint64_t seed, double gamma,
                                    const envs::ObsDisturbance& disturbance = {}) {
  algos::RolloutOptions opt;
  opt.gamma = gamma;
  opt.greedy = true;
  opt.disturbance = disturbance;
  const auto batch = algos::collect_rollouts(spec, policy, value, std::max<std::size_t>(episodes, 2), seed, opt);
  auto ret = batch.undiscounted_returns();
  auto disc = batch.returns();
  ret.resize(episodes);
  disc.resize(episodes);
  return summarize_returns(std::move(ret), std::move(disc));
}

/// Evaluation episodes never share streams with training batches.
inline std::uint64_t eval_seed(std::uint64_t seed) { return derive_seed(seed, 0xe7a1ULL << 32); }
inline std::uint64_t batch_seed(std::uint64_t seed, std::size_t iteration) { return derive_seed(seed, iteration); }

struct SeedResult {
  std::uint64_t seed = 0;
  std::size_t iterations = 0;
  std::size_t env_steps = 0;
  algos::UpdateDiagnostics last;
  /// Discounted-return statistics of the last training batch.
  double last_return_range = 0.0;
  double last_vfr_proxy = 0.0;
  EpisodeStats final_eval;
  double best_eval_mean = -std::numeric_limits<double>::infinity();
  std::size_t best_eval_iteration = 0;
  /// Tail statistics of discounted returns over risk_episodes stochastic episodes of the final policy.
  double final_lower_tail_risk = 0.0;
  double final_return_range = 0.0;
  double final_beta = 0.0;
};

struct RiskSample {
  double lower_tail_risk = 0.0;
  double range = 0.0;
  double mean = 0.0;
};

/// -CVaR_alpha(-D) and the range of D over `episodes` sampled (not greedy) episodes.
inline RiskSample sample_risk(const envs::EnvSpec& spec, const algos::CppoState& state, std::size_t episodes,
                              std::uint64_t seed, double gamma) {
  algos::RolloutOptions opt;
  opt.gamma = gamma;
  const auto batch = algos::collect_rollouts(spec, state.policy, state.value, episodes, seed, opt);
  const auto d = batch.returns();
  const auto [lo, hi] = std::minmax_element(d.begin(), d.end());
  return {risk::lower_tail_return_risk(risk::WeightedSamples::uniform(d), state.level), *hi - *lo,
          std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size())};
}

inline std::uint64_t risk_seed(std::uint64_t seed) { return derive_seed(seed, 0x715cULL << 32); }

inline json seed_progress_json(const SeedResult& r) {
  return {{"iterations", r.iterations},
          {"env_steps", r.env_steps},
          {"best_eval_mean", r.best_eval_mean},
          {"best_eval_iteration", r.best_eval_iteration}};
}

inline nlohmann::json metrics_record(std::size_t iteration, std::size_t env_steps, const algos::UpdateDiagnostics& d,
                                     const algos::RolloutBatch& batch) {
  const auto und = batch.undiscounted_returns();
  const auto disc = batch.returns();
  const auto [lo, hi] = std::minmax_element(und.begin(), und.end());
  const auto [dlo, dhi] = std::minmax_element(disc.begin(), disc.end());
  return {{"iter", iteration},
          {"env_steps", env_steps},
          {"mean_return", std::accumulate(und.begin(), und.end(), 0.0) / static_cast<double>(und.size())},
          {"mean_discounted_return", d.mean_return},
          {"lower_tail_risk", d.lower_tail_risk},
          {"eta", d.eta},
          {"lambda", d.lambda},
          {"beta", d.beta},
          {"vfr_proxy", *hi - *lo},
          {"discounted_range", *dhi - *dlo},
          {"value_loss", d.value_loss},
          {"surrogate", d.surrogate},
          {"clip_fraction", d.clip_fraction},
          {"penalty", d.penalty}};
}

/// Trains one seed into `dir`: metrics.jsonl, checkpoint.json (latest, with
/// progress), best_checkpoint.json and final.json. With cfg.resume, picks up
/// from an existing checkpoint and truncates the metric log to match.
inline SeedResult train_seed(const RunConfig& cfg, std::uint64_t seed, const fs::path& dir) {
  fs::create_directories(dir);
  SeedResult res;
  res.seed = seed;
  algos::CppoState state = initial_state(cfg, seed);
  std::vector<std::string> lines;
  const auto ckpt_path = dir / "checkpoint.json";
  if (cfg.resume && fs::exists(ckpt_path)) {
    const auto doc = json::parse(read_text(ckpt_path));
    state = algos::checkpoint_from_json(doc.at("state"));
    const auto& p = doc.at("progress");
    res.iterations = p.at("iterations").get<std::size_t>();
    res.env_steps = p.at("env_steps").get<std::size_t>();
    res.best_eval_mean = p.at("best_eval_mean").get<double>();
    res.best_eval_iteration = p.at("best_eval_iteration").get<std::size_t>();
    std::istringstream old(read_text(dir / "metrics.jsonl"));
    for (std::string l; lines.size() < res.iterations && std::getline(old, l);) lines.push_back(l);
    if (lines.size() != res.iterations) throw std::runtime_error("resume: metric log shorter than checkpoint");
  }
  const auto save = [&](const fs::path& path) {
    write_text(path, json{{"state", algos::checkpoint_to_json(state)}, {"progress", seed_progress_json(res)}}.dump() + "\n");
  };
  std::ofstream log(dir / "metrics.jsonl", std::ios::binary | std::ios::trunc);
  for (const auto& l : lines) log << l << '\n';

  const double gamma = cfg.trainer.gamma;
  while (res.env_steps < cfg.total_steps) {
    algos::RolloutOptions opt;
    opt.gamma = gamma;
    opt.policy_version = state.version;
    auto batch = algos::collect_rollouts(cfg.env, state.policy, state.value, cfg.batch_trajectories,
                                         batch_seed(seed, res.iterations), opt);
    algos::gae_advantages(batch, gamma, cfg.trainer.gae_lambda);
    const auto diag = algos::update(state, batch, cfg.trainer);
    res.env_steps += batch.total_steps();
    res.last = diag;
    const auto disc = batch.returns();
    const auto [dlo, dhi] = std::minmax_element(disc.begin(), disc.end());
    res.last_return_range = *dhi - *dlo;
    json rec = metrics_record(res.iterations, res.env_steps, diag, batch);
    res.last_vfr_proxy = rec.at("vfr_proxy").get<double>();
    ++res.iterations;
    const bool last_iter = res.env_steps >= cfg.total_steps;
    if (res.iterations % cfg.eval_every == 0 || last_iter) {
      const auto ev = evaluate_policy(cfg.env, state.policy, state.value, cfg.eval_episodes, eval_seed(seed), gamma);
      rec["eval_mean_return"] = ev.mean;
      rec["eval_std_return"] = ev.std;
      rec["eval_worst10"] = ev.worst10;
      if (ev.mean > res.best_eval_mean) {
        res.best_eval_mean = ev.mean;
        res.best_eval_iteration = res.iterations;
        save(dir / "best_checkpoint.json");
      }
      if (last_iter) res.final_eval = ev;
      save(ckpt_path);
    }
    log << rec.dump() << '\n';
    log.flush();
  }
  if (res.final_eval.returns.empty())
    res.final_eval = evaluate_policy(cfg.env, state.policy, state.value, cfg.eval_episodes, eval_seed(seed), gamma);
  const auto rs = sample_risk(cfg.env, state, cfg.risk_episodes, risk_seed(seed), gamma);
  res.final_lower_tail_risk = rs.lower_tail_risk;
  res.final_return_range = rs.range;
  res.final_beta = state.beta;
  save(ckpt_path);
  write_text(dir / "final.json", json{{"seed", seed},
                                      {"iterations", res.iterations},
                                      {"env_steps", res.env_steps},
                                      {"final_eval_mean", res.final_eval.mean},
                                      {"final_eval_std", res.final_eval.std},
                                      {"final_eval_worst10", res.final_eval.worst10},
                                      {"best_eval_mean", res.best_eval_mean},
                                      {"best_eval_iteration", res.best_eval_iteration},
                                      {"risk_episodes", cfg.risk_episodes},
                                      {"final_lower_tail_risk", res.final_lower_tail_risk},
                                      {"final_return_range", res.final_return_range},
                                      {"final_mean_discounted_return", rs.mean},
                                      {"final_beta", res.final_beta},
                                      {"final_eta", state.eta},
                                      {"final_lambda", state.lam}}
                                     .dump(2) + "\n");
  return res;
}

inline const std::vector<std::string>& summary_columns() {
  static const std::vector<std::string> cols{
      "seed",          "iterations",     "env_steps",  "final_eval_mean", "final_eval_std",
      "final_eval_worst10", "best_eval_mean", "best_eval_iteration", "train_lower_tail_risk", "beta",
      "eta",           "lambda",         "train_return_range", "final_lower_tail_risk", "final_return_range"};
  return cols;
}

inline CsvTable summary_table(std::vector<SeedResult> results) {
  std::sort(results.begin(), results.end(), [](const auto& a, const auto& b) { return a.seed < b.seed; });
  CsvTable t;
  t.schema = "train-summary";
  t.columns = summary_columns();
  const auto f = format_double;
  const auto row_of = [&](const std::string& label, const std::vector<double>& v) {
    std::vector<std::string> row{label};
    for (double x : v) row.push_back(f(x));
    return row;
  };
  std::vector<std::vector<double>> values;
  for (const auto& r : results) {
    values.push_back({static_cast<double>(r.iterations), static_cast<double>(r.env_steps), r.final_eval.mean,
                      r.final_eval.std, r.final_eval.worst10, r.best_eval_mean,
                      static_cast<double>(r.best_eval_iteration), r.last.lower_tail_risk, r.last.beta, r.last.eta,
                      r.last.lambda, r.last_return_range, r.final_lower_tail_risk, r.final_return_range});
    t.add_row(row_of(std::to_string(r.seed), values.back()));
  }
  // Table-style aggregate rows: mean and sample std across seeds.
  const std::size_t k = values.front().size();
  std::vector<double> mean(k, 0.0);
  std::vector<double> sd(k, 0.0);
  for (const auto& v : values)
    for (std::size_t j = 0; j < k; ++j) mean[j] += v[j] / static_cast<double>(values.size());
  if (values.size() > 1) {
    for (const auto& v : values)
      for (std::size_t j = 0; j < k; ++j) sd[j] += (v[j] - mean[j]) * (v[j] - mean[j]);
    for (auto& x : sd) x = std::sqrt(x / static_cast<double>(values.size() - 1));
  }
  t.add_row(row_of("mean", mean));
  t.add_row(row_of("std", sd));
  return t;
}

inline fs::path seed_dir(const fs::path& out, std::uint64_t seed) { return out / ("seed_" + std::to_string(seed)); }

/// Trains every seed; writes config.json, seed_<k>/ and summary.csv under cfg.out.
inline std::vector<SeedResult> run_train(const RunConfig& cfg) {
  const fs::path out(cfg.out);
  fs::create_directories(out);
  write_resolved_config(out, cfg, "train");
  std::vector<SeedResult> results(cfg.seeds.size());
  parallel_for(cfg.seeds.size(), cfg.workers,
               [&](std::size_t i) { results[i] = train_seed(cfg, cfg.seeds[i], seed_dir(out, cfg.seeds[i])); });
  write_csv(out / "summary.csv", summary_table(results));
  return results;
}

}  // namespace riskgrad::harness
