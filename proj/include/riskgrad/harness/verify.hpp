#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "riskgrad/disturbance/disturbance.hpp"
#include "riskgrad/harness/config.hpp"
#include "riskgrad/harness/csv.hpp"
#include "riskgrad/harness/train.hpp"
#include "riskgrad/mdp/random_instances.hpp"
#include "riskgrad/risk/theorems.hpp"

namespace riskgrad::harness {

/// Aggregate of one theorem suite. A check fails when its residual exceeds
/// residual_tol or its slack falls below -slack_tol.
struct SuiteResult {
  std::string name;
  std::size_t instances = 0;
  std::size_t checks = 0;
  std::size_t failures = 0;
  /// NaN when the suite has no residual (pure inequalities).
  double max_residual = std::numeric_limits<double>::quiet_NaN();
  double residual_tol = std::numeric_limits<double>::quiet_NaN();
  /// NaN when the suite has no inequality.
  double min_slack = std::numeric_limits<double>::quiet_NaN();
  double slack_tol = std::numeric_limits<double>::quiet_NaN();

  bool passed() const { return checks > 0 && failures == 0; }

  void residual(double r) {
    max_residual = std::isnan(max_residual) ? r : std::max(max_residual, r);
  }
  void slack(double s) { min_slack = std::isnan(min_slack) ? s : std::min(min_slack, s); }
  /// Records one check with optional residual and slack.
  void check(double r, double s) {
    ++checks;
    bool ok = true;
    if (!std::isnan(r)) {
      residual(r);
      ok = ok && r <= residual_tol;
    }
    if (!std::isnan(s)) {
      slack(s);
      ok = ok && s >= -slack_tol;
    }
    if (!ok) ++failures;
  }
};

struct VerifyReport {
  std::uint64_t seed = 0;
  std::vector<SuiteResult> suites;
  bool passed() const {
    return !suites.empty() && std::all_of(suites.begin(), suites.end(), [](const auto& s) { return s.passed(); });
  }
  const SuiteResult& suite(const std::string& name) const {
    for (const auto& s : suites)
      if (s.name == name) return s;
    throw std::out_of_range("verify: no suite " + name);
  }
};

namespace detail {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

inline SuiteResult make_suite(std::string name, double residual_tol, double slack_tol) {
  SuiteResult s;
  s.name = std::move(name);
  s.residual_tol = residual_tol;
  s.slack_tol = slack_tol;
  return s;
}

/// |S| in 2..6, |A| in 1..3, gamma in [0.5, 0.95], full-support MDP and policy.
inline void disturbance_suites(std::uint64_t seed, const VerifySettings& v, std::vector<SuiteResult>& out) {
  using namespace disturbance;
  auto lemma = make_suite("lemma1", v.lemma_tol, kNaN);
  auto transition = make_suite("transition", v.identity_tol, v.bound_tol);
  auto observation = make_suite("observation", v.identity_tol, v.bound_tol);
  auto dominance = make_suite("dominance", kNaN, v.bound_tol);
  Rng rng(derive_seed(seed, 0xd157));
  for (std::size_t i = 0; i < v.instances; ++i) {
    mdp::RandomMdpOptions opt;
    opt.n_states = 2 + rng.index(5);
    opt.n_actions = 1 + rng.index(3);
    opt.gamma = rng.uniform(0.5, 0.95);
    const auto m = mdp::random_mdp(rng, opt);
    const auto pi = mdp::random_policy(rng, opt.n_states, opt.n_actions);

    lemma.check(check_lemma1(m, pi), kNaN);

    const auto dist = random_transition_disturbance(rng, m, rng.uniform(0.01, 3.0));
    const auto t = check_transition_theorem(m, pi, dist);
    transition.check(t.identity_residual, t.slack);

    const auto nu = i % 2 == 0 ? random_permutation_map(rng, opt.n_states) : random_local_map(rng, opt.n_states, 0.5);
    const ObservationAdversary adv(pi, nu);
    const auto o = check_observation_theorem(m, pi, adv);
    observation.check(o.identity_residual, o.slack);

    const auto d = check_bound_dominance(m, pi, adv);
    dominance.check(kNaN, d.samdp - d.ours);
  }
  for (auto* s : {&lemma, &transition, &observation, &dominance}) s->instances = v.instances;
  out.push_back(lemma);
  out.push_back(transition);
  out.push_back(observation);
  out.push_back(dominance);
}

/// Alternates stochastic transitions under a deterministic policy with a
/// stochastic policy on deterministic transitions, so each instance has
/// 2^horizon trajectories and exact enumeration stays cheap.
inline SuiteResult theorem3_suite(std::uint64_t seed, const VerifySettings& v) {
  auto suite = make_suite("theorem3", kNaN, v.risk_tol);
  Rng rng(derive_seed(seed, 0x7e03));
  for (std::size_t i = 0; i < v.theorem3_instances; ++i) {
    const bool stochastic_dynamics = i % 2 == 0;
    mdp::RandomMdpOptions opt;
    opt.n_states = 2 + rng.index(2);
    opt.gamma = rng.uniform(0.5, 0.95);
    opt.transition_support = stochastic_dynamics ? 2 : 1;
    const auto m = mdp::random_mdp(rng, opt);
    const auto pi = mdp::random_policy(rng, opt.n_states, 2, stochastic_dynamics ? 1 : 2);
    for (double alpha : {0.3, 0.7, 0.9}) {
      const auto r = risk::check_theorem3(m, pi, risk::RiskLevel(alpha), v.theorem3_horizon);
      suite.check(kNaN, r.value_side + r.tolerance - r.return_side);
    }
  }
  suite.instances = v.theorem3_instances;
  return suite;
}

/// 3-state / 2-action MDPs, beta on an even grid over [-M, M]. Slack is only
/// recorded for feasible beta.
inline SuiteResult theorem4_suite(std::uint64_t seed, const VerifySettings& v) {
  auto suite = make_suite("theorem4", kNaN, v.risk_tol);
  Rng rng(derive_seed(seed, 0x7e04));
  for (std::size_t i = 0; i < v.theorem4_instances; ++i) {
    mdp::RandomMdpOptions opt;
    opt.n_states = 3;
    opt.n_actions = 2;
    opt.gamma = rng.uniform(0.5, 0.9);
    const auto m = mdp::random_mdp(rng, opt);
    const risk::RiskLevel level(rng.uniform(0.1, 0.9));
    const auto profiles = risk::deterministic_policy_profiles(m, level, v.theorem4_horizon);
    const double M = m.return_bound();
    for (std::size_t b = 0; b < v.beta_points; ++b) {
      const double beta = -M + 2.0 * M * static_cast<double>(b) / static_cast<double>(v.beta_points - 1);
      const auto r = risk::check_theorem4(profiles, m, level, beta, v.theorem4_horizon);
      if (r.feasible) suite.check(kNaN, r.j_constrained - (r.bound - r.tolerance));
    }
  }
  suite.instances = v.theorem4_instances;
  return suite;
}

inline std::string cell(double x) { return std::isnan(x) ? "NA" : format_double(x); }

inline json number_or_null(double x) { return std::isnan(x) ? json(nullptr) : json(x); }

}  // namespace detail

inline VerifyReport verify_all(std::uint64_t seed, const VerifySettings& v) {
  VerifyReport r;
  r.seed = seed;
  detail::disturbance_suites(seed, v, r.suites);
  r.suites.push_back(detail::theorem3_suite(seed, v));
  r.suites.push_back(detail::theorem4_suite(seed, v));
  return r;
}

inline const std::vector<std::string>& verify_columns() {
  static const std::vector<std::string> cols{"suite",     "instances", "checks",    "failures", "max_residual",
                                             "residual_tol", "min_slack", "slack_tol", "pass"};
  return cols;
}

inline CsvTable verify_table(const VerifyReport& r) {
  CsvTable t;
  t.schema = "verify-report";
  t.columns = verify_columns();
  for (const auto& s : r.suites)
    t.add_row({s.name, std::to_string(s.instances), std::to_string(s.checks), std::to_string(s.failures),
               detail::cell(s.max_residual), detail::cell(s.residual_tol), detail::cell(s.min_slack),
               detail::cell(s.slack_tol), s.passed() ? "1" : "0"});
  return t;
}

inline json verify_json(const VerifyReport& r) {
  json suites = json::array();
  for (const auto& s : r.suites)
    suites.push_back({{"suite", s.name},
                      {"instances", s.instances},
                      {"checks", s.checks},
                      {"failures", s.failures},
                      {"max_residual", detail::number_or_null(s.max_residual)},
                      {"residual_tol", detail::number_or_null(s.residual_tol)},
                      {"min_slack", detail::number_or_null(s.min_slack)},
                      {"slack_tol", detail::number_or_null(s.slack_tol)},
                      {"pass", s.passed()}});
  return {{"seed", r.seed}, {"pass", r.passed()}, {"suites", suites}, {"stamp", version_stamp()}};
}

/// Runs every suite with the first configured seed; writes config.json,
/// verify.csv and verify.json under cfg.out.
inline VerifyReport run_verify(const RunConfig& cfg) {
  const fs::path out(cfg.out);
  fs::create_directories(out);
  write_resolved_config(out, cfg, "verify");
  auto report = verify_all(cfg.seeds.front(), cfg.verify);
  write_csv(out / "verify.csv", verify_table(report));
  write_text(out / "verify.json", verify_json(report).dump(2) + "\n");
  return report;
}

}  // namespace riskgrad::harness
