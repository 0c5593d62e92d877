#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <string>

#include <sys/wait.h>

#include "riskgrad/harness/config.hpp"
#include "riskgrad/harness/csv.hpp"
#include "riskgrad/harness/sweep.hpp"
#include "riskgrad/harness/train.hpp"
#include "riskgrad/harness/verify.hpp"
#include "riskgrad/mdp/exact.hpp"

using namespace riskgrad;
using namespace riskgrad::harness;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("riskgrad_test_" + name);
  fs::remove_all(p);
  return p;
}

/// Small chain-MDP run: 50-step episodes, 4 per batch, so 200 steps per iteration.
json chain_tree(const std::string& algo = "vpg") {
  return {{"env", {{"kind", "chain-mdp"}}},
          {"algo", algo},
          {"network", {{"policy_hidden", {8}}, {"value_hidden", {8}}}},
          {"total_steps", 800},
          {"batch_trajectories", 4},
          {"eval_every", 2},
          {"eval_episodes", 10},
          {"risk_episodes", 10}};
}

RunConfig chain_config(const fs::path& out, json tree = chain_tree()) {
  tree["out"] = out.string();
  return resolve_config(tree);
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

TEST(Config, DefaultsResolveAndFillPresetValues) {
  const auto c = resolve_config(json::object());
  EXPECT_EQ(c.env.kind, envs::EnvKind::PendulumSwingup);
  EXPECT_EQ(c.seeds, std::vector<std::uint64_t>{0});
  EXPECT_EQ(c.trainer.algo, algos::Algo::Cppo);
  EXPECT_FALSE(c.resolved.at("trainer").at("gamma").is_null());
  EXPECT_FALSE(c.resolved.at("env").at("horizon").is_null());
  EXPECT_EQ(c.resolved.at("env").at("horizon").get<std::size_t>(), 200u);
}

TEST(Config, UnknownKeysRejectedAtEveryLevel) {
  EXPECT_THROW(resolve_config({{"bogus", 1}}), ConfigError);
  EXPECT_THROW(resolve_config({{"trainer", {{"learning_rate", 0.1}}}}), ConfigError);
  EXPECT_THROW(resolve_config({{"sweep", {{"grid", {1, 2}}}}}), ConfigError);
}

TEST(Config, OverridesParseJsonValuesOrStrings) {
  json user = json::object();
  apply_override(user, "trainer.lr_theta=0.002");
  apply_override(user, "seeds=[3,4]");
  apply_override(user, "env.kind=chain-mdp");
  apply_override(user, "trainer.freeze_lambda=true");
  const auto c = resolve_config(user);
  EXPECT_DOUBLE_EQ(c.trainer.lr_theta, 0.002);
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{3, 4}));
  EXPECT_EQ(c.env.kind, envs::EnvKind::ChainMdp);
  EXPECT_TRUE(c.trainer.freeze_lambda);
  EXPECT_THROW(apply_override(user, "no_equals_sign"), ConfigError);
  EXPECT_THROW(apply_override(user, "=1"), ConfigError);
}

TEST(Config, BadValuesAreConfigErrors) {
  EXPECT_THROW(resolve_config({{"trainer", {{"gamma", "high"}}}}), ConfigError);
  EXPECT_THROW(resolve_config({{"env", {{"kind", "mujoco"}}}}), ConfigError);
  EXPECT_THROW(resolve_config({{"env", {{"mass_scale", -1.0}}}}), ConfigError);
  EXPECT_THROW(resolve_config({{"seeds", json::array()}}), ConfigError);
  EXPECT_THROW(resolve_config({{"verify", {{"identity_tol", -1.0}}}}), ConfigError);
}

TEST(Config, ResolvedTreeRoundTrips) {
  const auto a = resolve_config({{"trainer", {{"alpha", 0.8}}}, {"seeds", {1, 2}}});
  const auto b = resolve_config(a.resolved);
  EXPECT_EQ(a.resolved, b.resolved);
}

TEST(Config, SweepSpecValidation) {
  auto c = resolve_config(json::object());
  EXPECT_NO_THROW(c.sweep.validate());
  EXPECT_EQ(c.sweep.mass_scale, (std::vector<double>{0.5, 0.7, 0.85, 1.0, 1.15, 1.3, 1.5}));
  EXPECT_EQ(c.sweep.sigma, (std::vector<double>{0.0, 0.05, 0.1, 0.2, 0.4}));
  EXPECT_EQ(c.sweep.epsilon, (std::vector<double>{0.0, 0.01, 0.03, 0.1}));
  auto s = c.sweep;
  s.sigma = {0.2, 0.1};
  EXPECT_THROW(s.validate(), ConfigError);
  s = c.sweep;
  s.mass_scale.clear();
  EXPECT_THROW(s.validate(), ConfigError);
  s = c.sweep;
  s.episodes = 9;
  EXPECT_THROW(s.validate(), ConfigError);
  s = c.sweep;
  s.axes = {"wind"};
  EXPECT_THROW(s.validate(), ConfigError);
}

// ---------------------------------------------------------------------------
// CSV

TEST(Csv, RoundTripPreservesCellsAndDoublesExactly) {
  Rng rng(3);
  CsvTable t;
  t.schema = "demo";
  t.version = 2;
  t.columns = {"name", "x", "note"};
  std::vector<double> xs;
  for (int i = 0; i < 50; ++i) {
    xs.push_back(rng.normal() * std::pow(10.0, rng.uniform(-20, 20)));
    t.add_row({"r" + std::to_string(i), format_double(xs.back()), i % 3 ? "" : "ok"});
  }
  const auto back = parse_csv(csv_to_string(t), "demo", 2, t.columns);
  ASSERT_EQ(back.rows, t.rows);
  for (std::size_t i = 0; i < xs.size(); ++i) EXPECT_EQ(back.number(i, "x"), xs[i]);
}

TEST(Csv, SchemaAndColumnsAreValidated) {
  CsvTable t;
  t.schema = "demo";
  t.columns = {"a", "b"};
  t.add_row({"1", "2"});
  const auto text = csv_to_string(t);
  EXPECT_THROW(parse_csv(text, "demo", 2, t.columns), std::runtime_error);
  EXPECT_THROW(parse_csv(text, "other", 1, t.columns), std::runtime_error);
  EXPECT_THROW(parse_csv(text, "demo", 1, {"a", "c"}), std::runtime_error);
  EXPECT_THROW(parse_csv("a,b\n1,2\n", "demo", 1, t.columns), std::runtime_error);
  EXPECT_THROW(parse_csv("# schema=demo/1\na,b\n1\n", "demo", 1, t.columns), std::runtime_error);
  EXPECT_THROW(t.add_row({"1"}), std::logic_error);
  EXPECT_THROW(t.add_row({"1,2", "3"}); csv_to_string(t), std::invalid_argument);
}

TEST(Csv, SweepTableRoundTrip) {
  std::vector<SweepRow> rows{{"cppo", 2, "sigma", 0.05, 7, 20, -43.25, 1.5, -47.125},
                             {"ppo", 0, "mass_scale", 1.3, 0, 10, -1e-7, 0.0, 3.0}};
  const auto t = sweep_table(rows, "sweep");
  const auto back = rows_from_table(parse_csv(csv_to_string(t), "sweep", 1, sweep_columns()));
  ASSERT_EQ(back.size(), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(back[i].label, rows[i].label);
    EXPECT_EQ(back[i].checkpoint_seed, rows[i].checkpoint_seed);
    EXPECT_EQ(back[i].axis, rows[i].axis);
    EXPECT_EQ(back[i].value, rows[i].value);
    EXPECT_EQ(back[i].eval_seed, rows[i].eval_seed);
    EXPECT_EQ(back[i].episodes, rows[i].episodes);
    EXPECT_EQ(back[i].mean, rows[i].mean);
    EXPECT_EQ(back[i].std, rows[i].std);
    EXPECT_EQ(back[i].worst10, rows[i].worst10);
  }
}

// ---------------------------------------------------------------------------
// Training

TEST(Train, TwoSeedsGiveTwoLogsAndSummaryOfExactlyThose) {
  const auto out = scratch("two_seeds");
  auto tree = chain_tree();
  tree["seeds"] = {0, 1};
  const auto results = run_train(chain_config(out, tree));
  ASSERT_EQ(results.size(), 2u);
  for (int s : {0, 1}) {
    EXPECT_TRUE(fs::exists(seed_dir(out, s) / "metrics.jsonl"));
    EXPECT_TRUE(fs::exists(seed_dir(out, s) / "checkpoint.json"));
    EXPECT_TRUE(fs::exists(seed_dir(out, s) / "final.json"));
  }
  EXPECT_NE(read_text(seed_dir(out, 0) / "metrics.jsonl"), read_text(seed_dir(out, 1) / "metrics.jsonl"));
  const auto t = read_csv((out / "summary.csv").string(), "train-summary", 1, summary_columns());
  ASSERT_EQ(t.rows.size(), 4u);
  EXPECT_EQ(t.rows[0][0], "0");
  EXPECT_EQ(t.rows[1][0], "1");
  EXPECT_EQ(t.rows[2][0], "mean");
  EXPECT_EQ(t.rows[3][0], "std");
  const double a = results[0].final_eval.mean;
  const double b = results[1].final_eval.mean;
  EXPECT_DOUBLE_EQ(t.number(0, "final_eval_mean"), a);
  EXPECT_DOUBLE_EQ(t.number(2, "final_eval_mean"), 0.5 * (a + b));
  EXPECT_NEAR(t.number(3, "final_eval_mean"), std::abs(a - b) / std::sqrt(2.0), 1e-12);
}

TEST(Train, OutputCarriesResolvedConfigAndVersionStamp) {
  const auto out = scratch("stamp");
  const auto cfg = chain_config(out);
  run_train(cfg);
  const auto doc = json::parse(read_text(out / "config.json"));
  EXPECT_EQ(doc.at("command"), "train");
  EXPECT_TRUE(doc.at("stamp").contains("riskgrad"));
  EXPECT_TRUE(doc.at("stamp").contains("revision"));
  json tree = doc;
  tree.erase("command");
  tree.erase("stamp");
  EXPECT_EQ(resolve_config(tree).resolved, cfg.resolved);
}

TEST(Train, RerunIsByteIdentical) {
  const auto a = scratch("det_a");
  const auto b = scratch("det_b");
  auto tree = chain_tree("cppo");
  tree["seeds"] = {5};
  run_train(chain_config(a, tree));
  run_train(chain_config(b, tree));
  for (const auto* f : {"metrics.jsonl", "checkpoint.json", "best_checkpoint.json", "final.json"})
    EXPECT_EQ(read_text(seed_dir(a, 5) / f), read_text(seed_dir(b, 5) / f)) << f;
  EXPECT_EQ(read_text(a / "summary.csv"), read_text(b / "summary.csv"));
}

TEST(Train, WorkerCountDoesNotChangeResults) {
  const auto a = scratch("workers_a");
  const auto b = scratch("workers_b");
  auto tree = chain_tree();
  tree["seeds"] = {0, 1, 2};
  run_train(chain_config(a, tree));
  tree["workers"] = 3;
  run_train(chain_config(b, tree));
  EXPECT_EQ(read_text(a / "summary.csv"), read_text(b / "summary.csv"));
  for (int s : {0, 1, 2}) EXPECT_EQ(read_text(seed_dir(a, s) / "metrics.jsonl"), read_text(seed_dir(b, s) / "metrics.jsonl"));
}

TEST(Train, ResumeContinuesFromCheckpointBitExactly) {
  const auto full = scratch("resume_full");
  const auto part = scratch("resume_part");
  auto tree = chain_tree("cppo");
  run_train(chain_config(full, tree));
  tree["total_steps"] = 400;
  run_train(chain_config(part, tree));
  // Simulate a crash after the checkpoint: garbage past the saved iterations is dropped.
  {
    std::ofstream log(seed_dir(part, 0) / "metrics.jsonl", std::ios::app);
    log << "{\"iter\": 99}\n";
  }
  tree["total_steps"] = 800;
  tree["resume"] = true;
  run_train(chain_config(part, tree));
  for (const auto* f : {"metrics.jsonl", "checkpoint.json", "final.json"})
    EXPECT_EQ(read_text(seed_dir(full, 0) / f), read_text(seed_dir(part, 0) / f)) << f;
}

TEST(Train, ChainVpgEvaluationMatchesExactGreedyReturn) {
  const auto out = scratch("chain_vpg");
  auto tree = chain_tree("vpg");
  tree["total_steps"] = 20000;
  tree["eval_every"] = 1000;
  tree["eval_episodes"] = 400;
  const auto cfg = chain_config(out, tree);
  const auto res = run_train(cfg).front();
  const auto state = load_checkpoint_file(seed_dir(out, 0) / "checkpoint.json");

  const auto model = envs::tabular_model(cfg.env, cfg.trainer.gamma);
  std::vector<std::size_t> greedy;
  for (std::size_t s = 0; s < model.n_states(); ++s) {
    std::vector<double> obs(model.n_states(), 0.0);
    obs[s] = 1.0;
    greedy.push_back(static_cast<std::size_t>(state.policy.mode(obs)[0]));
  }
  const double exact = mdp::finite_horizon_return(model, mdp::TabularPolicy::deterministic(2, greedy), cfg.env.horizon);

  const auto& d = res.final_eval.discounted;
  ASSERT_EQ(d.size(), 400u);
  const double n = static_cast<double>(d.size());
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / n;
  double sq = 0.0;
  for (double x : d) sq += (x - mean) * (x - mean);
  const double se = std::sqrt(sq / (n - 1.0) / n);
  EXPECT_GT(se, 0.0);
  EXPECT_LE(std::abs(mean - exact), 3.0 * se) << "mean " << mean << " exact " << exact << " se " << se;
}

TEST(Train, PendulumSolvedThresholdIsDeclared) {
  auto spec = envs::EnvSpec::defaults(envs::EnvKind::PendulumSwingup);
  EXPECT_DOUBLE_EQ(envs::info(spec).solved_threshold, -500.0);
  spec.reward_scale = 0.1;
  EXPECT_DOUBLE_EQ(envs::info(spec).solved_threshold, -50.0);
}

// ---------------------------------------------------------------------------
// Verify

TEST(Verify, DefaultSettingsPassEverySuite) {
  const auto r = verify_all(0, VerifySettings{});
  ASSERT_EQ(r.suites.size(), 6u);
  for (const auto& s : r.suites) {
    EXPECT_TRUE(s.passed()) << s.name;
    EXPECT_GT(s.checks, 0u) << s.name;
  }
  EXPECT_EQ(r.suite("lemma1").instances, 100u);
  EXPECT_EQ(r.suite("theorem3").checks, 150u);
  EXPECT_EQ(r.suite("theorem4").instances, 20u);
  EXPECT_TRUE(r.passed());
}

TEST(Verify, ZeroToleranceSurfacesIdentityFailures) {
  VerifySettings v;
  v.identity_tol = 0.0;
  v.lemma_tol = 0.0;
  const auto r = verify_all(0, v);
  EXPECT_FALSE(r.passed());
  EXPECT_GT(r.suite("lemma1").failures, 0u);
  EXPECT_GT(r.suite("transition").failures, 0u);
  EXPECT_GT(r.suite("observation").failures, 0u);
  const auto row = verify_table(r);
  EXPECT_EQ(row.rows[0][row.column("pass")], "0");
}

TEST(Verify, ReportBytesAreDeterministic) {
  const auto a = scratch("verify_a");
  const auto b = scratch("verify_b");
  auto tree = json{{"verify", {{"instances", 20}, {"theorem3_instances", 6}, {"theorem4_instances", 4}}}};
  tree["out"] = a.string();
  run_verify(resolve_config(tree));
  tree["out"] = b.string();
  run_verify(resolve_config(tree));
  EXPECT_EQ(read_text(a / "verify.csv"), read_text(b / "verify.csv"));
  EXPECT_EQ(read_text(a / "verify.json"), read_text(b / "verify.json"));
  const auto t = read_csv((a / "verify.csv").string(), "verify-report", 1, verify_columns());
  EXPECT_EQ(t.rows.size(), 6u);
  EXPECT_TRUE(json::parse(read_text(a / "verify.json")).at("pass").get<bool>());
}

TEST(Verify, DifferentSeedsDrawDifferentInstances) {
  VerifySettings v;
  v.instances = 10;
  v.theorem3_instances = 2;
  v.theorem4_instances = 2;
  EXPECT_NE(csv_to_string(verify_table(verify_all(0, v))), csv_to_string(verify_table(verify_all(1, v))));
}

// ---------------------------------------------------------------------------
// Sweep

namespace {

const fs::path& chain_run() {
  static const fs::path out = [] {
    const auto p = scratch("sweep_src");
    auto tree = chain_tree("ppo");
    tree["seeds"] = {0, 1};
    run_train(chain_config(p, tree));
    return p;
  }();
  return out;
}

SweepSpec chain_sweep() {
  auto s = resolve_config(json::object()).sweep;
  s.checkpoints = {{"ppo", chain_run().string()}};
  s.episodes = 10;
  return s;
}

}  // namespace

TEST(Sweep, DirectorySourceLoadsEverySeedInOrder) {
  const auto cks = load_sources({{"ppo", chain_run().string()}});
  ASSERT_EQ(cks.size(), 2u);
  EXPECT_EQ(cks[0].seed, 0u);
  EXPECT_EQ(cks[1].seed, 1u);
  const auto single = load_sources({{"one", (seed_dir(chain_run(), 1) / "checkpoint.json").string()}});
  ASSERT_EQ(single.size(), 1u);
  EXPECT_EQ(single[0].seed, 1u);
  EXPECT_THROW(load_sources({{"x", "/nonexistent/riskgrad/ckpt.json"}}), std::runtime_error);
}

TEST(Sweep, ZeroDisturbanceEqualsPlainEvaluationExactly) {
  const auto env = envs::EnvSpec::defaults(envs::EnvKind::ChainMdp);
  const auto spec = chain_sweep();
  const auto cks = load_sources(spec.checkpoints);
  const auto rows = sweep_rows(env, 0.99, spec, cks, 1);
  EXPECT_EQ(rows.size(), (7u + 5u + 4u) * 2u);
  for (const auto& r : rows) {
    const bool nominal = (r.axis == "mass_scale" && r.value == 1.0) || (r.axis != "mass_scale" && r.value == 0.0);
    if (!nominal) continue;
    const auto& ck = cks[r.checkpoint_seed];
    const auto plain = evaluate_policy(env, ck.state.policy, ck.state.value, spec.episodes, sweep_seed(r.eval_seed), 0.99);
    EXPECT_EQ(r.mean, plain.mean) << r.axis;
    EXPECT_EQ(r.std, plain.std) << r.axis;
    EXPECT_EQ(r.worst10, plain.worst10) << r.axis;
  }
}

TEST(Sweep, NominalGridOfLengthOneReproducesEvaluation) {
  const auto env = envs::EnvSpec::defaults(envs::EnvKind::ChainMdp);
  auto spec = chain_sweep();
  spec.axes = {"mass_scale"};
  spec.mass_scale = {1.0};
  spec.episodes = 200;
  const auto cks = load_sources(spec.checkpoints);
  const auto rows = sweep_rows(env, 0.99, spec, cks, 1);
  ASSERT_EQ(rows.size(), 2u);
  for (const auto& r : rows) {
    const auto& ck = cks[r.checkpoint_seed];
    const auto other = evaluate_policy(env, ck.state.policy, ck.state.value, 200, 12345, 0.99);
    const double se = std::hypot(r.std, other.std) / std::sqrt(200.0);
    EXPECT_LE(std::abs(r.mean - other.mean), 4.0 * se + 1e-12);
  }
}

TEST(Sweep, RowOrderIndependentOfWorkers) {
  const auto env = envs::EnvSpec::defaults(envs::EnvKind::ChainMdp);
  auto spec = chain_sweep();
  spec.seeds = {0, 1};
  const auto cks = load_sources(spec.checkpoints);
  const auto a = sweep_table(sweep_rows(env, 0.99, spec, cks, 1), "sweep");
  const auto b = sweep_table(sweep_rows(env, 0.99, spec, cks, 4), "sweep");
  EXPECT_EQ(csv_to_string(a), csv_to_string(b));
}

TEST(Sweep, DimensionMismatchIsRejected) {
  const auto pendulum = envs::EnvSpec::defaults(envs::EnvKind::PendulumSwingup);
  const auto spec = chain_sweep();
  EXPECT_THROW(sweep_rows(pendulum, 0.99, spec, load_sources(spec.checkpoints), 1), std::runtime_error);
}

TEST(Sweep, RunWritesCsvAndOnePlotPerAxis) {
  const auto out = scratch("sweep_out");
  json tree = chain_tree();
  tree["sweep"] = {{"checkpoints", {{{"label", "ppo"}, {"path", chain_run().string()}}}}, {"episodes", 10}};
  tree["out"] = out.string();
  const auto cfg = resolve_config(tree);
  const auto rows = run_sweep(cfg);
  const auto t = read_csv((out / "sweep.csv").string(), "sweep", 1, sweep_columns());
  EXPECT_EQ(t.rows.size(), rows.size());
  for (const auto* axis : {"mass_scale", "sigma", "epsilon"}) {
    const auto svg = read_text(out / ("sweep_" + std::string(axis) + ".svg"));
    EXPECT_EQ(svg.rfind("<svg", 0), 0u);
    EXPECT_NE(svg.find("<polyline"), std::string::npos);
    EXPECT_NE(svg.find("<polygon"), std::string::npos);
  }
  const auto attack = run_attack(cfg);
  for (const auto& r : attack) EXPECT_EQ(r.axis, "epsilon");
  EXPECT_TRUE(fs::exists(out / "attack.csv"));
  EXPECT_TRUE(fs::exists(out / "attack_epsilon.svg"));
}

TEST(Sweep, ReferencePendulumDegradesWithHeavierMass) {
  auto env = envs::EnvSpec::defaults(envs::EnvKind::PendulumSwingup);
  env.reward_scale = 0.1;
  auto spec = resolve_config(json::object()).sweep;
  spec.checkpoints = {{"reference", RISKGRAD_REFERENCE_CHECKPOINT}};
  spec.axes = {"mass_scale"};
  spec.mass_scale = {1.0, 1.5};
  spec.episodes = 20;
  const auto rows = sweep_rows(env, 0.95, spec, load_sources(spec.checkpoints), 1);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_GE(rows[0].mean, rows[1].mean);
  EXPECT_GE(rows[0].mean, envs::info(env).solved_threshold);
}

// ---------------------------------------------------------------------------
// CLI

namespace {

int cli(const std::string& args) {
  const std::string cmd = std::string(RISKGRAD_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Cli, ExitCodes) {
  const auto out = scratch("cli");
  const std::string small = " --override verify.instances=5 --override verify.theorem3_instances=2"
                            " --override verify.theorem4_instances=2";
  EXPECT_EQ(cli("verify --out " + out.string() + small), 0);
  EXPECT_TRUE(fs::exists(out / "verify.json"));
  EXPECT_EQ(cli("verify --out " + out.string() + small + " --override verify.identity_tol=0"), 1);
  EXPECT_EQ(cli(""), 2);
  EXPECT_EQ(cli("frobnicate"), 2);
  EXPECT_EQ(cli("verify --no-such-flag"), 2);
  EXPECT_EQ(cli("verify --override verify.bogus=1"), 2);
  EXPECT_EQ(cli("train --config /nonexistent/riskgrad.json"), 2);
  EXPECT_EQ(cli("sweep --out " + out.string()), 2);
  EXPECT_EQ(cli("sweep --out " + out.string() + " --checkpoint /nonexistent/riskgrad"), 1);
}
