// riskgrad command-line entry point: verify | train | sweep | attack.
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "riskgrad/harness/config.hpp"
#include "riskgrad/harness/train.hpp"
#include "riskgrad/harness/sweep.hpp"
#include "riskgrad/harness/verify.hpp"

namespace {

struct CommonOptions {
  std::string config;
  std::vector<std::string> overrides;
  std::string out;
  long long seed = -1;
  std::vector<std::string> checkpoints;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "JSON config file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "Single seed (replaces the seeds list)")->check(CLI::NonNegativeNumber);
  cmd->add_option("--out", o.out, "Output directory");
  cmd->add_option("--override", o.overrides, "key=value (dotted keys), repeatable");
}

riskgrad::harness::RunConfig load(const CommonOptions& o, const std::string& default_out) {
  std::vector<std::string> ov;
  ov.push_back("out=" + nlohmann::json(default_out).dump());
  ov.insert(ov.end(), o.overrides.begin(), o.overrides.end());
  if (o.seed >= 0) {
    ov.push_back("seeds=[" + std::to_string(o.seed) + "]");
    ov.push_back("sweep.seeds=[" + std::to_string(o.seed) + "]");
  }
  if (!o.out.empty()) ov.push_back("out=" + nlohmann::json(o.out).dump());
  if (!o.checkpoints.empty()) {
    nlohmann::json list = nlohmann::json::array();
    for (const auto& c : o.checkpoints) {
      const auto eq = c.find('=');
      if (eq == std::string::npos) list.push_back(c);
      else list.push_back({{"label", c.substr(0, eq)}, {"path", c.substr(eq + 1)}});
    }
    ov.push_back("sweep.checkpoints=" + list.dump());
  }
  return riskgrad::harness::load_config(o.config, ov);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"riskgrad: CVaR-constrained policy optimization toolkit"};
  app.require_subcommand(1);
  CommonOptions opts;
  auto* verify = app.add_subcommand("verify", "Check the bounds and identities on seeded random MDPs");
  add_common(verify, opts);
  auto* train = app.add_subcommand("train", "Train policies for every configured seed");
  add_common(train, opts);
  auto* sweep = app.add_subcommand("sweep", "Evaluate checkpoints over mass-scale and observation-noise grids");
  add_common(sweep, opts);
  auto* attack = app.add_subcommand("attack", "Evaluate checkpoints under FGSM observation attacks");
  add_common(attack, opts);
  for (auto* cmd : {sweep, attack})
    cmd->add_option("--checkpoint", opts.checkpoints, "[label=]path to a checkpoint file or train output dir, repeatable");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  using namespace riskgrad::harness;
  RunConfig cfg;
  try {
    if (verify->parsed()) cfg = load(opts, "runs/verify");
    if (train->parsed()) cfg = load(opts, "runs/train");
    if (sweep->parsed()) cfg = load(opts, "runs/sweep");
    if (attack->parsed()) cfg = load(opts, "runs/attack");
    if ((sweep->parsed() || attack->parsed()) && cfg.sweep.checkpoints.empty())
      throw ConfigError("sweep: give checkpoints with --checkpoint or sweep.checkpoints");
    if (sweep->parsed()) cfg.sweep.validate();
    if (attack->parsed()) {
      auto spec = cfg.sweep;
      spec.axes = {"epsilon"};
      spec.validate();
    }
  } catch (const ConfigError& e) {
    std::cerr << "riskgrad: " << e.what() << '\n';
    return 2;
  }
  try {
    if (verify->parsed()) {
      const auto report = run_verify(cfg);
      for (const auto& s : report.suites)
        std::cout << (s.passed() ? "PASS " : "FAIL ") << s.name << ": " << s.checks << " checks, " << s.failures
                  << " failures\n";
      std::cout << "wrote " << cfg.out << '\n';
      return report.passed() ? 0 : 1;
    }
    if (train->parsed()) {
      const auto results = run_train(cfg);
      for (const auto& r : results)
        std::cout << "seed " << r.seed << ": eval mean " << r.final_eval.mean << ", best " << r.best_eval_mean
                  << ", lower-tail risk " << r.last.lower_tail_risk << ", beta " << r.last.beta << '\n';
      std::cout << "wrote " << cfg.out << '\n';
      return 0;
    }
    if (sweep->parsed() || attack->parsed()) {
      const auto rows = sweep->parsed() ? run_sweep(cfg) : run_attack(cfg);
      for (const auto& r : rows)
        std::cout << r.label << " seed " << r.checkpoint_seed << " " << r.axis << "=" << r.value << ": mean " << r.mean
                  << ", worst10 " << r.worst10 << '\n';
      std::cout << "wrote " << cfg.out << '\n';
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "riskgrad: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
