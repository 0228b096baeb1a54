// SPDX-License-Identifier: Apache-2.0

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "risdt/experiment.hpp"

namespace {

using namespace risdt;

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct Options {
  std::string config;
  std::string out = "out";
  std::uint64_t seed = 1;
  std::optional<int> seeds;
  std::vector<int> scenes;
  std::vector<double> pmax_dbm;
  std::vector<std::string> policies;
  std::optional<int> threads;
  std::vector<std::string> inputs;
};

int fail(const std::string& command, const std::string& kind, const std::string& message, int code) {
  nlohmann::json record = {{"status", "error"}, {"command", command}, {"kind", kind}, {"message", message},
                           {"exit_code", code}};
  std::cerr << record.dump() << '\n';
  return code;
}

ExperimentConfig resolve(const Options& opt) {
  ExperimentConfig cfg = opt.config.empty() ? ExperimentConfig{} : load_experiment_config(opt.config);
  if (opt.threads) {
    if (*opt.threads < 0) throw ConfigError("--threads must be non-negative");
    cfg.threads = *opt.threads;
  }
  return cfg;
}

std::vector<std::string> policies_or(const Options& opt, std::vector<std::string> fallback) {
  std::vector<std::string> out = opt.policies.empty() ? std::move(fallback) : opt.policies;
  for (const auto& p : out) {
    if (!is_policy_name(p)) throw ConfigError("unknown policy '" + p + "'");
  }
  return out;
}

void log(const std::string& msg) { std::cerr << msg << '\n'; }

void cmd_gen_data(const Options& opt) {
  const ExperimentConfig cfg = resolve(opt);
  const Workspace ws{opt.out};
  const Dataset data = run_gen_data(cfg, opt.seed, ws);
  log("dataset " + data.config_hash + ": " + std::to_string(data.scenes.size()) + " scenes written to " +
      ws.dataset_dir().string());
}

void cmd_train(const Options& opt) {
  const ExperimentConfig cfg = resolve(opt);
  const Workspace ws{opt.out};
  for (const auto& policy : policies_or(opt, {kPolicyPg})) {
    if (!is_model_policy(policy)) throw ConfigError("policy '" + policy + "' has no model to train");
    const TrainOutcome o = run_train(cfg, opt.seed, ws, policy);
    log(policy + ": " + std::to_string(o.result.step_loss.size()) + " steps, first-epoch loss " +
        std::to_string(o.result.epoch_loss.front()) + ", final-epoch loss " +
        std::to_string(o.result.epoch_loss.back()));
    for (const auto& c : o.checkpoints) {
      log("  epoch " + std::to_string(c.epoch) + ": held-out mean return " + std::to_string(c.mean_return) +
          ", mean total QoE " + std::to_string(c.mean_total_qoe));
    }
  }
}

std::vector<EvalRecord> eval_all(const ExperimentConfig& cfg, const Options& opt, const std::vector<std::string>& pols,
                                 const std::optional<double>& pmax) {
  const Workspace ws{opt.out};
  const std::vector<int> scenes = opt.scenes.empty() ? cfg.heldout_ids : opt.scenes;
  std::vector<EvalRecord> all;
  for (const auto& policy : pols) {
    auto recs = run_eval(cfg, opt.seed, ws, policy, scenes, opt.seeds.value_or(cfg.eval_seeds), pmax);
    for (auto& r : recs) {
      log(policy + " scene " + std::to_string(r.result.scene_id) +
          (pmax ? " pmax " + std::to_string(*pmax) + " dBm" : std::string()) + ": mean total QoE " +
          std::to_string(r.result.mean_total_qoe()) + ", mean return " + std::to_string(r.result.mean_return()) +
          ", violation rate " + std::to_string(r.result.violation_rate()));
      all.push_back(std::move(r));
    }
  }
  return all;
}

void cmd_eval(const Options& opt) {
  const ExperimentConfig cfg = resolve(opt);
  const Workspace ws{opt.out};
  const std::string hash = run_hash(cfg, opt.seed);
  for (const auto& policy : policies_or(opt, {kPolicyPg})) {
    write_metrics_csv(ws.eval_csv(policy), hash, eval_all(cfg, opt, {policy}, std::nullopt));
  }
}

void cmd_compare(const Options& opt) {
  const ExperimentConfig cfg = resolve(opt);
  const Workspace ws{opt.out};
  const auto pols = policies_or(opt, {kPolicyPg, kPolicyDfwp, kPolicyRom});
  write_metrics_csv(ws.compare_csv(), run_hash(cfg, opt.seed), eval_all(cfg, opt, pols, std::nullopt));
}

void cmd_sweep(const Options& opt) {
  const ExperimentConfig cfg = resolve(opt);
  const Workspace ws{opt.out};
  const std::vector<double> grid = opt.pmax_dbm.empty() ? cfg.pmax_dbm : opt.pmax_dbm;
  if (grid.empty()) throw ConfigError("the P_max grid is empty");
  const auto pols = policies_or(opt, {kPolicyPg, kPolicyDfwp, kPolicyRom});
  std::vector<EvalRecord> all;
  for (double p : grid) {
    auto recs = eval_all(cfg, opt, pols, p);
    for (auto& r : recs) all.push_back(std::move(r));
  }
  write_metrics_csv(ws.sweep_csv(), run_hash(cfg, opt.seed), all);
}

void cmd_summary(const Options& opt) {
  std::vector<std::filesystem::path> paths(opt.inputs.begin(), opt.inputs.end());
  emit_summary(paths, opt.out);
  log("summary of " + std::to_string(paths.size()) + " files written to " + opt.out);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"RIS-assisted downlink simulator with a prompted decision-transformer policy"};
  app.require_subcommand(1);
  Options opt;

  auto common = [&](CLI::App* sub, bool evaluates) {
    sub->add_option("--config", opt.config, "experiment configuration JSON (defaults to the desk profile)");
    sub->add_option("--out", opt.out, "output directory")->capture_default_str();
    sub->add_option("--seed", opt.seed, "master seed")->capture_default_str();
    sub->add_option("--threads", opt.threads, "worker threads (0 = all cores)");
    if (evaluates) {
      sub->add_option("--seeds", opt.seeds, "evaluation episodes per scene");
      sub->add_option("--scenes", opt.scenes, "scene ids (defaults to the held-out scenes)")->delimiter(',');
    }
  };

  auto* gen = app.add_subcommand("gen-data", "generate the expert dataset");
  common(gen, false);
  auto* tr = app.add_subcommand("train", "train pg-zfo and/or df-wp on the stored dataset");
  common(tr, false);
  tr->add_option("--policy", opt.policies, "pg-zfo or df-wp")->delimiter(',');
  auto* ev = app.add_subcommand("eval", "evaluate policies and write eval_<policy>.csv");
  common(ev, true);
  ev->add_option("--policy", opt.policies, "pg-zfo, df-wp, rom, expert or random")->delimiter(',');
  auto* cmp = app.add_subcommand("compare", "evaluate pg-zfo, df-wp and rom on common seeds");
  common(cmp, true);
  cmp->add_option("--policy", opt.policies, "policies to compare")->delimiter(',');
  auto* sw = app.add_subcommand("sweep-power", "repeat the evaluation across a P_max grid");
  common(sw, true);
  sw->add_option("--policy", opt.policies, "policies to sweep")->delimiter(',');
  sw->add_option("--pmax-dbm", opt.pmax_dbm, "P_max grid in dBm")->delimiter(',');
  auto* sum = app.add_subcommand("summary", "aggregate metric and loss CSVs into figure data");
  sum->add_option("--out", opt.out, "output directory")->capture_default_str();
  sum->add_option("inputs", opt.inputs, "CSV files");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(app.get_subcommands().empty() ? "" : app.get_subcommands().front()->get_name(), "usage", e.what(),
                kExitConfig);
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    if (command == "gen-data") cmd_gen_data(opt);
    else if (command == "train") cmd_train(opt);
    else if (command == "eval") cmd_eval(opt);
    else if (command == "compare") cmd_compare(opt);
    else if (command == "sweep-power") cmd_sweep(opt);
    else cmd_summary(opt);
  } catch (const ConfigError& e) {
    return fail(command, "config", e.what(), kExitConfig);
  } catch (const std::exception& e) {
    return fail(command, "runtime", e.what(), kExitRuntime);
  }
  return 0;
}
