// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "risdt/training.hpp"

namespace risdt {

/// Everything a pipeline run needs besides the master seed.
///
/// Training scenes get ids 0..training_scenes-1 unless listed explicitly;
/// scene `id` is drawn with seed derive_seed(scene_seed, id), so held-out
/// scenes are fixed by their ids.
struct ExperimentConfig {
  SystemConfig system = SystemConfig::desk();
  SceneGenerator generator;
  std::vector<SceneSpec> explicit_scenes;
  int horizon = 20;
  int training_scenes = 8;
  std::vector<int> heldout_ids{100, 101, 102};
  std::uint64_t scene_seed = 7;
  DatasetConfig dataset;
  TrainConfig training;
  RomConfig rom;
  int eval_seeds = 50;
  int checkpoints = 5;
  int checkpoint_eval_seeds = 20;
  std::vector<double> pmax_dbm{37.0, 40.0, 43.0};
  int threads = 1;
};

/// Top-level keys: "system", "scenes" (as in a scene config file) and
/// "experiment" holding the remaining fields, with "dataset", "training" and
/// "rom" sub-objects. Unknown keys raise ConfigError.
ExperimentConfig experiment_config_from_json(const nlohmann::json& root);
nlohmann::json experiment_config_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// Hash of the resolved configuration together with the master seed.
std::string run_hash(const ExperimentConfig& cfg, std::uint64_t seed);

std::vector<SceneSpec> training_scene_specs(const ExperimentConfig& cfg);
SceneSpec scene_by_id(const ExperimentConfig& cfg, int id);

inline constexpr const char* kPolicyPg = "pg-zfo";
inline constexpr const char* kPolicyDfwp = "df-wp";
inline constexpr const char* kPolicyRom = "rom";
inline constexpr const char* kPolicyExpert = "expert";
inline constexpr const char* kPolicyRandom = "random";

bool is_policy_name(const std::string& name);
/// Policies with a trained model behind them.
bool is_model_policy(const std::string& name);

/// Output layout under one directory.
struct Workspace {
  std::filesystem::path root;

  std::filesystem::path dataset_dir() const { return root / "dataset"; }
  std::filesystem::path model_prefix(const std::string& policy) const { return root / "models" / policy; }
  std::filesystem::path checkpoint_prefix(const std::string& policy, int epoch) const {
    return root / "models" / (policy + "_epoch" + std::to_string(epoch));
  }
  std::filesystem::path loss_csv(const std::string& policy) const { return root / ("loss_" + policy + ".csv"); }
  std::filesystem::path checkpoint_csv(const std::string& policy) const {
    return root / ("checkpoints_" + policy + ".csv");
  }
  std::filesystem::path eval_csv(const std::string& policy) const { return root / ("eval_" + policy + ".csv"); }
  std::filesystem::path compare_csv() const { return root / "compare.csv"; }
  std::filesystem::path sweep_csv() const { return root / "sweep_power.csv"; }
};

Dataset run_gen_data(const ExperimentConfig& cfg, std::uint64_t seed, const Workspace& ws);

/// Mean held-out metrics of one saved model state.
struct CheckpointMetrics {
  int epoch = 0;
  double mean_return = 0.0;
  double mean_total_qoe = 0.0;
};

struct TrainOutcome {
  Model model;
  TrainResult result;
  std::vector<CheckpointMetrics> checkpoints;  // epoch 0 first
};

/// Trains `policy` (pg-zfo or df-wp) on the stored dataset. Saves the final
/// model, `cfg.checkpoints` evenly spaced intermediate models, the loss curve,
/// and, when checkpoint_eval_seeds > 0, the held-out metrics of the initial
/// model and of every checkpoint.
TrainOutcome run_train(const ExperimentConfig& cfg, std::uint64_t seed, const Workspace& ws, const std::string& policy);

/// One scene's evaluation with the settings that produced it.
struct EvalRecord {
  EvalResult result;
  std::optional<double> pmax_dbm;
};

/// Evaluates a policy on the given scenes using artifacts already in `ws`.
/// `system` replaces the configured one (the power sweep changes P_max).
std::vector<EvalRecord> run_eval(const ExperimentConfig& cfg, std::uint64_t seed, const Workspace& ws,
                                 const std::string& policy, const std::vector<int>& scene_ids, int n_seeds,
                                 const std::optional<double>& pmax_dbm = std::nullopt);

/// Per-episode rows: config_hash,scene_id,seed,total_qoe,return,violation_rate,policy_name[,pmax_dbm].
void write_metrics_csv(const std::filesystem::path& path, const std::string& hash,
                       const std::vector<EvalRecord>& records);
void write_loss_csv(const std::filesystem::path& path, const std::string& hash, const std::string& policy,
                    const TrainResult& result, int steps_per_epoch);
void write_checkpoint_csv(const std::filesystem::path& path, const std::string& hash, const std::string& policy,
                          const std::vector<CheckpointMetrics>& rows);

/// Reads the CSV files, aggregates mean and standard deviation over seeds and
/// writes summary.json, fig2_loss.csv, fig3_scenes.csv and fig4_pmax.csv into
/// `out_dir`. Each file carries the hashes of the runs it summarises.
void emit_summary(const std::vector<std::filesystem::path>& csv_paths, const std::filesystem::path& out_dir);

}  // namespace risdt
