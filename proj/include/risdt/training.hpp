// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "risdt/env.hpp"
#include "risdt/transformer.hpp"

namespace risdt {

/// Search policy that produces the behaviour data.
///
/// Draws `candidates` raw actions from N(0, proposal_std^2), scores each by
/// the one-step reward on the current slot's links and keeps the best (ties
/// go to the lowest index). With refine_passes > 0 the winner is then polished
/// by coordinate search: each pass tries +-step on every coordinate, keeping
/// moves that improve reward - norm_penalty * |raw|^2, and halves the step.
/// With warm_start the previous slot's decision joins the pool as candidate
/// zero, so within an episode the search keeps improving one decision.
/// With robust_samples > 0 every score is the mean reward over that many
/// raw-space perturbations N(0, robust_std^2), drawn once per slot and
/// shared by all candidates; the search then avoids decisions that only work
/// when reproduced exactly.
struct ExpertConfig {
  int candidates = 32;
  double proposal_std = 1.5;
  bool warm_start = false;
  int refine_passes = 0;
  double refine_step = 1.0;
  double norm_penalty = 0.0;
  int robust_samples = 0;
  double robust_std = 0.3;
};

std::vector<std::string> validate_expert_config(const ExpertConfig& cfg);

/// One-step reward of a raw action on the slot's frozen links. Non-finite
/// rewards map to -infinity so they never win a comparison.
double score_action(std::span<const double> raw, const State& state, const SceneContext& ctx);

/// Raw decision (decode_action layout) chosen by the search.
/// `incumbent` is the warm-start candidate; ignored unless cfg.warm_start.
std::vector<double> expert_action(const State& state, const SceneContext& ctx, const ExpertConfig& cfg, Rng& rng,
                                  const std::vector<double>* incumbent = nullptr);

/// Expert rollout seeded from `seed`; the search draws from a stream derived
/// from the same seed.
Episode expert_rollout(const SceneContext& ctx, const ExpertConfig& cfg, std::uint64_t seed);

struct DatasetConfig {
  int episodes_per_scene = 30;
  double prompt_fraction = 0.2;
  ExpertConfig expert;
};

std::vector<std::string> validate_dataset_config(const DatasetConfig& cfg);

nlohmann::json dataset_config_to_json(const DatasetConfig& cfg);
/// Missing keys keep their defaults; unknown keys are rejected with ConfigError.
DatasetConfig dataset_config_from_json(const nlohmann::json& j, DatasetConfig base = {});

struct SceneData {
  SceneSpec scene;
  std::vector<Episode> prompt_pool;      // source of prompts
  std::vector<Episode> trajectory_pool;  // source of training windows
};

struct Dataset {
  std::uint64_t seed = 0;
  std::string config_hash;
  SystemConfig system;
  DatasetConfig config;
  std::vector<SceneData> scenes;
};

/// Episode e of scene i uses seed derive_seed(derive_seed(seed, i.id), e).
/// The first round(prompt_fraction * episodes) episodes (at least one, and at
/// least one fewer than the total) form the prompt pool.
Dataset generate_dataset(const std::vector<SceneSpec>& scenes, const SystemConfig& system, const DatasetConfig& cfg,
                         std::uint64_t seed, int threads = 1);

/// Number of episodes that go to the prompt pool.
int prompt_pool_size(int episodes, double fraction);

/// Writes scene_<id>.jsonl per scene and manifest.json (seed, config hash,
/// system config, scenes, pool assignment).
void save_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

/// Tuples first..first+count-1 of an episode, all valid.
TupleSeq episode_slice(const Episode& ep, int first, int count);
/// The L tuples ending at slot t_g (1-based), left-padded with zero tuples
/// marked invalid when t_g < L.
TupleSeq episode_window(const Episode& ep, int t_g, int context);

struct TrainSample {
  TupleSeq prompt;
  TupleSeq recent;
};

/// G samples from one scene. Each pairs a random (T_star + 1)-tuple slice of a
/// random prompt-pool episode (empty when cfg.use_prompt is false) with a
/// window ending at a uniform slot of a random trajectory-pool episode.
std::vector<TrainSample> sample_minibatch(const SceneData& scene, const TrainConfig& cfg, Rng& rng);

/// Per-feature mean and inverse standard deviation over every stored state,
/// and the largest initial return-to-go as the RTG divisor. Constant
/// features get scale 1.
Normalizer fit_normalizer(const Dataset& data);

ModelDims dataset_dims(const Dataset& data);

/// Fresh model for `data` with its normaliser fitted.
Model make_model(const Dataset& data, const TrainConfig& cfg);

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  std::vector<double> step_loss;   // one per Adam step
  std::vector<double> epoch_loss;  // mean of that epoch's step losses
};

/// Called after every epoch with the 1-based epoch number.
using EpochCallback = std::function<void(int epoch, const Model& model)>;

/// Each epoch draws one minibatch per scene (scene order shuffled) and takes
/// one Adam step per minibatch on the masked MSE. Per-sample gradients may be
/// computed on `threads` workers; they are summed in sample order, so results
/// do not depend on the thread count. Throws TrainingError on a non-finite
/// loss or gradient.
TrainResult train(Model& model, const Dataset& data, const EpochCallback& on_epoch = {}, int threads = 1);

/// Mean masked MSE over minibatch losses.
double minibatch_loss(const Model& model, const std::vector<TrainSample>& batch, ModelParams* grad = nullptr,
                      int threads = 1);

/// Policy factory: a fresh stateful policy per episode, given that episode's seed.
using PolicyFactory = std::function<PolicyFn(std::uint64_t episode_seed)>;

/// Decision-transformer policy. Keeps its own history, conditions on
/// rtg - rtg_offset, and predicts at the newest state token. Holds its own
/// copy of the model.
PolicyFactory dt_policy(const Model& model, TupleSeq prompt, double rtg_offset);

/// Prompt for online execution: the first T_star + 1 tuples of the first
/// prompt-pool episode of a training scene.
TupleSeq pool_prompt(const SceneData& scene, const TrainConfig& cfg);

/// Prompt for an unseen scene: the first T_star + 1 tuples of one fresh
/// expert rollout. The second member is that slice's reward sum.
std::pair<TupleSeq, double> acquire_prompt(const SceneContext& ctx, const TrainConfig& cfg,
                                           const ExpertConfig& expert, std::uint64_t seed);

struct EvalResult {
  std::string policy;
  int scene_id = 0;
  std::vector<std::uint64_t> seeds;
  std::vector<Episode> episodes;

  /// Sum over slots and users of QoE, per episode.
  std::vector<double> total_qoe() const;
  double mean_total_qoe() const;
  double mean_return() const;
  /// Violating user-slots over K * T, averaged over episodes.
  double violation_rate() const;
  /// Mean over episodes of the per-slot QoE sum.
  std::vector<double> qoe_trace() const;
};

/// Episode seeds derive_seed(seed, n) for n < n_seeds, shared by every policy
/// so that comparisons use common random numbers.
std::vector<std::uint64_t> eval_seeds(std::uint64_t seed, int n_seeds);

EvalResult evaluate(const PolicyFactory& policy, const std::string& name, const SceneContext& ctx, int n_seeds,
                    std::uint64_t seed, int threads = 1);

/// Evaluates a trained model on a scene. Uses `prompt` when the model was
/// trained with prompts, with rtg offset `prompt_reward`.
EvalResult evaluate_model(const Model& model, const std::string& name, const SceneContext& ctx,
                          const TupleSeq& prompt, double prompt_reward, int n_seeds, std::uint64_t seed,
                          int threads = 1);

struct RomConfig {
  int extra_candidates = 256;
  int scoring_episodes = 4;
  double proposal_std = 1.5;
};

/// Fixed raw action for one training scene: among every action stored in the
/// scene's episodes plus `extra_candidates` random draws, the one with the
/// highest mean one-step reward over the links of `scoring_episodes` fresh
/// episodes of that scene.
std::vector<double> baseline_rom(const SceneData& scene, const SystemConfig& system, const RomConfig& cfg,
                                 std::uint64_t seed, int threads = 1);
PolicyFactory constant_policy(std::vector<double> raw);
PolicyFactory random_policy(const SystemConfig& system, double proposal_std, std::uint64_t seed);

/// Same architecture and training as the prompted model, without prompts.
TrainConfig dfwp_config(TrainConfig cfg);

}  // namespace risdt
