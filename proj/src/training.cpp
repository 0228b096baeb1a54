// SPDX-License-Identifier: Apache-2.0

#include "risdt/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>

#include "risdt/parallel.hpp"

namespace risdt {

namespace {

constexpr std::uint64_t kExpertStream = 0x65787065;  // "expe"
constexpr std::uint64_t kPromptStream = 0x70726f6d;  // "prom"
constexpr std::uint64_t kEpochStream = 0x65706f63;   // "epoc"
constexpr std::uint64_t kRomStream = 0x726f6d21;     // "rom!"

std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (const auto& p : parts) out += (out.empty() ? "" : "; ") + p;
  return out;
}

std::vector<double> gaussian_vector(int n, double sd, Rng& rng) {
  std::normal_distribution<double> g(0.0, sd);
  std::vector<double> v(n);
  for (double& x : v) x = g(rng);
  return v;
}

double squared_norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

}  // namespace

std::vector<std::string> validate_expert_config(const ExpertConfig& cfg) {
  std::vector<std::string> out;
  if (cfg.candidates < 1) out.push_back("expert.candidates must be at least 1");
  if (!(cfg.proposal_std > 0.0)) out.push_back("expert.proposal_std must be positive");
  if (cfg.refine_passes < 0) out.push_back("expert.refine_passes must be non-negative");
  if (!(cfg.refine_step > 0.0)) out.push_back("expert.refine_step must be positive");
  if (!(cfg.norm_penalty >= 0.0)) out.push_back("expert.norm_penalty must be non-negative");
  if (cfg.robust_samples < 0) out.push_back("expert.robust_samples must be non-negative");
  if (!(cfg.robust_std > 0.0)) out.push_back("expert.robust_std must be positive");
  return out;
}

std::vector<std::string> validate_dataset_config(const DatasetConfig& cfg) {
  std::vector<std::string> out = validate_expert_config(cfg.expert);
  if (cfg.episodes_per_scene < 2) out.push_back("episodes_per_scene must be at least 2");
  if (!(cfg.prompt_fraction > 0.0 && cfg.prompt_fraction < 1.0)) out.push_back("prompt_fraction must lie in (0, 1)");
  return out;
}

nlohmann::json dataset_config_to_json(const DatasetConfig& cfg) {
  return {{"episodes_per_scene", cfg.episodes_per_scene},
          {"prompt_fraction", cfg.prompt_fraction},
          {"expert",
           {{"candidates", cfg.expert.candidates},
            {"proposal_std", cfg.expert.proposal_std},
            {"warm_start", cfg.expert.warm_start},
            {"refine_passes", cfg.expert.refine_passes},
            {"refine_step", cfg.expert.refine_step},
            {"norm_penalty", cfg.expert.norm_penalty},
            {"robust_samples", cfg.expert.robust_samples},
            {"robust_std", cfg.expert.robust_std}}}};
}

DatasetConfig dataset_config_from_json(const nlohmann::json& j, DatasetConfig cfg) {
  if (!j.is_object()) throw ConfigError("schema error at 'dataset': expected an object");
  std::vector<std::string> errs;
  auto read = [&](const std::string& key, const nlohmann::json& value, auto& field) {
    try {
      value.get_to(field);
    } catch (const nlohmann::json::exception&) {
      errs.push_back("wrong type at '" + key + "'");
    }
  };
  for (const auto& [key, value] : j.items()) {
    if (key == "episodes_per_scene") read("dataset." + key, value, cfg.episodes_per_scene);
    else if (key == "prompt_fraction") read("dataset." + key, value, cfg.prompt_fraction);
    else if (key == "expert") {
      if (!value.is_object()) {
        errs.push_back("wrong type at 'dataset.expert'");
        continue;
      }
      for (const auto& [k, v] : value.items()) {
        const std::string name = "dataset.expert." + k;
        if (k == "candidates") read(name, v, cfg.expert.candidates);
        else if (k == "proposal_std") read(name, v, cfg.expert.proposal_std);
        else if (k == "warm_start") read(name, v, cfg.expert.warm_start);
        else if (k == "refine_passes") read(name, v, cfg.expert.refine_passes);
        else if (k == "refine_step") read(name, v, cfg.expert.refine_step);
        else if (k == "norm_penalty") read(name, v, cfg.expert.norm_penalty);
        else if (k == "robust_samples") read(name, v, cfg.expert.robust_samples);
        else if (k == "robust_std") read(name, v, cfg.expert.robust_std);
        else errs.push_back("unknown key '" + name + "'");
      }
    } else {
      errs.push_back("unknown key 'dataset." + key + "'");
    }
  }
  for (const auto& e : validate_dataset_config(cfg)) errs.push_back("dataset: " + e);
  if (!errs.empty()) throw ConfigError("schema error: " + join(errs));
  return cfg;
}

double score_action(std::span<const double> raw, const State& state, const SceneContext& ctx) {
  const double r = evaluate_slot(state, decode_action(raw, ctx.cfg), ctx).reward;
  return std::isfinite(r) ? r : -std::numeric_limits<double>::infinity();
}

std::vector<double> expert_action(const State& state, const SceneContext& ctx, const ExpertConfig& cfg, Rng& rng,
                                  const std::vector<double>* incumbent) {
  if (const auto errs = validate_expert_config(cfg); !errs.empty())
    throw std::invalid_argument("invalid expert configuration: " + join(errs));
  const int a = action_length(ctx.cfg);
  std::vector<std::vector<double>> jitter;
  for (int r = 0; r < cfg.robust_samples; ++r) jitter.push_back(gaussian_vector(a, cfg.robust_std, rng));
  auto score = [&](const std::vector<double>& raw) {
    if (jitter.empty()) return score_action(raw, state, ctx);
    double s = 0.0;
    std::vector<double> moved(a);
    for (const auto& j : jitter) {
      for (int i = 0; i < a; ++i) moved[i] = raw[i] + j[i];
      s += score_action(moved, state, ctx);
    }
    return s / static_cast<double>(jitter.size());
  };

  std::vector<double> best;
  double best_score = 0.0;
  if (cfg.warm_start && incumbent && !incumbent->empty()) {
    if (static_cast<int>(incumbent->size()) != a) throw std::invalid_argument("incumbent has the wrong length");
    best = *incumbent;
    best_score = score(best);
  }
  for (int c = 0; c < cfg.candidates; ++c) {
    std::vector<double> raw = gaussian_vector(a, cfg.proposal_std, rng);
    const double s = score(raw);
    if (best.empty() || s > best_score) {
      best = std::move(raw);
      best_score = s;
    }
  }
  if (cfg.refine_passes == 0) return best;

  auto objective = [&](const std::vector<double>& raw) { return score(raw) - cfg.norm_penalty * squared_norm(raw); };
  double cur = objective(best);
  double step = cfg.refine_step;
  for (int pass = 0; pass < cfg.refine_passes; ++pass, step *= 0.5) {
    for (int i = 0; i < a; ++i) {
      for (double dir : {1.0, -1.0}) {
        std::vector<double> trial = best;
        trial[i] += dir * step;
        const double s = objective(trial);
        if (s > cur) {
          best = std::move(trial);
          cur = s;
          break;
        }
      }
    }
  }
  return best;
}

Episode expert_rollout(const SceneContext& ctx, const ExpertConfig& cfg, std::uint64_t seed) {
  Rng rng(derive_seed(seed, kExpertStream));
  std::vector<double> previous;
  return rollout(
      [&](const State& s, double) {
        previous = expert_action(s, ctx, cfg, rng, &previous);
        return previous;
      },
      ctx, seed);
}

int prompt_pool_size(int episodes, double fraction) {
  const int n = static_cast<int>(std::lround(fraction * episodes));
  return std::clamp(n, 1, episodes - 1);
}

Dataset generate_dataset(const std::vector<SceneSpec>& scenes, const SystemConfig& system, const DatasetConfig& cfg,
                         std::uint64_t seed, int threads) {
  if (const auto errs = validate_dataset_config(cfg); !errs.empty())
    throw ConfigError("invalid dataset configuration: " + join(errs));
  if (scenes.empty()) throw ConfigError("dataset needs at least one scene");
  std::vector<SceneContext> contexts;
  for (const SceneSpec& s : scenes) contexts.emplace_back(s, system);

  const int per_scene = cfg.episodes_per_scene;
  const int total = static_cast<int>(scenes.size()) * per_scene;
  std::vector<Episode> episodes(total);
  parallel_for(total, threads, [&](int job) {
    const int si = job / per_scene;
    const int e = job % per_scene;
    const std::uint64_t ep_seed = derive_seed(derive_seed(seed, static_cast<std::uint64_t>(scenes[si].id)), e);
    episodes[job] = expert_rollout(contexts[si], cfg.expert, ep_seed);
    episodes[job].index = e;
  });

  Dataset data;
  data.seed = seed;
  data.system = system;
  data.config = cfg;
  nlohmann::json scene_json = nlohmann::json::array();
  for (const SceneSpec& s : scenes) scene_json.push_back(scene_to_json(s));
  data.config_hash = config_hash({{"system", system_to_json(system)},
                                  {"scenes", scene_json},
                                  {"dataset", dataset_config_to_json(cfg)},
                                  {"seed", seed}});
  const int n_prompt = prompt_pool_size(per_scene, cfg.prompt_fraction);
  for (std::size_t si = 0; si < scenes.size(); ++si) {
    SceneData sd;
    sd.scene = scenes[si];
    for (int e = 0; e < per_scene; ++e) {
      Episode& ep = episodes[si * per_scene + e];
      (e < n_prompt ? sd.prompt_pool : sd.trajectory_pool).push_back(std::move(ep));
    }
    data.scenes.push_back(std::move(sd));
  }
  return data;
}

void save_dataset(const Dataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = "risdt-dataset-1";
  manifest["seed"] = data.seed;
  manifest["config_hash"] = data.config_hash;
  manifest["system"] = system_to_json(data.system);
  manifest["dataset"] = dataset_config_to_json(data.config);
  manifest["scenes"] = nlohmann::json::array();
  for (const SceneData& sd : data.scenes) {
    const std::string file = "scene_" + std::to_string(sd.scene.id) + ".jsonl";
    std::vector<int> prompt_ids, traj_ids;
    std::ofstream out(dir / file);
    if (!out) throw std::runtime_error("cannot write " + (dir / file).string());
    for (const Episode& ep : sd.prompt_pool) {
      prompt_ids.push_back(ep.index);
      write_episode_jsonl(out, ep);
    }
    for (const Episode& ep : sd.trajectory_pool) {
      traj_ids.push_back(ep.index);
      write_episode_jsonl(out, ep);
    }
    if (!out) throw std::runtime_error("failed writing " + (dir / file).string());
    manifest["scenes"].push_back({{"scene", scene_to_json(sd.scene)},
                                  {"file", file},
                                  {"prompt_episodes", prompt_ids},
                                  {"trajectory_episodes", traj_ids}});
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << '\n';
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("cannot open " + (dir / "manifest.json").string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error((dir / "manifest.json").string() + ": parse error: " + e.what());
  }
  if (manifest.value("format", "") != "risdt-dataset-1")
    throw std::runtime_error((dir / "manifest.json").string() + ": unknown format");
  Dataset data;
  data.seed = manifest.at("seed").get<std::uint64_t>();
  data.config_hash = manifest.at("config_hash").get<std::string>();
  data.system = system_from_json(manifest.at("system"));
  data.config = dataset_config_from_json(manifest.at("dataset"));
  for (const auto& entry : manifest.at("scenes")) {
    SceneData sd;
    sd.scene = scene_from_json(entry.at("scene"), data.system);
    const auto prompt_ids = entry.at("prompt_episodes").get<std::vector<int>>();
    const auto traj_ids = entry.at("trajectory_episodes").get<std::vector<int>>();
    const auto path = dir / entry.at("file").get<std::string>();
    std::ifstream ein(path);
    if (!ein) throw std::runtime_error("cannot open " + path.string());
    std::vector<Episode> episodes = read_episodes_jsonl(ein);
    auto take = [&](int id) {
      for (Episode& ep : episodes)
        if (ep.index == id && ep.scene_id == sd.scene.id) return ep;
      throw std::runtime_error(path.string() + ": missing episode " + std::to_string(id));
    };
    for (int id : prompt_ids) sd.prompt_pool.push_back(take(id));
    for (int id : traj_ids) sd.trajectory_pool.push_back(take(id));
    data.scenes.push_back(std::move(sd));
  }
  return data;
}

TupleSeq episode_slice(const Episode& ep, int first, int count) {
  const int n = static_cast<int>(ep.steps.size());
  if (first < 0 || count < 0 || first + count > n) throw std::out_of_range("episode slice out of range");
  if (n == 0 || count == 0) {
    TupleSeq s;
    s.rtg.resize(0);
    const int sd = n ? static_cast<int>(ep.steps[0].state.size()) : 0;
    const int ad = n ? static_cast<int>(ep.steps[0].action.size()) : 0;
    s.states.resize(0, sd);
    s.actions.resize(0, ad);
    return s;
  }
  const int sd = static_cast<int>(ep.steps[0].state.size());
  const int ad = static_cast<int>(ep.steps[0].action.size());
  TupleSeq s;
  s.rtg.resize(count);
  s.states.resize(count, sd);
  s.actions.resize(count, ad);
  s.valid.assign(count, 1);
  for (int i = 0; i < count; ++i) {
    const Transition& t = ep.steps[first + i];
    s.rtg(i) = t.rtg;
    s.states.row(i) = Eigen::Map<const Eigen::RowVectorXd>(t.state.data(), sd);
    s.actions.row(i) = Eigen::Map<const Eigen::RowVectorXd>(t.action.data(), ad);
  }
  return s;
}

TupleSeq episode_window(const Episode& ep, int t_g, int context) {
  const int n = static_cast<int>(ep.steps.size());
  if (t_g < 1 || t_g > n) throw std::out_of_range("window end slot out of range");
  if (context < 1) throw std::invalid_argument("context must be positive");
  const int first = std::max(0, t_g - context);
  const TupleSeq body = episode_slice(ep, first, t_g - first);
  const int pad = context - body.size();
  TupleSeq s;
  s.rtg = VectorXd::Zero(context);
  s.states = MatrixXd::Zero(context, body.states.cols());
  s.actions = MatrixXd::Zero(context, body.actions.cols());
  s.valid.assign(context, 0);
  s.rtg.tail(body.size()) = body.rtg;
  s.states.bottomRows(body.size()) = body.states;
  s.actions.bottomRows(body.size()) = body.actions;
  std::fill(s.valid.begin() + pad, s.valid.end(), 1);
  return s;
}

std::vector<TrainSample> sample_minibatch(const SceneData& scene, const TrainConfig& cfg, Rng& rng) {
  if (scene.trajectory_pool.empty() || (cfg.use_prompt && scene.prompt_pool.empty()))
    throw std::invalid_argument("scene " + std::to_string(scene.scene.id) + ": empty episode pool");
  std::vector<TrainSample> batch;
  batch.reserve(cfg.minibatch);
  for (int g = 0; g < cfg.minibatch; ++g) {
    TrainSample s;
    if (cfg.use_prompt) {
      const Episode& pe = scene.prompt_pool[uniform_int(rng, 0, static_cast<int>(scene.prompt_pool.size()) - 1)];
      const int len = std::min<int>(cfg.prompt_len + 1, static_cast<int>(pe.steps.size()));
      const int start = uniform_int(rng, 0, static_cast<int>(pe.steps.size()) - len);
      s.prompt = episode_slice(pe, start, len);
    }
    const Episode& te =
        scene.trajectory_pool[uniform_int(rng, 0, static_cast<int>(scene.trajectory_pool.size()) - 1)];
    const int t_g = uniform_int(rng, 1, static_cast<int>(te.steps.size()));
    s.recent = episode_window(te, t_g, cfg.context);
    if (!cfg.use_prompt) s.prompt = episode_slice(te, 0, 0);
    batch.push_back(std::move(s));
  }
  return batch;
}

ModelDims dataset_dims(const Dataset& data) {
  ModelDims dims{-1, -1};
  for (const SceneData& sd : data.scenes)
    for (const auto* pool : {&sd.prompt_pool, &sd.trajectory_pool})
      for (const Episode& ep : *pool)
        for (const Transition& t : ep.steps) {
          const int s = static_cast<int>(t.state.size());
          const int a = static_cast<int>(t.action.size());
          if (dims.state_dim < 0) dims = {s, a};
          if (s != dims.state_dim || a != dims.action_dim)
            throw std::invalid_argument("dataset mixes feature dimensions across scenes");
        }
  if (dims.state_dim <= 0) throw std::invalid_argument("dataset has no transitions");
  return dims;
}

Normalizer fit_normalizer(const Dataset& data) {
  const ModelDims dims = dataset_dims(data);
  VectorXd sum = VectorXd::Zero(dims.state_dim);
  VectorXd sq = VectorXd::Zero(dims.state_dim);
  double count = 0.0;
  double rtg_max = 0.0;
  for (const SceneData& sd : data.scenes) {
    rtg_max = std::max(rtg_max, rtg_init(sd.scene));
    for (const auto* pool : {&sd.prompt_pool, &sd.trajectory_pool})
      for (const Episode& ep : *pool)
        for (const Transition& t : ep.steps) {
          const auto x = Eigen::Map<const VectorXd>(t.state.data(), dims.state_dim);
          sum += x;
          count += 1.0;
        }
  }
  Normalizer n = Normalizer::identity(dims.state_dim);
  n.state_mean = sum / count;
  for (const SceneData& sd : data.scenes)
    for (const auto* pool : {&sd.prompt_pool, &sd.trajectory_pool})
      for (const Episode& ep : *pool)
        for (const Transition& t : ep.steps)
          sq += (Eigen::Map<const VectorXd>(t.state.data(), dims.state_dim) - n.state_mean).cwiseAbs2();
  for (int i = 0; i < dims.state_dim; ++i) {
    const double sd = std::sqrt(sq(i) / count);
    n.state_scale(i) = sd > 1e-12 * std::max(1.0, std::abs(n.state_mean(i))) ? 1.0 / sd : 1.0;
  }
  n.rtg_scale = rtg_max > 0.0 ? rtg_max : 1.0;
  return n;
}

Model make_model(const Dataset& data, const TrainConfig& cfg) {
  Model m = init_model(cfg, dataset_dims(data), cfg.seed);
  m.norm = fit_normalizer(data);
  return m;
}

double minibatch_loss(const Model& model, const std::vector<TrainSample>& batch, ModelParams* grad, int threads) {
  double entries = 0.0;
  for (const TrainSample& s : batch) entries += static_cast<double>(s.recent.num_valid()) * model.dims.action_dim;
  if (entries == 0.0) return 0.0;
  const int n = static_cast<int>(batch.size());
  std::vector<double> sse(n, 0.0);
  if (!grad) {
    parallel_for(n, threads, [&](int i) {
      const MatrixXd pred = forward(model, batch[i].prompt, batch[i].recent);
      int r = 0;
      for (int j = 0; j < batch[i].recent.size(); ++j)
        if (batch[i].recent.valid[j]) sse[i] += (pred.row(r++) - batch[i].recent.actions.row(j)).squaredNorm();
    });
  } else {
    std::vector<ModelParams> parts(n);
    parallel_for(n, threads, [&](int i) {
      parts[i] = model.params.zeros_like();
      sse[i] = accumulate_gradient(model.params, model.norm, model.cfg.heads, batch[i].prompt, batch[i].recent,
                                   1.0 / entries, parts[i]);
    });
    for (const ModelParams& p : parts) grad->add_scaled(p, 1.0);
  }
  double total = 0.0;
  for (double s : sse) total += s;
  return total / entries;
}

TrainResult train(Model& model, const Dataset& data, const EpochCallback& on_epoch, int threads) {
  if (const auto errs = validate_train_config(model.cfg); !errs.empty())
    throw ConfigError("invalid training configuration: " + join(errs));
  const ModelDims dims = dataset_dims(data);
  if (dims.state_dim != model.dims.state_dim || dims.action_dim != model.dims.action_dim)
    throw std::invalid_argument("model dimensions do not match the dataset");
  TrainResult result;
  std::vector<std::size_t> order(data.scenes.size());
  for (int epoch = 1; epoch <= model.cfg.epochs; ++epoch) {
    Rng rng(derive_seed(model.cfg.seed, kEpochStream + static_cast<std::uint64_t>(epoch)));
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_sum = 0.0;
    for (std::size_t si : order) {
      const std::vector<TrainSample> batch = sample_minibatch(data.scenes[si], model.cfg, rng);
      ModelParams grad = model.params.zeros_like();
      const double loss = minibatch_loss(model, batch, &grad, threads);
      if (!std::isfinite(loss) || !grad.all_finite()) {
        std::ostringstream msg;
        msg << "non-finite loss or gradient at epoch " << epoch << ", scene " << data.scenes[si].scene.id
            << ", Adam step " << model.adam.step + 1 << " (loss " << loss << ")";
        throw TrainingError(msg.str());
      }
      adam_step(model.params, grad, model.adam, model.cfg.learning_rate);
      result.step_loss.push_back(loss);
      epoch_sum += loss;
    }
    result.epoch_loss.push_back(epoch_sum / static_cast<double>(order.size()));
    if (on_epoch) on_epoch(epoch, model);
  }
  return result;
}

PolicyFactory dt_policy(const Model& model, TupleSeq prompt, double rtg_offset) {
  auto shared_model = std::make_shared<const Model>(model);
  auto shared_prompt = std::make_shared<const TupleSeq>(model.cfg.use_prompt ? std::move(prompt)
                                                                              : TupleSeq::empty(model.dims));
  return [shared_model, shared_prompt, rtg_offset](std::uint64_t) -> PolicyFn {
    struct History {
      std::vector<double> rtg;
      std::vector<std::vector<double>> states;
      std::vector<std::vector<double>> actions;
    };
    auto hist = std::make_shared<History>();
    return [shared_model, shared_prompt, rtg_offset, hist](const State& s, double rtg) {
      const Model& m = *shared_model;
      const int a = m.dims.action_dim;
      hist->rtg.push_back(rtg - rtg_offset);
      hist->states.push_back(s.features());
      hist->actions.emplace_back(a, 0.0);
      const int total = static_cast<int>(hist->rtg.size());
      const int n = std::min(total, m.cfg.context);
      TupleSeq recent;
      recent.rtg.resize(n);
      recent.states.resize(n, m.dims.state_dim);
      recent.actions.resize(n, a);
      recent.valid.assign(n, 1);
      for (int i = 0; i < n; ++i) {
        const int src = total - n + i;
        recent.rtg(i) = hist->rtg[src];
        recent.states.row(i) = Eigen::Map<const Eigen::RowVectorXd>(hist->states[src].data(), m.dims.state_dim);
        recent.actions.row(i) = Eigen::Map<const Eigen::RowVectorXd>(hist->actions[src].data(), a);
      }
      const MatrixXd pred = forward(m, *shared_prompt, recent);
      std::vector<double> action(a);
      for (int j = 0; j < a; ++j) action[j] = pred(n - 1, j);
      hist->actions.back() = action;
      return action;
    };
  };
}

TupleSeq pool_prompt(const SceneData& scene, const TrainConfig& cfg) {
  if (scene.prompt_pool.empty()) throw std::invalid_argument("scene has an empty prompt pool");
  const Episode& ep = scene.prompt_pool.front();
  return episode_slice(ep, 0, std::min<int>(cfg.prompt_len + 1, static_cast<int>(ep.steps.size())));
}

std::pair<TupleSeq, double> acquire_prompt(const SceneContext& ctx, const TrainConfig& cfg,
                                           const ExpertConfig& expert, std::uint64_t seed) {
  const Episode ep = expert_rollout(ctx, expert, derive_seed(seed, kPromptStream));
  const int len = std::min<int>(cfg.prompt_len + 1, static_cast<int>(ep.steps.size()));
  double reward = 0.0;
  for (int i = 0; i < len; ++i) reward += ep.steps[i].reward;
  return {episode_slice(ep, 0, len), reward};
}

std::vector<double> EvalResult::total_qoe() const {
  std::vector<double> out;
  for (const Episode& ep : episodes) out.push_back(ep.total_qoe());
  return out;
}

double EvalResult::mean_total_qoe() const {
  if (episodes.empty()) return 0.0;
  const auto q = total_qoe();
  return std::accumulate(q.begin(), q.end(), 0.0) / static_cast<double>(q.size());
}

double EvalResult::mean_return() const {
  if (episodes.empty()) return 0.0;
  double s = 0.0;
  for (const Episode& ep : episodes) s += ep.total_return;
  return s / static_cast<double>(episodes.size());
}

double EvalResult::violation_rate() const {
  if (episodes.empty()) return 0.0;
  double s = 0.0;
  for (const Episode& ep : episodes) {
    double slots_users = 0.0;
    for (const Transition& t : ep.steps) slots_users += static_cast<double>(t.qoe.size());
    s += slots_users > 0 ? ep.total_violations() / slots_users : 0.0;
  }
  return s / static_cast<double>(episodes.size());
}

std::vector<double> EvalResult::qoe_trace() const {
  std::vector<double> trace;
  for (const Episode& ep : episodes) {
    if (trace.size() < ep.steps.size()) trace.resize(ep.steps.size(), 0.0);
    for (std::size_t t = 0; t < ep.steps.size(); ++t)
      trace[t] += std::accumulate(ep.steps[t].qoe.begin(), ep.steps[t].qoe.end(), 0.0);
  }
  for (double& v : trace) v /= static_cast<double>(episodes.size());
  return trace;
}

std::vector<std::uint64_t> eval_seeds(std::uint64_t seed, int n_seeds) {
  std::vector<std::uint64_t> out;
  for (int n = 0; n < n_seeds; ++n) out.push_back(derive_seed(seed, static_cast<std::uint64_t>(n)));
  return out;
}

EvalResult evaluate(const PolicyFactory& policy, const std::string& name, const SceneContext& ctx, int n_seeds,
                    std::uint64_t seed, int threads) {
  if (n_seeds < 1) throw std::invalid_argument("n_seeds must be positive");
  EvalResult r;
  r.policy = name;
  r.scene_id = ctx.scene.id;
  r.seeds = eval_seeds(seed, n_seeds);
  r.episodes.resize(n_seeds);
  parallel_for(n_seeds, threads, [&](int i) {
    r.episodes[i] = rollout(policy(r.seeds[i]), ctx, r.seeds[i]);
    r.episodes[i].index = i;
  });
  return r;
}

EvalResult evaluate_model(const Model& model, const std::string& name, const SceneContext& ctx,
                          const TupleSeq& prompt, double prompt_reward, int n_seeds, std::uint64_t seed,
                          int threads) {
  const double offset = model.cfg.use_prompt ? prompt_reward : 0.0;
  return evaluate(dt_policy(model, prompt, offset), name, ctx, n_seeds, seed, threads);
}

std::vector<double> baseline_rom(const SceneData& scene, const SystemConfig& system, const RomConfig& cfg,
                                 std::uint64_t seed, int threads) {
  const SceneContext ctx(scene.scene, system);
  const int a = action_length(system);
  Rng rng(derive_seed(seed, kRomStream));

  std::vector<State> states;
  for (int e = 0; e < cfg.scoring_episodes; ++e) {
    Environment env(ctx);
    env.reset(derive_seed(derive_seed(seed, kRomStream), static_cast<std::uint64_t>(e)));
    const Decision zero = decode_action(std::vector<double>(a, 0.0), system);
    for (int t = 1; t <= scene.scene.horizon; ++t) {
      states.push_back(env.state());
      env.step(zero);
    }
  }
  std::vector<std::vector<double>> candidates;
  for (const auto* pool : {&scene.prompt_pool, &scene.trajectory_pool})
    for (const Episode& ep : *pool)
      for (const Transition& t : ep.steps) candidates.push_back(t.action);
  for (int c = 0; c < cfg.extra_candidates; ++c) candidates.push_back(gaussian_vector(a, cfg.proposal_std, rng));
  if (candidates.empty()) throw std::invalid_argument("ROM needs at least one candidate");

  std::vector<double> score(candidates.size());
  parallel_for(static_cast<int>(candidates.size()), threads, [&](int c) {
    double s = 0.0;
    for (const State& st : states) s += score_action(candidates[c], st, ctx);
    score[c] = s / static_cast<double>(states.size());
  });
  std::size_t best = 0;
  for (std::size_t c = 1; c < candidates.size(); ++c)
    if (score[c] > score[best]) best = c;
  return candidates[best];
}

PolicyFactory constant_policy(std::vector<double> raw) {
  return [raw = std::move(raw)](std::uint64_t) -> PolicyFn { return [raw](const State&, double) { return raw; }; };
}

PolicyFactory random_policy(const SystemConfig& system, double proposal_std, std::uint64_t seed) {
  const int a = action_length(system);
  return [a, proposal_std, seed](std::uint64_t episode_seed) -> PolicyFn {
    auto rng = std::make_shared<Rng>(derive_seed(seed, episode_seed));
    return [a, proposal_std, rng](const State&, double) { return gaussian_vector(a, proposal_std, *rng); };
  };
}

TrainConfig dfwp_config(TrainConfig cfg) {
  cfg.use_prompt = false;
  return cfg;
}

}  // namespace risdt
