// SPDX-License-Identifier: Apache-2.0

#include "risdt/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <tuple>

namespace risdt {

namespace {

using nlohmann::json;

constexpr std::uint64_t kDataTag = 0x64617461;    // "data"
constexpr std::uint64_t kTrainTag = 0x74726169;   // "trai"
constexpr std::uint64_t kEvalTag = 0x6576616c;    // "eval"
constexpr std::uint64_t kPromptTag = 0x70726d74;  // "prmt"
constexpr std::uint64_t kRomTag = 0x726f6d73;     // "roms"
constexpr std::uint64_t kRandomTag = 0x72616e64;  // "rand"
constexpr std::uint64_t kExpertTag = 0x65787074;  // "expt"

std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (const auto& p : parts) out += (out.empty() ? "" : "; ") + p;
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

json generator_to_json(const SceneGenerator& g) {
  return {{"region_min_m", g.region_min},
          {"region_max_m", g.region_max},
          {"weight_min", g.weight_min},
          {"weight_max", g.weight_max},
          {"payload_min_mb", g.payload_min_bits / kBitsPerMegabyte},
          {"payload_max_mb", g.payload_max_bits / kBitsPerMegabyte}};
}

void require(std::vector<std::string>& errs, bool ok, const char* what) {
  if (!ok) errs.push_back(what);
}

std::vector<std::string> validate_experiment(const ExperimentConfig& cfg) {
  std::vector<std::string> errs;
  require(errs, cfg.horizon >= 1, "experiment.horizon must be at least 1");
  require(errs, cfg.explicit_scenes.empty() ? cfg.training_scenes >= 1 : true,
                        "experiment.training_scenes must be at least 1");
  require(errs, !cfg.heldout_ids.empty(), "experiment.heldout_ids must not be empty");
  require(errs, cfg.eval_seeds >= 1, "experiment.eval_seeds must be at least 1");
  require(errs, cfg.checkpoints >= 0, "experiment.checkpoints must be non-negative");
  require(errs, cfg.checkpoint_eval_seeds >= 0, "experiment.checkpoint_eval_seeds must be non-negative");
  require(errs, !cfg.pmax_dbm.empty(), "experiment.pmax_dbm must not be empty");
  for (double p : cfg.pmax_dbm) require(errs, std::isfinite(p), "experiment.pmax_dbm must be finite");
  require(errs, cfg.threads >= 0, "experiment.threads must be non-negative");
  require(errs, cfg.rom.extra_candidates >= 0, "experiment.rom.extra_candidates must be non-negative");
  require(errs, cfg.rom.scoring_episodes >= 1, "experiment.rom.scoring_episodes must be at least 1");
  require(errs, cfg.rom.proposal_std > 0.0, "experiment.rom.proposal_std must be positive");
  require(errs, cfg.generator.weight_min >= 0.0 && cfg.generator.weight_min <= cfg.generator.weight_max &&
                                  cfg.generator.weight_max <= 1.0,
                        "experiment.scene_generator weights must satisfy 0 <= min <= max <= 1");
  require(errs, cfg.generator.payload_min_bits > 0.0 &&
                                  cfg.generator.payload_min_bits <= cfg.generator.payload_max_bits,
                        "experiment.scene_generator payloads must satisfy 0 < min <= max");
  std::set<int> train_ids;
  for (const SceneSpec& s : training_scene_specs(cfg)) train_ids.insert(s.id);
  for (int id : cfg.heldout_ids) {
    if (train_ids.count(id)) errs.push_back("held-out scene " + std::to_string(id) + " is also a training scene");
  }
  return errs;
}

Episode const* first_prompt_episode(const Dataset& data, int scene_id) {
  for (const SceneData& sd : data.scenes) {
    if (sd.scene.id == scene_id && !sd.prompt_pool.empty()) return &sd.prompt_pool.front();
  }
  return nullptr;
}

// Prompt for a scene: the pool prompt of a training scene or a fresh expert
// rollout otherwise, with the slice's reward sum.
std::pair<TupleSeq, double> scene_prompt(const SceneContext& ctx, const TrainConfig& tc, const Dataset& data,
                                         std::uint64_t seed) {
  if (const Episode* ep = first_prompt_episode(data, ctx.scene.id)) {
    const int n = std::min<int>(tc.prompt_len + 1, static_cast<int>(ep->steps.size()));
    double reward = 0.0;
    for (int i = 0; i < n; ++i) reward += ep->steps[i].reward;
    return {episode_slice(*ep, 0, n), reward};
  }
  return acquire_prompt(ctx, tc, data.config.expert,
                        derive_seed(derive_seed(seed, kPromptTag), static_cast<std::uint64_t>(ctx.scene.id)));
}

PolicyFactory expert_policy(const SceneContext& ctx, const ExpertConfig& cfg, std::uint64_t seed) {
  auto shared = std::make_shared<const SceneContext>(ctx);
  return [shared, cfg, seed](std::uint64_t episode_seed) -> PolicyFn {
    auto rng = std::make_shared<Rng>(derive_seed(seed, episode_seed));
    auto last = std::make_shared<std::vector<double>>();
    return [shared, cfg, rng, last](const State& s, double) {
      *last = expert_action(s, *shared, cfg, *rng, last->empty() ? nullptr : last.get());
      return *last;
    };
  };
}

std::vector<double> rom_action(const ExperimentConfig& cfg, const Dataset& data, std::uint64_t seed) {
  if (data.scenes.empty()) throw std::runtime_error("dataset has no scenes");
  const std::size_t pick = derive_seed(seed, kRomTag) % data.scenes.size();
  return baseline_rom(data.scenes[pick], data.system, cfg.rom, derive_seed(seed, kRomTag + 1), cfg.threads);
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(line);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

double parse_number(const std::string& s, const std::filesystem::path& path) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("malformed CSV " + path.string() + ": bad number '" + s + "'");
  }
}

struct Stats {
  std::vector<double> values;
  double mean() const {
    double s = 0.0;
    for (double v : values) s += v;
    return values.empty() ? 0.0 : s / values.size();
  }
  // Population standard deviation over seeds.
  double stddev() const {
    const double m = mean();
    double s = 0.0;
    for (double v : values) s += (v - m) * (v - m);
    return values.empty() ? 0.0 : std::sqrt(s / values.size());
  }
};

}  // namespace

ExperimentConfig experiment_config_from_json(const json& root) {
  if (!root.is_object()) throw ConfigError("schema error: top level must be an object");
  std::vector<std::string> errs;
  for (const auto& [key, value] : root.items()) {
    if (key != "system" && key != "scenes" && key != "experiment") errs.push_back("unknown key '" + key + "'");
  }
  if (!errs.empty()) throw ConfigError("schema error: " + join(errs));

  ExperimentConfig cfg;
  json base = {{"system", root.value("system", system_to_json(SystemConfig::desk()))}};
  if (root.contains("scenes")) base["scenes"] = root.at("scenes");
  ConfigBundle bundle = parse_config(base);
  cfg.system = bundle.system;
  cfg.explicit_scenes = std::move(bundle.scenes);

  const json ex = root.value("experiment", json::object());
  if (!ex.is_object()) throw ConfigError("schema error at 'experiment': expected an object");
  auto read = [&](const std::string& key, const json& value, auto& field) {
    try {
      value.get_to(field);
    } catch (const json::exception&) {
      errs.push_back("wrong type at 'experiment." + key + "'");
    }
  };
  for (const auto& [key, value] : ex.items()) {
    if (key == "horizon") read(key, value, cfg.horizon);
    else if (key == "training_scenes") read(key, value, cfg.training_scenes);
    else if (key == "heldout_ids") read(key, value, cfg.heldout_ids);
    else if (key == "scene_seed") read(key, value, cfg.scene_seed);
    else if (key == "eval_seeds") read(key, value, cfg.eval_seeds);
    else if (key == "checkpoints") read(key, value, cfg.checkpoints);
    else if (key == "checkpoint_eval_seeds") read(key, value, cfg.checkpoint_eval_seeds);
    else if (key == "pmax_dbm") read(key, value, cfg.pmax_dbm);
    else if (key == "threads") read(key, value, cfg.threads);
    else if (key == "dataset") cfg.dataset = dataset_config_from_json(value, cfg.dataset);
    else if (key == "training") cfg.training = train_config_from_json(value, cfg.training);
    else if (key == "rom") {
      if (!value.is_object()) {
        errs.push_back("wrong type at 'experiment.rom'");
        continue;
      }
      for (const auto& [k, v] : value.items()) {
        if (k == "extra_candidates") read("rom." + k, v, cfg.rom.extra_candidates);
        else if (k == "scoring_episodes") read("rom." + k, v, cfg.rom.scoring_episodes);
        else if (k == "proposal_std") read("rom." + k, v, cfg.rom.proposal_std);
        else errs.push_back("unknown key 'experiment.rom." + k + "'");
      }
    } else if (key == "scene_generator") {
      if (!value.is_object()) {
        errs.push_back("wrong type at 'experiment.scene_generator'");
        continue;
      }
      double pmin = cfg.generator.payload_min_bits / kBitsPerMegabyte;
      double pmax = cfg.generator.payload_max_bits / kBitsPerMegabyte;
      for (const auto& [k, v] : value.items()) {
        const std::string name = "scene_generator." + k;
        if (k == "region_min_m") read(name, v, cfg.generator.region_min);
        else if (k == "region_max_m") read(name, v, cfg.generator.region_max);
        else if (k == "weight_min") read(name, v, cfg.generator.weight_min);
        else if (k == "weight_max") read(name, v, cfg.generator.weight_max);
        else if (k == "payload_min_mb") read(name, v, pmin);
        else if (k == "payload_max_mb") read(name, v, pmax);
        else errs.push_back("unknown key 'experiment." + name + "'");
      }
      cfg.generator.payload_min_bits = pmin * kBitsPerMegabyte;
      cfg.generator.payload_max_bits = pmax * kBitsPerMegabyte;
    } else {
      errs.push_back("unknown key 'experiment." + key + "'");
    }
  }
  if (!errs.empty()) throw ConfigError("schema error: " + join(errs));
  if (auto v = validate_experiment(cfg); !v.empty()) {
    throw ConfigError("invalid experiment configuration: " + join(v));
  }
  return cfg;
}

json experiment_config_to_json(const ExperimentConfig& cfg) {
  json root;
  root["system"] = system_to_json(cfg.system);
  if (!cfg.explicit_scenes.empty()) {
    root["scenes"] = json::array();
    for (const SceneSpec& s : cfg.explicit_scenes) root["scenes"].push_back(scene_to_json(s));
  }
  root["experiment"] = {{"horizon", cfg.horizon},
                        {"training_scenes", cfg.training_scenes},
                        {"heldout_ids", cfg.heldout_ids},
                        {"scene_seed", cfg.scene_seed},
                        {"scene_generator", generator_to_json(cfg.generator)},
                        {"dataset", dataset_config_to_json(cfg.dataset)},
                        {"training", train_config_to_json(cfg.training)},
                        {"rom",
                         {{"extra_candidates", cfg.rom.extra_candidates},
                          {"scoring_episodes", cfg.rom.scoring_episodes},
                          {"proposal_std", cfg.rom.proposal_std}}},
                        {"eval_seeds", cfg.eval_seeds},
                        {"checkpoints", cfg.checkpoints},
                        {"checkpoint_eval_seeds", cfg.checkpoint_eval_seeds},
                        {"pmax_dbm", cfg.pmax_dbm},
                        {"threads", cfg.threads}};
  return root;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  json root;
  try {
    root = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("malformed JSON in '" + path.string() + "': " + e.what());
  }
  return experiment_config_from_json(root);
}

std::string run_hash(const ExperimentConfig& cfg, std::uint64_t seed) {
  json j = experiment_config_to_json(cfg);
  j["experiment"].erase("threads");
  j["seed"] = seed;
  return config_hash(j);
}

std::vector<SceneSpec> training_scene_specs(const ExperimentConfig& cfg) {
  if (!cfg.explicit_scenes.empty()) return cfg.explicit_scenes;
  std::vector<SceneSpec> out;
  for (int id = 0; id < cfg.training_scenes; ++id) out.push_back(scene_by_id(cfg, id));
  return out;
}

SceneSpec scene_by_id(const ExperimentConfig& cfg, int id) {
  for (const SceneSpec& s : cfg.explicit_scenes) {
    if (s.id == id) return s;
  }
  return generate_scene(id, cfg.horizon, derive_seed(cfg.scene_seed, static_cast<std::uint64_t>(id)), cfg.system,
                        cfg.generator);
}

bool is_policy_name(const std::string& name) {
  return name == kPolicyPg || name == kPolicyDfwp || name == kPolicyRom || name == kPolicyExpert ||
         name == kPolicyRandom;
}

bool is_model_policy(const std::string& name) { return name == kPolicyPg || name == kPolicyDfwp; }

Dataset run_gen_data(const ExperimentConfig& cfg, std::uint64_t seed, const Workspace& ws) {
  Dataset data =
      generate_dataset(training_scene_specs(cfg), cfg.system, cfg.dataset, derive_seed(seed, kDataTag), cfg.threads);
  save_dataset(data, ws.dataset_dir());
  return data;
}

TrainOutcome run_train(const ExperimentConfig& cfg, std::uint64_t seed, const Workspace& ws,
                       const std::string& policy) {
  if (!is_model_policy(policy)) throw ConfigError("policy '" + policy + "' has no model to train");
  const Dataset data = load_dataset(ws.dataset_dir());
  TrainConfig tc = cfg.training;
  tc.seed = derive_seed(seed, kTrainTag);
  if (policy == kPolicyDfwp) tc = dfwp_config(tc);

  TrainOutcome outcome{make_model(data, tc), {}, {}};
  std::filesystem::create_directories(ws.model_prefix(policy).parent_path());
  const std::string hash = run_hash(cfg, seed);

  std::vector<SceneContext> heldout;
  std::vector<std::pair<TupleSeq, double>> prompts;
  if (cfg.checkpoint_eval_seeds > 0) {
    for (int id : cfg.heldout_ids) {
      heldout.emplace_back(scene_by_id(cfg, id), cfg.system);
      prompts.push_back(scene_prompt(heldout.back(), tc, data, seed));
    }
  }
  auto measure = [&](int epoch, const Model& m) {
    CheckpointMetrics row{epoch, 0.0, 0.0};
    for (std::size_t i = 0; i < heldout.size(); ++i) {
      const EvalResult r = evaluate_model(m, policy, heldout[i], prompts[i].first, prompts[i].second,
                                          cfg.checkpoint_eval_seeds, derive_seed(seed, kEvalTag), cfg.threads);
      row.mean_return += r.mean_return() / heldout.size();
      row.mean_total_qoe += r.mean_total_qoe() / heldout.size();
    }
    outcome.checkpoints.push_back(row);
  };

  std::set<int> save_at;
  for (int k = 1; k <= cfg.checkpoints; ++k) {
    save_at.insert(std::max(1, static_cast<int>(std::lround(static_cast<double>(k) * tc.epochs / cfg.checkpoints))));
  }
  if (!heldout.empty()) measure(0, outcome.model);
  outcome.result = train(
      outcome.model, data,
      [&](int epoch, const Model& m) {
        if (!save_at.count(epoch)) return;
        save_checkpoint(m, ws.checkpoint_prefix(policy, epoch));
        if (!heldout.empty()) measure(epoch, m);
      },
      cfg.threads);

  save_checkpoint(outcome.model, ws.model_prefix(policy));
  write_loss_csv(ws.loss_csv(policy), hash, policy, outcome.result, static_cast<int>(data.scenes.size()));
  if (!heldout.empty()) write_checkpoint_csv(ws.checkpoint_csv(policy), hash, policy, outcome.checkpoints);
  return outcome;
}

std::vector<EvalRecord> run_eval(const ExperimentConfig& cfg, std::uint64_t seed, const Workspace& ws,
                                 const std::string& policy, const std::vector<int>& scene_ids, int n_seeds,
                                 const std::optional<double>& pmax_dbm) {
  if (!is_policy_name(policy)) throw ConfigError("unknown policy '" + policy + "'");
  if (scene_ids.empty()) throw ConfigError("no scenes to evaluate");
  if (n_seeds < 1) throw ConfigError("the seed count must be at least 1");
  SystemConfig system = cfg.system;
  if (pmax_dbm) {
    system.max_transmit_power_w = dbm_to_watts(*pmax_dbm);
    if (auto v = validate_config(system); !v.empty()) {
      throw ConfigError("invalid transmit power " + fmt(*pmax_dbm) + " dBm");
    }
  }
  const Dataset data = load_dataset(ws.dataset_dir());
  std::optional<Model> model;
  std::vector<double> rom;
  if (is_model_policy(policy)) model = load_checkpoint(ws.model_prefix(policy));
  if (policy == kPolicyRom) rom = rom_action(cfg, data, seed);

  const std::uint64_t eval_seed = derive_seed(seed, kEvalTag);
  std::vector<EvalRecord> out;
  for (int id : scene_ids) {
    const SceneContext ctx(scene_by_id(cfg, id), system);
    EvalRecord rec;
    rec.pmax_dbm = pmax_dbm;
    if (model) {
      const auto [prompt, reward] = scene_prompt(ctx, model->cfg, data, seed);
      rec.result = evaluate_model(*model, policy, ctx, prompt, reward, n_seeds, eval_seed, cfg.threads);
    } else if (policy == kPolicyRom) {
      rec.result = evaluate(constant_policy(rom), policy, ctx, n_seeds, eval_seed, cfg.threads);
    } else if (policy == kPolicyExpert) {
      rec.result = evaluate(expert_policy(ctx, data.config.expert, derive_seed(seed, kExpertTag)), policy, ctx,
                            n_seeds, eval_seed, cfg.threads);
    } else {
      rec.result = evaluate(random_policy(system, data.config.expert.proposal_std, derive_seed(seed, kRandomTag)),
                            policy, ctx, n_seeds, eval_seed, cfg.threads);
    }
    out.push_back(std::move(rec));
  }
  return out;
}

void write_metrics_csv(const std::filesystem::path& path, const std::string& hash,
                       const std::vector<EvalRecord>& records) {
  const bool sweep = std::any_of(records.begin(), records.end(), [](const EvalRecord& r) { return r.pmax_dbm; });
  std::ofstream out = open_out(path);
  out << "config_hash,scene_id,seed,total_qoe,return,violation_rate,policy_name" << (sweep ? ",pmax_dbm" : "")
      << '\n';
  for (const EvalRecord& rec : records) {
    const EvalResult& r = rec.result;
    const std::vector<double> qoe = r.total_qoe();
    const int users = r.episodes.empty() || r.episodes[0].steps.empty()
                          ? 1
                          : static_cast<int>(r.episodes[0].steps[0].qoe.size());
    for (std::size_t i = 0; i < r.episodes.size(); ++i) {
      const Episode& ep = r.episodes[i];
      const double slots = static_cast<double>(ep.steps.size()) * users;
      out << hash << ',' << r.scene_id << ',' << r.seeds[i] << ',' << fmt(qoe[i]) << ',' << fmt(ep.total_return)
          << ',' << fmt(slots > 0 ? ep.total_violations() / slots : 0.0) << ',' << r.policy;
      if (sweep) out << ',' << fmt(rec.pmax_dbm.value_or(std::nan("")));
      out << '\n';
    }
  }
}

void write_loss_csv(const std::filesystem::path& path, const std::string& hash, const std::string& policy,
                    const TrainResult& result, int steps_per_epoch) {
  std::ofstream out = open_out(path);
  out << "config_hash,policy_name,step,epoch,loss\n";
  for (std::size_t i = 0; i < result.step_loss.size(); ++i) {
    out << hash << ',' << policy << ',' << i + 1 << ',' << i / std::max(1, steps_per_epoch) + 1 << ','
        << fmt(result.step_loss[i]) << '\n';
  }
}

void write_checkpoint_csv(const std::filesystem::path& path, const std::string& hash, const std::string& policy,
                          const std::vector<CheckpointMetrics>& rows) {
  std::ofstream out = open_out(path);
  out << "config_hash,policy_name,epoch,mean_return,mean_total_qoe\n";
  for (const CheckpointMetrics& r : rows) {
    out << hash << ',' << policy << ',' << r.epoch << ',' << fmt(r.mean_return) << ',' << fmt(r.mean_total_qoe)
        << '\n';
  }
}

void emit_summary(const std::vector<std::filesystem::path>& csv_paths, const std::filesystem::path& out_dir) {
  struct Key {
    std::string policy;
    int scene;
    double pmax;
    bool operator<(const Key& o) const { return std::tie(policy, scene, pmax) < std::tie(o.policy, o.scene, o.pmax); }
  };
  struct Agg {
    Stats qoe, ret, viol;
  };
  std::map<Key, Agg> scenes, sweep;
  std::map<std::pair<std::string, long>, Stats> loss;  // (policy, step)
  std::set<std::string> hashes;
  const double no_pmax = -std::numeric_limits<double>::infinity();

  for (const auto& path : csv_paths) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("malformed CSV " + path.string() + ": missing header");
    const std::vector<std::string> header = split(line, ',');
    std::map<std::string, std::size_t> col;
    for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
    auto need = [&](const char* name) {
      if (!col.count(name)) throw std::runtime_error("malformed CSV " + path.string() + ": no column " + name);
      return col.at(name);
    };
    const bool is_loss = col.count("loss") > 0;
    const bool is_metrics = col.count("total_qoe") > 0;
    if (!is_loss && !is_metrics) throw std::runtime_error("malformed CSV " + path.string() + ": unknown layout");
    const std::size_t c_hash = need("config_hash"), c_policy = need("policy_name");
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const std::vector<std::string> f = split(line, ',');
      if (f.size() != header.size()) {
        throw std::runtime_error("malformed CSV " + path.string() + ": wrong field count in '" + line + "'");
      }
      hashes.insert(f[c_hash]);
      if (is_loss) {
        loss[{f[c_policy], std::lround(parse_number(f[need("step")], path))}].values.push_back(
            parse_number(f[need("loss")], path));
        continue;
      }
      const Key key{f[c_policy], static_cast<int>(parse_number(f[need("scene_id")], path)),
                    col.count("pmax_dbm") ? parse_number(f[col.at("pmax_dbm")], path) : no_pmax};
      Agg& a = key.pmax == no_pmax ? scenes[key] : sweep[key];
      a.qoe.values.push_back(parse_number(f[need("total_qoe")], path));
      a.ret.values.push_back(parse_number(f[need("return")], path));
      a.viol.values.push_back(parse_number(f[need("violation_rate")], path));
    }
  }

  const std::string hash_list = [&] {
    std::string s;
    for (const auto& h : hashes) s += (s.empty() ? "" : " ") + h;
    return s;
  }();
  std::filesystem::create_directories(out_dir);

  json summary = {{"config_hashes", hashes}, {"scenes", json::array()}, {"pmax", json::array()}, {"loss", json::array()}};
  auto agg_json = [](const Key& k, const Agg& a) {
    json j = {{"policy_name", k.policy},
              {"scene_id", k.scene},
              {"seeds", a.qoe.values.size()},
              {"total_qoe_mean", a.qoe.mean()},
              {"total_qoe_std", a.qoe.stddev()},
              {"return_mean", a.ret.mean()},
              {"return_std", a.ret.stddev()},
              {"violation_rate_mean", a.viol.mean()}};
    if (std::isfinite(k.pmax)) j["pmax_dbm"] = k.pmax;
    return j;
  };

  std::ofstream fig3 = open_out(out_dir / "fig3_scenes.csv");
  fig3 << "config_hashes,policy_name,scene_id,seeds,total_qoe_mean,total_qoe_std,return_mean,return_std,"
          "violation_rate_mean\n";
  for (const auto& [k, a] : scenes) {
    summary["scenes"].push_back(agg_json(k, a));
    fig3 << hash_list << ',' << k.policy << ',' << k.scene << ',' << a.qoe.values.size() << ',' << fmt(a.qoe.mean())
         << ',' << fmt(a.qoe.stddev()) << ',' << fmt(a.ret.mean()) << ',' << fmt(a.ret.stddev()) << ','
         << fmt(a.viol.mean()) << '\n';
  }

  std::vector<std::pair<Key, const Agg*>> by_pmax;
  for (const auto& [k, a] : sweep) by_pmax.emplace_back(k, &a);
  std::stable_sort(by_pmax.begin(), by_pmax.end(), [](const auto& x, const auto& y) {
    return std::tie(x.first.pmax, x.first.policy, x.first.scene) < std::tie(y.first.pmax, y.first.policy, y.first.scene);
  });
  std::ofstream fig4 = open_out(out_dir / "fig4_pmax.csv");
  fig4 << "config_hashes,pmax_dbm,policy_name,scene_id,seeds,total_qoe_mean,total_qoe_std,return_mean,return_std,"
          "violation_rate_mean\n";
  for (const auto& [k, a] : by_pmax) {
    summary["pmax"].push_back(agg_json(k, *a));
    fig4 << hash_list << ',' << fmt(k.pmax) << ',' << k.policy << ',' << k.scene << ',' << a->qoe.values.size() << ','
         << fmt(a->qoe.mean()) << ',' << fmt(a->qoe.stddev()) << ',' << fmt(a->ret.mean()) << ','
         << fmt(a->ret.stddev()) << ',' << fmt(a->viol.mean()) << '\n';
  }

  std::ofstream fig2 = open_out(out_dir / "fig2_loss.csv");
  fig2 << "config_hashes,policy_name,step,loss_mean,loss_std,runs\n";
  for (const auto& [k, s] : loss) {
    summary["loss"].push_back({{"policy_name", k.first}, {"step", k.second}, {"loss_mean", s.mean()},
                               {"loss_std", s.stddev()}, {"runs", s.values.size()}});
    fig2 << hash_list << ',' << k.first << ',' << k.second << ',' << fmt(s.mean()) << ',' << fmt(s.stddev()) << ','
         << s.values.size() << '\n';
  }

  std::ofstream js = open_out(out_dir / "summary.json");
  js << summary.dump(2) << '\n';
}

}  // namespace risdt
