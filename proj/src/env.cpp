// SPDX-License-Identifier: Apache-2.0

#include "risdt/env.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>

namespace risdt {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

std::vector<double> State::features() const {
  const std::size_t k_users = weight_subjective.size();
  std::vector<double> f;
  f.reserve(k_users * (3 + 4 * (effective_ul.empty() ? 0 : effective_ul[0].size())) + 1);
  for (std::size_t k = 0; k < k_users; ++k) {
    f.push_back(weight_subjective[k]);
    f.push_back(payload_bits[k]);
    for (const CVec* h : {&effective_ul[k], &effective_dl[k]}) {
      for (Eigen::Index m = 0; m < h->size(); ++m) {
        f.push_back((*h)[m].real());
        f.push_back((*h)[m].imag());
      }
    }
    f.push_back(prev_qoe[k]);
  }
  f.push_back(static_cast<double>(slot));
  return f;
}

Decision decode_action(std::span<const double> raw, const SystemConfig& cfg) {
  const auto n = static_cast<std::size_t>(cfg.num_ris_elements);
  const auto k_users = static_cast<std::size_t>(cfg.num_users);
  if (raw.size() != n + 2 * k_users) throw std::invalid_argument("decode_action: wrong raw action length");
  for (double x : raw) {
    if (!std::isfinite(x)) throw std::invalid_argument("decode_action: non-finite raw action");
  }

  Decision d;
  d.phases.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double theta = kTwoPi * sigmoid(raw[i]);
    if (theta >= kTwoPi) theta = 0.0;  // sigmoid rounded to 1; e^{j 2pi} = e^{j0}
    d.phases[i] = theta;
  }

  d.resolutions.resize(k_users);
  for (std::size_t k = 0; k < k_users; ++k) {
    d.resolutions[k] = cfg.resolution_min + (cfg.resolution_max - cfg.resolution_min) * sigmoid(raw[n + k]);
    d.resolutions[k] = std::clamp(d.resolutions[k], cfg.resolution_min, cfg.resolution_max);
  }

  const auto logits = raw.subspan(n + k_users, k_users);
  const double peak = *std::max_element(logits.begin(), logits.end());
  std::vector<double> e(k_users);
  double denom = 0.0;
  for (std::size_t k = 0; k < k_users; ++k) {
    e[k] = std::max(std::exp(logits[k] - peak), 1e-300);
    denom += e[k];
  }
  d.compute_hz.resize(k_users);
  for (std::size_t k = 0; k < k_users; ++k) d.compute_hz[k] = cfg.server_compute_hz * (e[k] / denom);
  // Rounding can push the sum one ulp over the budget.
  for (int guard = 0; guard < 8; ++guard) {
    double sum = 0.0;
    for (double f : d.compute_hz) sum += f;
    if (sum <= cfg.server_compute_hz) break;
    for (double& f : d.compute_hz) f *= (1.0 - 4e-16);
  }
  return d;
}

SceneContext::SceneContext(SceneSpec s, SystemConfig c) : scene(std::move(s)), cfg(std::move(c)) {
  const auto violations = validate_scene(scene, cfg);
  if (!violations.empty()) {
    std::string msg = "invalid scene " + std::to_string(scene.id) + ":";
    for (const Violation& v : violations) msg += " " + v.key + " (" + v.message + ")";
    throw ConfigError(msg);
  }
  geometry = scene_geometry(scene, cfg);
}

double SlotOutcome::qoe_sum() const {
  double s = 0.0;
  for (const QoEResult& q : qoe) s += q.qoe;
  return s;
}

int SlotOutcome::violations() const {
  if (!power_ok) return static_cast<int>(qoe.size());
  return static_cast<int>(std::count_if(qoe.begin(), qoe.end(), [](const QoEResult& q) { return !q.feasible; }));
}

SlotOutcome evaluate_slot(const State& state, const Decision& decision, const SceneContext& ctx) {
  const SystemConfig& cfg = ctx.cfg;
  const auto k_users = static_cast<std::size_t>(cfg.num_users);
  ChannelSet links = state.links;
  compose_effective(links, decision.theta());
  const CMat h_ul = links.stacked_ul();
  const CMat h_dl = links.stacked_dl();

  SlotOutcome out;
  out.qoe.resize(k_users);
  try {
    out.beams.receive = zf_receive(h_ul);
    const std::vector<double> p_ul(k_users, cfg.uplink_power_w);
    std::vector<double> l_ul(k_users), l_pro(k_users), rate_ul(k_users);
    for (std::size_t k = 0; k < k_users; ++k) {
      const double sinr = uplink_sinr(static_cast<int>(k), out.beams.receive, h_ul, p_ul, cfg.noise_ul_w);
      rate_ul[k] = rate(cfg.bandwidth_hz, sinr);
      // Downlink is not known yet; only the first two stages are read here.
      const LatencyBreakdown partial = latency_breakdown(state.payload_bits[k], rate_ul[k], decision.resolutions[k],
                                                         decision.compute_hz[k], 1.0, cfg);
      l_ul[k] = partial.uplink;
      l_pro[k] = partial.processing;
    }
    CMat receive = std::move(out.beams.receive);
    out.beams = zf_transmit(h_dl, decision.resolutions, l_ul, l_pro, cfg, state.weight_objective);
    out.beams.receive = std::move(receive);
    for (std::size_t k = 0; k < k_users; ++k) {
      const double sinr = downlink_sinr(static_cast<int>(k), out.beams.transmit, h_dl, cfg.noise_dl_w);
      QoEResult& q = out.qoe[k];
      q.perception = perception_quality(decision.resolutions[k], cfg.resolution_min);
      q.latency = latency_breakdown(state.payload_bits[k], rate_ul[k], decision.resolutions[k], decision.compute_hz[k],
                                    rate(cfg.bandwidth_hz, sinr), cfg);
      q.qoe = qoe(state.weight_subjective[k], state.weight_objective[k], q.perception, q.latency.total,
                  cfg.perception_max(), cfg.latency_max_s);
      q.feasible = q.latency.total <= cfg.latency_max_s;
    }
    out.power_ok = out.beams.status == PowerStatus::feasible &&
                   out.beams.total_power() <= cfg.max_transmit_power_w * (1.0 + 1e-9);
    out.reward = reward(out.qoe, out.power_ok, cfg.penalty_coeff, cfg.latency_max_s);
  } catch (const RankDeficientError&) {
    // No usable beamformer this slot: full penalty, one unit per user.
    out.power_ok = false;
    for (QoEResult& q : out.qoe) {
      q.qoe = 0.0;
      q.feasible = false;
    }
    out.reward = -static_cast<double>(k_users);
  }
  return out;
}

namespace {

State make_state(const SceneContext& ctx, int slot, ChannelSet links, std::vector<double> prev_qoe) {
  State s;
  s.slot = slot;
  for (const UserSpec& u : ctx.scene.users) {
    s.weight_subjective.push_back(u.weight_subjective);
    s.weight_objective.push_back(u.weight_objective);
    s.payload_bits.push_back(u.payload_bits);
  }
  s.effective_ul = links.effective_ul;
  s.effective_dl = links.effective_dl;
  s.prev_qoe = std::move(prev_qoe);
  s.links = std::move(links);
  return s;
}

}  // namespace

State reset(const SceneContext& ctx, Rng& rng) {
  const auto theta = PhaseShiftMatrix::zeros(ctx.cfg.num_ris_elements);
  ChannelSet links = sample_channel_set(ctx.geometry, ctx.cfg, theta, rng);
  return make_state(ctx, 1, std::move(links), std::vector<double>(ctx.scene.users.size(), 0.0));
}

StepResult step(const State& state, const Decision& decision, const SceneContext& ctx, Rng& rng) {
  StepResult r;
  r.outcome = evaluate_slot(state, decision, ctx);
  r.done = state.slot >= ctx.scene.horizon;
  std::vector<double> qoe_now;
  for (const QoEResult& q : r.outcome.qoe) qoe_now.push_back(q.qoe);
  ChannelSet links = sample_channel_set(ctx.geometry, ctx.cfg, decision.theta(), rng);
  r.next = make_state(ctx, state.slot + 1, std::move(links), std::move(qoe_now));
  return r;
}

double rtg_init(const SceneSpec& scene) {
  double per_slot = 0.0;
  for (const UserSpec& u : scene.users) per_slot += u.weight_subjective + u.weight_objective;
  return per_slot * scene.horizon;
}

const State& Environment::reset(std::uint64_t seed) {
  rng_.seed(seed);
  state_ = risdt::reset(ctx_, rng_);
  return state_;
}

StepResult Environment::step(const Decision& decision) {
  StepResult r = risdt::step(state_, decision, ctx_, rng_);
  state_ = r.next;
  return r;
}

double Episode::total_qoe() const {
  double s = 0.0;
  for (const Transition& t : steps)
    for (double q : t.qoe) s += q;
  return s;
}

int Episode::total_violations() const {
  int s = 0;
  for (const Transition& t : steps) s += t.violations;
  return s;
}

Episode rollout(const PolicyFn& policy, const SceneContext& ctx, std::uint64_t seed) {
  Environment env(ctx);
  env.reset(seed);
  Episode ep;
  ep.scene_id = ctx.scene.id;
  double rtg = rtg_init(ctx.scene);
  for (int t = 1; t <= ctx.scene.horizon; ++t) {
    const State& s = env.state();
    Transition tr;
    tr.slot = s.slot;
    tr.rtg = rtg;
    tr.state = s.features();
    tr.action = policy(s, rtg);
    const Decision d = decode_action(tr.action, ctx.cfg);
    const StepResult r = env.step(d);
    tr.reward = r.outcome.reward;
    tr.power_ok = r.outcome.power_ok;
    tr.violations = r.outcome.violations();
    for (const QoEResult& q : r.outcome.qoe) tr.qoe.push_back(q.qoe);
    ep.total_return += tr.reward;
    rtg -= tr.reward;
    ep.steps.push_back(std::move(tr));
  }
  return ep;
}

void write_episode_jsonl(std::ostream& out, const Episode& episode) {
  for (const Transition& t : episode.steps) {
    const nlohmann::json rec = {
        {"scene_id", episode.scene_id},
        {"episode", episode.index},
        {"t", t.slot},
        {"rtg", t.rtg},
        {"state", t.state},
        {"decision", t.action},
        {"reward", t.reward},
        {"qoe", t.qoe},
        {"power_ok", t.power_ok},
        {"violations", t.violations},
    };
    out << rec.dump() << '\n';
  }
}

std::vector<Episode> read_episodes_jsonl(std::istream& in) {
  std::vector<Episode> episodes;
  std::map<std::pair<int, int>, std::size_t> where;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error("episode jsonl line " + std::to_string(line_no) + ": " + e.what());
    }
    const int scene_id = rec.at("scene_id").get<int>();
    const int index = rec.at("episode").get<int>();
    auto [it, inserted] = where.try_emplace({scene_id, index}, episodes.size());
    if (inserted) {
      episodes.emplace_back();
      episodes.back().scene_id = scene_id;
      episodes.back().index = index;
    }
    Episode& ep = episodes[it->second];
    Transition t;
    t.slot = rec.at("t").get<int>();
    t.rtg = rec.at("rtg").get<double>();
    t.state = rec.at("state").get<std::vector<double>>();
    t.action = rec.at("decision").get<std::vector<double>>();
    t.reward = rec.at("reward").get<double>();
    t.qoe = rec.value("qoe", std::vector<double>{});
    t.power_ok = rec.value("power_ok", true);
    t.violations = rec.value("violations", 0);
    ep.total_return += t.reward;
    ep.steps.push_back(std::move(t));
  }
  return episodes;
}

}  // namespace risdt
