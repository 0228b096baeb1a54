// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "risdt/beamforming.hpp"
#include "risdt/channel.hpp"
#include "risdt/config.hpp"
#include "risdt/qoe.hpp"

namespace risdt {

/// Observation at the start of slot `slot`.
///
/// `links` holds this slot's direct and cascaded draws. The effective
/// channels exposed to the policy are those links composed with the previous
/// slot's phase shifts (all zeros at slot 1); the action then re-composes the
/// same links with its own phases.
struct State {
  int slot = 1;
  std::vector<double> weight_subjective;
  std::vector<double> weight_objective;
  std::vector<double> payload_bits;
  std::vector<CVec> effective_ul;
  std::vector<CVec> effective_dl;
  std::vector<double> prev_qoe;
  ChannelSet links;

  /// Flat features. Per user: subjective weight, uplink payload (bits),
  /// interleaved re/im of the effective uplink then downlink channel,
  /// previous QoE. The slot index closes the vector. The objective weight is
  /// omitted since it is one minus the subjective weight.
  std::vector<double> features() const;
};

inline int state_feature_length(int users, int antennas) { return users * (2 + 4 * antennas + 1) + 1; }

struct Decision {
  std::vector<double> phases;       // theta_n in [0, 2*pi)
  std::vector<double> resolutions;  // E_k in [E_min, E_max]
  std::vector<double> compute_hz;   // f_k > 0, sum <= C

  PhaseShiftMatrix theta() const { return {phases}; }
};

/// Raw action layout: N phase logits, K resolution logits, K compute logits.
inline int action_length(const SystemConfig& cfg) { return cfg.num_ris_elements + 2 * cfg.num_users; }

/// theta_n = 2*pi*sigmoid(raw_n), E_k = E_min + (E_max - E_min) sigmoid(.),
/// f_k = C softmax(.)_k. Throws std::invalid_argument on non-finite input or
/// a wrong length.
Decision decode_action(std::span<const double> raw, const SystemConfig& cfg);

/// Everything a slot needs that does not change within a scene.
struct SceneContext {
  SceneSpec scene;
  SystemConfig cfg;
  SceneGeometry geometry;

  /// Throws ConfigError listing every violated invariant.
  SceneContext(SceneSpec scene, SystemConfig cfg);
};

struct SlotOutcome {
  double reward = 0.0;
  bool power_ok = true;
  std::vector<QoEResult> qoe;
  BeamformingSolution beams;

  double qoe_sum() const;
  /// Users violating the latency limit, or every user when the power
  /// constraint is violated.
  int violations() const;
};

/// Scores `decision` against the links stored in `state`. Pure.
SlotOutcome evaluate_slot(const State& state, const Decision& decision, const SceneContext& ctx);

struct StepResult {
  State next;
  SlotOutcome outcome;
  bool done = false;
};

State reset(const SceneContext& ctx, Rng& rng);
/// Applies `decision` to the current slot, then draws the next slot's links.
StepResult step(const State& state, const Decision& decision, const SceneContext& ctx, Rng& rng);

/// Upper bound on an episode's return: sum over slots and users of the two
/// weights, which is K * T_i for valid scenes.
double rtg_init(const SceneSpec& scene);

/// Single-threaded stepping cursor over one scene.
class Environment {
 public:
  explicit Environment(SceneContext ctx) : ctx_(std::move(ctx)) {}

  const State& reset(std::uint64_t seed);
  StepResult step(const Decision& decision);
  const State& state() const { return state_; }
  const SceneContext& context() const { return ctx_; }

 private:
  SceneContext ctx_;
  Rng rng_;
  State state_;
};

struct Transition {
  int slot = 1;
  double rtg = 0.0;
  std::vector<double> state;
  std::vector<double> action;  // raw, decode_action layout
  double reward = 0.0;
  std::vector<double> qoe;
  bool power_ok = true;
  int violations = 0;
};

struct Episode {
  int scene_id = 0;
  int index = 0;
  std::vector<Transition> steps;
  double total_return = 0.0;

  double total_qoe() const;
  int total_violations() const;
};

/// Raw action for the current state, given the current returns-to-go.
using PolicyFn = std::function<std::vector<double>(const State&, double rtg)>;

/// Runs one full episode. rtg(1) = rtg_init, rtg(t+1) = rtg(t) - r(t).
Episode rollout(const PolicyFn& policy, const SceneContext& ctx, std::uint64_t seed);

/// JSON-lines, one record per slot:
/// {scene_id, episode, t, rtg, state, decision, reward, qoe, power_ok, violations}.
void write_episode_jsonl(std::ostream& out, const Episode& episode);
/// Groups records back into episodes by (scene_id, episode), in file order.
std::vector<Episode> read_episodes_jsonl(std::istream& in);

}  // namespace risdt
