// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace risdt {

using Vec3 = std::array<double, 3>;
using Rng = std::mt19937_64;

inline constexpr double kBitsPerMegabyte = 8e6;

/// 10^(x/10). Total on finite input.
double db_to_linear(double db);
/// dBm to watts: 10^((x - 30)/10).
double dbm_to_watts(double dbm);
double linear_to_db(double linear);
double watts_to_dbm(double watts);

double distance(const Vec3& a, const Vec3& b);

/// Path-loss exponents for the three link families. Uplink and downlink share
/// the exponent of their geometric link.
struct PathlossExponents {
  double user_server = 2.0;
  double user_ris = 2.0;
  double ris_server = 2.0;
};

/// Linear Rician K-factors, one per directed link.
struct RicianFactors {
  double user_ris = 0.0;     // G_{k,r}
  double ris_user = 0.0;     // G_{r,k}
  double ris_server = 0.0;   // G_{r,a}, uplink
  double server_ris = 0.0;   // G_{a,r}, downlink
};

/// System constants, all in SI units (watts, hertz, bits, seconds, meters).
struct SystemConfig {
  int num_users = 10;
  int num_antennas = 64;
  int num_ris_elements = 16;
  double bandwidth_hz = 2e6;
  double uplink_power_w = 0.5;
  double max_transmit_power_w = 0.0;
  double server_compute_hz = 10e9;
  double cycles_per_bit = 50.0;
  double per_sample_bits = 8e6;
  double feedback_bits_per_resolution = 8e6;
  double resolution_min = 1.0;
  double resolution_max = 2.0;
  double latency_max_s = 0.5;
  double noise_ul_w = 0.0;
  double noise_dl_w = 0.0;
  double pathloss_ref = 0.01;
  PathlossExponents pathloss_exponents;
  RicianFactors rician;
  double penalty_coeff = 1.0;
  Vec3 server_position{0.0, 0.0, 40.0};
  Vec3 ris_position{75.0, 100.0, 20.0};
  /// Multiplies the waterlevel term by the per-user objective weights of the
  /// downlink latency problem. Off reproduces the plain closed form.
  bool weighted_waterfill = false;

  /// Supremum of ln(E/E_min) over the allowed resolution range.
  double perception_max() const;

  /// Full-scale simulation profile (K=10, M=64, N=16).
  static SystemConfig table_one();
  /// Reduced profile for training runs (K=4, M=8, N=8, L_max = 1 s).
  static SystemConfig desk();
};

struct UserSpec {
  Vec3 position{0.0, 0.0, 0.0};
  double weight_subjective = 0.5;
  double weight_objective = 0.5;
  double payload_bits = 8e5;
};

struct SceneSpec {
  int id = 0;
  int horizon = 20;
  std::vector<UserSpec> users;
  std::uint64_t seed = 0;
};

struct Violation {
  std::string key;
  std::string message;
};

std::vector<Violation> validate_config(const SystemConfig& cfg);
/// Every violated scene or system invariant. Empty means valid.
std::vector<Violation> validate_scene(const SceneSpec& scene, const SystemConfig& cfg);

/// Raised for unreadable, malformed, or invalid configuration files. The
/// message names the offending keys.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ConfigBundle {
  SystemConfig system;
  std::vector<SceneSpec> scenes;
};

/// Region and ranges used to draw random scenes.
struct SceneGenerator {
  Vec3 region_min{0.0, 0.0, 1.5};
  Vec3 region_max{100.0, 100.0, 1.5};
  double weight_min = 0.2;
  double weight_max = 0.8;
  double payload_min_bits = 0.1 * kBitsPerMegabyte;
  double payload_max_bits = 1.0 * kBitsPerMegabyte;
};

SceneSpec generate_scene(int id, int horizon, std::uint64_t seed, const SystemConfig& cfg,
                         const SceneGenerator& gen = {});

/// Derives an independent 64-bit seed from a parent seed and a stream tag.
std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t tag);

SystemConfig system_from_json(const nlohmann::json& j);
nlohmann::json system_to_json(const SystemConfig& cfg);
SceneSpec scene_from_json(const nlohmann::json& j, const SystemConfig& cfg);
nlohmann::json scene_to_json(const SceneSpec& scene);

ConfigBundle parse_config(const nlohmann::json& root);
nlohmann::json config_to_json(const ConfigBundle& bundle);
ConfigBundle load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const ConfigBundle& bundle);

/// FNV-1a of the canonical JSON dump, rendered as 16 hex digits.
std::string config_hash(const nlohmann::json& canonical);

}  // namespace risdt
