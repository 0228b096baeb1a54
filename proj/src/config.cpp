// SPDX-License-Identifier: Apache-2.0

#include "risdt/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace risdt {

using nlohmann::json;

double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }
double dbm_to_watts(double dbm) { return std::pow(10.0, (dbm - 30.0) / 10.0); }
double linear_to_db(double linear) { return 10.0 * std::log10(linear); }
double watts_to_dbm(double watts) { return 10.0 * std::log10(watts) + 30.0; }

double distance(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0];
  const double dy = a[1] - b[1];
  const double dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

double SystemConfig::perception_max() const { return std::log(resolution_max / resolution_min); }

SystemConfig SystemConfig::table_one() {
  SystemConfig cfg;
  cfg.num_users = 10;
  cfg.num_antennas = 64;
  cfg.num_ris_elements = 16;
  cfg.bandwidth_hz = 2e6;
  cfg.uplink_power_w = 0.5;
  cfg.max_transmit_power_w = dbm_to_watts(43.0);
  cfg.server_compute_hz = 10e9;
  cfg.cycles_per_bit = 50.0;
  cfg.per_sample_bits = 1.0 * kBitsPerMegabyte;
  cfg.feedback_bits_per_resolution = 1.0 * kBitsPerMegabyte;
  cfg.resolution_min = 1.0;
  cfg.resolution_max = 2.0;
  cfg.latency_max_s = 0.5;
  cfg.noise_ul_w = dbm_to_watts(-60.0);
  cfg.noise_dl_w = dbm_to_watts(-50.0);
  cfg.pathloss_ref = db_to_linear(-20.0);
  cfg.rician.user_ris = db_to_linear(8.0);
  cfg.rician.ris_user = db_to_linear(8.0);
  cfg.rician.ris_server = db_to_linear(6.0);
  cfg.rician.server_ris = db_to_linear(7.0);
  cfg.penalty_coeff = 1.0;
  return cfg;
}

SystemConfig SystemConfig::desk() {
  SystemConfig cfg = table_one();
  cfg.num_users = 4;
  cfg.num_antennas = 8;
  cfg.num_ris_elements = 8;
  // With M = 8 the downlink array gain is too small to ever meet 0.5 s.
  cfg.latency_max_s = 1.0;
  return cfg;
}

std::vector<Violation> validate_config(const SystemConfig& cfg) {
  std::vector<Violation> out;
  auto require = [&](bool ok, const char* key, const char* msg) {
    if (!ok) out.push_back({key, msg});
  };
  auto positive = [&](double v, const char* key) {
    require(std::isfinite(v) && v > 0.0, key, "must be finite and strictly positive");
  };

  require(cfg.num_users >= 1, "num_users", "must be a positive integer");
  require(cfg.num_antennas >= 1, "num_antennas", "must be a positive integer");
  require(cfg.num_ris_elements >= 1, "num_ris_elements", "must be a positive integer");
  require(cfg.num_users <= cfg.num_antennas, "num_users/num_antennas", "K ≤ M required for ZF");
  positive(cfg.bandwidth_hz, "bandwidth_hz");
  positive(cfg.uplink_power_w, "uplink_power");
  positive(cfg.max_transmit_power_w, "max_transmit_power");
  positive(cfg.server_compute_hz, "server_compute_hz");
  positive(cfg.cycles_per_bit, "cycles_per_bit");
  positive(cfg.per_sample_bits, "per_sample");
  positive(cfg.feedback_bits_per_resolution, "feedback_per_resolution");
  positive(cfg.latency_max_s, "latency_max_s");
  positive(cfg.noise_ul_w, "noise_ul");
  positive(cfg.noise_dl_w, "noise_dl");
  positive(cfg.resolution_min, "resolution_min");
  require(cfg.resolution_min < cfg.resolution_max, "resolution_min/resolution_max",
          "resolution_min must be strictly below resolution_max");
  require(cfg.pathloss_ref > 0.0 && cfg.pathloss_ref <= 1.0, "pathloss_ref", "must lie in (0, 1]");
  positive(cfg.pathloss_exponents.user_server, "pathloss_exponent_user_server");
  positive(cfg.pathloss_exponents.user_ris, "pathloss_exponent_user_ris");
  positive(cfg.pathloss_exponents.ris_server, "pathloss_exponent_ris_server");
  for (auto [v, key] : {std::pair{cfg.rician.user_ris, "rician_user_ris"},
                        std::pair{cfg.rician.ris_user, "rician_ris_user"},
                        std::pair{cfg.rician.ris_server, "rician_ris_server"},
                        std::pair{cfg.rician.server_ris, "rician_server_ris"}}) {
    require(v >= 0.0 && !std::isnan(v), key, "must be non-negative");
  }
  require(cfg.penalty_coeff >= 0.0 && std::isfinite(cfg.penalty_coeff), "penalty_coeff",
          "must be finite and non-negative");
  require(distance(cfg.server_position, cfg.ris_position) > 0.0, "server_position_m/ris_position_m",
          "server and RIS must not be co-located");
  return out;
}

std::vector<Violation> validate_scene(const SceneSpec& scene, const SystemConfig& cfg) {
  std::vector<Violation> out = validate_config(cfg);
  if (scene.horizon < 1) out.push_back({"horizon", "horizon must be at least one slot"});
  if (static_cast<int>(scene.users.size()) != cfg.num_users) {
    out.push_back({"users", "number of users must equal num_users"});
  }
  for (std::size_t k = 0; k < scene.users.size(); ++k) {
    const UserSpec& u = scene.users[k];
    const std::string prefix = "users[" + std::to_string(k) + "].";
    const bool in_range = u.weight_subjective >= 0.0 && u.weight_subjective <= 1.0 &&
                          u.weight_objective >= 0.0 && u.weight_objective <= 1.0;
    if (!in_range) out.push_back({prefix + "weights", "weights must lie in [0, 1]"});
    if (!(std::abs(u.weight_subjective + u.weight_objective - 1.0) <= 1e-9)) {
      out.push_back({prefix + "weights", "weights must sum to 1"});
    }
    if (!(u.payload_bits > 0.0) || !std::isfinite(u.payload_bits)) {
      out.push_back({prefix + "payload", "uplink payload must be strictly positive"});
    }
    if (!(distance(u.position, cfg.server_position) > 0.0) ||
        !(distance(u.position, cfg.ris_position) > 0.0)) {
      out.push_back({prefix + "position_m", "user must not be co-located with server or RIS"});
    }
  }
  return out;
}

std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t tag) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(parent ^ mix(tag + 0x632be59bd9b4e019ULL));
}

SceneSpec generate_scene(int id, int horizon, std::uint64_t seed, const SystemConfig& cfg,
                         const SceneGenerator& gen) {
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto lerp = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  SceneSpec scene;
  scene.id = id;
  scene.horizon = horizon;
  scene.seed = seed;
  scene.users.resize(static_cast<std::size_t>(cfg.num_users));
  for (UserSpec& u : scene.users) {
    for (int c = 0; c < 3; ++c) u.position[c] = lerp(gen.region_min[c], gen.region_max[c]);
    u.weight_subjective = lerp(gen.weight_min, gen.weight_max);
    u.weight_objective = 1.0 - u.weight_subjective;
    u.payload_bits = lerp(gen.payload_min_bits, gen.payload_max_bits);
  }
  return scene;
}

// ---------------------------------------------------------------------------
// JSON schema

namespace {

const std::set<std::string> kSystemKeys = {
    "profile",
    "num_users",
    "num_antennas",
    "num_ris_elements",
    "bandwidth_hz",
    "uplink_power_dbm",
    "max_transmit_power_dbm",
    "server_compute_hz",
    "cycles_per_bit",
    "per_sample_mb",
    "feedback_per_resolution_mb",
    "resolution_min",
    "resolution_max",
    "latency_max_s",
    "noise_ul_dbm",
    "noise_dl_dbm",
    "pathloss_ref_db",
    "pathloss_exponent_user_server",
    "pathloss_exponent_user_ris",
    "pathloss_exponent_ris_server",
    "rician_user_ris_db",
    "rician_ris_user_db",
    "rician_ris_server_db",
    "rician_server_ris_db",
    "penalty_coeff",
    "server_position_m",
    "ris_position_m",
    "weighted_waterfill",
};

template <typename T>
T get_as(const json& obj, const std::string& key) {
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("schema error at '" + key + "': " + e.what());
  }
}

template <typename T>
void read_opt(const json& obj, const std::string& key, T& out) {
  if (obj.contains(key)) out = get_as<T>(obj, key);
}

void read_db(const json& obj, const std::string& key, double& linear_out) {
  if (obj.contains(key)) linear_out = db_to_linear(get_as<double>(obj, key));
}

void read_dbm(const json& obj, const std::string& key, double& watts_out) {
  if (obj.contains(key)) watts_out = dbm_to_watts(get_as<double>(obj, key));
}

void read_mb(const json& obj, const std::string& key, double& bits_out) {
  if (obj.contains(key)) bits_out = get_as<double>(obj, key) * kBitsPerMegabyte;
}

Vec3 read_vec3(const json& obj, const std::string& key) {
  const auto v = get_as<std::vector<double>>(obj, key);
  if (v.size() != 3) throw ConfigError("schema error at '" + key + "': expected 3 coordinates");
  return {v[0], v[1], v[2]};
}

std::string describe(const std::vector<Violation>& violations) {
  std::ostringstream os;
  for (std::size_t i = 0; i < violations.size(); ++i) {
    if (i) os << "; ";
    os << violations[i].key << ": " << violations[i].message;
  }
  return os.str();
}

}  // namespace

SystemConfig system_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("schema error at 'system': expected an object");
  for (const auto& [key, _] : j.items()) {
    if (!kSystemKeys.count(key)) throw ConfigError("schema error: unknown key 'system." + key + "'");
  }
  SystemConfig cfg = SystemConfig::table_one();
  if (j.contains("profile")) {
    const auto profile = get_as<std::string>(j, "profile");
    if (profile == "desk") {
      cfg = SystemConfig::desk();
    } else if (profile != "table_one") {
      throw ConfigError("schema error at 'profile': expected 'table_one' or 'desk'");
    }
  }
  read_opt(j, "num_users", cfg.num_users);
  read_opt(j, "num_antennas", cfg.num_antennas);
  read_opt(j, "num_ris_elements", cfg.num_ris_elements);
  read_opt(j, "bandwidth_hz", cfg.bandwidth_hz);
  read_dbm(j, "uplink_power_dbm", cfg.uplink_power_w);
  read_dbm(j, "max_transmit_power_dbm", cfg.max_transmit_power_w);
  read_opt(j, "server_compute_hz", cfg.server_compute_hz);
  read_opt(j, "cycles_per_bit", cfg.cycles_per_bit);
  read_mb(j, "per_sample_mb", cfg.per_sample_bits);
  read_mb(j, "feedback_per_resolution_mb", cfg.feedback_bits_per_resolution);
  read_opt(j, "resolution_min", cfg.resolution_min);
  read_opt(j, "resolution_max", cfg.resolution_max);
  read_opt(j, "latency_max_s", cfg.latency_max_s);
  read_dbm(j, "noise_ul_dbm", cfg.noise_ul_w);
  read_dbm(j, "noise_dl_dbm", cfg.noise_dl_w);
  read_db(j, "pathloss_ref_db", cfg.pathloss_ref);
  read_opt(j, "pathloss_exponent_user_server", cfg.pathloss_exponents.user_server);
  read_opt(j, "pathloss_exponent_user_ris", cfg.pathloss_exponents.user_ris);
  read_opt(j, "pathloss_exponent_ris_server", cfg.pathloss_exponents.ris_server);
  read_db(j, "rician_user_ris_db", cfg.rician.user_ris);
  read_db(j, "rician_ris_user_db", cfg.rician.ris_user);
  read_db(j, "rician_ris_server_db", cfg.rician.ris_server);
  read_db(j, "rician_server_ris_db", cfg.rician.server_ris);
  read_opt(j, "penalty_coeff", cfg.penalty_coeff);
  if (j.contains("server_position_m")) cfg.server_position = read_vec3(j, "server_position_m");
  if (j.contains("ris_position_m")) cfg.ris_position = read_vec3(j, "ris_position_m");
  read_opt(j, "weighted_waterfill", cfg.weighted_waterfill);
  return cfg;
}

json system_to_json(const SystemConfig& cfg) {
  json j;
  j["num_users"] = cfg.num_users;
  j["num_antennas"] = cfg.num_antennas;
  j["num_ris_elements"] = cfg.num_ris_elements;
  j["bandwidth_hz"] = cfg.bandwidth_hz;
  j["uplink_power_dbm"] = watts_to_dbm(cfg.uplink_power_w);
  j["max_transmit_power_dbm"] = watts_to_dbm(cfg.max_transmit_power_w);
  j["server_compute_hz"] = cfg.server_compute_hz;
  j["cycles_per_bit"] = cfg.cycles_per_bit;
  j["per_sample_mb"] = cfg.per_sample_bits / kBitsPerMegabyte;
  j["feedback_per_resolution_mb"] = cfg.feedback_bits_per_resolution / kBitsPerMegabyte;
  j["resolution_min"] = cfg.resolution_min;
  j["resolution_max"] = cfg.resolution_max;
  j["latency_max_s"] = cfg.latency_max_s;
  j["noise_ul_dbm"] = watts_to_dbm(cfg.noise_ul_w);
  j["noise_dl_dbm"] = watts_to_dbm(cfg.noise_dl_w);
  j["pathloss_ref_db"] = linear_to_db(cfg.pathloss_ref);
  j["pathloss_exponent_user_server"] = cfg.pathloss_exponents.user_server;
  j["pathloss_exponent_user_ris"] = cfg.pathloss_exponents.user_ris;
  j["pathloss_exponent_ris_server"] = cfg.pathloss_exponents.ris_server;
  j["rician_user_ris_db"] = linear_to_db(cfg.rician.user_ris);
  j["rician_ris_user_db"] = linear_to_db(cfg.rician.ris_user);
  j["rician_ris_server_db"] = linear_to_db(cfg.rician.ris_server);
  j["rician_server_ris_db"] = linear_to_db(cfg.rician.server_ris);
  j["penalty_coeff"] = cfg.penalty_coeff;
  j["server_position_m"] = cfg.server_position;
  j["ris_position_m"] = cfg.ris_position;
  j["weighted_waterfill"] = cfg.weighted_waterfill;
  return j;
}

SceneSpec scene_from_json(const json& j, const SystemConfig& cfg) {
  (void)cfg;
  if (!j.is_object()) throw ConfigError("schema error at 'scenes[]': expected an object");
  SceneSpec scene;
  scene.id = get_as<int>(j, "id");
  read_opt(j, "horizon", scene.horizon);
  read_opt(j, "seed", scene.seed);
  const json& users = j.at("users");
  if (!users.is_array()) throw ConfigError("schema error at 'users': expected an array");
  for (const json& u : users) {
    UserSpec spec;
    spec.position = read_vec3(u, "position_m");
    spec.weight_subjective = get_as<double>(u, "weight_subjective");
    spec.weight_objective =
        u.contains("weight_objective") ? get_as<double>(u, "weight_objective") : 1.0 - spec.weight_subjective;
    spec.payload_bits = get_as<double>(u, "payload_mb") * kBitsPerMegabyte;
    scene.users.push_back(spec);
  }
  return scene;
}

json scene_to_json(const SceneSpec& scene) {
  json j;
  j["id"] = scene.id;
  j["horizon"] = scene.horizon;
  j["seed"] = scene.seed;
  json users = json::array();
  for (const UserSpec& u : scene.users) {
    users.push_back({{"position_m", u.position},
                     {"weight_subjective", u.weight_subjective},
                     {"weight_objective", u.weight_objective},
                     {"payload_mb", u.payload_bits / kBitsPerMegabyte}});
  }
  j["users"] = users;
  return j;
}

ConfigBundle parse_config(const json& root) {
  if (!root.is_object()) throw ConfigError("schema error: top level must be an object");
  ConfigBundle bundle;
  bundle.system = system_from_json(root.value("system", json::object()));
  if (auto v = validate_config(bundle.system); !v.empty()) {
    throw ConfigError("invalid system configuration: " + describe(v));
  }
  if (root.contains("scenes")) {
    const json& scenes = root.at("scenes");
    if (!scenes.is_array()) throw ConfigError("schema error at 'scenes': expected an array");
    std::set<int> ids;
    for (const json& s : scenes) {
      SceneSpec scene = scene_from_json(s, bundle.system);
      if (!ids.insert(scene.id).second) {
        throw ConfigError("schema error at 'scenes': duplicate id " + std::to_string(scene.id));
      }
      if (auto v = validate_scene(scene, bundle.system); !v.empty()) {
        throw ConfigError("invalid scene " + std::to_string(scene.id) + ": " + describe(v));
      }
      bundle.scenes.push_back(std::move(scene));
    }
  }
  return bundle;
}

json config_to_json(const ConfigBundle& bundle) {
  json root;
  root["system"] = system_to_json(bundle.system);
  json scenes = json::array();
  for (const SceneSpec& s : bundle.scenes) scenes.push_back(scene_to_json(s));
  root["scenes"] = scenes;
  return root;
}

ConfigBundle load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  json root;
  try {
    root = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("parse error in '" + path.string() + "': " + e.what());
  }
  return parse_config(root);
}

void save_config(const std::filesystem::path& path, const ConfigBundle& bundle) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write config file '" + path.string() + "'");
  out << config_to_json(bundle).dump(2) << '\n';
}

std::string config_hash(const json& canonical) {
  const std::string text = canonical.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace risdt
