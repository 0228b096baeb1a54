// SPDX-License-Identifier: Apache-2.0

#include "risdt/beamforming.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace risdt {

CMat zf_pseudo_inverse(const CMat& h) {
  if (h.cols() == 0 || h.rows() < h.cols()) {
    throw RankDeficientError("zero-forcing needs at least as many antennas as users");
  }
  const CMat gram = h.adjoint() * h;
  const Eigen::SelfAdjointEigenSolver<CMat> eig(gram, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  if (!(lo > 0.0) || hi / lo > kMaxGramCondition) {
    throw RankDeficientError("channel Gram matrix is singular or ill-conditioned");
  }
  const CMat identity = CMat::Identity(gram.rows(), gram.cols());
  return h * gram.llt().solve(identity);
}

double uplink_sinr(int k, const CMat& v, const CMat& h_ul, std::span<const double> uplink_power, double noise) {
  if (v.rows() != h_ul.rows() || v.cols() != h_ul.cols() ||
      uplink_power.size() != static_cast<std::size_t>(h_ul.cols())) {
    throw std::invalid_argument("uplink_sinr: dimension mismatch");
  }
  const auto vk = v.col(k);
  const double signal = uplink_power[static_cast<std::size_t>(k)] * std::norm(h_ul.col(k).dot(vk));
  if (signal == 0.0) return 0.0;
  // v^H (s2 I + sum_{m != k} p_m h_m h_m^H) v, expanded term by term.
  double interference = noise * vk.squaredNorm();
  for (Eigen::Index m = 0; m < h_ul.cols(); ++m) {
    if (m == k) continue;
    interference += uplink_power[static_cast<std::size_t>(m)] * std::norm(h_ul.col(m).dot(vk));
  }
  return signal / interference;
}

double downlink_sinr(int k, const CMat& w, const CMat& h_dl, double noise) {
  if (w.rows() != h_dl.rows() || w.cols() != h_dl.cols()) {
    throw std::invalid_argument("downlink_sinr: dimension mismatch");
  }
  const auto hk = h_dl.col(k);
  const double signal = std::norm(hk.dot(w.col(k)));
  double interference = noise;
  for (Eigen::Index m = 0; m < w.cols(); ++m) {
    if (m != k) interference += std::norm(hk.dot(w.col(m)));
  }
  return signal / interference;
}

double rate(double bandwidth_hz, double sinr) { return bandwidth_hz * std::log1p(sinr) / std::numbers::ln2; }

double min_power(double resolution, double budget_s, double feedback_bits_per_resolution, double bandwidth_hz,
                 double noise) {
  if (!(budget_s > 0.0)) return std::numeric_limits<double>::infinity();
  const double exponent = feedback_bits_per_resolution * resolution / (bandwidth_hz * budget_s);
  return noise * std::expm1(exponent * std::numbers::ln2);
}

WaterFillResult water_fill(std::span<const double> gains, std::span<const double> noise,
                           std::span<const double> floors, double max_power,
                           std::optional<std::span<const double>> weights) {
  const std::size_t n = gains.size();
  if (noise.size() != n || floors.size() != n || (weights && weights->size() != n)) {
    throw std::invalid_argument("water_fill: dimension mismatch");
  }
  auto weight = [&](std::size_t k) { return weights ? (*weights)[k] : 1.0; };

  WaterFillResult out;
  double floor_total = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (!(gains[k] > 0.0)) throw std::invalid_argument("water_fill: gains must be strictly positive");
    floor_total += gains[k] * floors[k];
  }
  if (!(floor_total <= max_power)) {
    out.status = PowerStatus::infeasible_floors;
    return out;
  }

  auto total = [&](double mu) {
    double s = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      s += std::max(weight(k) * mu - gains[k] * noise[k], gains[k] * floors[k]);
    }
    return s;
  };

  double min_weight = std::numeric_limits<double>::infinity();
  double max_noise_term = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    min_weight = std::min(min_weight, weight(k));
    max_noise_term = std::max(max_noise_term, gains[k] * noise[k]);
  }
  double lo = 0.0;
  double hi = (max_power + max_noise_term) / min_weight;
  for (int it = 0; it < 300 && hi - lo > 1e-16 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (total(mid) < max_power) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  const double mu = 0.5 * (lo + hi);
  out.waterlevel = mu;
  out.powers.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    out.powers[k] = std::max(weight(k) * mu - gains[k] * noise[k], gains[k] * floors[k]) / gains[k];
  }
  return out;
}

double BeamformingSolution::total_power() const { return transmit.colwise().squaredNorm().sum(); }

BeamformingSolution zf_transmit(const CMat& h_dl, std::span<const double> resolutions,
                                std::span<const double> uplink_latency, std::span<const double> processing_latency,
                                const SystemConfig& cfg, std::span<const double> objective_weights) {
  const auto k_users = static_cast<std::size_t>(h_dl.cols());
  if (resolutions.size() != k_users || uplink_latency.size() != k_users || processing_latency.size() != k_users) {
    throw std::invalid_argument("zf_transmit: per-user inputs must have one entry per user");
  }
  BeamformingSolution sol;
  sol.transmit_dirs = zf_pseudo_inverse(h_dl);
  sol.gains.resize(k_users);
  sol.floors.resize(k_users);
  for (std::size_t k = 0; k < k_users; ++k) {
    sol.gains[k] = sol.transmit_dirs.col(static_cast<Eigen::Index>(k)).squaredNorm();
    const double budget = cfg.latency_max_s - uplink_latency[k] - processing_latency[k];
    sol.floors[k] = min_power(resolutions[k], budget, cfg.feedback_bits_per_resolution, cfg.bandwidth_hz,
                              cfg.noise_dl_w);
  }
  const std::vector<double> noise(k_users, cfg.noise_dl_w);

  std::vector<double> weights;
  if (cfg.weighted_waterfill) {
    if (objective_weights.size() != k_users) {
      throw std::invalid_argument("zf_transmit: weighted water-filling needs one objective weight per user");
    }
    // b / (feedback bits * E_k * w_k), normalised to unit mean.
    double mean = 0.0;
    for (std::size_t k = 0; k < k_users; ++k) {
      const double w = std::max(objective_weights[k], 1e-6);
      weights.push_back(cfg.bandwidth_hz / (cfg.feedback_bits_per_resolution * resolutions[k] * w));
      mean += weights.back() / static_cast<double>(k_users);
    }
    for (double& w : weights) w /= mean;
  }

  // A user whose budget is already gone cannot be rescued by downlink power;
  // it gets no floor and its latency overshoot is penalised by the reward.
  std::vector<double> active_floors = sol.floors;
  for (double& f : active_floors) {
    if (std::isinf(f)) f = 0.0;
  }
  const WaterFillResult wf =
      weights.empty() ? water_fill(sol.gains, noise, active_floors, cfg.max_transmit_power_w)
                      : water_fill(sol.gains, noise, active_floors, cfg.max_transmit_power_w,
                                   std::span<const double>(weights));
  sol.status = wf.status;
  if (wf.feasible()) {
    sol.powers = wf.powers;
    sol.waterlevel = wf.waterlevel;
  } else {
    sol.powers.resize(k_users);
    for (std::size_t k = 0; k < k_users; ++k) {
      sol.powers[k] = cfg.max_transmit_power_w / (static_cast<double>(k_users) * sol.gains[k]);
    }
    sol.waterlevel = std::numeric_limits<double>::quiet_NaN();
  }
  sol.transmit = sol.transmit_dirs;
  for (std::size_t k = 0; k < k_users; ++k) {
    sol.transmit.col(static_cast<Eigen::Index>(k)) *= std::sqrt(sol.powers[k]);
  }
  return sol;
}

}  // namespace risdt
