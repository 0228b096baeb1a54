// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "risdt/channel.hpp"
#include "risdt/config.hpp"

namespace risdt {

/// Gram matrices with a 2-norm condition number above this are rejected.
inline constexpr double kMaxGramCondition = 1e12;

class RankDeficientError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// H (H^H H)^{-1}. Throws RankDeficientError when H has fewer rows than
/// columns or the Gram matrix is too badly conditioned.
CMat zf_pseudo_inverse(const CMat& h);

/// Receive beamformer V for the stacked uplink channels (M x K).
inline CMat zf_receive(const CMat& h_ul) { return zf_pseudo_inverse(h_ul); }

/// p_k |h_k^H v_k|^2 / (v_k^H (s2 I + sum_{m != k} p_m h_m h_m^H) v_k).
double uplink_sinr(int k, const CMat& v, const CMat& h_ul, std::span<const double> uplink_power, double noise);

/// |h_k^H w_k|^2 / (s2 + sum_{m != k} |h_k^H w_m|^2).
double downlink_sinr(int k, const CMat& w, const CMat& h_dl, double noise);

/// Shannon rate b log2(1 + sinr) in bits per second.
double rate(double bandwidth_hz, double sinr);

/// Smallest received downlink power meeting the latency budget left after
/// uplink and processing. Returns +infinity when the budget is exhausted.
double min_power(double resolution, double budget_s, double feedback_bits_per_resolution, double bandwidth_hz,
                 double noise);

enum class PowerStatus { feasible, infeasible_floors };

struct WaterFillResult {
  PowerStatus status = PowerStatus::feasible;
  std::vector<double> powers;
  double waterlevel = 0.0;  // 1/rho

  bool feasible() const { return status == PowerStatus::feasible; }
};

/// Floored water-filling:
///   p_k = (1/v_k) max{ w_k mu - v_k s2_k, v_k pmin_k },
///   sum_k max{ w_k mu - v_k s2_k, v_k pmin_k } = P_max,
/// with w_k = 1 unless `weights` is given. mu is found by bisection on the
/// nondecreasing total. Returns infeasible_floors (and no powers) when
/// sum_k v_k pmin_k > P_max.
WaterFillResult water_fill(std::span<const double> gains, std::span<const double> noise,
                           std::span<const double> floors, double max_power,
                           std::optional<std::span<const double>> weights = std::nullopt);

struct BeamformingSolution {
  CMat receive;                    // V, M x K
  CMat transmit_dirs;              // W~, M x K
  std::vector<double> powers;      // p^DL_k
  CMat transmit;                   // W = W~ diag(sqrt(p))
  std::vector<double> gains;       // v_k, diagonal of W~^H W~
  std::vector<double> floors;      // p^DL,min_k
  double waterlevel = 0.0;
  PowerStatus status = PowerStatus::feasible;

  /// sum_k ||w_k||^2
  double total_power() const;
};

/// Downlink ZF with water-filled powers. Floors come from min_power with the
/// per-user latency budget L_max - L^UL_k - L^PRO_k; users whose budget is
/// already exhausted (infinite floor) enter the water-filling with no floor.
/// When the remaining floors cannot be met the powers fall back to an equal
/// split of the weighted budget (sum_k v_k p_k = P_max) and the status
/// records the infeasibility. `floors` keeps the raw min_power values.
/// `objective_weights` feed the weighted variant when cfg.weighted_waterfill.
BeamformingSolution zf_transmit(const CMat& h_dl, std::span<const double> resolutions,
                                std::span<const double> uplink_latency, std::span<const double> processing_latency,
                                const SystemConfig& cfg, std::span<const double> objective_weights = {});

}  // namespace risdt
