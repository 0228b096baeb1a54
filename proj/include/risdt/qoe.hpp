// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>

#include "risdt/config.hpp"

namespace risdt {

struct LatencyBreakdown {
  double uplink = 0.0;
  double processing = 0.0;
  double downlink = 0.0;
  double total = 0.0;
};

struct QoEResult {
  double perception = 0.0;
  LatencyBreakdown latency;
  double qoe = 0.0;
  bool feasible = true;  // total latency within L_max
};

/// Weber-Fechner perception ln(E / E_min). Throws std::domain_error for
/// E < E_min or E_min <= 0.
double perception_quality(double resolution, double resolution_min);

/// Uplink D/r_UL, processing xi*c*E/f, downlink (feedback bits)*E/r_DL.
/// A non-positive rate or compute share yields an infinite component.
LatencyBreakdown latency_breakdown(double payload_bits, double rate_ul, double resolution, double compute_hz,
                                   double rate_dl, const SystemConfig& cfg);

/// w_subj * E/E_max + w_obj * (1 - L/L_max), unclamped.
double qoe(double weight_subjective, double weight_objective, double perception, double latency,
           double perception_max, double latency_max);

/// Slot reward.
///   power constraint met:      sum_k QoE_k - penalty * sum_k l_k,
///                              l_k = L_max if L_k > L_max else 0
///   power constraint violated: -sum_k |QoE_k|
/// The violated branch equals -sum_k QoE_k whenever every QoE is
/// non-negative and stays a penalty (<= 0) otherwise.
double reward(std::span<const QoEResult> results, bool power_ok, double penalty_coeff, double latency_max);

}  // namespace risdt
