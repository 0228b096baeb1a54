// SPDX-License-Identifier: Apache-2.0

#include "risdt/qoe.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace risdt {

double perception_quality(double resolution, double resolution_min) {
  if (!(resolution_min > 0.0) || !(resolution >= resolution_min)) {
    throw std::domain_error("perception_quality: resolution must be at least E_min > 0");
  }
  return std::log(resolution / resolution_min);
}

LatencyBreakdown latency_breakdown(double payload_bits, double rate_ul, double resolution, double compute_hz,
                                   double rate_dl, const SystemConfig& cfg) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  LatencyBreakdown l;
  l.uplink = rate_ul > 0.0 ? payload_bits / rate_ul : inf;
  l.processing = compute_hz > 0.0 ? cfg.per_sample_bits * cfg.cycles_per_bit * resolution / compute_hz : inf;
  l.downlink = rate_dl > 0.0 ? cfg.feedback_bits_per_resolution * resolution / rate_dl : inf;
  l.total = l.uplink + l.processing + l.downlink;
  return l;
}

double qoe(double weight_subjective, double weight_objective, double perception, double latency,
           double perception_max, double latency_max) {
  return weight_subjective * perception / perception_max + weight_objective * (1.0 - latency / latency_max);
}

double reward(std::span<const QoEResult> results, bool power_ok, double penalty_coeff, double latency_max) {
  double r = 0.0;
  if (power_ok) {
    for (const QoEResult& q : results) {
      r += q.qoe;
      if (q.latency.total > latency_max) r -= penalty_coeff * latency_max;
    }
  } else {
    for (const QoEResult& q : results) r -= std::abs(q.qoe);
  }
  return r;
}

}  // namespace risdt
