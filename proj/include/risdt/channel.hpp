// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <complex>
#include <cstdint>
#include <iosfwd>
#include <vector>

#include <Eigen/Dense>

#include "risdt/config.hpp"

namespace risdt {

using cdouble = std::complex<double>;
using CVec = Eigen::VectorXcd;
using CMat = Eigen::MatrixXcd;

/// Diagonal RIS reflection matrix with unit amplitudes.
struct PhaseShiftMatrix {
  std::vector<double> phases;  // radians, each in [0, 2*pi)

  static PhaseShiftMatrix zeros(int n) { return {std::vector<double>(static_cast<std::size_t>(n), 0.0)}; }
  int size() const { return static_cast<int>(phases.size()); }
  /// e^{j theta_n} for every element.
  CVec diagonal() const;
};

/// All per-slot channels. Vectors are indexed by user.
struct ChannelSet {
  std::vector<CVec> direct_ul;     // h_{k,a}, length M
  std::vector<CVec> direct_dl;     // h_{a,k}, length M
  std::vector<CVec> user_ris_ul;   // h_{k,r}, length N
  std::vector<CVec> ris_user_dl;   // h_{r,k}, length N
  CMat ris_server_ul;              // H_{r,a}, M x N
  CMat server_ris_dl;              // H_{a,r}, M x N
  std::vector<CVec> effective_ul;  // h^UL_{k,a}
  std::vector<CVec> effective_dl;  // h^DL_{a,k}

  int num_users() const { return static_cast<int>(direct_ul.size()); }
  /// Columns are the effective uplink channels (M x K).
  CMat stacked_ul() const;
  CMat stacked_dl() const;
};

/// rho * d^(-alpha). Throws std::domain_error for d <= 0 or rho <= 0.
double path_gain(double rho, double d, double alpha);

/// Half-wavelength ULA response: element m is exp(-j*pi*m*sin(angle)).
CVec ula_steering(double angle, int length);

/// i.i.d. CN(0,1) entries, (x + jy)/sqrt(2) with x, y standard normal.
CMat draw_cn(int rows, int cols, Rng& rng);

/// sqrt(gain) * (sqrt(G/(G+1)) * los + sqrt(1/(G+1)) * nlos) with a fresh
/// CN(0,1) draw for nlos. G >= 1e12 is treated as pure line of sight.
CMat rician_channel(const CMat& los, double rician_factor, double gain, Rng& rng);

/// direct + ris_link * diag(e^{j theta}) * user_link.
CVec effective_channel(const CVec& direct, const CMat& ris_link, const PhaseShiftMatrix& theta,
                       const CVec& user_link);

/// Large-scale quantities of one scene: distances, path gains, and
/// line-of-sight components. Computed once per scene.
///
/// Array geometry: the server ULA is vertical (axis along z) and the RIS ULA
/// is horizontal along x. The angle seen by an array toward a node at offset
/// u from the array is asin((u . axis) / |u|): the height ratio for the
/// server and the x-offset ratio for the RIS.
struct SceneGeometry {
  std::vector<double> dist_user_server;
  std::vector<double> dist_user_ris;
  double dist_ris_server = 0.0;
  std::vector<double> gain_user_server;
  std::vector<double> gain_user_ris;
  double gain_ris_server = 0.0;
  std::vector<CVec> los_user_ris;  // N-vector per user, RIS steering toward the user
  CMat los_ris_server;             // M x N outer product a_M(server angle) a_N(RIS angle)^H
};

SceneGeometry scene_geometry(const SceneSpec& scene, const SystemConfig& cfg);

/// Draws all small-scale fades for one slot and composes the effective
/// channels with theta. Uplink and downlink fades are independent.
ChannelSet sample_channel_set(const SceneGeometry& geometry, const SystemConfig& cfg,
                              const PhaseShiftMatrix& theta, Rng& rng);
ChannelSet sample_channel_set(const SceneSpec& scene, const SystemConfig& cfg,
                              const PhaseShiftMatrix& theta, Rng& rng);

/// Recomputes effective_ul / effective_dl from the stored link draws.
void compose_effective(ChannelSet& links, const PhaseShiftMatrix& theta);

// ---------------------------------------------------------------------------
// Channel dump: one record per slot.
//
//   u32 little-endian header length | header JSON (dims, seed, slot) |
//   arrays as little-endian float32 (re, im) pairs, row-major, in the order
//   direct_ul[K x M], direct_dl[K x M], user_ris_ul[K x N], ris_user_dl[K x N],
//   ris_server_ul[M x N], server_ris_dl[M x N], effective_ul[K x M],
//   effective_dl[K x M].

struct ChannelRecord {
  std::uint64_t seed = 0;
  int slot = 0;
  ChannelSet channels;
};

void write_channel_record(std::ostream& out, const ChannelSet& channels, std::uint64_t seed, int slot);
/// Returns false at clean end of stream; throws std::runtime_error on a
/// truncated or malformed record.
bool read_channel_record(std::istream& in, ChannelRecord& record);

}  // namespace risdt
