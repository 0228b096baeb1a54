// SPDX-License-Identifier: Apache-2.0

#include "risdt/channel.hpp"

#include "risdt/byte_io.hpp"

#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>
#include <stdexcept>

namespace risdt {

CVec PhaseShiftMatrix::diagonal() const {
  CVec d(size());
  for (int n = 0; n < size(); ++n) d[n] = std::polar(1.0, phases[static_cast<std::size_t>(n)]);
  return d;
}

namespace {

CMat stack(const std::vector<CVec>& cols) {
  if (cols.empty()) return {};
  CMat h(cols.front().size(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) h.col(static_cast<Eigen::Index>(k)) = cols[k];
  return h;
}

}  // namespace

CMat ChannelSet::stacked_ul() const { return stack(effective_ul); }
CMat ChannelSet::stacked_dl() const { return stack(effective_dl); }

double path_gain(double rho, double d, double alpha) {
  if (!(d > 0.0)) throw std::domain_error("path_gain: distance must be strictly positive");
  if (!(rho > 0.0)) throw std::domain_error("path_gain: reference gain must be strictly positive");
  return rho * std::pow(d, -alpha);
}

CVec ula_steering(double angle, int length) {
  if (length < 1) throw std::invalid_argument("ula_steering: length must be at least 1");
  CVec a(length);
  const double s = std::sin(angle);
  for (int m = 0; m < length; ++m) a[m] = std::polar(1.0, -std::numbers::pi * m * s);
  return a;
}

CMat draw_cn(int rows, int cols, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const double scale = 1.0 / std::sqrt(2.0);
  CMat h(rows, cols);
  // Row-major fill so the stream order does not depend on Eigen storage.
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const double x = normal(rng);
      const double y = normal(rng);
      h(r, c) = cdouble(x * scale, y * scale);
    }
  }
  return h;
}

CMat rician_channel(const CMat& los, double rician_factor, double gain, Rng& rng) {
  if (rician_factor < 0.0) throw std::invalid_argument("rician_channel: factor must be non-negative");
  if (!(gain > 0.0)) throw std::invalid_argument("rician_channel: gain must be strictly positive");
  const CMat nlos = draw_cn(static_cast<int>(los.rows()), static_cast<int>(los.cols()), rng);
  double w_los = 0.0;
  double w_nlos = 1.0;
  if (rician_factor >= 1e12) {
    w_los = 1.0;
    w_nlos = 0.0;
  } else if (rician_factor > 0.0) {
    w_los = std::sqrt(rician_factor / (rician_factor + 1.0));
    w_nlos = std::sqrt(1.0 / (rician_factor + 1.0));
  }
  const double amp = std::sqrt(gain);
  if (w_los == 0.0) return amp * nlos;
  if (w_nlos == 0.0) return amp * los;
  return amp * (w_los * los + w_nlos * nlos);
}

CVec effective_channel(const CVec& direct, const CMat& ris_link, const PhaseShiftMatrix& theta,
                       const CVec& user_link) {
  if (ris_link.rows() != direct.size() || ris_link.cols() != theta.size() ||
      user_link.size() != theta.size()) {
    throw std::invalid_argument("effective_channel: dimension mismatch");
  }
  const CVec reflected = theta.diagonal().cwiseProduct(user_link);
  return direct + ris_link * reflected;
}

SceneGeometry scene_geometry(const SceneSpec& scene, const SystemConfig& cfg) {
  const int m = cfg.num_antennas;
  const int n = cfg.num_ris_elements;
  const Vec3& qa = cfg.server_position;
  const Vec3& qr = cfg.ris_position;

  SceneGeometry g;
  g.dist_ris_server = distance(qr, qa);
  g.gain_ris_server = path_gain(cfg.pathloss_ref, g.dist_ris_server, cfg.pathloss_exponents.ris_server);

  // Server ULA along z, RIS ULA along x.
  const double server_angle = std::asin((qr[2] - qa[2]) / g.dist_ris_server);
  const double ris_angle_to_server = std::asin((qa[0] - qr[0]) / g.dist_ris_server);
  g.los_ris_server = ula_steering(server_angle, m) * ula_steering(ris_angle_to_server, n).adjoint();

  for (const UserSpec& u : scene.users) {
    const double d_ka = distance(u.position, qa);
    const double d_kr = distance(u.position, qr);
    g.dist_user_server.push_back(d_ka);
    g.dist_user_ris.push_back(d_kr);
    g.gain_user_server.push_back(path_gain(cfg.pathloss_ref, d_ka, cfg.pathloss_exponents.user_server));
    g.gain_user_ris.push_back(path_gain(cfg.pathloss_ref, d_kr, cfg.pathloss_exponents.user_ris));
    g.los_user_ris.push_back(ula_steering(std::asin((u.position[0] - qr[0]) / d_kr), n));
  }
  return g;
}

void compose_effective(ChannelSet& links, const PhaseShiftMatrix& theta) {
  const int k_users = links.num_users();
  links.effective_ul.resize(static_cast<std::size_t>(k_users));
  links.effective_dl.resize(static_cast<std::size_t>(k_users));
  for (int k = 0; k < k_users; ++k) {
    const auto i = static_cast<std::size_t>(k);
    links.effective_ul[i] = effective_channel(links.direct_ul[i], links.ris_server_ul, theta, links.user_ris_ul[i]);
    links.effective_dl[i] = effective_channel(links.direct_dl[i], links.server_ris_dl, theta, links.ris_user_dl[i]);
  }
}

ChannelSet sample_channel_set(const SceneGeometry& geometry, const SystemConfig& cfg,
                              const PhaseShiftMatrix& theta, Rng& rng) {
  const int m = cfg.num_antennas;
  const std::size_t k_users = geometry.dist_user_server.size();
  ChannelSet cs;
  for (std::size_t k = 0; k < k_users; ++k) {
    const double direct_amp = std::sqrt(geometry.gain_user_server[k]);
    cs.direct_ul.push_back(direct_amp * draw_cn(m, 1, rng).col(0));
    cs.direct_dl.push_back(direct_amp * draw_cn(m, 1, rng).col(0));
    cs.user_ris_ul.push_back(
        rician_channel(geometry.los_user_ris[k], cfg.rician.user_ris, geometry.gain_user_ris[k], rng).col(0));
    cs.ris_user_dl.push_back(
        rician_channel(geometry.los_user_ris[k], cfg.rician.ris_user, geometry.gain_user_ris[k], rng).col(0));
  }
  cs.ris_server_ul = rician_channel(geometry.los_ris_server, cfg.rician.ris_server, geometry.gain_ris_server, rng);
  cs.server_ris_dl = rician_channel(geometry.los_ris_server, cfg.rician.server_ris, geometry.gain_ris_server, rng);
  compose_effective(cs, theta);
  return cs;
}

ChannelSet sample_channel_set(const SceneSpec& scene, const SystemConfig& cfg,
                              const PhaseShiftMatrix& theta, Rng& rng) {
  return sample_channel_set(scene_geometry(scene, cfg), cfg, theta, rng);
}

// ---------------------------------------------------------------------------
// Channel dump

namespace {

using byte_io::get_le;
using byte_io::put_le;

void put_complex(std::ostream& out, const cdouble& z) {
  put_le(out, static_cast<float>(z.real()));
  put_le(out, static_cast<float>(z.imag()));
}

cdouble get_complex(std::istream& in) {
  const float re = get_le<float>(in);
  const float im = get_le<float>(in);
  return {re, im};
}

void put_rows(std::ostream& out, const std::vector<CVec>& rows) {
  for (const CVec& r : rows)
    for (Eigen::Index i = 0; i < r.size(); ++i) put_complex(out, r[i]);
}

void put_matrix(std::ostream& out, const CMat& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) put_complex(out, m(r, c));
}

std::vector<CVec> get_rows(std::istream& in, int count, int length) {
  std::vector<CVec> rows(static_cast<std::size_t>(count), CVec(length));
  for (CVec& r : rows)
    for (int i = 0; i < length; ++i) r[i] = get_complex(in);
  return rows;
}

CMat get_matrix(std::istream& in, int rows, int cols) {
  CMat m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = get_complex(in);
  return m;
}

}  // namespace

void write_channel_record(std::ostream& out, const ChannelSet& channels, std::uint64_t seed, int slot) {
  const nlohmann::json header = {
      {"num_users", channels.num_users()},
      {"num_antennas", channels.ris_server_ul.rows()},
      {"num_ris_elements", channels.ris_server_ul.cols()},
      {"seed", seed},
      {"slot", slot},
  };
  const std::string text = header.dump();
  put_le(out, static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  put_rows(out, channels.direct_ul);
  put_rows(out, channels.direct_dl);
  put_rows(out, channels.user_ris_ul);
  put_rows(out, channels.ris_user_dl);
  put_matrix(out, channels.ris_server_ul);
  put_matrix(out, channels.server_ris_dl);
  put_rows(out, channels.effective_ul);
  put_rows(out, channels.effective_dl);
}

bool read_channel_record(std::istream& in, ChannelRecord& record) {
  if (in.peek() == std::char_traits<char>::eof()) return false;
  const auto length = get_le<std::uint32_t>(in);
  std::string text(length, '\0');
  if (!in.read(text.data(), length)) throw std::runtime_error("channel record: truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("channel record: bad header: ") + e.what());
  }
  const int k = header.at("num_users").get<int>();
  const int m = header.at("num_antennas").get<int>();
  const int n = header.at("num_ris_elements").get<int>();
  record.seed = header.at("seed").get<std::uint64_t>();
  record.slot = header.at("slot").get<int>();
  ChannelSet& cs = record.channels;
  cs.direct_ul = get_rows(in, k, m);
  cs.direct_dl = get_rows(in, k, m);
  cs.user_ris_ul = get_rows(in, k, n);
  cs.ris_user_dl = get_rows(in, k, n);
  cs.ris_server_ul = get_matrix(in, m, n);
  cs.server_ris_dl = get_matrix(in, m, n);
  cs.effective_ul = get_rows(in, k, m);
  cs.effective_dl = get_rows(in, k, m);
  return true;
}

}  // namespace risdt
