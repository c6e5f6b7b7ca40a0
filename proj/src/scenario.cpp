// SPDX-License-Identifier: Apache-2.0

#include "ncs/scenario.hpp"

#include <cmath>
#include <string>

namespace ncs {

double RadioConfig::tx_power_dbm_for(int tx) const {
  if (tx_power_dbm.empty()) throw ConfigError("no TX power configured");
  if (tx_power_dbm.size() == 1) return tx_power_dbm.front();
  if (tx < 0 || tx >= static_cast<int>(tx_power_dbm.size()))
    throw ConfigError("no TX power for TX BS " + std::to_string(tx));
  return tx_power_dbm[tx];
}

void RadioConfig::validate() const {
  if (!(carrier_freq > 0)) throw ConfigError("carrier frequency must be positive");
  if (!(subcarrier_spacing > 0)) throw ConfigError("subcarrier spacing must be positive");
  if (num_subcarriers < 2 || num_symbols < 2 || panel_x < 2 || panel_y < 2)
    throw ConfigError("every tensor dimension needs at least 2 samples");
  if (pulse_interval < 1.0 / subcarrier_spacing)
    throw ConfigError("pulse interval shorter than one OFDM symbol");
  if (tx_power_dbm.empty()) throw ConfigError("no TX power configured");
  if (!(rcs > 0)) throw ConfigError("RCS must be positive");
}

double Scenario::rcs_for(int i, int j) const {
  if (pair_rcs.empty()) return radio.rcs;
  return pair_rcs.at(pair_index(i, j));
}

void Scenario::validate() const {
  radio.validate();
  const int n = num_bs();
  if (n < 1) throw ConfigError("scenario has no base stations");
  if (num_tx < 1 || num_tx > n) throw ConfigError("TX count out of range");
  if (duplex == Duplex::HD && num_tx >= n) throw ConfigError("HD mode needs at least one RX-only BS");
  for (int b = 0; b < n; ++b) {
    const auto& bs = stations[b];
    if (bs.id != b) throw ConfigError("station ids must be 0..N_BS-1 in order");
    if (std::abs(bs.boresight.norm() - 1.0) > 1e-6) throw ConfigError("boresight must be a unit vector");
    const bool tx = b < num_tx;
    const bool rx = b >= rx_start();
    const Role expect = tx && rx ? Role::TXRX : (tx ? Role::TX : Role::RX);
    if (bs.role != expect)
      throw ConfigError("station " + std::to_string(b) + " role does not match the TX/RX index layout");
  }
  if (!pair_rcs.empty() && static_cast<int>(pair_rcs.size()) != num_pairs())
    throw ConfigError("pair RCS override must have one entry per pair");
  if (radio.tx_power_dbm.size() != 1 && static_cast<int>(radio.tx_power_dbm.size()) != num_tx)
    throw ConfigError("tx_power_dbm must have one entry or one per TX BS");
  for (const auto& t : targets)
    for (const auto& bs : stations)
      if ((t.position - bs.position).norm() == 0.0) throw CoincidentPoint("target coincides with a BS");
}

Scenario make_scenario(Duplex duplex, const std::vector<Vec3>& positions,
                       const std::vector<Vec3>& boresights, std::vector<Target> targets,
                       RadioConfig radio, int num_tx) {
  if (positions.size() != boresights.size()) throw ConfigError("positions/boresights size mismatch");
  Scenario sc;
  sc.duplex = duplex;
  sc.num_tx = num_tx;
  sc.radio = std::move(radio);
  sc.targets = std::move(targets);
  const int n = static_cast<int>(positions.size());
  for (int b = 0; b < n; ++b) {
    BaseStation bs;
    bs.id = b;
    bs.position = positions[b];
    bs.boresight = boresights[b].normalized();
    auto [x, y] = panel_basis<double>(bs.boresight);
    bs.panel_x = x;
    bs.panel_y = y;
    const bool tx = b < num_tx;
    const bool rx = duplex == Duplex::FD || b >= num_tx;
    bs.role = tx && rx ? Role::TXRX : (tx ? Role::TX : Role::RX);
    sc.stations.push_back(bs);
  }
  sc.validate();
  return sc;
}

namespace {

const std::vector<Vec3> kTablePositions{
    {0, 0, 80}, {500, 0, 20}, {0, 500, 20}, {500, 500, 80}, {250, 500, 40}};
const std::vector<Vec3> kTableBoresights{{0.7032, 0.7032, -0.1045},
                                         {0.7032, -0.7032, -0.1045},
                                         {-0.7032, 0.7032, -0.1045},
                                         {-0.7032, -0.7032, -0.1045},
                                         {0, -0.9945, -0.1045}};

std::vector<Target> table_targets() {
  return {{{125, 250, 0}, {10, 10, 0}}, {{250, 250, 60}, {10, -5, -5}}, {{375, 250, 30}, {-5, -5, -5}}};
}

}  // namespace

Scenario reference_scenario(Duplex duplex) {
  const int n = duplex == Duplex::FD ? 4 : 5;
  const int tx = duplex == Duplex::FD ? 2 : 3;
  std::vector<Vec3> pos(kTablePositions.begin(), kTablePositions.begin() + n);
  std::vector<Vec3> bore(kTableBoresights.begin(), kTableBoresights.begin() + n);
  return make_scenario(duplex, pos, bore, table_targets(), RadioConfig{}, tx);
}

Scenario with_layout(const Scenario& base, int num_bs, int num_tx) {
  std::vector<Vec3> pos;
  std::vector<Vec3> bore;
  for (const auto& bs : base.stations) {
    if (static_cast<int>(pos.size()) == num_bs) break;
    pos.push_back(bs.position);
    bore.push_back(bs.boresight);
  }
  if (static_cast<int>(pos.size()) < num_bs) {
    Vec3 centre = Vec3::Zero();
    double radius = 0;
    for (const auto& bs : base.stations) centre += bs.position;
    centre /= static_cast<double>(base.stations.size());
    for (const auto& bs : base.stations)
      radius = std::max(radius, (bs.position - centre).head<2>().norm());
    const double heights[3] = {30.0, 60.0, 45.0};
    const int extra = num_bs - static_cast<int>(pos.size());
    const double golden = kPi * (3 - std::sqrt(5.0));
    for (int e = 0; e < extra; ++e) {
      // Golden-angle steps: site e never moves when more sites are added.
      const double ang = kPi / 8 + golden * e;
      Vec3 p(centre.x() + radius * std::cos(ang), centre.y() + radius * std::sin(ang), heights[e % 3]);
      Vec3 h = (centre - p);
      h.z() = 0;
      h.normalize();
      const double tilt = 0.1045;
      Vec3 z(h.x() * std::sqrt(1 - tilt * tilt), h.y() * std::sqrt(1 - tilt * tilt), -tilt);
      pos.push_back(p);
      bore.push_back(z);
    }
  }
  return make_scenario(base.duplex, pos, bore, base.targets, base.radio, num_tx);
}

Scenario desk_scale(Scenario sc) {
  sc.radio.num_subcarriers = 256;
  sc.radio.num_symbols = 16;
  sc.radio.panel_x = 4;
  sc.radio.panel_y = 4;
  return sc;
}

Geometry geometry(const BaseStation& bs, const Target& target) {
  const Vec3 diff = target.position - bs.position;
  const double d = diff.norm();
  if (d == 0.0) throw CoincidentPoint("target coincides with BS " + std::to_string(bs.id));
  Geometry g;
  g.distance = d;
  g.direction = diff / d;
  g.range_rate = g.direction.dot(target.velocity);
  g.cos_alpha = std::clamp(bs.panel_x.dot(g.direction), -1.0, 1.0);
  g.cos_beta = std::clamp(bs.panel_y.dot(g.direction), -1.0, 1.0);
  return g;
}

Geometry geometry(const Scenario& sc, int bs_id, int target_id) {
  return geometry(sc.stations.at(bs_id), sc.targets.at(target_id));
}

Vec4 true_measurement(const Scenario& sc, int i, int j, int k) {
  const Geometry gi = geometry(sc, i, k);
  const Geometry gj = geometry(sc, j, k);
  return {gi.distance + gj.distance, gi.range_rate + gj.range_rate, gj.cos_alpha, gj.cos_beta};
}

Vec4 meas_to_freq(const Vec4& meas, const RadioConfig& radio, WrapMode mode, bool* wrapped) {
  const double r_max = kSpeedOfLight / radio.subcarrier_spacing;
  if (meas(0) >= r_max || meas(0) < 0) throw AmbiguityError("bistatic range outside the unambiguous interval");
  Vec4 f;
  f(0) = 1.0 - meas(0) * radio.subcarrier_spacing / kSpeedOfLight;
  const double f1 = meas(1) * radio.carrier_freq * radio.pulse_interval / kSpeedOfLight;
  const bool wrap = f1 < -0.5 || f1 >= 0.5;
  if (wrap && mode == WrapMode::Strict) throw AmbiguityError("Doppler frequency outside [-0.5, 0.5)");
  if (wrapped) *wrapped = wrap;
  f(1) = wrap ? wrap_unit(f1, -0.5) : f1;
  f(2) = meas(2) / 2.0;
  f(3) = meas(3) / 2.0;
  return f;
}

Vec4 true_frequencies(const Scenario& sc, int i, int j, int k, WrapMode mode, bool* wrapped) {
  return meas_to_freq(true_measurement(sc, i, j, k), sc.radio, mode, wrapped);
}

double initial_phase(const Scenario& sc, int i, int j, int k) {
  const double r = true_measurement(sc, i, j, k)(0);
  const auto& radio = sc.radio;
  const double cycles = (radio.carrier_freq - radio.num_subcarriers * radio.subcarrier_spacing / 2.0) * r /
                        kSpeedOfLight;
  const double frac = cycles - std::floor(cycles);
  return -2.0 * kPi * wrap_unit(frac, -0.5);
}

double noise_variance(const RadioConfig& radio) {
  const double dbm = radio.noise_density_dbm_hz + 10.0 * std::log10(radio.subcarrier_spacing) + radio.noise_figure_db;
  return dbm_to_watt(dbm);
}

LinkBudget amplitude_and_noise(const Scenario& sc, int i, int j, int k) {
  const auto& radio = sc.radio;
  const double di = geometry(sc, i, k).distance;
  const double dj = geometry(sc, j, k).distance;
  const double p = dbm_to_watt(radio.tx_power_dbm_for(i)) / radio.num_subcarriers;
  const double gt = db_to_linear(radio.tx_gain_dbi);
  const double gr = db_to_linear(radio.rx_gain_dbi);
  const double lambda = radio.wavelength();
  const double num = p * gt * gr * lambda * lambda * sc.rcs_for(i, j);
  const double den = std::pow(4 * kPi, 3) * di * di * dj * dj;
  return {std::sqrt(num / den), noise_variance(radio)};
}

}  // namespace ncs
