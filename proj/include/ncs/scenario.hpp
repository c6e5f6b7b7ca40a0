// SPDX-License-Identifier: Apache-2.0
//
// Scenario geometry, radio configuration and derived ground truth.
//
// Coordinates are (east, north, up). Pairs are enumerated TX-major:
// l = i * J + (j - J_S), with TX BSs 0..I-1 and RX BSs J_S..N_BS-1.

#ifndef NCS_SCENARIO_HPP
#define NCS_SCENARIO_HPP

#include <utility>
#include <vector>

#include "ncs/core.hpp"

namespace ncs {

enum class Duplex { FD, HD };
enum class Role { TX, RX, TXRX };
enum class WrapMode { Strict, Permissive };

struct RadioConfig {
  double carrier_freq = 4.9e9;          // Hz
  double subcarrier_spacing = 30e3;     // Hz
  int num_subcarriers = 3276;           // N
  int num_symbols = 64;                 // M
  double pulse_interval = 1e-3;         // T, s
  int panel_x = 8;                      // Lx
  int panel_y = 8;                      // Ly
  std::vector<double> tx_power_dbm{35.0};  // one entry, or one per TX BS
  double tx_gain_dbi = 0.0;
  double rx_gain_dbi = 0.0;
  double noise_density_dbm_hz = -174.0;
  double noise_figure_db = 6.0;
  double rcs = 1.0;  // m^2

  double wavelength() const { return kSpeedOfLight / carrier_freq; }
  Dims dims() const { return {num_subcarriers, num_symbols, panel_x, panel_y}; }
  double tx_power_dbm_for(int tx) const;
  void validate() const;
};

struct BaseStation {
  int id = 0;
  Vec3 position = Vec3::Zero();
  Vec3 boresight = Vec3::UnitY();
  Vec3 panel_x = Vec3::UnitX();
  Vec3 panel_y = Vec3::UnitZ();
  Role role = Role::RX;
};

struct Target {
  Vec3 position = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();
};

struct Scenario {
  Duplex duplex = Duplex::FD;
  std::vector<BaseStation> stations;
  std::vector<Target> targets;
  RadioConfig radio;
  int num_tx = 1;  // I
  // Optional per-pair RCS override (size I*J); empty means radio.rcs everywhere.
  std::vector<double> pair_rcs;

  int num_bs() const { return static_cast<int>(stations.size()); }
  int num_rx() const { return duplex == Duplex::FD ? num_bs() : num_bs() - num_tx; }
  int rx_start() const { return duplex == Duplex::FD ? 0 : num_tx; }
  int num_pairs() const { return num_tx * num_rx(); }
  int num_targets() const { return static_cast<int>(targets.size()); }
  int pair_index(int i, int j) const { return i * num_rx() + (j - rx_start()); }
  std::pair<int, int> pair_of(int l) const {
    return {l / num_rx(), rx_start() + l % num_rx()};
  }
  double rcs_for(int i, int j) const;
  void validate() const;
};

// Builds a scenario from positions and boresights; panel bases and roles are derived.
Scenario make_scenario(Duplex duplex, const std::vector<Vec3>& positions,
                       const std::vector<Vec3>& boresights, std::vector<Target> targets,
                       RadioConfig radio, int num_tx);

// The Tables I-III reference setup (FD: 4 BSs, 2 TX; HD: 5 BSs, 3 TX).
Scenario reference_scenario(Duplex duplex);

// Same radio and targets with N_BS stations and I TX BSs. Stations beyond the
// base list are placed on a ring around the base layout's centroid, each at a
// fixed golden-angle step, so layouts for growing N_BS are nested.
Scenario with_layout(const Scenario& base, int num_bs, int num_tx);

// Desk-scale dims (256, 16, 4, 4).
Scenario desk_scale(Scenario sc);

/// Panel basis from a boresight: x is horizontal, y completes the right-handed
/// frame (x, y, z). Throws DegenerateBoresight when z is (nearly) vertical.
template <typename Scalar>
std::pair<Eigen::Matrix<Scalar, 3, 1>, Eigen::Matrix<Scalar, 3, 1>> panel_basis(
    const Eigen::Matrix<Scalar, 3, 1>& z, Scalar tol = Scalar(1e-9)) {
  using V = Eigen::Matrix<Scalar, 3, 1>;
  const Scalar horiz = z(0) * z(0) + z(1) * z(1);
  if (horiz < tol * tol) throw DegenerateBoresight("boresight is vertical; panel x undefined");
  V x(-z(1), z(0), Scalar(0));
  V y(-z(0) * z(2), -z(1) * z(2), horiz);
  return {x.normalized(), y.normalized()};
}

struct Geometry {
  double distance = 0;    // m
  double range_rate = 0;  // m/s
  Vec3 direction = Vec3::Zero();
  double cos_alpha = 0;
  double cos_beta = 0;
};

Geometry geometry(const BaseStation& bs, const Target& target);
Geometry geometry(const Scenario& sc, int bs_id, int target_id);

// Physical measurement (r, rdot, cos_alpha, cos_beta) of target k for pair (i, j).
Vec4 true_measurement(const Scenario& sc, int i, int j, int k);

// Normalized frequencies (f0..f3). In permissive mode Doppler wraps and
// *wrapped is set; strict mode throws AmbiguityError.
Vec4 meas_to_freq(const Vec4& meas, const RadioConfig& radio, WrapMode mode = WrapMode::Strict,
                  bool* wrapped = nullptr);
Vec4 true_frequencies(const Scenario& sc, int i, int j, int k, WrapMode mode = WrapMode::Strict,
                      bool* wrapped = nullptr);

// Initial channel phase, radians in [-pi, pi).
double initial_phase(const Scenario& sc, int i, int j, int k);

struct LinkBudget {
  double amplitude = 0;       // linear, sqrt(W)
  double noise_variance = 0;  // W per resource element
};

LinkBudget amplitude_and_noise(const Scenario& sc, int i, int j, int k);
double noise_variance(const RadioConfig& radio);

}  // namespace ncs

#endif  // NCS_SCENARIO_HPP
