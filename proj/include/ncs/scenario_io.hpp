// SPDX-License-Identifier: Apache-2.0
//
// Scenario files (TOML, parsed with toml++).
//
//   duplex = "FD"            # or "HD"
//   num_tx = 2
//   pair_rcs = [1, 1, ...]   # optional, one per pair
//
//   [radio]
//   carrier_freq = 4.9e9
//   subcarrier_spacing = 30e3
//   num_subcarriers = 3276
//   num_symbols = 64
//   pulse_interval = 1e-3
//   panel = [8, 8]
//   tx_power_dbm = 35        # scalar or one value per TX BS
//   tx_gain_dbi = 0
//   rx_gain_dbi = 0
//   noise_density_dbm_hz = -174
//   noise_figure_db = 6
//   rcs = 1
//
//   [[station]]              # repeated, in BS index order; TX BSs first
//   position = [0, 0, 80]
//   boresight = [0.7032, 0.7032, -0.1045]
//
//   [[target]]               # repeated
//   position = [125, 250, 0]
//   velocity = [10, 10, 0]
//
// Missing [radio] keys keep their defaults; unknown keys and tables are
// errors, reported with their line number.

#ifndef NCS_SCENARIO_IO_HPP
#define NCS_SCENARIO_IO_HPP

#include <string>
#include <string_view>

#include "ncs/scenario.hpp"

namespace ncs {

// Throws ConfigError with a line number on malformed input.
Scenario parse_scenario(std::string_view text);
Scenario load_scenario(const std::string& path);

// Inverse of parse_scenario (round-trips to within printing precision).
std::string format_scenario(const Scenario& sc);

}  // namespace ncs

#endif  // NCS_SCENARIO_IO_HPP
