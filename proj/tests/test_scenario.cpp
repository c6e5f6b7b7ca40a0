// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "ncs/fusion.hpp"
#include "ncs/scenario.hpp"
#include "ncs/scenario_io.hpp"

using namespace ncs;

TEST_CASE("panel basis for the tilted south-facing boresight") {
  const auto [x, y] = panel_basis<double>(Vec3(0, -0.9945, -0.1045).normalized());
  CHECK((x - Vec3(1, 0, 0)).norm() < 1e-12);
  CHECK(y(0) == doctest::Approx(0.0));
  CHECK(y(1) == doctest::Approx(-0.1045).epsilon(1e-3));
  CHECK(y(2) == doctest::Approx(0.9945).epsilon(1e-3));
}

TEST_CASE("panel basis for an axis-aligned boresight") {
  const auto [x, y] = panel_basis<double>(Vec3(0, 1, 0));
  CHECK((x - Vec3(-1, 0, 0)).norm() < 1e-15);
  CHECK((y - Vec3(0, 0, 1)).norm() < 1e-15);
}

TEST_CASE("vertical boresight is rejected") {
  CHECK_THROWS_AS(panel_basis<double>(Vec3(0, 0, 1)), DegenerateBoresight);
  CHECK_THROWS_AS(panel_basis<double>(Vec3(0, 0, -1)), DegenerateBoresight);
}

TEST_CASE("panel bases are orthonormal for random boresights") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n;
  double worst = 0;
  for (int t = 0; t < 10000; ++t) {
    Vec3 z(n(rng), n(rng), n(rng));
    z.normalize();
    if (std::hypot(z(0), z(1)) < 1e-6) continue;
    const auto [x, y] = panel_basis<double>(z);
    Eigen::Matrix3d B;
    B << x, y, z;
    worst = std::max(worst, (B.transpose() * B - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff());
    CHECK(x(2) == 0.0);  // x lies in the ground plane
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("reference stations have orthogonal panel frames") {
  for (Duplex d : {Duplex::FD, Duplex::HD}) {
    const Scenario sc = reference_scenario(d);
    for (const auto& bs : sc.stations) {
      CHECK(std::abs(bs.panel_x.dot(bs.panel_y)) < 1e-12);
      CHECK(std::abs(bs.panel_x.dot(bs.boresight)) < 1e-12);
      CHECK(std::abs(bs.panel_y.dot(bs.boresight)) < 1e-12);
    }
  }
}

TEST_CASE("geometry distances and rates") {
  const Scenario sc = reference_scenario(Duplex::FD);
  const Geometry g = geometry(sc, 0, 1);
  CHECK(g.distance == doctest::Approx(std::sqrt(125400.0)).epsilon(1e-14));
  CHECK(g.distance == doctest::Approx(354.12).epsilon(1e-5));

  BaseStation bs;
  bs.position = Vec3::Zero();
  bs.panel_x = Vec3::UnitX();
  bs.panel_y = Vec3::UnitZ();
  Target still{{40, 0, 0}, Vec3::Zero()};
  const Geometry h = geometry(bs, still);
  CHECK(h.range_rate == 0.0);
  CHECK(h.cos_alpha == doctest::Approx(1.0));
  CHECK(h.cos_beta == doctest::Approx(0.0));
}

TEST_CASE("direction cosines agree with the spherical angle model") {
  for (Duplex d : {Duplex::FD, Duplex::HD}) {
    const Scenario sc = reference_scenario(d);
    for (int b = 0; b < sc.num_bs(); ++b)
      for (int k = 0; k < sc.num_targets(); ++k) {
        const auto& bs = sc.stations[b];
        const Geometry g = geometry(sc, b, k);
        const double theta = std::acos(bs.boresight.dot(g.direction));
        const double phi = std::atan2(bs.panel_y.dot(g.direction), bs.panel_x.dot(g.direction));
        CHECK(std::sin(theta) * std::cos(phi) == doctest::Approx(g.cos_alpha).epsilon(1e-12));
        CHECK(std::sin(theta) * std::sin(phi) == doctest::Approx(g.cos_beta).epsilon(1e-12));
      }
  }
}

TEST_CASE("frequencies of a stationary target have zero Doppler") {
  Scenario sc = reference_scenario(Duplex::FD);
  sc.targets[0].velocity = Vec3::Zero();
  CHECK(true_frequencies(sc, 0, 1, 0)(1) == 0.0);
}

TEST_CASE("range at the ambiguity limit throws") {
  const RadioConfig radio;
  const Vec4 m(kSpeedOfLight / radio.subcarrier_spacing, 0, 0, 0);
  CHECK_THROWS_AS(meas_to_freq(m, radio), AmbiguityError);
}

TEST_CASE("Doppler wrapping in strict and permissive modes") {
  const RadioConfig radio;
  const double rate = 0.7 * kSpeedOfLight / (radio.carrier_freq * radio.pulse_interval);
  const Vec4 m(100, rate, 0, 0);
  CHECK_THROWS_AS(meas_to_freq(m, radio, WrapMode::Strict), AmbiguityError);
  bool wrapped = false;
  const Vec4 f = meas_to_freq(m, radio, WrapMode::Permissive, &wrapped);
  CHECK(wrapped);
  CHECK(f(1) == doctest::Approx(-0.3));
}

TEST_CASE("frequencies round-trip to physical measurements") {
  for (Duplex d : {Duplex::FD, Duplex::HD}) {
    const Scenario sc = reference_scenario(d);
    for (int l = 0; l < sc.num_pairs(); ++l) {
      const auto [i, j] = sc.pair_of(l);
      for (int k = 0; k < sc.num_targets(); ++k) {
        const Vec4 m = true_measurement(sc, i, j, k);
        const Vec4 back = freq_to_meas(true_frequencies(sc, i, j, k), sc.radio);
        CHECK(std::abs(back(0) - m(0)) < 1e-12 * m(0));
        CHECK(std::abs(back(1) - m(1)) < 1e-12 * std::max(1.0, std::abs(m(1))));
        CHECK(std::abs(back(2) - m(2)) < 1e-12);
        CHECK(std::abs(back(3) - m(3)) < 1e-12);
      }
    }
  }
}

TEST_CASE("pair enumeration is TX-major over the receivers") {
  const Scenario fd = reference_scenario(Duplex::FD);
  CHECK(fd.num_pairs() == 8);
  CHECK(fd.pair_of(5) == std::pair<int, int>{1, 1});
  const Scenario hd = reference_scenario(Duplex::HD);
  CHECK(hd.num_rx() == 2);
  CHECK(hd.rx_start() == 3);
  CHECK(hd.pair_index(2, 4) == 5);
  for (int l = 0; l < hd.num_pairs(); ++l) {
    const auto [i, j] = hd.pair_of(l);
    CHECK(hd.pair_index(i, j) == l);
  }
}

TEST_CASE("amplitude scales with distance and cross section") {
  Scenario sc = make_scenario(Duplex::FD, {{0, 0, 0}, {200, 0, 0}}, {{0, 1, 0}, {0, 1, 0}},
                              {{{100, 100, 0}, Vec3::Zero()}}, RadioConfig{}, 1);
  const double a = amplitude_and_noise(sc, 0, 1, 0).amplitude;

  Scenario far = sc;
  for (auto& bs : far.stations) bs.position *= 2;
  far.targets[0].position *= 2;
  CHECK(amplitude_and_noise(far, 0, 1, 0).amplitude == doctest::Approx(a / 4).epsilon(1e-12));

  Scenario bright = sc;
  bright.radio.rcs *= 4;
  CHECK(amplitude_and_noise(bright, 0, 1, 0).amplitude == doctest::Approx(2 * a).epsilon(1e-12));
}

TEST_CASE("noise variance of the default receiver") {
  const double dbm = 10 * std::log10(noise_variance(RadioConfig{})) + 30;
  CHECK(dbm == doctest::Approx(-174 + 10 * std::log10(30e3) + 6).epsilon(1e-12));
  CHECK(dbm == doctest::Approx(-123.23).epsilon(1e-4));
}

TEST_CASE("invalid scenarios are rejected") {
  CHECK_THROWS_AS(make_scenario(Duplex::HD, {{0, 0, 0}, {10, 0, 0}}, {{0, 1, 0}, {0, 1, 0}}, {}, RadioConfig{}, 2),
                  ConfigError);
  CHECK_THROWS_AS(make_scenario(Duplex::FD, {{0, 0, 0}}, {{0, 1, 0}}, {{{0, 0, 0}, Vec3::Zero()}}, RadioConfig{}, 1),
                  CoincidentPoint);
  RadioConfig bad;
  bad.tx_power_dbm = {30, 31, 32};
  CHECK_THROWS_AS(make_scenario(Duplex::FD, {{0, 0, 0}, {1, 0, 0}}, {{0, 1, 0}, {0, 1, 0}}, {}, bad, 2), ConfigError);
}

TEST_CASE("layouts beyond the table keep earlier stations") {
  const Scenario base = reference_scenario(Duplex::FD);
  const Scenario big = with_layout(base, 8, 3);
  CHECK(big.num_bs() == 8);
  CHECK(big.num_tx == 3);
  for (int b = 0; b < 4; ++b) CHECK(big.stations[b].position == base.stations[b].position);
  const Scenario small = with_layout(base, 2, 1);
  CHECK(small.num_bs() == 2);
}

TEST_CASE("larger layouts extend smaller ones") {
  const Scenario base = reference_scenario(Duplex::FD);
  for (int n = 6; n <= 12; ++n) {
    const Scenario a = with_layout(base, n - 1, 1);
    const Scenario b = with_layout(base, n, 1);
    for (int s = 0; s < n - 1; ++s) {
      CHECK(b.stations[s].position == a.stations[s].position);
      CHECK(b.stations[s].boresight == a.stations[s].boresight);
    }
  }
}

TEST_CASE("desk scale changes only the tensor size") {
  const Scenario sc = desk_scale(reference_scenario(Duplex::FD));
  CHECK(sc.radio.dims() == Dims{256, 16, 4, 4});
  CHECK(sc.radio.carrier_freq == 4.9e9);
}

// Scenario files

TEST_CASE("shipped scenario files match the built-in reference layouts") {
  for (auto [file, d] : {std::pair{"paper_fd.toml", Duplex::FD}, std::pair{"paper_hd.toml", Duplex::HD}}) {
    const Scenario sc = load_scenario(std::string(NCS_SCENARIO_DIR) + "/" + file);
    const Scenario ref = reference_scenario(d);
    REQUIRE(sc.num_bs() == ref.num_bs());
    CHECK(sc.num_tx == ref.num_tx);
    CHECK(sc.duplex == d);
    CHECK(sc.radio.dims() == ref.radio.dims());
    CHECK(sc.radio.tx_power_dbm == ref.radio.tx_power_dbm);
    for (int b = 0; b < sc.num_bs(); ++b) {
      CHECK((sc.stations[b].position - ref.stations[b].position).norm() == 0.0);
      CHECK((sc.stations[b].boresight - ref.stations[b].boresight).norm() < 1e-15);
    }
    REQUIRE(sc.num_targets() == 3);
    for (int k = 0; k < 3; ++k) {
      CHECK(sc.targets[k].position == ref.targets[k].position);
      CHECK(sc.targets[k].velocity == ref.targets[k].velocity);
    }
  }
}

TEST_CASE("scenario text round-trips") {
  Scenario sc = reference_scenario(Duplex::HD);
  sc.radio.tx_power_dbm = {20, 25.5, 30};
  sc.pair_rcs = {1, 2, 3, 4, 5, 6};
  const Scenario back = parse_scenario(format_scenario(sc));
  CHECK(format_scenario(back) == format_scenario(sc));
  CHECK(back.pair_rcs == sc.pair_rcs);
  CHECK(back.radio.tx_power_dbm == sc.radio.tx_power_dbm);
}

TEST_CASE("scenario parse errors name the line") {
  const std::string head = "duplex = \"FD\"\nnum_tx = 1\n";
  const std::string station = "[[station]]\nposition = [0, 0, 0]\nboresight = [0, 1, 0]\n";
  auto message = [](const std::string& text) {
    try {
      parse_scenario(text);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(message(head + "[radio]\nbogus = 1\n" + station).find("line 4") != std::string::npos);
  CHECK(message(head + "[radio]\ncarrier_freq = abc\n" + station).find("line 4") != std::string::npos);
  CHECK(message(head + "[antenna]\n").find("unknown table") != std::string::npos);
  CHECK(message("duplex = \"XD\"\nnum_tx = 1\n" + station).find("FD or HD") != std::string::npos);
  CHECK(message(head).find("no [[station]]") != std::string::npos);
  CHECK(message(head + "[[station]]\nposition = [0, 0]\nboresight = [0, 1, 0]\n").find("3 components") !=
        std::string::npos);
  CHECK(message(head + station).empty());
}

TEST_CASE("comments, underscores and scalar power parse") {
  const Scenario sc = parse_scenario(
      "duplex = \"FD\"  # full duplex\nnum_tx = 1\n[radio]\ncarrier_freq = 4_900e6\ntx_power_dbm = 20\n"
      "[[station]]\nposition = [0, 0, 10]\nboresight = [0, 1, 0]\n[[target]]\nposition = [0, 50, 0]\n");
  CHECK(sc.radio.carrier_freq == 4.9e9);
  CHECK(sc.radio.tx_power_dbm == std::vector<double>{20});
  CHECK(sc.targets[0].velocity == Vec3::Zero());
}
