// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>
#include <sstream>

#include "ncs/crlb.hpp"
#include "ncs/fusion.hpp"

using namespace ncs;

TEST_CASE("FIM entries for a small tensor") {
  const Mat6 J = fim_psi(1.0, 2.0, Dims{4, 4, 4, 4});
  CHECK(J(0, 0) == doctest::Approx(256));
  CHECK(J(1, 1) == doctest::Approx(256));
  CHECK((J - J.transpose()).cwiseAbs().maxCoeff() == 0.0);
  const Mat6 K = fim_psi(0.37, 1.9e-3, Dims{7, 3, 5, 2});
  CHECK((K - K.transpose()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("closed-form frequency bounds") {
  const Vec4 c = crlb_mm(1.0, 2.0, Dims{4, 4, 4, 4});
  const double expect = 6.0 / (2 * kPi * kPi * 256 * 15);
  for (int a = 0; a < 4; ++a) CHECK(c(a) == doctest::Approx(expect).epsilon(1e-14));
  CHECK(expect == doctest::Approx(7.916e-5).epsilon(1e-3));

  const Vec4 d = crlb_mm(2.0, 2.0, Dims{4, 4, 4, 4});
  CHECK((d - c / 4).cwiseAbs().maxCoeff() < 1e-18);

  CHECK_THROWS_AS(crlb_mm(1.0, 2.0, Dims{1, 4, 4, 4}), UnestimableDimension);
}

TEST_CASE("numeric inverse matches the closed form") {
  const DecouplingCheck a = verify_decoupled_bounds(1.0, 2.0, Dims{4, 4, 4, 4});
  CHECK(a.max_rel_deviation <= 1e-9);
  CHECK(a.offdiag_rel <= 1e-9);

  const DecouplingCheck b = verify_decoupled_bounds(1.0, 2.0, Dims{2, 2, 2, 2});
  CHECK(b.max_rel_deviation <= 1e-9);
  CHECK(b.offdiag_rel <= 1e-9);

  const Scenario sc = desk_scale(reference_scenario(Duplex::FD));
  const LinkBudget lb = amplitude_and_noise(sc, 0, 1, 0);
  const DecouplingCheck c = verify_decoupled_bounds(lb.amplitude, lb.noise_variance, sc.radio.dims());
  CHECK(c.max_rel_deviation <= 1e-6);
  CHECK(c.offdiag_rel <= 1e-6);
}

TEST_CASE("closed form holds over random draws") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> dim(2, 64);
  std::uniform_real_distribution<double> logu(-3, 3);
  double worst = 0, worst_off = 0;
  for (int t = 0; t < 200; ++t) {
    const Dims d{dim(rng), dim(rng), dim(rng), dim(rng)};
    const DecouplingCheck p = verify_decoupled_bounds(std::pow(10, logu(rng)), std::pow(10, logu(rng)), d);
    worst = std::max(worst, p.max_rel_deviation);
    worst_off = std::max(worst_off, p.offdiag_rel);
  }
  CHECK(worst <= 1e-9);
  CHECK(worst_off <= 1e-9);
}

TEST_CASE("unit scaling to physical measurements") {
  const RadioConfig radio;
  const Vec4 s = mm_unit_scaling(Vec4::Ones(), radio);
  const double r = kSpeedOfLight / 30e3;
  CHECK(r == doctest::Approx(9993.1).epsilon(1e-5));
  CHECK(s(0) == doctest::Approx(r * r).epsilon(1e-14));
  CHECK(s(2) == 4.0);
  CHECK(s(3) == 4.0);
  CHECK(mm_unit_scaling(Vec4::Zero(), radio) == Vec4::Zero());
}

TEST_CASE("unit scaling agrees with perturbing the frequencies") {
  const RadioConfig radio;
  const Vec4 f0(0.93, 0.12, 0.2, -0.31);
  const Vec4 var(1e-10, 1e-8, 1e-6, 1e-6);
  const Vec4 m0 = freq_to_meas(f0, radio);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n;
  Vec4 acc = Vec4::Zero();
  const int trials = 20000;
  for (int t = 0; t < trials; ++t) {
    Vec4 f = f0;
    for (int a = 0; a < 4; ++a) f(a) += std::sqrt(var(a)) * n(rng);
    acc += (freq_to_meas(f, radio) - m0).cwiseAbs2();
  }
  const Vec4 expect = mm_unit_scaling(var, radio);
  for (int a = 0; a < 4; ++a) CHECK(acc(a) / trials == doctest::Approx(expect(a)).epsilon(0.05));
}

namespace {

Eigen::MatrixXd numeric_jacobian(Scenario sc, int k, double h) {
  const int L = sc.num_pairs();
  Eigen::MatrixXd out(4 * L, 6);
  const Target base = sc.targets[k];
  for (int c = 0; c < 6; ++c) {
    Vec4 plus[64], minus[64];
    for (int s : {1, -1}) {
      sc.targets[k] = base;
      (c < 3 ? sc.targets[k].position(c) : sc.targets[k].velocity(c - 3)) += s * h;
      for (int l = 0; l < L; ++l) {
        const auto [i, j] = sc.pair_of(l);
        (s > 0 ? plus : minus)[l] = true_frequencies(sc, i, j, k, WrapMode::Permissive);
      }
    }
    for (int l = 0; l < L; ++l)
      for (int a = 0; a < 4; ++a) out(a * L + l, c) = (plus[l](a) - minus[l](a)) / (2 * h);
  }
  return out;
}

Scenario random_scenario(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> xy(0, 600), z(5, 80), v(-8, 8), bore(-1, 1);
  std::uniform_int_distribution<int> nbs(3, 6);
  const int n = nbs(rng);
  std::vector<Vec3> pos, dirs;
  for (int b = 0; b < n; ++b) {
    pos.emplace_back(xy(rng), xy(rng), z(rng));
    dirs.emplace_back(bore(rng), bore(rng), -0.1);
  }
  const Duplex d = rng() % 2 ? Duplex::FD : Duplex::HD;
  const int tx = 1 + static_cast<int>(rng() % (d == Duplex::FD ? n : n - 1));
  std::vector<Target> targets{{{xy(rng), xy(rng), z(rng) - 5}, {v(rng), v(rng), v(rng) / 4}}};
  return make_scenario(d, pos, dirs, targets, RadioConfig{}, tx);
}

}  // namespace

TEST_CASE("jacobian matches central differences") {
  std::mt19937_64 rng(77);
  for (int t = 0; t < 30; ++t) {
    const Scenario sc = random_scenario(rng);
    const int L = sc.num_pairs();
    const Eigen::MatrixXd J = jacobian(sc, 0);
    const Eigen::MatrixXd N = numeric_jacobian(sc, 0, 1e-3);
    for (int a = 0; a < 4; ++a) {
      const double scale = J.middleRows(a * L, L).cwiseAbs().maxCoeff();
      CHECK((J - N).middleRows(a * L, L).cwiseAbs().maxCoeff() <= 1e-6 * scale);
    }
  }
}

TEST_CASE("range rows carry no velocity terms") {
  const Scenario sc = reference_scenario(Duplex::FD);
  const int L = sc.num_pairs();
  const Eigen::MatrixXd J = jacobian(sc, 1);
  CHECK(J.topRightCorner(L, 3).cwiseAbs().maxCoeff() == 0.0);
  CHECK(J.bottomRightCorner(2 * L, 3).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("Doppler rows of a stationary target by hand") {
  Scenario sc = reference_scenario(Duplex::FD);
  sc.targets[0].velocity = Vec3::Zero();
  const int L = sc.num_pairs();
  const Eigen::MatrixXd J = jacobian(sc, 0);
  const double s = sc.radio.carrier_freq * sc.radio.pulse_interval / kSpeedOfLight;
  const int l = sc.pair_index(1, 2);
  const Vec3 t = sc.targets[0].position;
  const Vec3 rho_i = (t - sc.stations[1].position).normalized();
  const Vec3 rho_j = (t - sc.stations[2].position).normalized();
  // Position part vanishes (no velocity to project), velocity part is the direction sum.
  CHECK(J.block<1, 3>(L + l, 0).norm() == 0.0);
  CHECK((J.block<1, 3>(L + l, 3).transpose() - s * (rho_i + rho_j)).norm() < 1e-15);
}

TEST_CASE("reference FD bound: z position is the weakest axis") {
  const Scenario sc = reference_scenario(Duplex::FD);
  for (int k = 0; k < sc.num_targets(); ++k) {
    const StateCrlb c = crlb_state(sc, k);
    REQUIRE(c.covariance.rows() == 6);
    CHECK(c.covariance.isApprox(c.covariance.transpose(), 1e-12));
    CHECK(Eigen::LLT<Eigen::MatrixXd>(c.covariance).info() == Eigen::Success);
    CHECK(c.position_variance(2) > c.position_variance(0));
    CHECK(c.position_variance(2) > c.position_variance(1));
  }
}

TEST_CASE("adding a station never loosens the bound") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> xy(0, 500), z(10, 60), bore(-1, 1);
  for (Duplex d : {Duplex::FD, Duplex::HD}) {
    const Scenario sc = reference_scenario(d);
    for (int t = 0; t < 10; ++t) {
      std::vector<Vec3> pos, dirs;
      for (const auto& bs : sc.stations) {
        pos.push_back(bs.position);
        dirs.push_back(bs.boresight);
      }
      pos.emplace_back(xy(rng), xy(rng), z(rng));
      dirs.emplace_back(bore(rng), bore(rng), -0.1);
      const Scenario more = make_scenario(d, pos, dirs, sc.targets, sc.radio, sc.num_tx);
      for (int k = 0; k < sc.num_targets(); ++k) {
        const Eigen::VectorXd before = crlb_state(sc, k).covariance.diagonal();
        const Eigen::VectorXd after = crlb_state(more, k).covariance.diagonal();
        for (int a = 0; a < 6; ++a) CHECK(after(a) <= before(a) * (1 + 1e-9));
      }
    }
  }
}

TEST_CASE("minimum station counts for a full velocity bound") {
  const Scenario fd = reference_scenario(Duplex::FD);
  CHECK_THROWS_AS(crlb_state(with_layout(fd, 2, 1), 0), SingularGeometry);
  CHECK_NOTHROW(crlb_state(with_layout(fd, 3, 1), 0));
  const Scenario hd = reference_scenario(Duplex::HD);
  CHECK_THROWS_AS(crlb_state(with_layout(hd, 3, 1), 0), SingularGeometry);
  CHECK_NOTHROW(crlb_state(with_layout(hd, 4, 1), 0));
  // Position alone is still bounded with two stations.
  CHECK_NOTHROW(crlb_state(with_layout(fd, 2, 1), 0, CrlbMode::PositionOnly));
}

TEST_CASE("bound is translation invariant and scales with power") {
  const Scenario sc = reference_scenario(Duplex::HD);
  Scenario moved = sc;
  const Vec3 shift(1234.5, -321.0, 7.0);
  for (auto& bs : moved.stations) bs.position += shift;
  for (auto& t : moved.targets) t.position += shift;
  Scenario loud = sc;
  loud.radio.tx_power_dbm = {sc.radio.tx_power_dbm[0] + 10 * std::log10(2.0)};
  for (int k = 0; k < sc.num_targets(); ++k) {
    const Eigen::MatrixXd c = crlb_state(sc, k).covariance;
    CHECK(crlb_state(moved, k).covariance.isApprox(c, 1e-8));
    CHECK(crlb_state(loud, k).covariance.isApprox(c / 2, 1e-10));
  }
}

TEST_CASE("bound CSV lists position and velocity per target") {
  std::ostringstream os;
  write_crlb_csv(os, reference_scenario(Duplex::FD));
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  CHECK(line == "target,axis,quantity,root_crlb");
  int rows = 0;
  while (std::getline(is, line)) ++rows;
  CHECK(rows == 18);
}
