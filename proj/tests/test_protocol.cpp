// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>
#include <sstream>

#include "ncs/protocol.hpp"

using namespace ncs;

namespace {

// Guard and gap inequalities written out directly.
bool satisfies_gaps(const TimingPlan& p) {
  const double c = kSpeedOfLight;
  const double t_int = p.d_int / c, t_min = p.d_min / c;
  const double eps = 1e-12 * std::max({t_int, t_min, p.t_gp, 1e-30});
  bool ok = p.t_gp >= 2 * p.cell_radius / c - eps;
  ok = ok && p.s1 >= -eps && p.s2 >= -eps && p.s3 >= -eps;
  if (p.d_int <= p.d_min) ok = ok && t_int - eps <= p.s2 && p.s2 <= t_min + eps;
  else ok = ok && p.s3 >= t_int - t_min - eps;
  return ok && t_int - eps <= p.s1 && p.s1 <= p.s3 + t_min + eps;
}

}  // namespace

TEST_CASE("guard period for a 500 m cell") {
  const TimingPlan p = plan_timing(500, 100, 300);
  CHECK(p.t_gp * 1e6 == doctest::Approx(3.3356).epsilon(1e-4));
  CHECK(p.t_gp >= 3.336e-6 - 1e-9);
}

TEST_CASE("no interferer leaves the whole receive window") {
  const TimingPlan p = plan_timing(500, 0, 300);
  CHECK(p.s2_lo == 0.0);
  CHECK(p.s2_hi == doctest::Approx(300 / kSpeedOfLight));
  CHECK(p.s3 == 0.0);
  CHECK(p.binding == TimingBinding::ReceiveAdjustment);
  CHECK(satisfies_gaps(p));
}

TEST_CASE("far interferer needs a transmit delay") {
  const TimingPlan p = plan_timing(500, 600, 300);
  CHECK(p.s3 == doctest::Approx(300 / kSpeedOfLight).epsilon(1e-14));
  CHECK(p.binding == TimingBinding::TransmitDelay);
  CHECK(satisfies_gaps(p));

  const TimingPlan q = plan_timing(500, 800, 300);
  CHECK(q.s3 == doctest::Approx(500 / kSpeedOfLight).epsilon(1e-14));
}

TEST_CASE("random distance triples satisfy every gap inequality") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 3000);
  for (int t = 0; t < 10000; ++t) {
    const TimingPlan p = plan_timing(u(rng), u(rng), u(rng));
    REQUIRE(satisfies_gaps(p));
    REQUIRE(timing_holds(p));
  }
}

TEST_CASE("a broken plan fails the re-check") {
  TimingPlan p = plan_timing(500, 800, 300);
  p.s3 = 0;
  CHECK_FALSE(timing_holds(p));
  CHECK_FALSE(satisfies_gaps(p));
  TimingPlan q = plan_timing(500, 100, 300);
  q.t_gp = 0;
  CHECK_FALSE(timing_holds(q));
}

TEST_CASE("negative distances are rejected") {
  CHECK_THROWS_AS(plan_timing(-1, 0, 0), OutOfRange);
  CHECK_THROWS_AS(plan_timing(1, -1, 0), OutOfRange);
}

TEST_CASE("timing report formats") {
  const TimingPlan p = plan_timing(500, 800, 300);
  std::ostringstream text, csv;
  write_timing_text(text, p);
  write_timing_csv(csv, p);
  CHECK(text.str().find("transmit_delay") != std::string::npos);
  CHECK(csv.str().rfind("cell_radius,d_int,d_min,t_gp,s1,s2,s2_lo,s2_hi,s3,binding\n", 0) == 0);
}

TEST_CASE("cyclic shift decoding") {
  const double t_sym = 33.33e-6;
  const ShiftAssignment a = make_shift_assignment(3, t_sym);
  CHECK(decode_shift(0.6 * t_sym, a).shift == 2);
  CHECK(a.tx_for_shift(2) == 2);
  CHECK(a.tx_for_shift(3) == -1);

  const DecodedDelay zero = decode_shift(0.0, a);
  CHECK(zero.shift == 0);
  CHECK(zero.base_delay == 0.0);

  const DecodedDelay last = decode_shift(0.999 * t_sym, a);
  CHECK(last.shift == 3);
  CHECK(last.base_delay == doctest::Approx(0.249 * t_sym).epsilon(1e-12));

  CHECK_THROWS_AS(decode_shift(t_sym, a), OutOfRange);
  CHECK_THROWS_AS(decode_shift(-1e-12, a), OutOfRange);
}

TEST_CASE("windows are half-open") {
  const ShiftAssignment a = make_shift_assignment(4, 1.0);
  for (int s = 1; s < 4; ++s) {
    CHECK(decode_shift(a.window(s).first, a).shift == s);
    CHECK(decode_shift(std::nextafter(a.window(s).first, 0.0), a).shift == s - 1);
  }
}

TEST_CASE("decode inverts encode") {
  std::mt19937_64 rng(2);
  for (int shifts : {2, 4, 7}) {
    const ShiftAssignment a = make_shift_assignment(2, 66.67e-6, shifts);
    std::uniform_real_distribution<double> base(0, a.width());
    for (int t = 0; t < 2000; ++t) {
      const int s = static_cast<int>(rng() % shifts);
      const double b = base(rng);
      const DecodedDelay d = decode_shift(encode_delay(b, s, a), a);
      REQUIRE(d.shift == s);
      CHECK(std::abs(d.base_delay - b) <= 1e-15 * a.t_sym);
    }
  }
}

TEST_CASE("shift assignment limits") {
  CHECK_THROWS_AS(make_shift_assignment(5, 1.0, 4), ConfigError);
  CHECK_THROWS_AS(make_shift_assignment(1, 0.0, 4), ConfigError);
}
