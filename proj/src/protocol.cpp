// SPDX-License-Identifier: Apache-2.0

#include "ncs/protocol.hpp"

#include <algorithm>
#include <cstdio>
#include <ostream>

namespace ncs {

TimingPlan plan_timing(double cell_radius, double d_int, double d_min) {
  if (cell_radius < 0 || d_int < 0 || d_min < 0) throw OutOfRange("timing distances must be non-negative");
  TimingPlan p;
  p.cell_radius = cell_radius;
  p.d_int = d_int;
  p.d_min = d_min;
  p.t_gp = 2.0 * cell_radius / kSpeedOfLight;
  const double t_int = d_int / kSpeedOfLight;
  const double t_min = d_min / kSpeedOfLight;
  p.s1 = t_int;
  if (d_int <= d_min) {
    p.binding = TimingBinding::ReceiveAdjustment;
    p.s2_lo = t_int;
    p.s2_hi = t_min;
    p.s2 = t_int;
    p.s3 = 0.0;
  } else {
    p.binding = TimingBinding::TransmitDelay;
    p.s2_lo = p.s2_hi = t_min;
    p.s2 = t_min;
    p.s3 = t_int - t_min;
  }
  return p;
}

bool timing_holds(const TimingPlan& p, double tol) {
  const double t_int = p.d_int / kSpeedOfLight;
  const double t_min = p.d_min / kSpeedOfLight;
  const double eps = tol * std::max({t_int, t_min, p.t_gp, 1e-30});
  if (p.s1 < -eps || p.s2 < -eps || p.s3 < -eps) return false;
  if (p.t_gp < 2.0 * p.cell_radius / kSpeedOfLight - eps) return false;
  if (p.d_int <= p.d_min) {
    if (p.s3 > eps) return false;
    if (p.s2 < t_int - eps || p.s2 > t_min + eps) return false;
  } else if (p.s3 < t_int - t_min - eps) {
    return false;
  }
  return p.s1 >= t_int - eps && p.s1 <= p.s3 + t_min + eps;
}

namespace {

const char* binding_name(TimingBinding b) {
  return b == TimingBinding::ReceiveAdjustment ? "receive_adjustment" : "transmit_delay";
}

}  // namespace

void write_timing_text(std::ostream& os, const TimingPlan& p) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "cell radius      %.3f m\n"
                "interferer dist  %.3f m\n"
                "min TX-RX dist   %.3f m\n"
                "guard period  >= %.6f us\n"
                "S1               %.6f us\n"
                "S2               %.6f us  (window %.6f .. %.6f us)\n"
                "S3               %.6f us\n"
                "binding          %s\n",
                p.cell_radius, p.d_int, p.d_min, p.t_gp * 1e6, p.s1 * 1e6, p.s2 * 1e6, p.s2_lo * 1e6, p.s2_hi * 1e6,
                p.s3 * 1e6, binding_name(p.binding));
  os << buf;
}

void write_timing_csv(std::ostream& os, const TimingPlan& p) {
  char buf[512];
  os << "cell_radius,d_int,d_min,t_gp,s1,s2,s2_lo,s2_hi,s3,binding\n";
  std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f,%.12e,%.12e,%.12e,%.12e,%.12e,%.12e,%s\n", p.cell_radius, p.d_int,
                p.d_min, p.t_gp, p.s1, p.s2, p.s2_lo, p.s2_hi, p.s3, binding_name(p.binding));
  os << buf;
}

int ShiftAssignment::tx_for_shift(int shift) const {
  for (std::size_t i = 0; i < tx_shift.size(); ++i)
    if (tx_shift[i] == shift) return static_cast<int>(i);
  return -1;
}

ShiftAssignment make_shift_assignment(int num_tx, double t_sym, int num_shifts) {
  if (num_shifts < 1) throw ConfigError("need at least one cyclic shift");
  if (num_tx > num_shifts) throw ConfigError("more TX BSs than cyclic shifts");
  if (!(t_sym > 0)) throw ConfigError("symbol length must be positive");
  ShiftAssignment a;
  a.num_shifts = num_shifts;
  a.t_sym = t_sym;
  for (int i = 0; i < num_tx; ++i) a.tx_shift.push_back(i);
  return a;
}

DecodedDelay decode_shift(double delay, const ShiftAssignment& a) {
  if (!(delay >= 0.0 && delay < a.t_sym)) throw OutOfRange("delay outside [0, T_sym)");
  const double w = a.width();
  int s = static_cast<int>(std::floor(delay / w));
  // Guard against the quotient rounding across a window edge.
  if (s > 0 && delay < s * w) --s;
  if (s + 1 < a.num_shifts && delay >= (s + 1) * w) ++s;
  s = std::clamp(s, 0, a.num_shifts - 1);
  return {s, delay - s * w};
}

double encode_delay(double base_delay, int shift, const ShiftAssignment& a) {
  if (shift < 0 || shift >= a.num_shifts) throw OutOfRange("shift index out of range");
  if (!(base_delay >= 0.0 && base_delay < a.width())) throw OutOfRange("base delay outside one shift window");
  return base_delay + shift * a.width();
}

}  // namespace ncs
