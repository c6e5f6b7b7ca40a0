// SPDX-License-Identifier: Apache-2.0
//
// Guard-period timing for sensing and cyclic-shift multiplexing of TX BSs.
//
// Gaps: S1 separates the sensing burst from the following communication,
// S2 keeps downlink interference out of the sensing RX window (and absorbs
// the RX window push-back), S3 delays the TX window when S2 cannot do both.

#ifndef NCS_PROTOCOL_HPP
#define NCS_PROTOCOL_HPP

#include <iosfwd>
#include <vector>

#include "ncs/core.hpp"

namespace ncs {

enum class TimingBinding {
  ReceiveAdjustment,  // d_int <= d_min: S2 alone absorbs the interference delay
  TransmitDelay,      // d_int >  d_min: S3 has to be inserted before the TX window
};

struct TimingPlan {
  double cell_radius = 0;  // m
  double d_int = 0;        // m, farthest interfering BS
  double d_min = 0;        // m, shortest TX-RX propagation distance
  double t_gp = 0;         // s, minimum guard period
  double s1 = 0;
  double s2 = 0;
  double s2_lo = 0;  // admissible S2 window in the adjustment case
  double s2_hi = 0;
  double s3 = 0;
  bool feasible = true;
  TimingBinding binding = TimingBinding::ReceiveAdjustment;
};

// Minimal gaps for the given distances (all >= 0).
TimingPlan plan_timing(double cell_radius, double d_int, double d_min);

// Re-checks the guard-period and gap inequalities; tol is relative to the largest delay.
bool timing_holds(const TimingPlan& plan, double tol = 1e-12);

void write_timing_text(std::ostream& os, const TimingPlan& plan);
void write_timing_csv(std::ostream& os, const TimingPlan& plan);

struct ShiftAssignment {
  int num_shifts = 4;
  double t_sym = 0;            // s
  std::vector<int> tx_shift;   // shift index per TX BS

  double width() const { return t_sym / num_shifts; }
  // Half-open delay window [lo, hi) of a shift.
  std::pair<double, double> window(int shift) const { return {shift * width(), (shift + 1) * width()}; }
  // TX BS using a shift, -1 if unused.
  int tx_for_shift(int shift) const;
};

// TX BS i gets shift i.
ShiftAssignment make_shift_assignment(int num_tx, double t_sym, int num_shifts = 4);

struct DecodedDelay {
  int shift = 0;
  double base_delay = 0;  // s, inside [0, T_sym / num_shifts)
};

// Throws OutOfRange unless 0 <= delay < T_sym.
DecodedDelay decode_shift(double measured_delay, const ShiftAssignment& a);
double encode_delay(double base_delay, int shift, const ShiftAssignment& a);

}  // namespace ncs

#endif  // NCS_PROTOCOL_HPP
