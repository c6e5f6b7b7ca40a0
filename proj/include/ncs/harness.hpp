// SPDX-License-Identifier: Apache-2.0
//
// Monte Carlo driver: sweeps a scenario parameter, runs a pipeline per trial
// and reports RMSE against root-CRLB.
//
// Pipelines
//   full       synthesize every pair -> detect (known K) -> associate -> fuse
//   ideal_mm   truth + Gaussian errors at the MM CRLB -> fuse
//   crlb_only  bounds only (rmse = nan, trials = 0)
//   mm_only    synthesize one pair -> detect; per-measurement RMSE only
//
// Every trial draws from its own generator seeded by
// splitmix64(master, sweep index, trial, stream), so results do not depend on
// the number of worker threads or their scheduling.

#ifndef NCS_HARNESS_HPP
#define NCS_HARNESS_HPP

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ncs/adnomp.hpp"
#include "ncs/fusion.hpp"
#include "ncs/scenario.hpp"

namespace ncs {

enum class Pipeline { Full, IdealMm, CrlbOnly, MmOnly };
enum class SweepVariable { TxPower, NumBs, NumTx };

Pipeline parse_pipeline(std::string_view name);
const char* pipeline_name(Pipeline p);

struct Sweep {
  SweepVariable variable = SweepVariable::TxPower;
  std::vector<double> values;
};

// "txpower=10:5:40", "nbs=2:1:10", "ntx=1,2,4" (start:step:stop inclusive, or a list).
Sweep parse_sweep(std::string_view spec);

// The scenario with one sweep variable set (N_BS and I rebuild the layout).
Scenario apply_sweep(const Scenario& base, SweepVariable variable, double value);

class ExperimentAborted : public NcsError {
 public:
  using NcsError::NcsError;
};

struct ExperimentConfig {
  Scenario scenario;
  Pipeline pipeline = Pipeline::Full;
  std::optional<Sweep> sweep;  // none: a single point at sweep value 0
  int trials = 200;
  std::uint64_t seed = 7;
  bool desk_scale = false;
  bool noiseless = false;      // no receiver noise; ideal_mm uses exact measurements
  int threads = 0;             // 0: hardware concurrency
  int mm_pair = 0;             // pair reported by the mm_* quantities
  double max_failure_fraction = 0.2;
  NompOptions nomp;
  AssociationOptions association;
  FusionOptions fusion;
  double match_gate = 50.0;    // m, fused estimate to true target
  std::ostream* fusion_report = nullptr;  // per-trial rows (full, ideal_mm)
};

struct ResultRow {
  double sweep = 0;
  int target = 0;
  std::string quantity;  // mm_range, mm_rate, mm_cos_alpha, mm_cos_beta, pos_x..pos_3d, vel_x..vel_3d
  double rmse = 0;
  double root_crlb = 0;
  double ratio = 0;
  int trials = 0;
  int failures = 0;
};

// Counter-based seed derivation.
std::uint64_t substream_seed(std::uint64_t master, std::uint64_t sweep, std::uint64_t trial, std::uint64_t stream);

// Throws ExperimentAborted when more than max_failure_fraction of a sweep point's trials fail.
std::vector<ResultRow> run_experiment(const ExperimentConfig& config);

// Columns: sweep,target,quantity,rmse,root_crlb,ratio,trials,failures
void write_results_csv(std::ostream& os, const std::vector<ResultRow>& rows);
std::vector<ResultRow> parse_results_csv(std::istream& is);
void write_results_table(std::ostream& os, const std::vector<ResultRow>& rows);

}  // namespace ncs

#endif  // NCS_HARNESS_HPP
