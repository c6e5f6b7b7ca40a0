// SPDX-License-Identifier: Apache-2.0
//
// ncs: command line front end.
//
//   ncs run --config f.toml [--sweep txpower=10:5:40] [--trials 200] [--seed 7]
//           [--pipeline full|ideal_mm|crlb_only|mm_only] [--desk-scale] --out results.csv
//   ncs crlb --config f.toml [--desk-scale] [--out crlb.csv]
//   ncs timing --cell-radius 500 --d-int 800 --d-min 300 [--csv]
//   ncs synth --config f.toml --tx 0 --rx 1 [--seed 7] [--noiseless] --out pair.bin
//   ncs detect --config f.toml [--seed 7] [--noiseless] [--out detections.csv]

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "ncs/adnomp.hpp"
#include "ncs/channel.hpp"
#include "ncs/crlb.hpp"
#include "ncs/harness.hpp"
#include "ncs/protocol.hpp"
#include "ncs/scenario_io.hpp"

namespace {

ncs::Scenario load(const std::string& path, bool desk) {
  ncs::Scenario sc = ncs::load_scenario(path);
  return desk ? ncs::desk_scale(sc) : sc;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path);
  if (!os) throw ncs::ConfigError("cannot write " + path);
  return os;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Networked OFDM sensing: channel synthesis, AD-NOMP, fusion and bounds"};
  app.require_subcommand(1);

  // run
  auto* run = app.add_subcommand("run", "Monte Carlo experiment, results as CSV");
  std::string run_config, run_out, run_sweep, run_pipeline = "full", run_report;
  int run_trials = 200, run_threads = 0, run_mm_pair = 0;
  std::uint64_t run_seed = 7;
  bool run_desk = false, run_quiet = false, run_clean = false;
  run->add_option("--config", run_config, "scenario file")->required()->check(CLI::ExistingFile);
  run->add_option("--sweep", run_sweep, "txpower=a:step:b, nbs=..., ntx=... (grid or comma list)");
  run->add_option("--trials", run_trials, "trials per sweep point")->check(CLI::PositiveNumber);
  run->add_option("--seed", run_seed, "master seed");
  run->add_option("--pipeline", run_pipeline, "full, ideal_mm, crlb_only or mm_only")
      ->check(CLI::IsMember({"full", "ideal_mm", "crlb_only", "mm_only"}));
  run->add_flag("--desk-scale", run_desk, "use 256 x 16 x 4 x 4 tensors");
  run->add_flag("--noiseless", run_clean, "no receiver noise (exactness checks)");
  run->add_option("--threads", run_threads, "worker threads (0: all cores)");
  run->add_option("--mm-pair", run_mm_pair, "pair index reported by the mm_* rows");
  run->add_option("--fusion-report", run_report, "per-trial fusion CSV");
  run->add_flag("--quiet", run_quiet, "do not print the summary table");
  run->add_option("--out", run_out, "results CSV")->required();

  // crlb
  auto* crlb = app.add_subcommand("crlb", "per-target bounds as CSV");
  std::string crlb_config, crlb_out;
  bool crlb_desk = false;
  crlb->add_option("--config", crlb_config, "scenario file")->required()->check(CLI::ExistingFile);
  crlb->add_flag("--desk-scale", crlb_desk, "use 256 x 16 x 4 x 4 tensors");
  crlb->add_option("--out", crlb_out, "CSV file (default: stdout)");

  // timing
  auto* timing = app.add_subcommand("timing", "guard period and gap plan");
  double cell_radius = 0, d_int = 0, d_min = 0;
  bool timing_csv = false;
  timing->add_option("--cell-radius", cell_radius, "m")->required();
  timing->add_option("--d-int", d_int, "distance to the nearest interfering BS, m")->required();
  timing->add_option("--d-min", d_min, "minimum TX-RX BS distance, m")->required();
  timing->add_flag("--csv", timing_csv, "CSV instead of text");

  // synth
  auto* synth = app.add_subcommand("synth", "write one pair's channel tensor");
  std::string synth_config, synth_out;
  int synth_tx = 0, synth_rx = 0;
  std::uint64_t synth_seed = 7;
  bool synth_desk = false, synth_clean = false;
  synth->add_option("--config", synth_config, "scenario file")->required()->check(CLI::ExistingFile);
  synth->add_option("--tx", synth_tx, "TX BS index")->required();
  synth->add_option("--rx", synth_rx, "RX BS index")->required();
  synth->add_option("--seed", synth_seed, "noise seed");
  synth->add_flag("--desk-scale", synth_desk, "use 256 x 16 x 4 x 4 tensors");
  synth->add_flag("--noiseless", synth_clean, "omit receiver noise");
  synth->add_option("--out", synth_out, "tensor file")->required();

  // detect
  auto* det = app.add_subcommand("detect", "synthesize every pair and run AD-NOMP");
  std::string det_config, det_out;
  std::uint64_t det_seed = 7;
  bool det_desk = false, det_clean = false, det_threshold = false;
  det->add_option("--config", det_config, "scenario file")->required()->check(CLI::ExistingFile);
  det->add_option("--seed", det_seed, "master seed");
  det->add_flag("--desk-scale", det_desk, "use 256 x 16 x 4 x 4 tensors");
  det->add_flag("--noiseless", det_clean, "omit receiver noise");
  det->add_flag("--threshold", det_threshold, "stop on residual power instead of the true target count");
  det->add_option("--out", det_out, "CSV file (default: stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      ncs::ExperimentConfig cfg;
      cfg.scenario = ncs::load_scenario(run_config);
      cfg.pipeline = ncs::parse_pipeline(run_pipeline);
      if (!run_sweep.empty()) cfg.sweep = ncs::parse_sweep(run_sweep);
      cfg.trials = run_trials;
      cfg.seed = run_seed;
      cfg.desk_scale = run_desk;
      cfg.noiseless = run_clean;
      cfg.threads = run_threads;
      cfg.mm_pair = run_mm_pair;
      std::ofstream report;
      if (!run_report.empty()) {
        report = open_out(run_report);
        cfg.fusion_report = &report;
      }
      const auto rows = ncs::run_experiment(cfg);
      std::ofstream os = open_out(run_out);
      ncs::write_results_csv(os, rows);
      if (!run_quiet) ncs::write_results_table(std::cout, rows);
    } else if (*crlb) {
      const ncs::Scenario sc = load(crlb_config, crlb_desk);
      if (crlb_out.empty()) {
        ncs::write_crlb_csv(std::cout, sc);
      } else {
        std::ofstream os = open_out(crlb_out);
        ncs::write_crlb_csv(os, sc);
      }
    } else if (*timing) {
      const ncs::TimingPlan plan = ncs::plan_timing(cell_radius, d_int, d_min);
      if (timing_csv) ncs::write_timing_csv(std::cout, plan);
      else ncs::write_timing_text(std::cout, plan);
    } else if (*synth) {
      const ncs::Scenario sc = load(synth_config, synth_desk);
      ncs::SynthesisOptions opts;
      opts.noise = !synth_clean;
      const ncs::ChannelTensor t = ncs::synthesize_pair(sc, synth_tx, synth_rx, synth_seed, opts);
      ncs::write_tensor(synth_out, t);
      std::cout << "pair " << t.pair << ": " << t.shape[0] << " x " << t.shape[1] << " x " << t.shape[2] << " x "
                << t.shape[3] << ", sigma2 " << t.sigma2 << "\n";
    } else if (*det) {
      const ncs::Scenario sc = load(det_config, det_desk);
      ncs::SynthesisOptions opts;
      opts.noise = !det_clean;
      std::vector<ncs::DetectionList> per_pair;
      for (int l = 0; l < sc.num_pairs(); ++l) {
        const auto [i, j] = sc.pair_of(l);
        const ncs::ChannelTensor t = ncs::synthesize_pair(sc, i, j, ncs::substream_seed(det_seed, 0, 0, 1 + l), opts);
        ncs::StopRule stop = ncs::KnownCount{sc.num_targets()};
        if (det_threshold) stop = ncs::PowerThreshold{ncs::default_threshold(t.sigma2 > 0 ? t.sigma2 : 1e-30, t.size())};
        per_pair.push_back(ncs::detect(t, stop));
        for (const auto& w : per_pair.back().warnings) std::cerr << "pair " << l << ": " << w << "\n";
      }
      if (det_out.empty()) {
        ncs::write_detections_csv(std::cout, per_pair);
      } else {
        std::ofstream os = open_out(det_out);
        ncs::write_detections_csv(os, per_pair);
      }
    }
  } catch (const ncs::ExperimentAborted& e) {
    std::cerr << "ncs: experiment aborted: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "ncs: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
