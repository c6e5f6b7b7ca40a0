// SPDX-License-Identifier: Apache-2.0

#include "ncs/harness.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>
#include <thread>

#include "ncs/channel.hpp"
#include "ncs/crlb.hpp"

namespace ncs {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

const char* const kMmNames[4] = {"mm_range", "mm_rate", "mm_cos_alpha", "mm_cos_beta"};
const char* const kPosNames[5] = {"pos_x", "pos_y", "pos_z", "pos_2d", "pos_3d"};
const char* const kVelNames[5] = {"vel_x", "vel_y", "vel_z", "vel_2d", "vel_3d"};

std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double to_double(std::string_view s, const std::string& what) {
  double v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw ConfigError("bad number '" + std::string(s) + "' in " + what);
  return v;
}

}  // namespace

std::uint64_t substream_seed(std::uint64_t master, std::uint64_t sweep, std::uint64_t trial, std::uint64_t stream) {
  return splitmix64(splitmix64(splitmix64(splitmix64(master) ^ sweep) ^ trial) ^ stream);
}

Pipeline parse_pipeline(std::string_view name) {
  if (name == "full") return Pipeline::Full;
  if (name == "ideal_mm") return Pipeline::IdealMm;
  if (name == "crlb_only") return Pipeline::CrlbOnly;
  if (name == "mm_only") return Pipeline::MmOnly;
  throw ConfigError("unknown pipeline '" + std::string(name) + "'");
}

const char* pipeline_name(Pipeline p) {
  switch (p) {
    case Pipeline::Full: return "full";
    case Pipeline::IdealMm: return "ideal_mm";
    case Pipeline::CrlbOnly: return "crlb_only";
    case Pipeline::MmOnly: return "mm_only";
  }
  return "?";
}

Sweep parse_sweep(std::string_view spec) {
  const auto eq = spec.find('=');
  if (eq == std::string_view::npos) throw ConfigError("sweep must look like name=start:step:stop");
  const std::string_view name = spec.substr(0, eq);
  const std::string_view grid = spec.substr(eq + 1);
  Sweep s;
  if (name == "txpower") s.variable = SweepVariable::TxPower;
  else if (name == "nbs") s.variable = SweepVariable::NumBs;
  else if (name == "ntx") s.variable = SweepVariable::NumTx;
  else throw ConfigError("unknown sweep variable '" + std::string(name) + "' (txpower, nbs, ntx)");
  const std::string what = "sweep '" + std::string(spec) + "'";
  if (grid.find(':') != std::string_view::npos) {
    const auto c1 = grid.find(':');
    const auto c2 = grid.find(':', c1 + 1);
    if (c2 == std::string_view::npos) throw ConfigError(what + " needs start:step:stop");
    const double start = to_double(grid.substr(0, c1), what);
    const double step = to_double(grid.substr(c1 + 1, c2 - c1 - 1), what);
    const double stop = to_double(grid.substr(c2 + 1), what);
    if (!(step > 0) || stop < start) throw ConfigError(what + " needs step > 0 and stop >= start");
    const int n = static_cast<int>(std::floor((stop - start) / step + 1e-9)) + 1;
    for (int k = 0; k < n; ++k) s.values.push_back(start + k * step);
  } else {
    std::string_view rest = grid;
    while (!rest.empty()) {
      const auto comma = rest.find(',');
      s.values.push_back(to_double(rest.substr(0, comma), what));
      if (comma == std::string_view::npos) break;
      rest = rest.substr(comma + 1);
    }
  }
  if (s.values.empty()) throw ConfigError(what + " is empty");
  return s;
}

Scenario apply_sweep(const Scenario& base, SweepVariable variable, double value) {
  const int n = static_cast<int>(std::lround(value));
  switch (variable) {
    case SweepVariable::TxPower: {
      Scenario sc = base;
      sc.radio.tx_power_dbm = {value};
      return sc;
    }
    case SweepVariable::NumBs:
      return with_layout(base, n, std::min(base.num_tx, base.duplex == Duplex::HD ? n - 1 : n));
    case SweepVariable::NumTx:
      return with_layout(base, base.num_bs(), n);
  }
  return base;
}

namespace {

struct TrialOutcome {
  bool failed = false;
  std::string error;
  std::vector<Vec4> mm_error;                  // per target
  std::vector<Eigen::Matrix<double, 6, 1>> state_error;  // per target
  std::vector<StateEstimate> estimates;        // per target, for the report
};

// Greedy nearest matching of detections to true frequencies of one pair.
std::vector<Vec4> mm_errors(const Scenario& sc, int pair, const DetectionList& det) {
  const auto [i, j] = sc.pair_of(pair);
  const int K = sc.num_targets();
  const Dims dims = sc.radio.dims();
  std::vector<Vec4> truth(K);
  for (int k = 0; k < K; ++k) truth[k] = true_frequencies(sc, i, j, k, WrapMode::Permissive);
  struct Cand {
    double cost;
    int k;
    int c;
  };
  auto wrapped = [&](const Vec4& est, const Vec4& tru) {
    Vec4 d;
    for (int a = 0; a < 4; ++a) d(a) = wrap_unit(est(a) - tru(a), -0.5);
    return d;
  };
  std::vector<Cand> cand;
  for (int k = 0; k < K; ++k)
    for (int c = 0; c < static_cast<int>(det.components.size()); ++c) {
      const Vec4 d = wrapped(det.components[c].freqs.head<4>(), truth[k]);
      double cost = 0;
      for (int a = 0; a < 4; ++a) cost += std::pow(d(a) * dims[a], 2);
      cand.push_back({cost, k, c});
    }
  std::stable_sort(cand.begin(), cand.end(), [](const Cand& a, const Cand& b) { return a.cost < b.cost; });
  std::vector<int> match(K, -1);
  std::vector<bool> used(det.components.size(), false);
  for (const auto& cd : cand) {
    if (match[cd.k] >= 0 || used[cd.c]) continue;
    match[cd.k] = cd.c;
    used[cd.c] = true;
  }
  std::vector<Vec4> out(K);
  const auto& r = sc.radio;
  for (int k = 0; k < K; ++k) {
    if (match[k] < 0) throw NcsError("pair " + std::to_string(pair) + " missed target " + std::to_string(k));
    const Vec4 d = wrapped(det.components[match[k]].freqs.head<4>(), truth[k]);
    out[k] = Vec4(-d(0) * kSpeedOfLight / r.subcarrier_spacing,
                  d(1) * kSpeedOfLight / (r.carrier_freq * r.pulse_interval), 2.0 * d(2), 2.0 * d(3));
  }
  return out;
}

Eigen::Matrix<double, 6, 1> state_error(const Scenario& sc, int k, const StateEstimate& est) {
  Eigen::Matrix<double, 6, 1> e;
  e << est.position - sc.targets[k].position, est.velocity - sc.targets[k].velocity;
  return e;
}

TrialOutcome run_trial(const Scenario& sc, const ExperimentConfig& cfg, int s, int trial) {
  TrialOutcome out;
  const int K = sc.num_targets();
  const int L = sc.num_pairs();
  try {
    if (cfg.pipeline == Pipeline::IdealMm) {
      for (int k = 0; k < K; ++k) {
        std::mt19937_64 rng(substream_seed(cfg.seed, s, trial, 1000 + k));
        const MeasurementSet m = cfg.noiseless ? exact_measurements(sc, k) : ideal_measurements(sc, k, rng);
        StateEstimate est = fuse(m, sc, cfg.fusion);
        est.target = k;
        out.state_error.push_back(state_error(sc, k, est));
        out.estimates.push_back(std::move(est));
      }
      return out;
    }
    const int first = cfg.pipeline == Pipeline::MmOnly ? cfg.mm_pair : 0;
    const int last = cfg.pipeline == Pipeline::MmOnly ? cfg.mm_pair + 1 : L;
    std::vector<DetectionList> dets(L);
    std::vector<double> sigma2(L, 0.0);
    SynthesisOptions synth;
    synth.noise = !cfg.noiseless;
    for (int l = first; l < last; ++l) {
      const auto [i, j] = sc.pair_of(l);
      const ChannelTensor t = synthesize_pair(sc, i, j, substream_seed(cfg.seed, s, trial, 1 + l), synth);
      dets[l] = detect(t, KnownCount{K}, cfg.nomp);
      sigma2[l] = cfg.noiseless ? noise_variance(sc.radio) : t.sigma2;
    }
    out.mm_error = mm_errors(sc, cfg.mm_pair, dets[cfg.mm_pair]);
    if (cfg.pipeline == Pipeline::MmOnly) return out;

    const Association assoc = associate(dets, sigma2, sc, cfg.association);
    std::vector<StateEstimate> fused;
    for (const auto& g : assoc.groups) fused.push_back(fuse(g, sc, cfg.fusion));
    // Each true target takes the nearest unclaimed estimate.
    struct Cand {
      double dist;
      int k;
      int e;
    };
    std::vector<Cand> cand;
    for (int k = 0; k < K; ++k)
      for (int e = 0; e < static_cast<int>(fused.size()); ++e)
        cand.push_back({(fused[e].position - sc.targets[k].position).norm(), k, e});
    std::stable_sort(cand.begin(), cand.end(), [](const Cand& a, const Cand& b) { return a.dist < b.dist; });
    std::vector<int> match(K, -1);
    std::vector<bool> used(fused.size(), false);
    for (const auto& cd : cand) {
      if (cd.dist > cfg.match_gate || match[cd.k] >= 0 || used[cd.e]) continue;
      match[cd.k] = cd.e;
      used[cd.e] = true;
    }
    for (int k = 0; k < K; ++k) {
      if (match[k] < 0) throw NcsError("no fused estimate near target " + std::to_string(k));
      StateEstimate est = fused[match[k]];
      est.target = k;
      out.state_error.push_back(state_error(sc, k, est));
      out.estimates.push_back(std::move(est));
    }
  } catch (const std::exception& e) {
    out = TrialOutcome{};
    out.failed = true;
    out.error = e.what();
  }
  return out;
}

std::vector<TrialOutcome> run_trials(const Scenario& sc, const ExperimentConfig& cfg, int s) {
  std::vector<TrialOutcome> out(cfg.trials);
  int workers = cfg.threads > 0 ? cfg.threads : static_cast<int>(std::thread::hardware_concurrency());
  workers = std::clamp(workers, 1, std::max(1, cfg.trials));
  std::atomic<int> next{0};
  auto work = [&] {
    for (int t = next++; t < cfg.trials; t = next++) out[t] = run_trial(sc, cfg, s, t);
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }
  return out;
}

struct Bounds {
  bool full = true;
  Eigen::MatrixXd cov;
};

Bounds state_bounds(const Scenario& sc, int k) {
  try {
    return {true, crlb_state(sc, k, CrlbMode::Full).covariance};
  } catch (const SingularGeometry&) {
    return {false, crlb_state(sc, k, CrlbMode::PositionOnly).covariance};
  }
}

// Variances per axis plus 2-D and 3-D sums for one 3x3 block.
std::array<double, 5> grouped(const Eigen::Vector3d& v) {
  return {v(0), v(1), v(2), v(0) + v(1), v(0) + v(1) + v(2)};
}

}  // namespace

std::vector<ResultRow> run_experiment(const ExperimentConfig& config) {
  if (config.trials < 1) throw ConfigError("trials must be >= 1");
  Scenario base = config.desk_scale ? desk_scale(config.scenario) : config.scenario;
  const Sweep sweep = config.sweep ? *config.sweep : Sweep{SweepVariable::TxPower, {}};
  const bool single = !config.sweep;
  const int points = single ? 1 : static_cast<int>(sweep.values.size());
  if (points < 1) throw ConfigError("sweep grid is empty");
  if (config.fusion_report) write_fusion_header(*config.fusion_report);

  std::vector<ResultRow> rows;
  for (int s = 0; s < points; ++s) {
    const double value = single ? 0.0 : sweep.values[s];
    const Scenario sc = single ? base : apply_sweep(base, sweep.variable, value);
    if (config.mm_pair < 0 || config.mm_pair >= sc.num_pairs()) throw ConfigError("mm_pair out of range");
    const int K = sc.num_targets();
    const bool want_mm = config.pipeline == Pipeline::Full || config.pipeline == Pipeline::MmOnly;
    const bool want_state = config.pipeline != Pipeline::MmOnly;

    std::vector<TrialOutcome> outcomes;
    int failures = 0;
    int used = 0;
    if (config.pipeline != Pipeline::CrlbOnly) {
      outcomes = run_trials(sc, config, s);
      for (const auto& o : outcomes) failures += o.failed;
      used = config.trials - failures;
      if (failures > config.max_failure_fraction * config.trials) {
        std::string first;
        for (const auto& o : outcomes)
          if (o.failed) {
            first = o.error;
            break;
          }
        throw ExperimentAborted(std::to_string(failures) + " of " + std::to_string(config.trials) +
                                " trials failed at sweep value " + std::to_string(value) + " (first: " + first + ")");
      }
      if (config.fusion_report && want_state)
        for (int t = 0; t < config.trials; ++t)
          for (const auto& est : outcomes[t].estimates)
            write_fusion_rows(*config.fusion_report, sc, s * config.trials + t, est.target, est);
    }

    auto push = [&](int k, const char* name, double sum_sq, double bound_var) {
      ResultRow r;
      r.sweep = value;
      r.target = k;
      r.quantity = name;
      r.root_crlb = std::sqrt(bound_var);
      if (config.pipeline == Pipeline::CrlbOnly) {
        r.rmse = kNaN;
        r.ratio = kNaN;
        r.trials = 0;
      } else {
        r.rmse = used > 0 ? std::sqrt(sum_sq / used) : kNaN;
        r.ratio = r.rmse / r.root_crlb;
        r.trials = used;
        r.failures = failures;
      }
      rows.push_back(std::move(r));
    };

    for (int k = 0; k < K; ++k) {
      if (want_mm) {
        const auto [i, j] = sc.pair_of(config.mm_pair);
        const Vec4 bound = mm_unit_scaling(pair_crlb(sc, i, j, k), sc.radio);
        Vec4 sum = Vec4::Zero();
        for (const auto& o : outcomes)
          if (!o.failed) sum += o.mm_error[k].cwiseAbs2();
        for (int a = 0; a < 4; ++a) push(k, kMmNames[a], sum(a), bound(a));
      }
      if (!want_state) continue;
      const Bounds b = state_bounds(sc, k);
      Eigen::Matrix<double, 6, 1> sum = Eigen::Matrix<double, 6, 1>::Zero();
      for (const auto& o : outcomes)
        if (!o.failed) sum += o.state_error[k].cwiseAbs2();
      const auto pos_sq = grouped(sum.head<3>());
      const auto pos_var = grouped(b.cov.diagonal().head<3>());
      for (int q = 0; q < 5; ++q) push(k, kPosNames[q], pos_sq[q], pos_var[q]);
      if (!b.full) continue;  // velocity unobservable in this geometry
      const auto vel_sq = grouped(sum.tail<3>());
      const auto vel_var = grouped(b.cov.diagonal().tail<3>());
      for (int q = 0; q < 5; ++q) push(k, kVelNames[q], vel_sq[q], vel_var[q]);
    }
  }
  return rows;
}

void write_results_csv(std::ostream& os, const std::vector<ResultRow>& rows) {
  os << "sweep,target,quantity,rmse,root_crlb,ratio,trials,failures\n";
  char buf[512];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.17g,%d,%s,%.17g,%.17g,%.17g,%d,%d\n", r.sweep, r.target, r.quantity.c_str(),
                  r.rmse, r.root_crlb, r.ratio, r.trials, r.failures);
    os << buf;
  }
}

std::vector<ResultRow> parse_results_csv(std::istream& is) {
  std::vector<ResultRow> rows;
  std::string line;
  if (!std::getline(is, line) || line.rfind("sweep,target,quantity", 0) != 0)
    throw ConfigError("results CSV header missing");
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 8) throw ConfigError("results CSV row needs 8 fields: " + line);
    ResultRow r;
    auto num = [](const std::string& s) { return std::strtod(s.c_str(), nullptr); };
    r.sweep = num(f[0]);
    r.target = std::stoi(f[1]);
    r.quantity = f[2];
    r.rmse = num(f[3]);
    r.root_crlb = num(f[4]);
    r.ratio = num(f[5]);
    r.trials = std::stoi(f[6]);
    r.failures = std::stoi(f[7]);
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_results_table(std::ostream& os, const std::vector<ResultRow>& rows) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%10s %6s %-13s %13s %13s %8s %6s %8s\n", "sweep", "target", "quantity", "rmse",
                "root_crlb", "ratio", "trials", "failures");
  os << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%10g %6d %-13s %13.5g %13.5g %8.4f %6d %8d\n", r.sweep, r.target,
                  r.quantity.c_str(), r.rmse, r.root_crlb, r.ratio, r.trials, r.failures);
    os << buf;
  }
}

}  // namespace ncs
