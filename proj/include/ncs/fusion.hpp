// SPDX-License-Identifier: Apache-2.0
//
// From detected frequencies to fused target state.
//
// Measurement vectors stack four blocks of L = I*J entries (bistatic range,
// range rate, cos_alpha, cos_beta), pairs in index order inside each block.
// The compressed vector mu holds the independent quantities
// [d (N_BS), d_dot (N_BS), cos_alpha (J), cos_beta (J)]: per-BS distance and
// radial velocity to the target, per-RX direction cosines.

#ifndef NCS_FUSION_HPP
#define NCS_FUSION_HPP

#include <cstdint>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include "ncs/adnomp.hpp"
#include "ncs/scenario.hpp"

namespace ncs {

// (r, r_dot, cos_alpha, cos_beta) from normalized frequencies.
Vec4 freq_to_meas(const Vec4& f, const RadioConfig& radio);

struct MeasurementSet {
  int target = -1;         // group or ground-truth index
  Eigen::VectorXd m_hat;   // 4L
  Eigen::VectorXd weight;  // diagonal of W; 0 marks a missing pair
  bool ambiguous = false;

  // Diagonal of Q = W^-1 (infinite where the weight is 0).
  Eigen::VectorXd variance() const;
};

// Physical-unit CRLBs of target k's measurements in block order.
Eigen::VectorXd measurement_variance(const Scenario& sc, int k);
Eigen::VectorXd true_measurements(const Scenario& sc, int k);

// Ground truth with CRLB weights.
MeasurementSet exact_measurements(const Scenario& sc, int k);
// Ground truth plus Gaussian errors at the CRLB, weights from the same CRLB.
MeasurementSet ideal_measurements(const Scenario& sc, int k, std::mt19937_64& rng);

// True [d, d_dot, cos_alpha, cos_beta] of target k.
Eigen::VectorXd true_mu(const Scenario& sc, int k);

// Rough single-pair position of a detection: RX direction from the panel
// cosines, RX range from the bistatic range.
Vec3 coarse_position(const Scenario& sc, int i, int j, const Vec4& meas);
// Cosines alone do not say which side of the panel the target is on: both
// placements with a consistent bistatic split, in front of the panel first.
std::vector<Vec3> coarse_candidates(const Scenario& sc, int i, int j, const Vec4& meas);

struct AssociationOptions {
  double gate = 20.0;        // m, coarse grouping and duplicate groups
  double refine_gate = 2.0;  // DFT bins between a component and a group's prediction
  int refine_passes = 3;
};

struct Orphan {
  int pair = 0;
  int component = 0;
  Vec3 coarse = Vec3::Zero();
};

struct Association {
  std::vector<MeasurementSet> groups;
  std::vector<Vec3> centroids;  // mean coarse position per group
  std::vector<Orphan> orphans;
  std::vector<std::string> warnings;
};

/// Groups detections of the L pairs into targets. `noise_variance[l]` feeds
/// the plug-in weights (a value <= 0 falls back to 1, giving relative
/// weights only).
Association associate(const std::vector<DetectionList>& per_pair, const std::vector<double>& noise_variance,
                      const Scenario& sc, const AssociationOptions& opts = {});

struct CompressedMeasurements {
  Duplex duplex = Duplex::FD;
  int reference = 0;
  Eigen::VectorXd mu;   // FD: 2N+2J; HD: 2N+2J-2 (reference distance and rate removed)
  Eigen::MatrixXd cov;
  Eigen::VectorXd coupling_d;     // HD: d_i = d''_i + g_i d_ref
  Eigen::VectorXd coupling_rate;  // HD: same for the radial velocities
};

// Measurement-to-mu map T1 (4L x (2N+2J)).
Eigen::MatrixXd measurement_map(const Scenario& sc);

CompressedMeasurements compress_fd(const MeasurementSet& m, const Scenario& sc, int reference = 0);
CompressedMeasurements compress_hd(const MeasurementSet& m, const Scenario& sc, int reference = 0);

// b = A * theta + T * (mu error) to first order.
struct LinearSystem {
  Eigen::MatrixXd A;
  Eigen::VectorXd b;
  Eigen::MatrixXd T;
};

// FD first stage in (t, t_dot); mu is the full compressed vector.
LinearSystem stage1_fd(const Eigen::VectorXd& mu, const Scenario& sc, int reference);
// HD first stage in (t, t_dot, d_ref, d_dot_ref); T is evaluated with the given nuisance values.
LinearSystem stage1_hd(const CompressedMeasurements& c, const Scenario& sc, double d_ref, double rate_ref);
// Second stage in the correction (dt, dt_dot) around (t, t_dot); mu full.
LinearSystem stage2(const Eigen::VectorXd& mu, const Vec3& t, const Vec3& t_dot, const Scenario& sc);

struct FusionOptions {
  int reference = 0;
  std::uint64_t sampling_seed = 0x5A3D1E77ULL;
  int sampling_retries = 3;
};

struct StateEstimate {
  int target = -1;
  Vec3 position = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();
  Eigen::MatrixXd covariance;   // 6x6
  Eigen::VectorXd stage1;       // FD: 6, HD: 8 (with the reference distance and rate)
  Eigen::VectorXd stage2;       // correction, 6
  bool stage2_skipped = false;
  double nuisance_d = 0;
  double nuisance_rate = 0;
  Eigen::MatrixXd stage1_cov;
};

StateEstimate fuse_fd(const CompressedMeasurements& c, const Scenario& sc, const FusionOptions& opts = {});
StateEstimate fuse_hd(const CompressedMeasurements& c, const Scenario& sc, const FusionOptions& opts = {});

// Compress and fuse according to the scenario's duplex mode.
StateEstimate fuse(const MeasurementSet& m, const Scenario& sc, const FusionOptions& opts = {});

// CSV rows: trial,target,axis,true,estimate,error,root_crlb
void write_fusion_header(std::ostream& os);
void write_fusion_rows(std::ostream& os, const Scenario& sc, int trial, int target, const StateEstimate& est);

}  // namespace ncs

#endif  // NCS_FUSION_HPP
