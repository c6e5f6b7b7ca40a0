// SPDX-License-Identifier: Apache-2.0
//
// Arbitrary-dimension Newtonized orthogonal matching pursuit.
//
// A tensor y with D dimensions (dimension 0 fastest in memory) is modelled as
// a sum of separable complex exponentials g * a_{D-1}(f) (x) ... (x) a_0(f)
// plus white noise. Detection is greedy: a dimension-wise coarse search seeds
// each new component, Newton steps refine it off the grid, previously found
// components are re-refined cyclically, and all gains are re-fit jointly.

#ifndef NCS_ADNOMP_HPP
#define NCS_ADNOMP_HPP

#include <iosfwd>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "ncs/channel.hpp"

namespace ncs {

using Shape = std::span<const int>;
using FreqRef = Eigen::Ref<const Eigen::VectorXd>;

struct DetectedComponent {
  cplx gain;
  Eigen::VectorXd freqs;  // dim 0 in [0, 1), others in [-0.5, 0.5)
  double residual_power_at_detection = 0;
};

struct DetectionList {
  std::vector<DetectedComponent> components;  // sorted by |gain|, descending
  double final_residual_power = 0;
  int iterations = 0;
  std::vector<double> residual_history;  // residual power after each iteration
  std::vector<std::string> warnings;
};

struct KnownCount {
  int count = 0;
};
struct PowerThreshold {
  double power = 0;
};
using StopRule = std::variant<KnownCount, PowerThreshold>;

struct NompOptions {
  int oversampling = 4;        // coarse grid points per DFT bin
  int cyclic_rounds = 3;       // re-refinement sweeps after each new component
  int newton_iterations = 10;  // per refinement call
  int polish_rounds = 20;      // joint Gauss-Newton iterations after the last detection
  double polish_tolerance = 1e-13;
  double gram_condition_limit = 1e10;
  int max_components = 64;     // safety cap in threshold mode
};

// Lower bound of the wrapped interval for dimension d.
inline double freq_floor(int dim) { return dim == 0 ? 0.0 : -0.5; }

// Kronecker steering tensor, dimension 0 fastest.
Eigen::VectorXcd steering_tensor(const FreqRef& f, Shape dims);

// |a(f)^H y|^2
double objective(const FreqRef& f, const Eigen::VectorXcd& y, Shape dims);

struct ObjectiveDerivatives {
  double value = 0;
  Eigen::VectorXd gradient;
  Eigen::MatrixXd hessian;
  cplx projection;  // a(f)^H y
};

ObjectiveDerivatives objective_derivatives(const FreqRef& f, const Eigen::VectorXcd& y, Shape dims);

/// Oversampled-grid argmax for dimension `dim`: the already fixed dimensions
/// (`prefix`, one value per dimension < dim) are combined coherently, the
/// later ones non-coherently.
double coarse_search(const Eigen::VectorXcd& residual, Shape dims, std::span<const double> prefix, int dim,
                     int oversampling = 4);

// Newton ascent of the objective with diagonal fallback and step halving.
Eigen::VectorXd newton_refine(const FreqRef& f, const Eigen::VectorXcd& y, Shape dims, int max_iter = 10);

// Noise-floor threshold sigma2 * S * (1 + 3 / sqrt(S)) for S samples.
double default_threshold(double sigma2, std::size_t samples);

DetectionList detect(const Eigen::VectorXcd& y, Shape dims, const StopRule& stop, const NompOptions& opts = {});
DetectionList detect(const ChannelTensor& y, const StopRule& stop, const NompOptions& opts = {});

// CSV: pair,component,re_g,im_g,f0..f3,residual_power
void write_detections_csv(std::ostream& os, const std::vector<DetectionList>& per_pair);

}  // namespace ncs

#endif  // NCS_ADNOMP_HPP
