// SPDX-License-Identifier: Apache-2.0
//
// Fisher information and Cramer-Rao bounds for the multi-domain measurements
// of one pair and for the fused target position/velocity.

#ifndef NCS_CRLB_HPP
#define NCS_CRLB_HPP

#include <iosfwd>

#include "ncs/scenario.hpp"

namespace ncs {

/// Full FIM of (A, phi, f0, f1, f2, f3) for one exponential in a 4-D tensor
/// under circular white Gaussian noise. Sums over n are evaluated in closed form.
template <typename Scalar>
Eigen::Matrix<Scalar, 6, 6> fim_psi(Scalar amplitude, Scalar sigma2, const Dims& dims) {
  using M = Eigen::Matrix<Scalar, 6, 6>;
  const Scalar pi = Scalar(kPi);
  Scalar total = 1;
  for (int d : dims) total *= Scalar(d);
  const Scalar c = Scalar(2) / sigma2;
  const Scalar ca = c * amplitude * amplitude * total;
  M J = M::Zero();
  J(0, 0) = c * total;
  J(1, 1) = ca;
  for (int a = 0; a < 4; ++a) {
    const Scalar na = Scalar(dims[a]);
    // (1/Na) * sum_n 2*pi*n  and  (1/Na) * sum_n (2*pi*n)^2
    const Scalar m1 = pi * (na - 1);
    const Scalar m2 = Scalar(4) * pi * pi * (na - 1) * (Scalar(2) * na - 1) / Scalar(6);
    J(a + 2, 1) = J(1, a + 2) = ca * m1;
    J(a + 2, a + 2) = ca * m2;
    for (int b = a + 1; b < 4; ++b) {
      const Scalar mb = pi * (Scalar(dims[b]) - 1);
      J(a + 2, b + 2) = J(b + 2, a + 2) = ca * m1 * mb;
    }
  }
  return J;
}

/// Decoupled frequency CRLBs 3 sigma2 / (2 pi^2 A^2 N0N1N2N3 (Na^2 - 1)).
template <typename Scalar>
Eigen::Matrix<Scalar, 4, 1> crlb_mm(Scalar amplitude, Scalar sigma2, const Dims& dims) {
  Scalar total = 1;
  for (int d : dims) {
    if (d < 2) throw UnestimableDimension("a frequency needs at least 2 samples in its dimension");
    total *= Scalar(d);
  }
  Eigen::Matrix<Scalar, 4, 1> out;
  const Scalar pi = Scalar(kPi);
  for (int a = 0; a < 4; ++a) {
    const Scalar na = Scalar(dims[a]);
    out(a) = Scalar(3) * sigma2 / (Scalar(2) * pi * pi * amplitude * amplitude * total * (na * na - 1));
  }
  return out;
}

struct DecouplingCheck {
  double max_rel_deviation = 0;  // diagonal of the inverted 4x4 block vs crlb_mm
  double max_offdiag = 0;        // largest |off-diagonal| of that block
  double offdiag_rel = 0;        // max_offdiag / smallest diagonal
  double condition = 0;          // of the Jacobi-scaled FIM
  bool ill_conditioned = false;  // condition > 1e12
};

// Inverts the full FIM numerically and compares its frequency block with crlb_mm.
DecouplingCheck verify_decoupled_bounds(double amplitude, double sigma2, const Dims& dims);

// Frequency variances -> (range m^2, range-rate (m/s)^2, cos_alpha, cos_beta).
Vec4 mm_unit_scaling(const Vec4& crlb_f, const RadioConfig& radio);

// Frequency CRLBs of target k in pair (i, j) with the true link budget.
Vec4 pair_crlb(const Scenario& sc, int i, int j, int k);

/// d(frequencies)/d(t, tdot): 4L x 6, rows grouped DM0 block, DM1 block,
/// DM2 block, DM3 block, pairs in index order inside each block.
Eigen::MatrixXd jacobian(const Scenario& sc, int k);

// Diagonal of the frequency FIM in jacobian() row order.
Eigen::VectorXd frequency_information(const Scenario& sc, int k);

enum class CrlbMode { Full, PositionOnly };

struct StateCrlb {
  CrlbMode mode = CrlbMode::Full;
  Eigen::MatrixXd covariance;  // 6x6 (t, tdot) or 3x3 (t)

  double position_variance(int axis) const { return covariance(axis, axis); }
  double velocity_variance(int axis) const { return covariance(3 + axis, 3 + axis); }
  double position_2d() const { return std::sqrt(covariance(0, 0) + covariance(1, 1)); }
  double position_3d() const { return std::sqrt(covariance.topLeftCorner<3, 3>().trace()); }
  double velocity_2d() const { return std::sqrt(covariance(3, 3) + covariance(4, 4)); }
  double velocity_3d() const { return std::sqrt(covariance.bottomRightCorner<3, 3>().trace()); }
};

// Throws SingularGeometry with the weakest (t, tdot) direction when the FIM is singular.
StateCrlb crlb_state(const Scenario& sc, int k, CrlbMode mode = CrlbMode::Full);

// Inverse of a symmetric positive definite matrix after symmetric diagonal
// scaling; throws SingularGeometry below the relative eigenvalue floor.
Eigen::MatrixXd spd_inverse(const Eigen::MatrixXd& m, double rel_floor = 1e-13,
                            const char* what = "information matrix is singular");

// CSV: target,axis,quantity,root_crlb. Uses position-only bounds when the full state is singular.
void write_crlb_csv(std::ostream& os, const Scenario& sc);

}  // namespace ncs

#endif  // NCS_CRLB_HPP
