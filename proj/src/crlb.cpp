// SPDX-License-Identifier: Apache-2.0

#include "ncs/crlb.hpp"

#include <cstdio>
#include <ostream>

namespace ncs {

Eigen::MatrixXd spd_inverse(const Eigen::MatrixXd& m, double rel_floor, const char* what) {
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::VectorXd scale = sym.diagonal().cwiseAbs().cwiseSqrt();
  for (Eigen::Index i = 0; i < scale.size(); ++i)
    if (!(scale(i) > 0)) scale(i) = 1.0;
  const Eigen::VectorXd inv_scale = scale.cwiseInverse();
  const Eigen::MatrixXd scaled = inv_scale.asDiagonal() * sym * inv_scale.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(scaled);
  const Eigen::VectorXd& ev = es.eigenvalues();
  if (!(ev(0) > rel_floor * ev(ev.size() - 1))) {
    const Eigen::VectorXd dir = (inv_scale.asDiagonal() * es.eigenvectors().col(0)).normalized();
    throw SingularGeometry(what, dir);
  }
  const Eigen::MatrixXd inv_scaled =
      es.eigenvectors() * ev.cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
  return inv_scale.asDiagonal() * inv_scaled * inv_scale.asDiagonal();
}

DecouplingCheck verify_decoupled_bounds(double amplitude, double sigma2, const Dims& dims) {
  const Vec4 expect = crlb_mm(amplitude, sigma2, dims);
  const Mat6 J = fim_psi(amplitude, sigma2, dims);
  const Eigen::Matrix<double, 6, 1> s = J.diagonal().cwiseSqrt().cwiseInverse();
  const Mat6 scaled = s.asDiagonal() * J * s.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Mat6> es(scaled);
  DecouplingCheck out;
  out.condition = es.eigenvalues()(5) / es.eigenvalues()(0);
  out.ill_conditioned = out.condition > 1e12;
  const Mat6 inv = s.asDiagonal() * scaled.ldlt().solve(Mat6::Identity()) * s.asDiagonal();
  const Eigen::Matrix4d block = inv.bottomRightCorner<4, 4>();
  for (int a = 0; a < 4; ++a) {
    out.max_rel_deviation = std::max(out.max_rel_deviation, std::abs(block(a, a) - expect(a)) / expect(a));
    for (int b = 0; b < 4; ++b)
      if (a != b) out.max_offdiag = std::max(out.max_offdiag, std::abs(block(a, b)));
  }
  out.offdiag_rel = out.max_offdiag / expect.minCoeff();
  return out;
}

Vec4 mm_unit_scaling(const Vec4& crlb_f, const RadioConfig& radio) {
  const double range = kSpeedOfLight / radio.subcarrier_spacing;
  const double rate = kSpeedOfLight / (radio.carrier_freq * radio.pulse_interval);
  return {crlb_f(0) * range * range, crlb_f(1) * rate * rate, 4.0 * crlb_f(2), 4.0 * crlb_f(3)};
}

Vec4 pair_crlb(const Scenario& sc, int i, int j, int k) {
  const LinkBudget lb = amplitude_and_noise(sc, i, j, k);
  return crlb_mm(lb.amplitude, lb.noise_variance, sc.radio.dims());
}

namespace {

// (I - rho rho^T) c / |a - b|
Vec3 xi(const Geometry& g, const Vec3& c) {
  return (c - g.direction * g.direction.dot(c)) / g.distance;
}

}  // namespace

Eigen::MatrixXd jacobian(const Scenario& sc, int k) {
  const int L = sc.num_pairs();
  const auto& radio = sc.radio;
  const double range_scale = radio.subcarrier_spacing / kSpeedOfLight;
  const double rate_scale = radio.carrier_freq * radio.pulse_interval / kSpeedOfLight;
  const Vec3& vel = sc.targets.at(k).velocity;
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(4 * L, 6);
  for (int l = 0; l < L; ++l) {
    const auto [i, j] = sc.pair_of(l);
    const Geometry gi = geometry(sc, i, k);
    const Geometry gj = geometry(sc, j, k);
    const auto& rx = sc.stations[j];
    jac.block<1, 3>(l, 0) = -range_scale * (gi.direction + gj.direction).transpose();
    jac.block<1, 3>(L + l, 0) = rate_scale * (xi(gi, vel) + xi(gj, vel)).transpose();
    jac.block<1, 3>(L + l, 3) = rate_scale * (gi.direction + gj.direction).transpose();
    jac.block<1, 3>(2 * L + l, 0) = 0.5 * xi(gj, rx.panel_x).transpose();
    jac.block<1, 3>(3 * L + l, 0) = 0.5 * xi(gj, rx.panel_y).transpose();
  }
  return jac;
}

Eigen::VectorXd frequency_information(const Scenario& sc, int k) {
  const int L = sc.num_pairs();
  Eigen::VectorXd info(4 * L);
  for (int l = 0; l < L; ++l) {
    const auto [i, j] = sc.pair_of(l);
    const Vec4 c = pair_crlb(sc, i, j, k);
    for (int a = 0; a < 4; ++a) info(a * L + l) = 1.0 / c(a);
  }
  return info;
}

StateCrlb crlb_state(const Scenario& sc, int k, CrlbMode mode) {
  const Eigen::MatrixXd jac = jacobian(sc, k);
  const Eigen::VectorXd info = frequency_information(sc, k);
  StateCrlb out;
  out.mode = mode;
  if (mode == CrlbMode::Full) {
    const Eigen::MatrixXd fim = jac.transpose() * info.asDiagonal() * jac;
    out.covariance = spd_inverse(fim, 1e-13, "state FIM is singular for this geometry");
    return out;
  }
  const int L = sc.num_pairs();
  Eigen::MatrixXd jp(3 * L, 3);
  Eigen::VectorXd ip(3 * L);
  const int blocks[3] = {0, 2, 3};
  for (int b = 0; b < 3; ++b) {
    jp.middleRows(b * L, L) = jac.block(blocks[b] * L, 0, L, 3);
    ip.segment(b * L, L) = info.segment(blocks[b] * L, L);
  }
  const Eigen::MatrixXd fim = jp.transpose() * ip.asDiagonal() * jp;
  out.covariance = spd_inverse(fim, 1e-13, "position FIM is singular for this geometry");
  return out;
}

void write_crlb_csv(std::ostream& os, const Scenario& sc) {
  os << "target,axis,quantity,root_crlb\n";
  const char* axes[3] = {"x", "y", "z"};
  char buf[128];
  for (int k = 0; k < sc.num_targets(); ++k) {
    StateCrlb c;
    bool full = true;
    try {
      c = crlb_state(sc, k, CrlbMode::Full);
    } catch (const SingularGeometry&) {
      c = crlb_state(sc, k, CrlbMode::PositionOnly);
      full = false;
    }
    for (int a = 0; a < 3; ++a) {
      std::snprintf(buf, sizeof buf, "%d,%s,pos,%.9e\n", k, axes[a], std::sqrt(c.covariance(a, a)));
      os << buf;
    }
    if (!full) continue;
    for (int a = 0; a < 3; ++a) {
      std::snprintf(buf, sizeof buf, "%d,%s,vel,%.9e\n", k, axes[a], std::sqrt(c.covariance(3 + a, 3 + a)));
      os << buf;
    }
  }
}

}  // namespace ncs
