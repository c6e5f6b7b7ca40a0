// SPDX-License-Identifier: Apache-2.0

#include "ncs/fusion.hpp"

#include <algorithm>
#include <cstdio>
#include <limits>
#include <ostream>
#include <tuple>

#include "ncs/crlb.hpp"

namespace ncs {

Vec4 freq_to_meas(const Vec4& f, const RadioConfig& radio) {
  return {(1.0 - f(0)) * kSpeedOfLight / radio.subcarrier_spacing,
          f(1) * kSpeedOfLight / (radio.carrier_freq * radio.pulse_interval), 2.0 * f(2), 2.0 * f(3)};
}

Eigen::VectorXd MeasurementSet::variance() const {
  Eigen::VectorXd q(weight.size());
  for (Eigen::Index n = 0; n < weight.size(); ++n)
    q(n) = weight(n) > 0 ? 1.0 / weight(n) : std::numeric_limits<double>::infinity();
  return q;
}

Eigen::VectorXd measurement_variance(const Scenario& sc, int k) {
  const int L = sc.num_pairs();
  Eigen::VectorXd v(4 * L);
  for (int l = 0; l < L; ++l) {
    const auto [i, j] = sc.pair_of(l);
    const Vec4 q = mm_unit_scaling(pair_crlb(sc, i, j, k), sc.radio);
    for (int a = 0; a < 4; ++a) v(a * L + l) = q(a);
  }
  return v;
}

Eigen::VectorXd true_measurements(const Scenario& sc, int k) {
  const int L = sc.num_pairs();
  Eigen::VectorXd m(4 * L);
  for (int l = 0; l < L; ++l) {
    const auto [i, j] = sc.pair_of(l);
    const Vec4 q = true_measurement(sc, i, j, k);
    for (int a = 0; a < 4; ++a) m(a * L + l) = q(a);
  }
  return m;
}

MeasurementSet exact_measurements(const Scenario& sc, int k) {
  MeasurementSet m;
  m.target = k;
  m.m_hat = true_measurements(sc, k);
  m.weight = measurement_variance(sc, k).cwiseInverse();
  return m;
}

MeasurementSet ideal_measurements(const Scenario& sc, int k, std::mt19937_64& rng) {
  MeasurementSet m = exact_measurements(sc, k);
  std::normal_distribution<double> normal;
  for (Eigen::Index n = 0; n < m.m_hat.size(); ++n) m.m_hat(n) += normal(rng) / std::sqrt(m.weight(n));
  return m;
}

Eigen::VectorXd true_mu(const Scenario& sc, int k) {
  const int N = sc.num_bs();
  const int J = sc.num_rx();
  Eigen::VectorXd mu(2 * N + 2 * J);
  for (int b = 0; b < N; ++b) {
    const Geometry g = geometry(sc, b, k);
    mu(b) = g.distance;
    mu(N + b) = g.range_rate;
  }
  for (int jj = 0; jj < J; ++jj) {
    const Geometry g = geometry(sc, sc.rx_start() + jj, k);
    mu(2 * N + jj) = g.cos_alpha;
    mu(2 * N + J + jj) = g.cos_beta;
  }
  return mu;
}

namespace {

Vec3 coarse_along(const Scenario& sc, int i, int j, const Vec4& meas, double side, bool* valid) {
  const auto& rx = sc.stations.at(j);
  const double ca = meas(2);
  const double cb = meas(3);
  const double cz = side * std::sqrt(std::max(0.0, 1.0 - ca * ca - cb * cb));
  const Vec3 u = ca * rx.panel_x + cb * rx.panel_y + cz * rx.boresight;
  const Vec3 v = rx.position - sc.stations.at(i).position;
  const double r = meas(0);
  const double den = 2.0 * (v.dot(u) + r);
  const double dj = std::abs(den) > 1e-9 ? (r * r - v.squaredNorm()) / den : 0.5 * r;
  if (valid) *valid = dj > 0 && dj < r;
  return rx.position + dj * u;
}

}  // namespace

Vec3 coarse_position(const Scenario& sc, int i, int j, const Vec4& meas) {
  return coarse_along(sc, i, j, meas, 1.0, nullptr);
}

std::vector<Vec3> coarse_candidates(const Scenario& sc, int i, int j, const Vec4& meas) {
  bool ok_front = false, ok_back = false;
  const Vec3 front = coarse_along(sc, i, j, meas, 1.0, &ok_front);
  const Vec3 back = coarse_along(sc, i, j, meas, -1.0, &ok_back);
  std::vector<Vec3> out;
  if (ok_front || !ok_back) out.push_back(front);
  if (ok_back && (back - front).norm() > 1e-6 * (1.0 + front.norm())) out.push_back(back);
  return out;
}

namespace {

struct Group {
  std::vector<int> member;  // component index per pair, -1 if none
  std::vector<Vec3> where;  // coarse position per pair
  bool ambiguous = false;

  int count() const {
    return static_cast<int>(std::count_if(member.begin(), member.end(), [](int m) { return m >= 0; }));
  }
  Vec3 centroid() const {
    Vec3 s = Vec3::Zero();
    for (std::size_t l = 0; l < member.size(); ++l)
      if (member[l] >= 0) s += where[l];
    return s / std::max(1, count());
  }
};

}  // namespace

Association associate(const std::vector<DetectionList>& per_pair, const std::vector<double>& noise_variance,
                      const Scenario& sc, const AssociationOptions& opts) {
  const int L = sc.num_pairs();
  if (static_cast<int>(per_pair.size()) != L) throw ConfigError("need one detection list per pair");
  std::vector<std::vector<Vec4>> meas(L);
  std::vector<std::vector<std::vector<Vec3>>> coarse(L);
  for (int l = 0; l < L; ++l) {
    const auto [i, j] = sc.pair_of(l);
    for (const auto& c : per_pair[l].components) {
      meas[l].push_back(freq_to_meas(c.freqs.head<4>(), sc.radio));
      coarse[l].push_back(coarse_candidates(sc, i, j, meas[l].back()));
    }
  }

  // Every placement of an unclaimed component seeds its own group; the
  // wrong side of a panel rarely collects support from the other pairs.
  std::vector<Group> groups;
  for (int l = 0; l < L; ++l) {
    struct Candidate {
      double dist;
      int group;
      int comp;
      int side;
    };
    std::vector<Candidate> cand;
    for (int c = 0; c < static_cast<int>(coarse[l].size()); ++c)
      for (int h = 0; h < static_cast<int>(coarse[l][c].size()); ++h)
        for (int g = 0; g < static_cast<int>(groups.size()); ++g) {
          const double dist = (coarse[l][c][h] - groups[g].centroid()).norm();
          if (dist <= opts.gate) cand.push_back({dist, g, c, h});
        }
    std::stable_sort(cand.begin(), cand.end(), [](const auto& a, const auto& b) { return a.dist < b.dist; });
    std::vector<bool> used(coarse[l].size(), false);
    std::vector<bool> filled(groups.size(), false);
    for (const auto& cd : cand) {
      if (filled[cd.group]) continue;
      groups[cd.group].member[l] = cd.comp;
      groups[cd.group].where[l] = coarse[l][cd.comp][cd.side];
      filled[cd.group] = true;
      used[cd.comp] = true;
    }
    for (int c = 0; c < static_cast<int>(coarse[l].size()); ++c) {
      if (used[c]) continue;
      for (const Vec3& p : coarse[l][c]) {
        Group g;
        g.member.assign(L, -1);
        g.where.assign(L, Vec3::Zero());
        g.member[l] = c;
        g.where[l] = p;
        groups.push_back(std::move(g));
      }
    }
  }

  // A component may sit in several hypotheses: the best supported one keeps it.
  std::stable_sort(groups.begin(), groups.end(), [](const Group& a, const Group& b) { return a.count() > b.count(); });
  {
    std::vector<std::vector<bool>> claimed(L);
    for (int l = 0; l < L; ++l) claimed[l].assign(coarse[l].size(), false);
    for (auto& g : groups)
      for (int l = 0; l < L; ++l) {
        const int c = g.member[l];
        if (c < 0) continue;
        if (claimed[l][c]) g.member[l] = -1;
        else claimed[l][c] = true;
      }
    groups.erase(std::remove_if(groups.begin(), groups.end(), [](const Group& g) { return g.count() == 0; }),
                 groups.end());
  }

  Association out;
  // Groups closer than the gate cannot be told apart: merge them, keeping
  // the stronger component where both claim the same pair.
  for (bool merged = true; merged;) {
    merged = false;
    for (std::size_t a = 0; a < groups.size() && !merged; ++a)
      for (std::size_t b = a + 1; b < groups.size() && !merged; ++b) {
        if ((groups[a].centroid() - groups[b].centroid()).norm() > opts.gate) continue;
        for (int l = 0; l < L; ++l) {
          const int mb = groups[b].member[l];
          if (mb < 0) continue;
          const int ma = groups[a].member[l];
          if (ma >= 0) {
            groups[a].ambiguous = true;
            if (std::abs(per_pair[l].components[mb].gain) <= std::abs(per_pair[l].components[ma].gain)) continue;
          }
          groups[a].member[l] = mb;
          groups[a].where[l] = groups[b].where[l];
        }
        groups.erase(groups.begin() + static_cast<std::ptrdiff_t>(b));
        merged = true;
      }
  }

  const auto supported = [L](const Group& g) { return !(2 * (L - g.count()) >= L && L > 1); };
  const auto to_set = [&](const Group& g, int target) {
    MeasurementSet m;
    m.target = target;
    m.m_hat = Eigen::VectorXd::Zero(4 * L);
    m.weight = Eigen::VectorXd::Zero(4 * L);
    m.ambiguous = g.ambiguous;
    for (int l = 0; l < L; ++l) {
      const int c = g.member[l];
      if (c < 0) continue;
      const double s2 = l < static_cast<int>(noise_variance.size()) && noise_variance[l] > 0 ? noise_variance[l] : 1.0;
      const double amp = std::abs(per_pair[l].components[c].gain);
      const Vec4 q = mm_unit_scaling(crlb_mm(amp, s2, sc.radio.dims()), sc.radio);
      for (int a = 0; a < 4; ++a) {
        m.m_hat(a * L + l) = meas[l][c](a);
        m.weight(a * L + l) = 1.0 / q(a);
      }
    }
    return m;
  };

  // Measurement differences in DFT bins, wrapped like the frequencies.
  const RadioConfig& radio = sc.radio;
  const Dims dims = radio.dims();
  const Vec4 to_cycles(radio.subcarrier_spacing / kSpeedOfLight,
                       radio.carrier_freq * radio.pulse_interval / kSpeedOfLight, 0.5, 0.5);
  const auto bin_distance = [&](const Vec4& got, const Eigen::VectorXd& pred, int l, bool with_rate) {
    double sum = 0;
    for (int a = 0; a < 4; ++a) {
      if (a == 1 && !with_rate) continue;
      const double cyc = wrap_unit((got(a) - pred(a * L + l)) * to_cycles(a), -0.5);
      sum += std::pow(cyc * dims[a], 2);
    }
    return std::sqrt(sum);
  };

  // Coarse positions inherit tens of metres of error from the panel cosines.
  // Fuse each supported group, predict every pair from the fused state and
  // hand each pair's components to the nearest prediction in bins.
  for (int pass = 0; pass < opts.refine_passes; ++pass) {
    // A group that cannot be fused yet (say every pair of one RX is missing)
    // predicts from its coarse centroid, without the rate.
    std::vector<int> order;
    std::vector<Eigen::VectorXd> pred(groups.size());
    std::vector<Vec3> at(groups.size());
    std::vector<bool> fused(groups.size(), false);
    for (int g = 0; g < static_cast<int>(groups.size()); ++g) {
      if (!supported(groups[g])) continue;
      Target guess{groups[g].centroid(), Vec3::Zero()};
      try {
        const StateEstimate est = fuse(to_set(groups[g], g), sc);
        if (est.position.allFinite() && est.velocity.allFinite()) {
          guess = Target{est.position, est.velocity};
          fused[g] = true;
        }
      } catch (const NcsError&) {
      }
      Scenario probe = sc;
      probe.targets = {guess};
      pred[g] = true_measurements(probe, 0);
      at[g] = guess.position;
      order.push_back(g);
    }
    if (order.empty()) break;
    // Two groups on one target: a fused one beats a coarse one, then the
    // better supported one stays.
    std::stable_sort(order.begin(), order.end(), [&](int x, int y) {
      if (fused[x] != fused[y]) return static_cast<bool>(fused[x]);
      return groups[x].count() > groups[y].count();
    });
    std::vector<int> kept;
    for (int g : order) {
      bool dup = false;
      for (int h : kept) dup = dup || (at[g] - at[h]).norm() <= opts.gate;
      if (dup) {
        groups[g].member.assign(L, -1);
        continue;
      }
      kept.push_back(g);
    }
    std::vector<bool> is_kept(groups.size(), false);
    for (int g : kept) is_kept[g] = true;
    for (int l = 0; l < L; ++l) {
      struct Candidate {
        bool coarse;
        double dist;
        int group;
        int comp;
      };
      std::vector<Candidate> cand;
      for (int g : kept)
        for (int c = 0; c < static_cast<int>(meas[l].size()); ++c) {
          const double dist = bin_distance(meas[l][c], pred[g], l, fused[g]);
          if (dist <= opts.refine_gate) cand.push_back({!fused[g], dist, g, c});
        }
      std::stable_sort(cand.begin(), cand.end(), [](const auto& x, const auto& y) {
        return std::tie(x.coarse, x.dist) < std::tie(y.coarse, y.dist);
      });
      for (int g : kept) groups[g].member[l] = -1;
      std::vector<bool> used(meas[l].size(), false);
      for (const auto& cd : cand) {
        if (used[cd.comp] || groups[cd.group].member[l] >= 0) continue;
        groups[cd.group].member[l] = cd.comp;
        groups[cd.group].where[l] = at[cd.group];
        used[cd.comp] = true;
      }
      // components taken over by a fused group leave the unfused ones
      for (std::size_t g = 0; g < groups.size(); ++g)
        if (!is_kept[g] && groups[g].member[l] >= 0 && used[groups[g].member[l]]) groups[g].member[l] = -1;
    }
    groups.erase(std::remove_if(groups.begin(), groups.end(), [](const Group& g) { return g.count() == 0; }),
                 groups.end());
  }

  for (const auto& g : groups) {
    if (!supported(g)) {
      for (int l = 0; l < L; ++l)
        if (g.member[l] >= 0) out.orphans.push_back({l, g.member[l], g.where[l]});
      continue;
    }
    MeasurementSet m = to_set(g, static_cast<int>(out.groups.size()));
    if (g.ambiguous) out.warnings.push_back("group " + std::to_string(m.target) + " merges nearby components");
    out.groups.push_back(std::move(m));
    out.centroids.push_back(g.centroid());
  }
  if (!out.orphans.empty())
    out.warnings.push_back(std::to_string(out.orphans.size()) + " orphan component(s) not fused");
  return out;
}

Eigen::MatrixXd measurement_map(const Scenario& sc) {
  const int N = sc.num_bs();
  const int J = sc.num_rx();
  const int L = sc.num_pairs();
  Eigen::MatrixXd T = Eigen::MatrixXd::Zero(4 * L, 2 * N + 2 * J);
  for (int l = 0; l < L; ++l) {
    const auto [i, j] = sc.pair_of(l);
    T(l, i) += 1.0;
    T(l, j) += 1.0;
    T(L + l, N + i) += 1.0;
    T(L + l, N + j) += 1.0;
    T(2 * L + l, 2 * N + (j - sc.rx_start())) = 1.0;
    T(3 * L + l, 2 * N + J + (j - sc.rx_start())) = 1.0;
  }
  return T;
}

namespace {

struct WlsResult {
  Eigen::VectorXd theta;
  Eigen::MatrixXd cov;
};

WlsResult wls(const Eigen::MatrixXd& A, const Eigen::MatrixXd& W, const Eigen::VectorXd& b, const char* what) {
  WlsResult r;
  r.cov = spd_inverse(A.transpose() * W * A, 1e-13, what);
  r.theta = r.cov * (A.transpose() * W * b);
  return r;
}

Eigen::MatrixXd weight_of(const Eigen::MatrixXd& T, const Eigen::MatrixXd& Q, const char* what) {
  return spd_inverse(T * Q * T.transpose(), 1e-14, what);
}

// Column of the full mu vector -> column of the HD compressed vector (-1 if removed).
int compressed_index(int full, int N, int ref) {
  if (full == ref || full == N + ref) return -1;
  int c = full;
  if (full > ref) --c;
  if (full > N + ref) --c;
  return c;
}

WlsResult compress(const Eigen::MatrixXd& T, const MeasurementSet& m) {
  Eigen::VectorXd mm = m.m_hat;
  for (Eigen::Index n = 0; n < mm.size(); ++n)
    if (!(m.weight(n) > 0)) mm(n) = 0.0;
  try {
    return wls(T, m.weight.asDiagonal().toDenseMatrix(), mm, "compression normal matrix is singular");
  } catch (const SingularGeometry& e) {
    throw RankError(std::string(e.what()) + " (too few pairs observe the target)");
  }
}

}  // namespace

CompressedMeasurements compress_fd(const MeasurementSet& m, const Scenario& sc, int reference) {
  const WlsResult r = compress(measurement_map(sc), m);
  CompressedMeasurements c;
  c.duplex = Duplex::FD;
  c.reference = reference;
  c.mu = r.theta;
  c.cov = r.cov;
  return c;
}

CompressedMeasurements compress_hd(const MeasurementSet& m, const Scenario& sc, int reference) {
  const int N = sc.num_bs();
  const Eigen::MatrixXd T = measurement_map(sc);
  Eigen::MatrixXd Tp(T.rows(), T.cols() - 2);
  for (int col = 0; col < T.cols(); ++col) {
    const int c = compressed_index(col, N, reference);
    if (c >= 0) Tp.col(c) = T.col(col);
  }
  const WlsResult r = compress(Tp, m);
  const Eigen::MatrixXd W = m.weight.asDiagonal();
  CompressedMeasurements c;
  c.duplex = Duplex::HD;
  c.reference = reference;
  c.mu = r.theta;
  c.cov = r.cov;
  c.coupling_d = -r.cov * (Tp.transpose() * W * T.col(reference));
  c.coupling_rate = -r.cov * (Tp.transpose() * W * T.col(N + reference));
  return c;
}

LinearSystem stage1_fd(const Eigen::VectorXd& mu, const Scenario& sc, int ref) {
  const int N = sc.num_bs();
  const int J = sc.num_rx();
  const int rows = 2 * N + 2 * J - 2;
  LinearSystem s{Eigen::MatrixXd::Zero(rows, 6), Eigen::VectorXd::Zero(rows),
                 Eigen::MatrixXd::Zero(rows, 2 * N + 2 * J)};
  const Vec3& b0 = sc.stations.at(ref).position;
  const double d0 = mu(ref);
  const double v0 = mu(N + ref);
  int r = 0;
  for (int i = 0; i < N; ++i) {
    if (i == ref) continue;
    const Vec3& bi = sc.stations[i].position;
    s.A.block<1, 3>(r, 0) = 2.0 * (bi - b0).transpose();
    s.b(r) = bi.squaredNorm() - b0.squaredNorm() - mu(i) * mu(i) + d0 * d0;
    s.T(r, i) = -2.0 * mu(i);
    s.T(r, ref) = 2.0 * d0;
    ++r;
  }
  for (int i = 0; i < N; ++i) {
    if (i == ref) continue;
    const Vec3& bi = sc.stations[i].position;
    s.A.block<1, 3>(r, 3) = 2.0 * (bi - b0).transpose();
    s.b(r) = -2.0 * mu(i) * mu(N + i) + 2.0 * d0 * v0;
    s.T(r, i) = -2.0 * mu(N + i);
    s.T(r, N + i) = -2.0 * mu(i);
    s.T(r, ref) = 2.0 * v0;
    s.T(r, N + ref) = 2.0 * d0;
    ++r;
  }
  for (int axis = 0; axis < 2; ++axis)
    for (int jj = 0; jj < J; ++jj) {
      const int j = sc.rx_start() + jj;
      const auto& bs = sc.stations[j];
      const Vec3& dir = axis == 0 ? bs.panel_x : bs.panel_y;
      const int col = 2 * N + axis * J + jj;
      s.A.block<1, 3>(r, 0) = dir.transpose();
      s.b(r) = dir.dot(bs.position) + mu(j) * mu(col);
      s.T(r, j) = mu(col);
      s.T(r, col) = mu(j);
      ++r;
    }
  return s;
}

LinearSystem stage1_hd(const CompressedMeasurements& c, const Scenario& sc, double d_ref, double rate_ref) {
  const int N = sc.num_bs();
  const int J = sc.num_rx();
  const int ref = c.reference;
  const int P = 2 * N + 2 * J - 2;
  // Expand to full indexing: the reference has d'' = 0 and coupling 1.
  Eigen::VectorXd dpp = Eigen::VectorXd::Zero(N), vpp = Eigen::VectorXd::Zero(N);
  Eigen::VectorXd gd = Eigen::VectorXd::Ones(N), gv = Eigen::VectorXd::Ones(N);
  for (int b = 0; b < N; ++b) {
    if (b == ref) continue;
    dpp(b) = c.mu(compressed_index(b, N, ref));
    vpp(b) = c.mu(compressed_index(N + b, N, ref));
    gd(b) = c.coupling_d(compressed_index(b, N, ref));
    gv(b) = c.coupling_rate(compressed_index(N + b, N, ref));
  }
  LinearSystem s{Eigen::MatrixXd::Zero(P, 8), Eigen::VectorXd::Zero(P), Eigen::MatrixXd::Zero(P, P)};
  const Vec3& b0 = sc.stations.at(ref).position;
  int r = 0;
  for (int i = 0; i < N; ++i) {
    if (i == ref) continue;
    const Vec3& bi = sc.stations[i].position;
    s.A.block<1, 3>(r, 0) = 2.0 * (bi - b0).transpose();
    s.A(r, 6) = 2.0 * gd(i) * dpp(i);
    s.b(r) = bi.squaredNorm() - b0.squaredNorm() - dpp(i) * dpp(i);
    s.T(r, compressed_index(i, N, ref)) = -2.0 * (dpp(i) + gd(i) * d_ref);
    ++r;
  }
  for (int i = 0; i < N; ++i) {
    if (i == ref) continue;
    const Vec3& bi = sc.stations[i].position;
    s.A.block<1, 3>(r, 3) = 2.0 * (bi - b0).transpose();
    s.A(r, 6) = 2.0 * gd(i) * vpp(i);
    s.A(r, 7) = 2.0 * gv(i) * dpp(i);
    s.b(r) = -2.0 * dpp(i) * vpp(i);
    s.T(r, compressed_index(i, N, ref)) = -2.0 * (vpp(i) + gv(i) * rate_ref);
    s.T(r, compressed_index(N + i, N, ref)) = -2.0 * (dpp(i) + gd(i) * d_ref);
    ++r;
  }
  for (int axis = 0; axis < 2; ++axis)
    for (int jj = 0; jj < J; ++jj) {
      const int j = sc.rx_start() + jj;
      const auto& bs = sc.stations[j];
      const Vec3& dir = axis == 0 ? bs.panel_x : bs.panel_y;
      const int col = compressed_index(2 * N + axis * J + jj, N, ref);
      const double cosv = c.mu(col);
      s.A.block<1, 3>(r, 0) = dir.transpose();
      s.A(r, 6) = -gd(j) * cosv;
      s.b(r) = dir.dot(bs.position) + dpp(j) * cosv;
      if (j != ref) s.T(r, compressed_index(j, N, ref)) = cosv;
      s.T(r, col) = dpp(j) + gd(j) * d_ref;
      ++r;
    }
  return s;
}

LinearSystem stage2(const Eigen::VectorXd& mu, const Vec3& t, const Vec3& t_dot, const Scenario& sc) {
  const int N = sc.num_bs();
  const int J = sc.num_rx();
  const int rows = 2 * N + 2 * J;
  LinearSystem s{Eigen::MatrixXd::Zero(rows, 6), Eigen::VectorXd::Zero(rows), Eigen::MatrixXd::Zero(rows, rows)};
  for (int i = 0; i < N; ++i) {
    const Vec3& bi = sc.stations[i].position;
    s.A.block<1, 3>(i, 0) = 2.0 * (bi - t).transpose();
    s.b(i) = (bi - t).squaredNorm() - mu(i) * mu(i);
    s.T(i, i) = -2.0 * mu(i);
    const int r = N + i;
    s.A.block<1, 3>(r, 0) = -2.0 * t_dot.transpose();
    s.A.block<1, 3>(r, 3) = 2.0 * (bi - t).transpose();
    s.b(r) = -2.0 * mu(i) * mu(N + i) + 2.0 * t.dot(t_dot) - 2.0 * bi.dot(t_dot);
    s.T(r, i) = -2.0 * mu(N + i);
    s.T(r, N + i) = -2.0 * mu(i);
  }
  for (int axis = 0; axis < 2; ++axis)
    for (int jj = 0; jj < J; ++jj) {
      const int j = sc.rx_start() + jj;
      const auto& bs = sc.stations[j];
      const Vec3& dir = axis == 0 ? bs.panel_x : bs.panel_y;
      const int row = 2 * N + axis * J + jj;
      s.A.block<1, 3>(row, 0) = dir.transpose();
      s.b(row) = dir.dot(bs.position) - dir.dot(t) + mu(j) * mu(row);
      s.T(row, j) = mu(row);
      s.T(row, row) = mu(j);
    }
  return s;
}

StateEstimate fuse_fd(const CompressedMeasurements& c, const Scenario& sc, const FusionOptions& opts) {
  const Eigen::MatrixXd& Q = c.cov;
  const LinearSystem s1 = stage1_fd(c.mu, sc, opts.reference);
  const WlsResult r1 = wls(s1.A, weight_of(s1.T, Q, "first-stage weight is singular"), s1.b,
                           "first-stage normal matrix is singular (collinear or too few BSs)");
  StateEstimate est;
  est.stage1 = r1.theta;
  est.stage1_cov = r1.cov;
  est.position = r1.theta.head<3>();
  est.velocity = r1.theta.tail<3>();
  est.covariance = r1.cov;
  try {
    const LinearSystem s2 = stage2(c.mu, est.position, est.velocity, sc);
    const WlsResult r2 =
        wls(s2.A, weight_of(s2.T, Q, "second-stage weight is singular"), s2.b, "second-stage normal matrix");
    est.stage2 = r2.theta;
    est.position += r2.theta.head<3>();
    est.velocity += r2.theta.tail<3>();
    est.covariance = r2.cov;
  } catch (const SingularGeometry&) {
    est.stage2_skipped = true;
    est.stage2 = Eigen::VectorXd::Zero(6);
  }
  return est;
}

StateEstimate fuse_hd(const CompressedMeasurements& c, const Scenario& sc, const FusionOptions& opts) {
  const int N = sc.num_bs();
  const int J = sc.num_rx();
  const int ref = c.reference;
  const int P = 2 * N + 2 * J - 2;
  const Eigen::MatrixXd& Q = c.cov;
  const char* singular1 = "first-stage normal matrix is singular (collinear or too few BSs)";

  // The first-stage error map depends on the nuisance values: seed them with
  // an unweighted solve (rows normalized), then weight around the estimate twice.
  LinearSystem s1 = stage1_hd(c, sc, 0.0, 0.0);
  const Eigen::VectorXd row_scale = s1.A.rowwise().norm().cwiseInverse();
  WlsResult r1 = wls(s1.A, row_scale.cwiseAbs2().asDiagonal().toDenseMatrix(), s1.b, singular1);
  Eigen::MatrixXd W1;
  for (int pass = 0; pass < 2; ++pass) {
    s1 = stage1_hd(c, sc, r1.theta(6), r1.theta(7));
    W1 = weight_of(s1.T, Q, "first-stage weight is singular");
    r1 = wls(s1.A, W1, s1.b, singular1);
  }

  StateEstimate est;
  est.stage1 = r1.theta;
  est.stage1_cov = r1.cov;
  est.nuisance_d = r1.theta(6);
  est.nuisance_rate = r1.theta(7);
  est.position = r1.theta.head<3>();
  est.velocity = r1.theta.segment<3>(3);
  est.covariance = r1.cov.topLeftCorner<6, 6>();

  // First-order sensitivity of the stage-1 solution to the compressed errors.
  const Eigen::MatrixXd G = r1.cov * s1.A.transpose() * W1 * s1.T;
  const Eigen::RowVectorXd g_d = G.row(6);
  const Eigen::RowVectorXd g_v = G.row(7);

  Eigen::VectorXd mu(2 * N + 2 * J);
  Eigen::MatrixXd Tmu = Eigen::MatrixXd::Zero(2 * N + 2 * J, P);  // full mu error from compressed error
  for (int b = 0; b < N; ++b) {
    if (b == ref) {
      mu(b) = est.nuisance_d;
      mu(N + b) = est.nuisance_rate;
      Tmu.row(b) = g_d;
      Tmu.row(N + b) = g_v;
      continue;
    }
    const int cd = compressed_index(b, N, ref);
    const int cv = compressed_index(N + b, N, ref);
    mu(b) = c.mu(cd) + c.coupling_d(cd) * est.nuisance_d;
    mu(N + b) = c.mu(cv) + c.coupling_rate(cv) * est.nuisance_rate;
    Tmu.row(b) = c.coupling_d(cd) * g_d;
    Tmu(b, cd) += 1.0;
    Tmu.row(N + b) = c.coupling_rate(cv) * g_v;
    Tmu(N + b, cv) += 1.0;
  }
  for (int a = 2 * N; a < 2 * N + 2 * J; ++a) {
    const int ca = compressed_index(a, N, ref);
    mu(a) = c.mu(ca);
    Tmu(a, ca) = 1.0;
  }

  try {
    const LinearSystem s2 = stage2(mu, est.position, est.velocity, sc);
    const Eigen::MatrixXd B = s2.T * Tmu;
    // B Q B^T has rank P < rows: project onto P random directions.
    for (int attempt = 0;; ++attempt) {
      std::mt19937_64 rng(opts.sampling_seed + static_cast<std::uint64_t>(attempt));
      std::normal_distribution<double> normal;
      Eigen::MatrixXd S(P, s2.A.rows());
      for (Eigen::Index col = 0; col < S.cols(); ++col)
        for (Eigen::Index row = 0; row < S.rows(); ++row) S(row, col) = normal(rng);
      try {
        const Eigen::MatrixXd SB = S * B;
        const WlsResult r2 = wls(S * s2.A, weight_of(SB, Q, "sampled second-stage weight is singular"),
                                 S * s2.b, "sampled second-stage normal matrix is singular");
        est.stage2 = r2.theta;
        est.position += r2.theta.head<3>();
        est.velocity += r2.theta.tail<3>();
        est.covariance = r2.cov;
        break;
      } catch (const SingularGeometry&) {
        if (attempt >= opts.sampling_retries) throw;
      }
    }
  } catch (const SingularGeometry&) {
    est.stage2_skipped = true;
    est.stage2 = Eigen::VectorXd::Zero(6);
  }
  return est;
}

StateEstimate fuse(const MeasurementSet& m, const Scenario& sc, const FusionOptions& opts) {
  StateEstimate est = sc.duplex == Duplex::FD ? fuse_fd(compress_fd(m, sc, opts.reference), sc, opts)
                                              : fuse_hd(compress_hd(m, sc, opts.reference), sc, opts);
  est.target = m.target;
  return est;
}

void write_fusion_header(std::ostream& os) { os << "trial,target,axis,true,estimate,error,root_crlb\n"; }

void write_fusion_rows(std::ostream& os, const Scenario& sc, int trial, int target, const StateEstimate& est) {
  const Target& truth = sc.targets.at(target);
  Eigen::VectorXd bound = Eigen::VectorXd::Constant(6, std::numeric_limits<double>::quiet_NaN());
  try {
    bound = crlb_state(sc, target).covariance.diagonal().cwiseSqrt();
  } catch (const SingularGeometry&) {
  }
  const char* axes[6] = {"x", "y", "z", "vx", "vy", "vz"};
  char buf[256];
  for (int a = 0; a < 6; ++a) {
    const double t = a < 3 ? truth.position(a) : truth.velocity(a - 3);
    const double e = a < 3 ? est.position(a) : est.velocity(a - 3);
    std::snprintf(buf, sizeof buf, "%d,%d,%s,%.9f,%.9f,%.9e,%.9e\n", trial, target, axes[a], t, e, e - t, bound(a));
    os << buf;
  }
}

}  // namespace ncs
