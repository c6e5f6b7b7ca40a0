// SPDX-License-Identifier: Apache-2.0

#include "ncs/adnomp.hpp"

#include <algorithm>
#include <limits>
#include <cstdio>
#include <numeric>
#include <ostream>

#include <unsupported/Eigen/FFT>

namespace ncs {

namespace {

std::size_t product(Shape dims, std::size_t from = 0) {
  std::size_t p = 1;
  for (std::size_t d = from; d < dims.size(); ++d) p *= static_cast<std::size_t>(dims[d]);
  return p;
}

// out(r) = sum_n w(n) v(n + Na * r): contracts the leading (fastest) dimension.
Eigen::VectorXcd contract(const Eigen::VectorXcd& v, const Eigen::VectorXcd& w) {
  const Eigen::Index na = w.size();
  const Eigen::Index rest = v.size() / na;
  Eigen::Map<const Eigen::MatrixXcd> m(v.data(), na, rest);
  return m.transpose() * w;
}

// e^{-j 2 pi f n} * n^power
Eigen::VectorXcd demod(double f, int n, int power) {
  Eigen::VectorXcd w(n);
  for (int k = 0; k < n; ++k) {
    const double scale = power == 0 ? 1.0 : std::pow(static_cast<double>(k), power);
    w(k) = std::polar(scale, -2.0 * kPi * f * k);
  }
  return w;
}

double wrap_dim(double f, int dim) { return wrap_unit(f, freq_floor(dim)); }

// a(f)^H y and sum_n n_d conj(a(f))[n] y[n] for every d.
std::pair<cplx, Eigen::VectorXcd> first_moments(const FreqRef& f, const Eigen::VectorXcd& y, Shape dims) {
  const int D = static_cast<int>(dims.size());
  Eigen::VectorXcd plain = y;
  std::vector<Eigen::VectorXcd> weighted;  // weighted[d] carries n_d
  for (int d = 0; d < D; ++d) {
    const Eigen::VectorXcd w0 = demod(f(d), dims[d], 0);
    for (auto& v : weighted) v = contract(v, w0);
    weighted.push_back(contract(plain, demod(f(d), dims[d], 1)));
    plain = contract(plain, w0);
  }
  Eigen::VectorXcd m(D);
  for (int d = 0; d < D; ++d) m(d) = weighted[d](0);
  return {plain(0), m};
}

// sum_{n < N} n^p e^{j 2 pi df n}
cplx power_sum(double df, int N, int p) {
  cplx s = 0;
  for (int n = 0; n < N; ++n) s += std::polar(std::pow(static_cast<double>(n), p), 2.0 * kPi * df * n);
  return s;
}

}  // namespace

Eigen::VectorXcd steering_tensor(const FreqRef& f, Shape dims) {
  Eigen::VectorXcd out = Eigen::VectorXcd::Ones(1);
  for (std::size_t d = 0; d < dims.size(); ++d) {
    const Eigen::VectorXcd a = steering<double>(f(d), dims[d]);
    Eigen::VectorXcd next(out.size() * a.size());
    // new index = old + old_size * n_d, so earlier dimensions stay fastest.
    for (Eigen::Index n = 0; n < a.size(); ++n) next.segment(n * out.size(), out.size()) = a(n) * out;
    out.swap(next);
  }
  return out;
}

double objective(const FreqRef& f, const Eigen::VectorXcd& y, Shape dims) {
  Eigen::VectorXcd v = y;
  for (std::size_t d = 0; d < dims.size(); ++d) v = contract(v, demod(f(d), dims[d], 0));
  return std::norm(v(0));
}

ObjectiveDerivatives objective_derivatives(const FreqRef& f, const Eigen::VectorXcd& y, Shape dims) {
  const int D = static_cast<int>(dims.size());
  // Moments z_p = sum_n prod_d n_d^{p_d} e^{-j2pi f.n} y[n] for |p| <= 2, keyed by
  // the (sorted) dimensions that carry a power: (-1,-1), (a,-1), (a,b) with a <= b.
  struct Moment {
    int first;
    int second;
    Eigen::VectorXcd v;
  };
  std::vector<Moment> moments{{-1, -1, y}};
  for (int d = 0; d < D; ++d) {
    const Eigen::VectorXcd w0 = demod(f(d), dims[d], 0);
    const Eigen::VectorXcd w1 = demod(f(d), dims[d], 1);
    const Eigen::VectorXcd w2 = demod(f(d), dims[d], 2);
    std::vector<Moment> next;
    for (const auto& m : moments) {
      next.push_back({m.first, m.second, contract(m.v, w0)});
      if (m.first < 0) {
        next.push_back({d, -1, contract(m.v, w1)});
        next.push_back({d, d, contract(m.v, w2)});
      } else if (m.second < 0) {
        next.push_back({m.first, d, contract(m.v, w1)});
      }
    }
    moments.swap(next);
  }
  cplx z = 0;
  Eigen::VectorXcd z1 = Eigen::VectorXcd::Zero(D);
  Eigen::MatrixXcd z2 = Eigen::MatrixXcd::Zero(D, D);
  const cplx mj2pi(0.0, -2.0 * kPi);
  for (const auto& m : moments) {
    const cplx s = m.v(0);
    if (m.first < 0) {
      z = s;
    } else if (m.second < 0) {
      z1(m.first) = mj2pi * s;
    } else {
      z2(m.first, m.second) = z2(m.second, m.first) = mj2pi * mj2pi * s;
    }
  }
  ObjectiveDerivatives out;
  out.projection = z;
  out.value = std::norm(z);
  out.gradient.resize(D);
  out.hessian.resize(D, D);
  for (int a = 0; a < D; ++a) {
    out.gradient(a) = 2.0 * std::real(std::conj(z) * z1(a));
    for (int b = 0; b < D; ++b)
      out.hessian(a, b) = 2.0 * std::real(std::conj(z1(a)) * z1(b) + std::conj(z) * z2(a, b));
  }
  return out;
}

double coarse_search(const Eigen::VectorXcd& residual, Shape dims, std::span<const double> prefix, int dim,
                     int oversampling) {
  Eigen::VectorXcd v = residual;
  for (int d = 0; d < dim; ++d) v = contract(v, demod(prefix[d], dims[d], 0));
  const int na = dims[dim];
  const int grid = na * oversampling;
  const Eigen::Index rest = v.size() / na;
  Eigen::FFT<double> fft;
  std::vector<cplx> in(grid, cplx(0));
  std::vector<cplx> out;
  Eigen::VectorXd power = Eigen::VectorXd::Zero(grid);
  for (Eigen::Index r = 0; r < rest; ++r) {
    for (int n = 0; n < na; ++n) in[n] = v(n + na * r);
    fft.fwd(out, in);
    for (int k = 0; k < grid; ++k) power(k) += std::norm(out[k]);
  }
  Eigen::Index best = 0;
  power.maxCoeff(&best);
  return wrap_dim(static_cast<double>(best) / grid, dim);
}

Eigen::VectorXd newton_refine(const FreqRef& f_in, const Eigen::VectorXcd& y, Shape dims, int max_iter) {
  const int D = static_cast<int>(dims.size());
  Eigen::VectorXd f = f_in;
  for (int iter = 0; iter < max_iter; ++iter) {
    const ObjectiveDerivatives od = objective_derivatives(f, y, dims);
    Eigen::VectorXd step(D);
    const Eigen::MatrixXd neg = -od.hessian;
    Eigen::LLT<Eigen::MatrixXd> llt(neg);
    if (llt.info() == Eigen::Success) {
      step = llt.solve(od.gradient);
    } else {
      // Not concave here: refine each dimension independently.
      for (int a = 0; a < D; ++a) step(a) = od.hessian(a, a) < 0 ? -od.gradient(a) / od.hessian(a, a) : 0.0;
    }
    // A step longer than one DFT bin leaves the basin the coarse search picked.
    double excess = 1.0;
    for (int a = 0; a < D; ++a) excess = std::max(excess, std::abs(step(a)) * dims[a]);
    step /= excess;
    if (step.cwiseAbs().maxCoeff() < 1e-15) break;
    bool accepted = false;
    for (int halving = 0; halving <= 6; ++halving) {
      Eigen::VectorXd trial = f + step;
      for (int a = 0; a < D; ++a) trial(a) = wrap_dim(trial(a), a);
      if (objective(trial, y, dims) >= od.value) {
        f = trial;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
  }
  return f;
}

double default_threshold(double sigma2, std::size_t samples) {
  const double s = static_cast<double>(samples);
  return sigma2 * s * (1.0 + 3.0 / std::sqrt(s));
}

namespace {

struct Pursuit {
  Shape dims;
  const Eigen::VectorXcd& y;
  const NompOptions& opts;
  double atom_norm2;
  std::vector<Eigen::VectorXd> freqs;
  std::vector<Eigen::VectorXcd> atoms;
  std::vector<cplx> gains;
  std::vector<double> detect_power;
  Eigen::VectorXcd residual;
  std::vector<std::string> warnings;

  Pursuit(Shape d, const Eigen::VectorXcd& data, const NompOptions& o)
      : dims(d), y(data), opts(o), atom_norm2(static_cast<double>(product(d))), residual(data) {}

  Eigen::VectorXd coarse() const {
    std::vector<double> f;
    for (std::size_t d = 0; d < dims.size(); ++d)
      f.push_back(coarse_search(residual, dims, f, static_cast<int>(d), opts.oversampling));
    return Eigen::Map<const Eigen::VectorXd>(f.data(), static_cast<Eigen::Index>(f.size()));
  }

  void add() {
    const double before = residual.squaredNorm();
    Eigen::VectorXd f = newton_refine(coarse(), residual, dims, opts.newton_iterations);
    Eigen::VectorXcd a = steering_tensor(f, dims);
    const cplx g = a.dot(residual) / atom_norm2;
    residual -= g * a;
    freqs.push_back(std::move(f));
    atoms.push_back(std::move(a));
    gains.push_back(g);
    detect_power.push_back(before);
  }

  // One leave-one-out sweep; returns the largest frequency change.
  double cyclic_sweep() {
    double moved = 0;
    for (std::size_t c = 0; c < freqs.size(); ++c) {
      residual += gains[c] * atoms[c];
      Eigen::VectorXd f = newton_refine(freqs[c], residual, dims, opts.newton_iterations);
      for (Eigen::Index d = 0; d < f.size(); ++d) {
        double delta = std::abs(f(d) - freqs[c](d));
        moved = std::max(moved, std::min(delta, 1.0 - delta));
      }
      atoms[c] = steering_tensor(f, dims);
      gains[c] = atoms[c].dot(residual) / atom_norm2;
      freqs[c] = std::move(f);
      residual -= gains[c] * atoms[c];
    }
    return moved;
  }

  void joint_gains() {
    while (!atoms.empty()) {
      const Eigen::Index m = static_cast<Eigen::Index>(atoms.size());
      Eigen::MatrixXcd gram(m, m);
      Eigen::VectorXcd rhs(m);
      for (Eigen::Index a = 0; a < m; ++a) {
        rhs(a) = atoms[a].dot(y);
        for (Eigen::Index b = 0; b < m; ++b) gram(a, b) = atoms[a].dot(atoms[b]);
      }
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(gram, Eigen::EigenvaluesOnly);
      const double cond = es.eigenvalues()(m - 1) / std::max(es.eigenvalues()(0), 1e-300);
      if (cond > opts.gram_condition_limit) {
        std::size_t weakest = 0;
        for (std::size_t c = 1; c < gains.size(); ++c)
          if (std::abs(gains[c]) < std::abs(gains[weakest])) weakest = c;
        warnings.push_back("near-identical components; dropped the weaker one");
        freqs.erase(freqs.begin() + weakest);
        atoms.erase(atoms.begin() + weakest);
        gains.erase(gains.begin() + weakest);
        detect_power.erase(detect_power.begin() + weakest);
        continue;
      }
      const Eigen::VectorXcd g = gram.ldlt().solve(rhs);
      residual = y;
      for (Eigen::Index a = 0; a < m; ++a) {
        gains[a] = g(a);
        residual -= g(a) * atoms[a];
      }
      return;
    }
    residual = y;
  }

  void rebuild(const std::vector<Eigen::VectorXd>& f, const std::vector<cplx>& g) {
    residual = y;
    for (std::size_t c = 0; c < f.size(); ++c) {
      atoms[c] = steering_tensor(f[c], dims);
      residual -= g[c] * atoms[c];
    }
  }

  /// Gauss-Newton on ||y - sum_k g_k a(f_k)||^2 over every gain and frequency
  /// at once. Atoms are separable, so all inner products between (derivative)
  /// atoms factor into 1-D power sums and never touch the full tensor.
  void joint_polish() {
    const int K = static_cast<int>(freqs.size());
    const int D = static_cast<int>(dims.size());
    const int per = 2 + D;
    const int P = K * per;
    if (K == 0) return;
    const cplx j2pi(0.0, 2.0 * kPi);
    for (int round = 0; round < opts.polish_rounds; ++round) {
      // Column p of the complex Jacobian is scale[p] * (n_{deriv[p]} (.) a_{comp[p]}).
      std::vector<cplx> scale(P);
      std::vector<int> deriv(P);
      for (int k = 0; k < K; ++k) {
        scale[k * per] = 1.0;
        scale[k * per + 1] = cplx(0, 1);
        deriv[k * per] = deriv[k * per + 1] = -1;
        for (int d = 0; d < D; ++d) {
          scale[k * per + 2 + d] = gains[k] * j2pi;
          deriv[k * per + 2 + d] = d;
        }
      }
      Eigen::VectorXd b(P);
      for (int k = 0; k < K; ++k) {
        const auto [z, m] = first_moments(freqs[k], residual, dims);
        for (int q = 0; q < per; ++q) {
          const int p = k * per + q;
          b(p) = std::real(std::conj(scale[p]) * (deriv[p] < 0 ? z : m(deriv[p])));
        }
      }
      Eigen::MatrixXd M(P, P);
      for (int k = 0; k < K; ++k)
        for (int l = k; l < K; ++l) {
          // sums[c][power] for the frequency offset f_l - f_k in dimension c
          std::vector<std::array<cplx, 3>> sums(D);
          for (int c = 0; c < D; ++c)
            for (int pw = 0; pw < 3; ++pw) sums[c][pw] = power_sum(freqs[l](c) - freqs[k](c), dims[c], pw);
          for (int qa = 0; qa < per; ++qa)
            for (int qb = 0; qb < per; ++qb) {
              const int pa = k * per + qa;
              const int pb = l * per + qb;
              cplx prod = std::conj(scale[pa]) * scale[pb];
              for (int c = 0; c < D; ++c) prod *= sums[c][(deriv[pa] == c) + (deriv[pb] == c)];
              M(pa, pb) = M(pb, pa) = std::real(prod);
            }
        }
      Eigen::VectorXd s = M.diagonal().cwiseAbs().cwiseSqrt();
      for (Eigen::Index i = 0; i < s.size(); ++i)
        if (!(s(i) > 0)) s(i) = 1.0;
      const Eigen::MatrixXd Ms = s.cwiseInverse().asDiagonal() * M * s.cwiseInverse().asDiagonal();
      Eigen::VectorXd step = s.cwiseInverse().asDiagonal() * Ms.ldlt().solve(s.cwiseInverse().asDiagonal() * b);
      if (!step.allFinite()) return;
      const double before = residual.squaredNorm();
      const std::vector<Eigen::VectorXd> f0 = freqs;
      const std::vector<cplx> g0 = gains;
      bool accepted = false;
      double moved = 0;
      for (int halving = 0; halving <= 6 && !accepted; ++halving, step *= 0.5) {
        std::vector<Eigen::VectorXd> f = f0;
        std::vector<cplx> g = g0;
        moved = 0;
        for (int k = 0; k < K; ++k) {
          g[k] += cplx(step(k * per), step(k * per + 1));
          for (int d = 0; d < D; ++d) {
            const double delta = step(k * per + 2 + d);
            moved = std::max(moved, std::abs(delta));
            f[k](d) = wrap_dim(f[k](d) + delta, d);
          }
        }
        rebuild(f, g);
        // a rise at round-off level is not a worse fit
        if (residual.squaredNorm() <= before * (1 + 64 * std::numeric_limits<double>::epsilon())) {
          freqs = std::move(f);
          gains = std::move(g);
          accepted = true;
        }
      }
      if (!accepted) {
        rebuild(freqs, gains);
        return;
      }
      if (moved < opts.polish_tolerance) return;
    }
  }
};

}  // namespace

DetectionList detect(const Eigen::VectorXcd& y, Shape dims, const StopRule& stop, const NompOptions& opts) {
  if (product(dims) != static_cast<std::size_t>(y.size())) throw NcsError("tensor size does not match its shape");
  if (!y.allFinite()) throw NcsError("tensor has non-finite entries");
  Pursuit p(dims, y, opts);
  DetectionList out;
  const KnownCount* known = std::get_if<KnownCount>(&stop);
  const double threshold = known ? 0.0 : std::get<PowerThreshold>(stop).power;
  auto done = [&] {
    if (known) return static_cast<int>(p.freqs.size()) >= known->count;
    return p.residual.squaredNorm() <= threshold || static_cast<int>(p.freqs.size()) >= opts.max_components;
  };
  while (!done()) {
    const std::size_t before = p.freqs.size();
    p.add();
    for (int round = 0; round < opts.cyclic_rounds; ++round) p.cyclic_sweep();
    p.joint_gains();
    ++out.iterations;
    out.residual_history.push_back(p.residual.squaredNorm());
    // A dropped duplicate means the pursuit is no longer making progress.
    if (p.freqs.size() <= before) break;
  }
  p.joint_polish();
  for (std::size_t c = 0; c < p.freqs.size(); ++c)
    out.components.push_back({p.gains[c], p.freqs[c], p.detect_power[c]});
  std::stable_sort(out.components.begin(), out.components.end(),
                   [](const auto& a, const auto& b) { return std::abs(a.gain) > std::abs(b.gain); });
  out.final_residual_power = p.residual.squaredNorm();
  out.warnings = std::move(p.warnings);
  return out;
}

DetectionList detect(const ChannelTensor& y, const StopRule& stop, const NompOptions& opts) {
  return detect(y.data, y.shape, stop, opts);
}

void write_detections_csv(std::ostream& os, const std::vector<DetectionList>& per_pair) {
  os << "pair,component,re_g,im_g,f0,f1,f2,f3,residual_power\n";
  char buf[320];
  for (std::size_t l = 0; l < per_pair.size(); ++l) {
    const auto& list = per_pair[l];
    for (std::size_t c = 0; c < list.components.size(); ++c) {
      const auto& comp = list.components[c];
      const Eigen::VectorXd& f = comp.freqs;
      std::snprintf(buf, sizeof buf, "%zu,%zu,%.12e,%.12e,%.15f,%.15f,%.15f,%.15f,%.9e\n", l, c,
                    comp.gain.real(), comp.gain.imag(), f(0), f.size() > 1 ? f(1) : 0.0,
                    f.size() > 2 ? f(2) : 0.0, f.size() > 3 ? f(3) : 0.0, comp.residual_power_at_detection);
      os << buf;
    }
  }
}

}  // namespace ncs
