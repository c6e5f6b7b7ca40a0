// SPDX-License-Identifier: Apache-2.0

#include "ncs/channel.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <random>

namespace ncs {

Eigen::VectorXcd steering_tensor(const Vec4& f, const Dims& dims) {
  Eigen::VectorXcd out(total_size(dims));
  const Eigen::VectorXcd a0 = steering<double>(f(0), dims[0]);
  const Eigen::VectorXcd a1 = steering<double>(f(1), dims[1]);
  const Eigen::VectorXcd a2 = steering<double>(f(2), dims[2]);
  const Eigen::VectorXcd a3 = steering<double>(f(3), dims[3]);
  std::size_t idx = 0;
  for (int n3 = 0; n3 < dims[3]; ++n3)
    for (int n2 = 0; n2 < dims[2]; ++n2) {
      const cplx c23 = a3(n3) * a2(n2);
      for (int n1 = 0; n1 < dims[1]; ++n1) {
        const cplx c123 = c23 * a1(n1);
        for (int n0 = 0; n0 < dims[0]; ++n0) out(idx++) = c123 * a0(n0);
      }
    }
  return out;
}

ChannelTensor synthesize_pair(const Scenario& sc, int i, int j, std::uint64_t seed,
                              const SynthesisOptions& opts) {
  ChannelTensor t;
  t.pair = sc.pair_index(i, j);
  t.shape = sc.radio.dims();
  t.data = Eigen::VectorXcd::Zero(total_size(t.shape));
  std::vector<int> ks = opts.targets;
  if (ks.empty())
    for (int k = 0; k < sc.num_targets(); ++k) ks.push_back(k);
  for (int k : ks) {
    const Vec4 f = true_frequencies(sc, i, j, k, opts.wrap);
    const double amp = amplitude_and_noise(sc, i, j, k).amplitude;
    const cplx gain = std::polar(amp, initial_phase(sc, i, j, k));
    t.data += gain * steering_tensor(f, t.shape);
  }
  if (opts.noise) {
    t.sigma2 = noise_variance(sc.radio);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, std::sqrt(t.sigma2 / 2.0));
    for (Eigen::Index n = 0; n < t.data.size(); ++n) {
      const double re = normal(rng);
      const double im = normal(rng);
      t.data(n) += cplx(re, im);
    }
  }
  return t;
}

namespace {

static_assert(std::endian::native == std::endian::little, "tensor dump assumes a little-endian host");

template <typename T>
void put(std::ofstream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

}  // namespace

void write_tensor(const std::string& path, const ChannelTensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw NcsError("cannot open " + path + " for writing");
  os.write("NCST", 4);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(t.pair));
  for (int d : t.shape) put<std::uint32_t>(os, static_cast<std::uint32_t>(d));
  put<double>(os, t.sigma2);
  for (Eigen::Index n = 0; n < t.data.size(); ++n) {
    put<float>(os, static_cast<float>(t.data(n).real()));
    put<float>(os, static_cast<float>(t.data(n).imag()));
  }
}

ChannelTensor read_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw NcsError("cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (std::memcmp(magic, "NCST", 4) != 0) throw NcsError(path + " is not a tensor dump");
  ChannelTensor t;
  t.pair = static_cast<int>(get<std::uint32_t>(is));
  for (int& d : t.shape) d = static_cast<int>(get<std::uint32_t>(is));
  t.sigma2 = get<double>(is);
  t.data.resize(total_size(t.shape));
  for (Eigen::Index n = 0; n < t.data.size(); ++n) {
    const float re = get<float>(is);
    const float im = get<float>(is);
    t.data(n) = cplx(re, im);
  }
  if (!is) throw NcsError(path + " is truncated");
  return t;
}

}  // namespace ncs
