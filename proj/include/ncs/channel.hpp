// SPDX-License-Identifier: Apache-2.0
//
// Multi-target 4-D sensing channel synthesis at the channel-estimate level.

#ifndef NCS_CHANNEL_HPP
#define NCS_CHANNEL_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "ncs/scenario.hpp"

namespace ncs {

/// Dense complex tensor of one TX-RX pair, DM0 fastest:
/// index = n0 + N0 * (n1 + N1 * (n2 + N2 * n3)).
struct ChannelTensor {
  int pair = 0;
  Dims shape{0, 0, 0, 0};
  Eigen::VectorXcd data;
  double sigma2 = 0;  // injected noise variance per entry

  std::size_t size() const { return total_size(shape); }
  std::size_t index(int n0, int n1, int n2, int n3) const {
    return n0 + static_cast<std::size_t>(shape[0]) *
                    (n1 + static_cast<std::size_t>(shape[1]) * (n2 + static_cast<std::size_t>(shape[2]) * n3));
  }
  cplx operator()(int n0, int n1, int n2, int n3) const { return data(index(n0, n1, n2, n3)); }
};

template <typename Scalar>
Eigen::Matrix<std::complex<Scalar>, Eigen::Dynamic, 1> steering(Scalar f, int n) {
  Eigen::Matrix<std::complex<Scalar>, Eigen::Dynamic, 1> a(n);
  for (int k = 0; k < n; ++k) a(k) = std::polar(Scalar(1), Scalar(2) * Scalar(kPi) * f * Scalar(k));
  return a;
}

// a3 (x) a2 (x) a1 (x) a0 flattened DM0-fastest.
Eigen::VectorXcd steering_tensor(const Vec4& f, const Dims& dims);

struct SynthesisOptions {
  bool noise = true;
  WrapMode wrap = WrapMode::Strict;
  std::vector<int> targets;  // empty: all targets
};

ChannelTensor synthesize_pair(const Scenario& sc, int i, int j, std::uint64_t seed,
                              const SynthesisOptions& opts = {});

// Binary dump: 32-byte header (magic "NCST", u32 pair, u32 N0..N3, f64 sigma2)
// followed by little-endian complex64 entries, DM0 fastest.
void write_tensor(const std::string& path, const ChannelTensor& t);
ChannelTensor read_tensor(const std::string& path);

}  // namespace ncs

#endif  // NCS_CHANNEL_HPP
