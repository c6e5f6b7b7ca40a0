// SPDX-License-Identifier: Apache-2.0
//
// Shared constants, small numeric helpers and the exception hierarchy.

#ifndef NCS_CORE_HPP
#define NCS_CORE_HPP

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace ncs {

inline constexpr double kSpeedOfLight = 299792458.0;  // m/s
inline constexpr double kPi = std::numbers::pi;

using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using cplx = std::complex<double>;

// Tensor dimensions in DM0..DM3 order (subcarrier, symbol, horizontal, vertical).
using Dims = std::array<int, 4>;

inline std::size_t total_size(const Dims& dims) {
  return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2] * dims[3];
}

template <typename Scalar>
Scalar db_to_linear(Scalar db) {
  return std::pow(Scalar(10), db / Scalar(10));
}

// dBm -> W
template <typename Scalar>
Scalar dbm_to_watt(Scalar dbm) {
  return db_to_linear(dbm - Scalar(30));
}

// Maps x into [lo, lo + 1).
inline double wrap_unit(double x, double lo) {
  double y = x - lo;
  y -= std::floor(y);
  if (y >= 1.0) y = 0.0;
  return y + lo;
}

class NcsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DegenerateBoresight : public NcsError {
 public:
  using NcsError::NcsError;
};

class CoincidentPoint : public NcsError {
 public:
  using NcsError::NcsError;
};

class AmbiguityError : public NcsError {
 public:
  using NcsError::NcsError;
};

class UnestimableDimension : public NcsError {
 public:
  using NcsError::NcsError;
};

class RankError : public NcsError {
 public:
  using NcsError::NcsError;
};

class OutOfRange : public NcsError {
 public:
  using NcsError::NcsError;
};

class ConfigError : public NcsError {
 public:
  using NcsError::NcsError;
};

// Singular information/normal matrix; carries the weakest direction.
class SingularGeometry : public NcsError {
 public:
  SingularGeometry(const std::string& what, Eigen::VectorXd null_direction)
      : NcsError(what), null_direction_(std::move(null_direction)) {}
  const Eigen::VectorXd& null_direction() const { return null_direction_; }

 private:
  Eigen::VectorXd null_direction_;
};

}  // namespace ncs

#endif  // NCS_CORE_HPP
