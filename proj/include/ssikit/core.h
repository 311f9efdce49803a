// include/ssikit/core.h

// Copyright 2026  The ssikit Authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace ssikit {

/// Frame-major feature matrix: one row per frame, one column per dimension.
template <typename Scalar>
using FeatureMatrixT =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using FeatureMatrix = FeatureMatrixT<double>;

/// Row-major pixel grid (rows = image rows).
template <typename Scalar>
using GridT =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Grid = GridT<float>;

using Rng = std::mt19937_64;

// Error categories map onto CLI exit codes (usage 1, data 2, numerical 3).
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// FNV-1a; stable across platforms, used to derive per-entity seeds.
inline std::uint64_t HashString(std::string_view s,
                                std::uint64_t h = 1469598103934665603ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::uint64_t MixSeed(std::uint64_t seed, std::string_view tag) {
  std::uint64_t z = HashString(tag, seed ^ 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Uniform double in [0, 1) from the raw engine output, independent of the
/// standard library's distribution implementation.
inline double Uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Standard normal via Box-Muller on Uniform01 (portable, deterministic).
inline double StdNormal(Rng& rng) {
  double u1 = Uniform01(rng);
  double u2 = Uniform01(rng);
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

/// Uniform integer in [0, n).
inline std::size_t UniformIndex(Rng& rng, std::size_t n) {
  return static_cast<std::size_t>(Uniform01(rng) * static_cast<double>(n)) %
         (n == 0 ? 1 : n);
}

void LogWarning(std::string_view msg);
void LogInfo(std::string_view msg);
void SetVerbose(bool verbose);

}  // namespace ssikit
