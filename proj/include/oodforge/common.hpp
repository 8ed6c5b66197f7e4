// Copyright 2026 The oodforge Authors.
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.

#ifndef OODFORGE_COMMON_HPP
#define OODFORGE_COMMON_HPP

#include <Eigen/Core>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace oodforge {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Rng = std::mt19937_64;

/// Base class for all errors raised by this library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Invalid argument / contract violation detected at a public surface.
class InvalidArgument : public Error {
 public:
  explicit InvalidArgument(const std::string& what) : Error(what) {}
};

/// Filesystem / serialization failures.
class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(what) {}
};

/// Numerical failure (non-finite values, singular matrices, divergence).
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(what) {}
};

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw InvalidArgument(msg);
}

inline void check_finite(const Matrix& m, const std::string& what) {
  if (!m.allFinite()) throw NumericError(what + ": non-finite entries");
}

/// FNV-1a 64-bit over raw bytes. Used for content-addressed checkpoint and
/// dataset fingerprints; stable across platforms for our little-endian data.
inline std::uint64_t fnv1a(const void* data, std::size_t n,
                           std::uint64_t seed = 1469598103934665603ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t fnv1a(const Matrix& m, std::uint64_t seed = 1469598103934665603ull) {
  // Matrix is column-major contiguous.
  return fnv1a(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()), seed);
}

inline std::string hex64(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace oodforge

#endif  // OODFORGE_COMMON_HPP
