// Copyright 2026 The rmgap Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <random>
#include <span>

#include "rmgap/linalg.hpp"

namespace rmgap {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; used to derive independent sub-seeds.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Counter-based sub-seed: stream `stream` of parent seed `seed`.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return mix64(mix64(seed) ^ mix64(stream + 0x632be59bd9b4e019ULL));
}

template <class Int>
std::uint64_t hash_sequence(std::uint64_t seed, std::span<const Int> values) {
  std::uint64_t h = mix64(seed ^ 0x2545f4914f6cdd1dULL);
  h = mix64(h ^ values.size());
  for (Int v : values) h = mix64(h ^ static_cast<std::uint64_t>(v));
  return h;
}

/// Uniform double in [0, 1) from the top 53 bits of one engine draw.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline Vector gaussian_vector(Rng& rng, std::size_t dim, double stddev = 1.0) {
  std::normal_distribution<double> normal(0.0, stddev);
  Vector v(dim);
  for (double& x : v) x = normal(rng);
  return v;
}

inline Vector random_unit_vector(Rng& rng, std::size_t dim) {
  for (;;) {
    Vector v = gaussian_vector(rng, dim);
    const double n = norm(v);
    if (n > 1e-12) {
      for (double& x : v) x /= n;
      return v;
    }
  }
}

inline Matrix gaussian_matrix(Rng& rng, std::size_t rows, std::size_t cols, double stddev) {
  Matrix m(rows, cols);
  std::normal_distribution<double> normal(0.0, stddev);
  for (double& x : m.flat()) x = normal(rng);
  return m;
}

}  // namespace rmgap
