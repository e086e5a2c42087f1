// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace ssrt {

/// Deterministic counter-based generator (splitmix64 core) with named
/// sub-stream forking. Two generators built from the same seed and the same
/// fork path emit bit-identical sequences on every platform; none of the
/// sampling helpers touch std::random distributions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  /// Child stream keyed by a label; does not advance this generator.
  Rng fork(std::string_view label) const {
    std::uint64_t h = 0xCBF29CE484222325ull;  // FNV-1a
    for (char c : label) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001B3ull;
    }
    return Rng(mix(state_ ^ mix(h)));
  }

  /// Child stream keyed by an index (loop iterations, sample ids).
  Rng fork(std::uint64_t index) const {
    return Rng(mix(state_ + 0x632BE59BD9B4E019ull * (index + 1)));
  }

  /// Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller (no cached spare; one pair per call).
  double normal() {
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  /// Normal(0, std) truncated to +/- two standard deviations.
  double truncated_normal(double stddev) {
    double z;
    do {
      z = normal();
    } while (z < -2.0 || z > 2.0);
    return z * stddev;
  }

  /// Uniform index in [0, n) via Lemire reduction; n must be nonzero.
  std::size_t uniform_index(std::size_t n) {
    return static_cast<std::size_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  bool bernoulli(double p) { return uniform() < p; }

  std::vector<std::size_t> permutation(std::size_t n) {
    std::vector<std::size_t> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = i;
    for (std::size_t i = n; i > 1; --i) {
      std::size_t j = uniform_index(i);
      std::swap(p[i - 1], p[j]);
    }
    return p;
  }

  /// Uniform index in [0, n) excluding `self`; n must be at least 2.
  std::size_t partner_index(std::size_t n, std::size_t self) {
    std::size_t k = uniform_index(n - 1);
    return k >= self ? k + 1 : k;
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  std::uint64_t state_;
};

}  // namespace ssrt
