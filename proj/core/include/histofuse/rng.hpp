#pragma once

#include <cstdint>
#include <string_view>
#include <utility>

namespace histofuse {

// Portable, platform-independent random streams. The standard library
// distributions are implementation-defined, so everything that has to be
// reproducible bit-for-bit draws from here instead.

constexpr std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Derives an independent child seed from (seed, stream).
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t s = seed ^ (0xD1B54A32D192ED03ULL * (stream + 1));
  splitmix64(s);
  return splitmix64(s);
}

constexpr std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

/// xoshiro256** seeded through splitmix64.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next();

  /// Uniform in [0, 1) with 53 random bits.
  double uniform();

  /// Uniform integer in [0, n). n must be nonzero.
  std::uint64_t below(std::uint64_t n);

  /// Uniform integer in [lo, hi].
  long long between(long long lo, long long hi);

  /// Standard normal (Box-Muller, one value per call).
  double normal();
  /// Two independent standard normals (polar method).
  std::pair<double, double> normal_pair();

 private:
  std::uint64_t s_[4];
};

}  // namespace histofuse
