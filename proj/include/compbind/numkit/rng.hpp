#pragma once

#include <cstdint>

namespace compbind {

// Counter-based generator: the i-th 64-bit output is a pure function of
// (seed, i), so streams are identical on every platform and can be split
// without shared state.
//
//   x      = seed + (i + 1) * 0x9E3779B97F4A7C15
//   x      = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9
//   x      = (x ^ (x >> 27)) * 0x94D049BB133111EB
//   out(i) = x ^ (x >> 31)
//
// The mixer is the SplitMix64 finalizer. Uniform doubles use the top 53 bits.
// Normals use Box-Muller on consecutive uniform pairs, consuming both outputs.
class Rng {
 public:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;
  static constexpr std::uint64_t kMul1 = 0xBF58476D1CE4E5B9ULL;
  static constexpr std::uint64_t kMul2 = 0x94D049BB133111EBULL;

  explicit Rng(std::uint64_t seed) : seed_(seed) {}

  static std::uint64_t mix(std::uint64_t x);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();
  // Uniform in [0, 1).
  double uniform();
  // Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

  // Independent child stream keyed by `key`; does not advance this stream.
  Rng derive(std::uint64_t key) const;

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace compbind
