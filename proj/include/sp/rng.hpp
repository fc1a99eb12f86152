#pragma once

#include <cstdint>

namespace sp {

// Counter-based splitmix64 generator. All seeded randomness in this library
// goes through this type so that golden files are portable across platforms
// and standard-library versions. The exact update is:
//
//   state += 0x9E3779B97F4A7C15
//   z = state
//   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//   return z ^ (z >> 31)
//
// next_double() takes the top 53 bits, giving a uniform value in [0,1).
// next_below(n) reduces next() modulo n.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    state_ += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform in [0,1).
  double next_double() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0,n). n must be nonzero.
  std::uint64_t next_below(std::uint64_t n) { return next() % n; }

  // Uniform in [lo,hi).
  double next_in(double lo, double hi) { return lo + (hi - lo) * next_double(); }

 private:
  std::uint64_t state_;
};

// Stable derivation of per-purpose seeds from a run seed. Wrapping-add of the
// salted golden-ratio constant keeps independent streams decorrelated.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt) {
  return base + 0x9E3779B97F4A7C15ull * (salt + 1);
}

}  // namespace sp
