#pragma once

#include <cstdint>
#include <initializer_list>

namespace agpo {

// SplitMix64 finalizer: bijective 64-bit scramble.
inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Single-word counter generator. Cheap enough that every rollout owns an
// independent instance, which is what makes parallel collection
// order-independent.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix64(state_);
  }

  // Uniform in [0, 1) with full 53-bit mantissa resolution.
  double next_double() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Uniform in [0, n). n here is tiny relative to 2^64, so the modulo bias
  // is far below anything observable.
  std::uint64_t next_below(std::uint64_t n) { return next() % n; }

 private:
  std::uint64_t state_;
};

// Derives the generator for a logical stream named by (seed, coords...).
// The derivation hashes the coordinates, so streams can be created in any
// order (or concurrently) and still produce identical draws.
inline SplitMix64 derive_stream(std::uint64_t seed,
                                std::initializer_list<std::uint64_t> coords) {
  std::uint64_t h = mix64(seed + 0x9e3779b97f4a7c15ULL);
  for (std::uint64_t c : coords) {
    h = mix64(h ^ (c + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2)));
  }
  return SplitMix64(h);
}

}  // namespace agpo
