#pragma once

#include <cmath>
#include <cstdint>

// Counter-based splittable random streams.
//
// Every consumer derives an independent stream from (seed, purpose, cell).
// Draws are pure functions of (key, counter), so chunked or out-of-order
// generation reproduces exactly the same values as a single pass, and no
// global generator state is shared between modules. Samplers are hand-rolled
// (Box-Muller, exponential via inverse CDF) because the std:: distribution
// implementations are not pinned by the standard and would make outputs
// platform-dependent.

namespace qlink {

// Purpose tags for stream derivation. Values are part of the determinism
// contract: changing them changes every simulation output.
enum class StreamPurpose : std::uint64_t {
  pair_times = 1,
  pair_wavelength = 2,
  pair_outcome = 3,
  channel_loss = 4,
  channel_walk = 5,
  couple_local = 6,
  detect_thin_local = 7,
  detect_thin_remote = 8,
  jitter_local = 9,
  jitter_remote = 10,
  dark_local = 11,
  dark_remote = 12,
  engine_joint = 13,
  engine_local_only = 14,
  engine_remote_only = 15,
  test_stream = 16,
};

inline constexpr std::uint64_t kGoldenGamma = 0x9E3779B97F4A7C15ull;

// SplitMix64 finalizer: full-avalanche 64-bit mix.
inline constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

inline constexpr std::uint64_t derive_key(std::uint64_t seed, StreamPurpose purpose,
                                          std::uint64_t cell) {
  std::uint64_t k = mix64(seed + kGoldenGamma);
  k = mix64(k ^ (static_cast<std::uint64_t>(purpose) * kGoldenGamma));
  k = mix64(k ^ (cell * 0xC2B2AE3D27D4EB4Full));
  return k;
}

class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key) : key_(key) {}
  CounterRng(std::uint64_t seed, StreamPurpose purpose, std::uint64_t cell)
      : key_(derive_key(seed, purpose, cell)) {}

  std::uint64_t next_u64() { return mix64(key_ + (++counter_) * kGoldenGamma); }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in (0, 1]; safe as a log() argument.
  double uniform_pos() {
    return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller. Always consumes two draws (no cached
  // spare) so the stream position stays a pure function of the call count.
  double gaussian() {
    const double u1 = uniform_pos();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  // Exponential gap with unit mean.
  double exponential() { return -std::log(uniform_pos()); }

  // Poisson count by summing exponential gaps; O(mean), intended for
  // small/moderate means (tests, per-cell decisions).
  std::uint64_t poisson(double mean) {
    if (mean <= 0.0) return 0;
    std::uint64_t n = 0;
    double acc = exponential();
    while (acc <= mean) {
      ++n;
      acc += exponential();
    }
    return n;
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace qlink
