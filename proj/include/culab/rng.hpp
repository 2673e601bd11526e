#pragma once

#include <cstdint>
#include <cmath>
#include <optional>

namespace culab {

// SplitMix64 generator. Pure integer state transitions, so streams are
// identical across platforms for a given seed. split(stream) derives an
// independent generator, which is how per-instance / per-worker streams
// are produced.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1), 53-bit resolution.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in (0, 1]; safe as a log() argument.
  double next_open() { return 1.0 - next_double(); }

  // Standard normal via the Marsaglia polar method (avoids trig functions).
  double next_normal() {
    if (cached_) {
      double v = *cached_;
      cached_.reset();
      return v;
    }
    double u, v, s;
    do {
      u = 2.0 * next_double() - 1.0;
      v = 2.0 * next_double() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    double f = std::sqrt(-2.0 * std::log(s) / s);
    cached_ = v * f;
    return u * f;
  }

  // Independent child stream; children of distinct indices never collide
  // with each other or with the parent's own output sequence.
  Rng split(std::uint64_t stream) const {
    std::uint64_t z = state_ ^ (0xD1B54A32D192ED03ULL * (stream + 1));
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return Rng(z ^ (z >> 31));
  }

 private:
  std::uint64_t state_;
  std::optional<double> cached_;
};

}  // namespace culab
