#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace lrfr {

// Deterministic RNG stream. All draws go through explicit algorithms
// (never std::*_distribution, whose sequences differ across standard
// libraries), so identical seeds give identical streams everywhere.
// Substreams derived from (seed, stream_id) are independent enough for
// per-sample augmentation and stay reproducible under parallel dispatch.
class RngStream {
 public:
  explicit RngStream(uint64_t seed, uint64_t stream_id = 0)
      : engine_(mix(seed, stream_id)) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0,1) with 53 random mantissa bits.
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Rejection sampling keeps the draw unbiased.
  uint64_t uniform_index(uint64_t n) {
    if (n <= 1) return 0;
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t v;
    do {
      v = next_u64();
    } while (v >= limit);
    return v % n;
  }

  // Standard normal via Box-Muller; caches the second value of each pair.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1, u2;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  bool bernoulli(double p) { return uniform() < p; }

 private:
  static uint64_t splitmix64(uint64_t& s) {
    uint64_t z = (s += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  static uint64_t mix(uint64_t seed, uint64_t stream_id) {
    uint64_t s = seed;
    uint64_t a = splitmix64(s);
    s ^= stream_id * 0x9e3779b97f4a7c15ULL;
    uint64_t b = splitmix64(s);
    return a ^ (b + 0x632be59bd9b4e019ULL);
  }

  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace lrfr
