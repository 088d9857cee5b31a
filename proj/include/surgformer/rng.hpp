#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace surgformer {

inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// mt19937_64 engine with hand-rolled draws. The standard <random>
// distributions are implementation-defined, so sampled values would not be
// stable across toolchains; these draws only rely on the engine's bit stream
// and on IEEE arithmetic.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  // Decorrelated per-item stream, e.g. one per dataset sample.
  static Rng stream(uint64_t seed, uint64_t index) {
    uint64_t s = seed ^ (0x9e3779b97f4a7c15ull * (index + 1));
    uint64_t a = splitmix64(s);
    uint64_t b = splitmix64(s);
    return Rng(a ^ (b << 1));
  }

  uint64_t next() { return engine_(); }

  // [0, 1)
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n), unbiased
  int uniform_int(int n) {
    const uint64_t un = static_cast<uint64_t>(n);
    const uint64_t lim = (UINT64_MAX / un) * un;
    uint64_t v = next();
    while (v >= lim) v = next();
    return static_cast<int>(v % un);
  }

  // standard normal via the polar method (sqrt/log only, so reproducible)
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double k = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * k;
    has_spare_ = true;
    return u * k;
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace surgformer
