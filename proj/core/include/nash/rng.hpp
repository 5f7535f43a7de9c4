#pragma once

#include <cstdint>
#include <cmath>

namespace nash::num {

// Counter-based splitmix64 stream. Owned by the run, never global; identical
// sequences on every platform for a given seed.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1)
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // uniform in (0, 1), safe for logit transforms
  double uniform_open() {
    double u = uniform();
    constexpr double lo = 1e-12;
    if (u < lo) return lo;
    if (u > 1.0 - lo) return 1.0 - lo;
    return u;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller, one value per call (second draw discarded for simplicity)
  double normal(double mean = 0.0, double stddev = 1.0) {
    double u1 = uniform_open();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(6.283185307179586 * u2);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // integer in [0, n)
  uint64_t below(uint64_t n) { return n ? next_u64() % n : 0; }

  // Derive an independent stream for a named sub-purpose.
  Rng fork(uint64_t tag) {
    Rng r(state_ ^ (0x632be59bd9b4e019ULL * (tag + 1)));
    r.next_u64();
    return r;
  }

 private:
  uint64_t state_;
};

}  // namespace nash::num
