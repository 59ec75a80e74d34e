#pragma once

#include <cmath>
#include <cstdint>

namespace m3pt {

// splitmix64 generator with hand-rolled distributions. std:: distributions are
// not bit-stable across library implementations, and several acceptance
// contracts require byte-identical reruns, so we keep the whole chain explicit.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1)
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  int64_t uniform_int(int64_t lo, int64_t hi_inclusive) {
    uint64_t span = static_cast<uint64_t>(hi_inclusive - lo) + 1;
    return lo + static_cast<int64_t>(next_u64() % span);
  }

  // Box-Muller; one draw per call, the pair partner is cached.
  double normal(double mean = 0.0, double stddev = 1.0) {
    if (have_cached_) {
      have_cached_ = false;
      return mean + stddev * cached_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform01();
    } while (u1 <= 0.0);
    double u2 = uniform01();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(a);
    have_cached_ = true;
    return mean + stddev * (r * std::cos(a));
  }

  // Derive an independent stream, e.g. per named parameter.
  Rng fork(uint64_t salt) {
    uint64_t s = next_u64();
    return Rng(s ^ (salt * 0x9E3779B97F4A7C15ULL + 0x632BE59BD9B4E019ULL));
  }

 private:
  uint64_t state_;
  double cached_ = 0.0;
  bool have_cached_ = false;
};

}  // namespace m3pt
