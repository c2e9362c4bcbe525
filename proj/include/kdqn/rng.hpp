#pragma once

#include <cmath>
#include <cstdint>

namespace kdqn {

// Counter-based random generator: every draw is a pure function of
// (seed, stream, counter), so sequences are reproducible across platforms
// and independent streams can be split off without sharing state.
class CounterRng {
public:
  CounterRng() = default;
  CounterRng(uint64_t seed, uint64_t stream = 0) : seed_(seed), stream_(stream) {}

  static uint64_t mix(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

  static uint64_t hash3(uint64_t a, uint64_t b, uint64_t c) {
    return mix(mix(mix(a) ^ b) ^ c);
  }

  // Derive a child generator (e.g. one per episode or per spawn port).
  CounterRng derive(uint64_t substream) const {
    return CounterRng(hash3(seed_, stream_, substream), substream);
  }

  uint64_t next_u64() { return hash3(seed_, stream_, counter_++); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Lemire reduction, no modulo bias worth caring about here.
  uint64_t uniform_int(uint64_t n) {
    return static_cast<uint64_t>((static_cast<__uint128_t>(next_u64()) * n) >> 64);
  }

  double normal(double mean = 0.0, double stddev = 1.0) {
    // Box-Muller; draws two uniforms per call, deterministic.
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(6.283185307179586 * u2);
  }

  bool bernoulli(double p) { return uniform() < p; }

  uint64_t seed() const { return seed_; }
  uint64_t counter() const { return counter_; }

private:
  uint64_t seed_ = 0;
  uint64_t stream_ = 0;
  uint64_t counter_ = 0;
};

}  // namespace kdqn
