#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace adnnperf {

// Deterministic random source. All randomness in the library flows through
// this wrapper so a single uint64 seed reproduces every weight init, data
// sample and shuffle bit-for-bit on any platform: mt19937_64 output is
// specified by the standard, and the distributions below are implemented
// here rather than delegated to libstdc++'s distribution objects, whose
// draw patterns are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  // Derive an independent stream for a named purpose (weights, data,
  // shuffling, ...). Mixing seed and tag through splitmix64 keeps sibling
  // streams decorrelated even for adjacent tags, and split() does not
  // advance this stream.
  Rng split(std::uint64_t tag) const {
    std::uint64_t z = seed_ + 0x9e3779b97f4a7c15ULL * (tag + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return Rng(z ^ (z >> 31));
  }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1). 53-bit mantissa path.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; the spare value is cached so two draws
  // consume exactly one transform.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();  // guard log(0)
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Uniform integer in [0, n). Plain modulo: n is always tiny relative to
  // 2^64, so the bias is immeasurable, and the consumed-draw count stays
  // fixed (rejection sampling would make it data-dependent).
  std::uint64_t below(std::uint64_t n) { return engine_() % n; }

  // Fisher-Yates with our own index draws (std::shuffle's draw pattern is
  // implementation-defined).
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace adnnperf
