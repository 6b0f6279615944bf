#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace saldist {

// The single seedable random stream behind every draw in a run (init,
// shuffling, flips, scale choice, synthetic data). mt19937_64 output is fully
// specified by the standard; the conversions below avoid the
// implementation-defined std distributions so results match across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::size_t below(std::size_t n) {
    const std::uint64_t bound = n;
    const std::uint64_t reject_below = (0 - bound) % bound;  // 2^64 mod n
    std::uint64_t v = engine_();
    while (v < reject_below) v = engine_();
    return static_cast<std::size_t>(v % bound);
  }

  bool coin() { return (engine_() >> 63) != 0; }

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) std::swap(items[i - 1], items[below(i)]);
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace saldist
