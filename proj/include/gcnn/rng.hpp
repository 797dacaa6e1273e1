#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <string_view>

namespace gcnn {

// SplitMix64 finalizer.
inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Seed of an independent named substream of `master`, optionally indexed
// (e.g. by epoch and patch slot).
inline std::uint64_t substream_seed(std::uint64_t master, std::string_view name,
                                    std::initializer_list<std::uint64_t> index = {}) {
  std::uint64_t s = mix64(master ^ fnv1a64(name));
  for (std::uint64_t i : index) s = mix64(s ^ mix64(i + 0x9e3779b97f4a7c15ULL));
  return s;
}

// Counter-based generator: draw n is mix64(seed + (n + 1) * golden), which is
// the SplitMix64 sequence started from `seed`. Gaussians come from the
// Box-Muller transform on consecutive uniform pairs:
//   u1 = 1 - U(draw 2m), u2 = U(draw 2m+1),
//   z0 = sqrt(-2 ln u1) cos(2 pi u2), z1 = sqrt(-2 ln u1) sin(2 pi u2)
// with U(x) = (x >> 11) * 2^-53; z0 and z1 are returned in that order.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed, std::uint64_t counter = 0)
      : seed_(seed), counter_(counter) {}

  std::uint64_t next_u64() {
    ++counter_;
    return mix64(seed_ + counter_ * 0x9e3779b97f4a7c15ULL);
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n) by modulo reduction.
  std::uint64_t index(std::uint64_t n) { return next_u64() % n; }

  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace gcnn
