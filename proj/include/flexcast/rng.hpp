#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace flexcast {

// Small counter-based generator (splitmix64 core). The standard <random>
// distributions are implementation-defined, so seeded pipeline runs would not
// be reproducible across toolchains; everything random in this project draws
// from this class instead.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  // Independent stream for a named pipeline stage, so stages can be re-run
  // in isolation without disturbing each other's draws.
  static Rng stream(std::uint64_t seed, std::string_view stage) {
    std::uint64_t h = 1469598103934665603ull;  // FNV-1a
    for (char c : stage) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ull;
    }
    Rng r(seed ^ h);
    r.next_u64();  // decorrelate nearby seeds
    return r;
  }

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Inclusive on both ends.
  int uniform_int(int lo, int hi) {
    int n = hi - lo + 1;
    return lo + static_cast<int>(static_cast<double>(n) * uniform());
  }

  // Standard normal via Box-Muller; uses two uniforms per call and discards
  // the paired value, which keeps call sites stateless and reproducible.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  bool coin() { return (next_u64() & 1ull) != 0; }

 private:
  std::uint64_t state_;
};

}  // namespace flexcast
