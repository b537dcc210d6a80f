#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace mvmesh {

// Deterministic random source. All distributions are implemented on top of
// the raw 64-bit stream so the draw sequence does not depend on the standard
// library's distribution internals.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t raw() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(raw() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi] inclusive.
  int uniform_int(int lo, int hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(raw() % span);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Standard normal via Box-Muller. Uses two uniforms per draw; no cached
  // second value, so every call consumes the same amount of stream.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mu, double sigma) { return mu + sigma * normal(); }

 private:
  std::mt19937_64 engine_;
};

// Sub-seed for sample `index` of a run seeded with `seed`.
inline std::uint64_t sample_seed(std::uint64_t seed, std::uint64_t index) { return seed ^ index; }

}  // namespace mvmesh
