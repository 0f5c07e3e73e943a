#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace mmgl {

// Deterministic random source. All randomness in the project flows through
// this class so that a run is reproducible from its seed alone. The normal
// sampler is hand-rolled (Box-Muller) because std::normal_distribution's
// output sequence is implementation-defined.
class Rng {
 public:
  explicit Rng(uint64_t seed) : base_seed_(seed), gen_(mix(seed)) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller. Two draws per sample, no cached spare.
  double normal() {
    double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
    double u2 = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;        // [0, 1)
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  // Uniform integer in [0, n). n must be positive.
  uint64_t uniform_int(uint64_t n) { return next_u64() % n; }

  // Independent stream derived from the base seed and a label. Forking does
  // not depend on how much of this stream has been consumed.
  Rng fork(std::string_view label) const {
    uint64_t h = 1469598103934665603ull;  // FNV-1a
    for (char c : label) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ull;
    }
    return Rng(mix(base_seed_ ^ h));
  }

  uint64_t base_seed() const { return base_seed_; }

 private:
  static uint64_t mix(uint64_t x) {  // splitmix64 finalizer
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

  uint64_t base_seed_;
  std::mt19937_64 gen_;
};

}  // namespace mmgl
