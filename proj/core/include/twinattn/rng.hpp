#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace twinattn {

// Deterministic random stream (xoshiro256++ seeded via splitmix64).
// Distributions are implemented here rather than taken from <random> so
// every platform and standard library produces the same byte-level stream.
// All project randomness flows from one root seed; substreams are derived
// by hashing a name into the seed, so components re-seed independently.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  Rng substream(std::string_view name) const;

  uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  // Inclusive bounds.
  int uniform_int(int lo, int hi);
  // Standard normal via Box-Muller; draws two uniforms per call.
  double normal();
  double normal(double mean, double stddev);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(next_u64() % i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  uint64_t state_[4];
  uint64_t root_seed_;
};

uint64_t fnv1a64(std::string_view s);

}  // namespace twinattn
