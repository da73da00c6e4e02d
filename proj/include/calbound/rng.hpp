#pragma once

#include <cstdint>
#include <utility>

namespace calbound {

// SplitMix64 counter generator. The state advances by a fixed odd constant and
// each output is a finalizing hash of the counter, so draw i depends only on
// (seed, i). All randomness in the library flows through this generator;
// independent streams are obtained with derive_seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; the pair's second value is cached so each
  // call consumes either two uniforms or none.
  double normal();

  bool bernoulli(double p) { return uniform() < p; }

  // Fisher-Yates index permutation.
  template <typename Vec>
  void shuffle(Vec& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(next_u64() % i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Mixes a stream tag into a base seed so that distinct tags give statistically
// independent SplitMix64 streams.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

}  // namespace calbound
