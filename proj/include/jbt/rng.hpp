#pragma once

#include <cstdint>
#include <initializer_list>

namespace jbt {

// SplitMix64 step (Steele/Lea/Flood). Used to expand seeds and to hash
// stream-derivation paths so that nearby keys give unrelated streams.
inline std::uint64_t splitmix64_next(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// xoshiro256++ (Blackman/Vigna, public domain reference implementation).
class Xoshiro256pp {
 public:
  using result_type = std::uint64_t;

  explicit Xoshiro256pp(std::uint64_t seed = 1) { reseed(seed); }

  void reseed(std::uint64_t seed) {
    // All-zero state is invalid; splitmix expansion avoids it for any seed.
    for (auto& word : state_) word = splitmix64_next(seed);
  }

  result_type operator()() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~std::uint64_t{0}; }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }
  std::uint64_t state_[4];
};

// A deterministic random stream with a recorded seed. All sampling in the
// simulator goes through this wrapper so traces are reproducible bit-for-bit
// across platforms (no implementation-defined std::distributions involved).
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform double in [0, 1) with 53 random mantissa bits.
  double u01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n). Rejection keeps it exactly unbiased.
  std::uint64_t below(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  bool bernoulli(double p) { return u01() < p; }

 private:
  std::uint64_t seed_;
  Xoshiro256pp engine_;
};

// Stream seed derivation: fold each path component into the state with a
// SplitMix64 step. The scheme is pinned so any (policy, epsilon, replication,
// stream) seed can be reconstructed from the metadata echoed into results.
inline std::uint64_t derive_seed(std::uint64_t base,
                                 std::initializer_list<std::uint64_t> path) {
  std::uint64_t state = base;
  std::uint64_t out = splitmix64_next(state);
  for (std::uint64_t component : path) {
    state ^= component * 0x9e3779b97f4a7c15ULL;
    out = splitmix64_next(state);
  }
  return out;
}

}  // namespace jbt
