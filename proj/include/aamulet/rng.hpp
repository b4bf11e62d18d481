#ifndef AAMULET_RNG_HPP_
#define AAMULET_RNG_HPP_

#include <cstdint>

namespace aamulet {

// splitmix64 finalizer, also used to derive substream seeds.
inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Portable xoshiro256** generator seeded splitmix-style. All randomness in
// the project flows through this type so datasets, initialization, and
// training runs reproduce bit-exactly across platforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& si : s_) {
      x += 0x9E3779B97F4A7C15ULL;
      si = mix64(x);
    }
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform double in [0, 1), 53 mantissa bits.
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Inclusive integer range. Modulo bias is irrelevant at our spans and
  // keeps the draw a single next_u64().
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const std::uint64_t span = std::uint64_t(hi - lo) + 1;
    return lo + std::int64_t(next_u64() % span);
  }

  bool bernoulli(double p = 0.5) { return uniform() < p; }

  // Deterministic per-index substream: sample i of a dataset, iteration i of
  // a training run. Independent of draws made from the parent seed.
  static std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t index) {
    return mix64(seed + 0x9E3779B97F4A7C15ULL * (index + 1));
  }

  static std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t a,
                                   std::uint64_t b) {
    return stream_seed(stream_seed(seed, a), b);
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t s_[4];
};

}  // namespace aamulet

#endif  // AAMULET_RNG_HPP_
