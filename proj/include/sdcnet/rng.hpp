#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <vector>

namespace sdcnet {

// SplitMix64 stream. Chosen over std engines because its output sequence is
// fully pinned by this header (bit-reproducible across platforms and library
// versions), which the replay guarantees rely on.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform in [0,1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via the polar method (no libm trig, sequence pinned).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    has_spare_ = true;
    return u * m;
  }

  // Unbiased integer in [0,n) by rejection.
  std::uint64_t below(std::uint64_t n) {
    std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  // UniformRandomBitGenerator interface.
  using result_type = std::uint64_t;
  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~std::uint64_t{0}; }
  result_type operator()() { return next_u64(); }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Hashes a list of stream coordinates (master seed, stream tag, pass, layer,
// ...) into one seed. Every stochastic draw in the project is keyed this way
// so that replaying a lineage reproduces the draw exactly.
inline std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x6A09E667F3BCC909ull;
  for (std::uint64_t p : parts) {
    h ^= p + 0x9E3779B97F4A7C15ull + (h << 6) + (h >> 2);
    Rng mix(h);
    h = mix.next_u64();
  }
  return h;
}

// Stream tags keep unrelated draws on disjoint lineages (e.g. changing the
// number of test passes must not perturb training).
namespace stream {
constexpr std::uint64_t kInit = 1;
constexpr std::uint64_t kShuffle = 2;
constexpr std::uint64_t kTrainMask = 3;
constexpr std::uint64_t kTrainEps = 4;
constexpr std::uint64_t kValPass = 5;
constexpr std::uint64_t kTestPass = 6;
constexpr std::uint64_t kSynth = 7;
}  // namespace stream

// Fisher-Yates; spelled out so the permutation is pinned, unlike std::shuffle.
template <typename T>
void shuffle(std::vector<T>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng.below(i));
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace sdcnet
