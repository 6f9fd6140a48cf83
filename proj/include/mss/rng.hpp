#pragma once

#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace mss {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// FNV-1a; stable across platforms, unlike std::hash.
inline std::uint64_t stable_hash(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Seeded 64-bit generator (xoshiro256**) with keyed substreams.
///
/// `derive(key)` gives an independent stream that depends only on the seed
/// this generator was built from and the key, never on how many draws were
/// taken so far. Entities keyed by external ID therefore get the same draws
/// regardless of their position in the input.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed = 0) : seed_(seed) {
    std::uint64_t s = seed;
    for (auto& w : state_) {
      s = splitmix64(s);
      w = s;
    }
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  Rng derive(std::uint64_t key) const { return Rng(splitmix64(seed_ ^ splitmix64(key))); }
  Rng derive(std::string_view key) const { return derive(stable_hash(key)); }

  std::uint64_t seed() const { return seed_; }

  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  double gamma(double shape) { return std::gamma_distribution<double>(shape, 1.0)(*this); }

  double beta(double a, double b) {
    const double x = gamma(a);
    const double y = gamma(b);
    return x / (x + y);
  }

  bool bernoulli(double p) { return uniform() < p; }

  std::vector<double> dirichlet(std::span<const double> alpha) {
    std::vector<double> out(alpha.size());
    double total = 0.0;
    for (std::size_t k = 0; k < alpha.size(); ++k) {
      out[k] = gamma(alpha[k]);
      total += out[k];
    }
    for (double& v : out) {
      v /= total;
    }
    return out;
  }

  // Index drawn proportionally to nonnegative weights.
  std::size_t categorical(std::span<const double> weights) {
    double total = 0.0;
    std::size_t last_positive = 0;
    for (std::size_t k = 0; k < weights.size(); ++k) {
      total += weights[k];
      if (weights[k] > 0.0) {
        last_positive = k;
      }
    }
    double u = uniform() * total;
    for (std::size_t k = 0; k < last_positive; ++k) {
      if (u < weights[k]) {
        return k;
      }
      u -= weights[k];
    }
    return last_positive;
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  std::uint64_t seed_;
  std::uint64_t state_[4];
};

}  // namespace mss
