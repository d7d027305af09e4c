#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace rulmdp {

// Counter-based generator: output i of stream `key` is mix(key + i * golden).
// Streams are split by hashing a child id into a new key, so consumers that
// draw from separate streams never perturb each other.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 42) : key_(mix(seed ^ 0x6a09e667f3bcc909ULL)) {}

  static Rng from_key(std::uint64_t key) {
    Rng r;
    r.key_ = key;
    return r;
  }

  Rng split(std::uint64_t stream) const;
  Rng split(std::string_view label) const;

  std::uint64_t next_u64();
  // Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  // Uniform integer in [0, n).
  std::size_t uniform_int(std::size_t n);
  // Index drawn from a discrete distribution (weights need not be normalized).
  std::size_t categorical(std::span<const double> weights);
  std::vector<std::size_t> permutation(std::size_t n);

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t counter() const noexcept { return counter_; }

  static std::uint64_t mix(std::uint64_t z);

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace rulmdp
