#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace stanceforge {

// Seeded generator shared by every randomized step (splits, random
// selection). std::mt19937_64 has a standardized output sequence, and the
// bounded draw below avoids std::uniform_int_distribution, whose mapping is
// implementation-defined. Together they give identical results on every
// conforming platform.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform integer in [0, bound) by rejection sampling. bound must be > 0.
  std::uint64_t below(std::uint64_t bound) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return x % bound;
  }

  // Fisher-Yates over [0, n). Only the first `prefix` slots are drawn; the
  // returned vector still holds all n indices.
  std::vector<std::size_t> permutation(std::size_t n, std::size_t prefix) {
    std::vector<std::size_t> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = i;
    if (prefix > n) prefix = n;
    for (std::size_t i = 0; i < prefix && i + 1 < n; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(below(n - i));
      std::swap(out[i], out[j]);
    }
    return out;
  }

  std::vector<std::size_t> permutation(std::size_t n) { return permutation(n, n); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace stanceforge
