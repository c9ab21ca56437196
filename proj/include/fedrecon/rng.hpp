#pragma once

#include <cstdint>
#include <limits>

namespace fedrecon {

// Counter-based 64-bit generator. Output i of a stream with key K is
//
//   mix64(mix64(i + kCounterOffset) ^ K)
//
// where mix64 is the SplitMix64 finalizer (constants below). Because outputs
// depend only on (key, counter), streams can be split per client / epoch /
// step with derive() without any coordination, and the integer stream is
// identical on every platform.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
  static constexpr std::uint64_t kMulA = 0xBF58476D1CE4E5B9ULL;
  static constexpr std::uint64_t kMulB = 0x94D049BB133111EBULL;
  static constexpr std::uint64_t kCounterOffset = 0x632BE59BD9B4E019ULL;
  static constexpr std::uint64_t kDeriveOffset = 0xD1B54A32D192ED03ULL;

  explicit CounterRng(std::uint64_t key = 0, std::uint64_t counter = 0) noexcept
      : key_(key), counter_(counter) {}

  static constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += kGolden;
    z = (z ^ (z >> 30)) * kMulA;
    z = (z ^ (z >> 27)) * kMulB;
    return z ^ (z >> 31);
  }

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept { return next(); }

  std::uint64_t next() noexcept { return mix64(mix64(counter_++ + kCounterOffset) ^ key_); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n) noexcept;

  // Standard normal via Box-Muller (one output per call, two uniforms consumed).
  double normal() noexcept;

  // Independent child stream; the parent is not advanced.
  CounterRng derive(std::uint64_t stream) const noexcept {
    return CounterRng(mix64(key_ ^ mix64(stream + kDeriveOffset)), 0);
  }

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_;
};

}  // namespace fedrecon
