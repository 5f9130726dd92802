#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace cotfaith {

// FNV-1a over bytes; used for prompt fingerprints and RNG stream keys.
uint64_t fnv1a64(std::string_view bytes);

// 16 lowercase hex digits of fnv1a64(text).
std::string fingerprint_hex(std::string_view text);

// splitmix64 finalizer; decorrelates composed keys.
uint64_t mix64(uint64_t x);

// Deterministic, platform-independent generator (xoshiro-free: splitmix64
// stream). std::uniform_int_distribution is implementation-defined, so all
// bounded draws go through bounded() below.
class DeterministicRng {
public:
  explicit DeterministicRng(uint64_t seed) : state_(mix64(seed ^ 0x9e3779b97f4a7c15ull)) {}

  // Stream keyed by (seed, key) so per-example draws are independent of
  // corpus order.
  static DeterministicRng keyed(uint64_t seed, std::string_view key) {
    return DeterministicRng(mix64(seed) ^ fnv1a64(key));
  }
  static DeterministicRng keyed(uint64_t seed, uint64_t a, uint64_t b = 0) {
    return DeterministicRng(mix64(seed) ^ mix64(a * 0x9e3779b97f4a7c15ull + b));
  }

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    return mix64(state_);
  }

  // Uniform in [0, 1).
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform in [0, n) by rejection; exact for any n >= 1.
  uint64_t bounded(uint64_t n);

  size_t index(size_t n) { return static_cast<size_t>(bounded(n)); }

private:
  uint64_t state_;
};

}  // namespace cotfaith
