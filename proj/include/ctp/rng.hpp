#pragma once

#include <array>
#include <cstdint>

namespace ctp {

/// One step of the splitmix64 sequence. Used for seeding xoshiro state and
/// for deriving independent substream seeds.
inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

/// Seed of substream `tag` of a base seed: the splitmix64 output at offset
/// `tag`. Distinct tags give decorrelated generators, and the mapping is a
/// pure integer function so every platform reproduces the same streams.
inline uint64_t derive_seed(uint64_t base, uint64_t tag) {
  uint64_t state = base + tag * 0x9e3779b97f4a7c15ull;
  return splitmix64(state);
}

/// xoshiro256** seeded via splitmix64. All corpus generation and mixture
/// sampling goes through this generator; std:: engines are avoided because
/// their streams are not pinned across standard library implementations.
class Xoshiro256ss {
 public:
  Xoshiro256ss() : Xoshiro256ss(0) {}
  explicit Xoshiro256ss(uint64_t seed) {
    uint64_t st = seed;
    for (auto& w : s_) w = splitmix64(st);
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  /// Uniform in [0, 1) with 53 random bits.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n). Fixed-point multiply keeps the mapping
  /// identical everywhere; the bias (< 2^-64 per draw) is irrelevant here.
  uint64_t next_below(uint64_t n) {
    return static_cast<uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  std::array<uint64_t, 4> state() const { return s_; }
  void set_state(const std::array<uint64_t, 4>& s) { s_ = s; }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  std::array<uint64_t, 4> s_{};
};

}  // namespace ctp
