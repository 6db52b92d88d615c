// Deterministic RNG built on splitmix64. Streams are derived from
// (seed, purpose, step, ...) key words, so any training step can regenerate
// its own randomness without replaying earlier steps; exact resume falls out
// of that for free. Not std::mt19937 on purpose: the standard distributions
// are not bit-stable across library implementations, and these draws are part
// of the reproducibility contract.
#pragma once

#include <cstdint>
#include <initializer_list>

namespace hcd {

inline uint64_t splitmix64(uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

struct Rng {
  uint64_t state;

  explicit Rng(uint64_t seed = 0) : state(seed) {
    // One warm-up scramble so seed 0 and seed 1 do not share a prefix.
    splitmix64(state);
  }

  // Derives an independent stream from key words, e.g.
  // Rng::derive({seed, kPurposeBatch, step}).
  static Rng derive(std::initializer_list<uint64_t> words) {
    uint64_t s = 0x8f1bbcdcbfa53e0bULL;
    for (uint64_t w : words) {
      s ^= w + 0x9e3779b97f4a7c15ULL + (s << 6) + (s >> 2);
      splitmix64(s);
    }
    Rng r(0);
    r.state = s;
    return r;
  }

  uint64_t u64() { return splitmix64(state); }

  // Uniform in [0,1) with 53 random bits.
  double uniform() { return static_cast<double>(u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0,n), n >= 1. Multiply-shift keeps bias below 2^-64.
  int uniform_int(int n) {
    return static_cast<int>((static_cast<unsigned __int128>(u64()) * static_cast<uint64_t>(n)) >> 64);
  }

  // Symmetric uniform in (-a, a); used for Xavier initialization.
  double uniform_sym(double a) { return uniform(-a, a); }
};

// Stream purposes; fixed numbering is part of the determinism contract.
enum : uint64_t {
  kStreamInit = 1,
  kStreamBatch = 2,
  kStreamAugment = 3,
  kStreamSynth = 4,
  kStreamEncoder = 5,
};

}  // namespace hcd
