#pragma once

/**
 * Seedable, splittable randomness.
 *
 * Every stochastic component in the library derives its stream from a master
 * seed through StableHasher, so reruns with the same configuration are
 * bit-identical regardless of thread scheduling. The hash is a fixed FNV-1a /
 * splitmix64 combination and must never change: trace files, procedural
 * models and experiment reports all depend on it.
 */

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace conbeam {

using Rng = std::mt19937_64;

// splitmix64 finalizer (Vigna). Bijective on 64-bit words.
inline constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Order-sensitive accumulator over integers and byte strings.
class StableHasher {
 public:
  explicit StableHasher(std::uint64_t seed = 0) : state_(mix64(seed ^ kPhi)) {}

  StableHasher& add(std::uint64_t v) {
    state_ = mix64(state_ ^ v);
    return *this;
  }

  StableHasher& add(std::int64_t v) { return add(static_cast<std::uint64_t>(v)); }
  StableHasher& add(std::int32_t v) { return add(static_cast<std::uint64_t>(static_cast<std::uint32_t>(v))); }

  StableHasher& add(std::string_view bytes) {
    // FNV-1a over the bytes, then folded into the running state.
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    add(h);
    return add(static_cast<std::uint64_t>(bytes.size()));
  }

  StableHasher& add(std::span<const std::int32_t> values) {
    for (std::int32_t v : values) add(v);
    return add(static_cast<std::uint64_t>(values.size()));
  }

  std::uint64_t digest() const { return mix64(state_); }

 private:
  static constexpr std::uint64_t kPhi = 0x9e3779b97f4a7c15ULL;
  std::uint64_t state_;
};

// Child seed for repetition/worker `index` of an experiment.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  return StableHasher(master).add(index).digest();
}

// Uniform in [0, 1) from a hash digest, 53 significant bits.
inline double hash_unit(std::uint64_t digest) {
  return static_cast<double>(digest >> 11) * 0x1.0p-53;
}

}  // namespace conbeam
