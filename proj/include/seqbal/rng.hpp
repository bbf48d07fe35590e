// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <initializer_list>

namespace seqbal {

// SplitMix64 finalizer (Vigna / Steele et al.). This exact sequence of
// constants is load-bearing: golden tests and cross-run determinism depend
// on it, so it must never change.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Folds a list of key parts (seed, step, rank, ...) into one 64-bit key.
constexpr std::uint64_t derive_key(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t k = 0x8f51a7c0c0c0f5a3ULL;
  for (std::uint64_t p : parts) k = splitmix64(k ^ p);
  return k;
}

// Counter-based generator: draw i under key K is splitmix64(K ^ splitmix64(i)).
// Streams with different keys are independent by construction, and any draw
// can be recomputed from (key, index) alone — no sequential state beyond the
// counter. This is what makes per-rank generation order-independent.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key) : key_(key) {}
  CounterRng(std::initializer_list<std::uint64_t> parts) : key_(derive_key(parts)) {}

  std::uint64_t next_u64() { return splitmix64(key_ ^ splitmix64(counter_++)); }

  // Uniform real in [lo, hi). 53 explicit mantissa bits.
  double next_real(double lo, double hi) {
    double u = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    return lo + u * (hi - lo);
  }

  // Uniform integer in [lo, hi], both ends inclusive. Fixed-point multiply
  // (Lemire); bias is O(span / 2^64), far below anything observable here.
  std::int64_t next_int(std::int64_t lo, std::int64_t hi) {
    std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    std::uint64_t r = static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * span) >> 64);
    return lo + static_cast<std::int64_t>(r);
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace seqbal
