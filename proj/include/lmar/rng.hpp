#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <utility>

namespace lmar {

/// Seedable 64-bit generator with a fixed, documented stream.
///
/// The engine is std::mt19937_64 (whose output sequence is fixed by the
/// standard). Every helper consumes exactly one engine draw per call, so a
/// caller can replay any consumer by counting draws:
///   uniform_index(n) = draw % n
///   uniform01()      = (draw >> 11) * 2^-53
///   normal()         = two uniform01 draws, Box-Muller cosine branch (2 draws)
/// std::uniform_int_distribution and std::shuffle are avoided because their
/// outputs are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  std::size_t uniform_index(std::size_t n) { return static_cast<std::size_t>(engine_() % n); }

  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double normal();

  /// Fisher-Yates, descending: for i = n-1..1 swap(i, uniform_index(i+1)).
  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = uniform_index(i);
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

/// Derives an independent stream seed for a named consumer.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt);

}  // namespace lmar
