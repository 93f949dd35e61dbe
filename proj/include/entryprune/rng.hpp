#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <random>

namespace entryprune {

/// Independent random substreams derived from one run seed.
enum class Stream : std::size_t {
  WeightInit = 0,
  BatchShuffle,
  CandidateDraw,
  ToyGen,
  Split,
  Eval,
  kCount
};

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace detail

/// A seed plus one mt19937_64 engine per named substream.
///
/// The engines are seeded from splitmix64(seed, stream id), so drawing from one
/// stream never shifts the sequence of another. Two SeededRng objects built from
/// the same seed produce identical draws per stream.
class SeededRng {
 public:
  using Engine = std::mt19937_64;

  explicit SeededRng(std::uint64_t seed = 0) : seed_(seed) {
    for (std::size_t i = 0; i < engines_.size(); ++i) {
      const std::uint64_t mixed =
          detail::splitmix64(detail::splitmix64(seed) ^ detail::splitmix64(0xA5A5A5A5ULL + i));
      engines_[i].seed(mixed);
    }
  }

  std::uint64_t seed() const { return seed_; }

  Engine& stream(Stream s) { return engines_[static_cast<std::size_t>(s)]; }

 private:
  std::uint64_t seed_;
  std::array<Engine, static_cast<std::size_t>(Stream::kCount)> engines_;
};

}  // namespace entryprune
