#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace fadapt {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Derives an independent stream seed from a base seed and a list of tags
/// (image index, stream id, ...). Order of tags matters.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags) {
  std::uint64_t h = splitmix64(base);
  for (auto t : tags) h = splitmix64(h ^ splitmix64(t + 0x632BE59BD9B4E019ULL));
  return h;
}

// Stream tags, so that e.g. tilt and blur draws for the same image never share a stream.
namespace stream {
inline constexpr std::uint64_t kTilt = 1;
inline constexpr std::uint64_t kZernike = 2;
inline constexpr std::uint64_t kRender = 3;
inline constexpr std::uint64_t kArtifact = 4;
inline constexpr std::uint64_t kIdentity = 5;
inline constexpr std::uint64_t kDecoder = 6;
inline constexpr std::uint64_t kPairs = 7;
inline constexpr std::uint64_t kInit = 8;
inline constexpr std::uint64_t kShuffle = 9;
inline constexpr std::uint64_t kDegrade = 10;
}  // namespace stream

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform_(engine_); }
  std::uint64_t next() { return engine_(); }
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace fadapt
