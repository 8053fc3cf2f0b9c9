#pragma once

#include <cstdint>
#include <random>

namespace eli {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Counter-based seed derivation: the stream for (master, tag, index) does
/// not depend on how many other streams were drawn before it.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t tag, std::uint64_t index = 0) {
  return splitmix64(splitmix64(splitmix64(master) ^ (tag * 0xD1B54A32D192ED03ULL)) ^
                    (index * 0x8CB92BA72F3D8DD7ULL));
}

// Stream tags. Kept in one place so harness stages never collide.
namespace stream {
inline constexpr std::uint64_t kGraph = 1;
inline constexpr std::uint64_t kPilotSelect = 2;
inline constexpr std::uint64_t kPilotTreat = 3;
inline constexpr std::uint64_t kPilotOutcome = 4;
inline constexpr std::uint64_t kDesign = 5;
inline constexpr std::uint64_t kMainOutcome = 6;
inline constexpr std::uint64_t kCompetitor = 7;
inline constexpr std::uint64_t kReplication = 8;
inline constexpr std::uint64_t kCompletion = 9;
inline constexpr std::uint64_t kOracle = 10;
}  // namespace stream

inline Rng make_rng(std::uint64_t seed) { return Rng(splitmix64(seed)); }

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

inline bool bernoulli(Rng& rng, double p) {
  if (p <= 0.0) return false;
  if (p >= 1.0) return true;
  return uniform01(rng) < p;
}

/// Beta(a, b) via the ratio of two gamma draws.
inline double beta_draw(Rng& rng, double a, double b) {
  const double x = std::gamma_distribution<double>(a, 1.0)(rng);
  const double y = std::gamma_distribution<double>(b, 1.0)(rng);
  return x / (x + y);
}

}  // namespace eli
