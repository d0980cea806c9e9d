#pragma once

#include <cstdint>
#include <random>

namespace cnngp {

// SplitMix64 finalizer; used to decorrelate (seed, stream) pairs.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Counter-based substream: an independent generator derived from
// (seed, stream). Work units seeded this way give schedule-independent
// results under any parallel execution order.
inline std::mt19937_64 substream(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t s = splitmix64(splitmix64(seed) ^ splitmix64(stream * 0x9e3779b97f4a7c15ULL + 1));
  return std::mt19937_64(s);
}

inline double draw_normal(std::mt19937_64& gen, double mean = 0.0, double sd = 1.0) {
  std::normal_distribution<double> n(mean, sd);
  return n(gen);
}

// Inverse-gamma IG(a, b) with density proportional to x^(-a-1) exp(-b/x).
inline double draw_inverse_gamma(std::mt19937_64& gen, double shape, double scale) {
  std::gamma_distribution<double> g(shape, 1.0 / scale);
  double x = g(gen);
  return 1.0 / x;
}

}  // namespace cnngp
