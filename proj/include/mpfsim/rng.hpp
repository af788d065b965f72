#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace mpfsim::rng {

// Counter-based random numbers: every draw is a pure function of
// (master seed, stream tag, counters), so adding or removing a consumer
// never shifts another consumer's sequence.

enum class Stream : std::uint64_t {
  Demand = 0x64656d616e64ULL,   // arrival inter-times
  Class = 0x636c617373ULL,      // CAV/HDV assignment
  Channel = 0x6368616e6e6cULL,  // per (sender, receiver, beacon) drops
  Sweep = 0x7377656570ULL,      // derived cell seeds
};

constexpr std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t hash(std::uint64_t seed, Stream stream,
                             std::initializer_list<std::uint64_t> counters) {
  std::uint64_t h = splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(stream)));
  for (std::uint64_t c : counters) h = splitmix64(h ^ splitmix64(c + 0x632be59bd9b4e019ULL));
  return h;
}

// Uniform on [0, 1) with 53 bits of resolution.
constexpr double to_unit(std::uint64_t bits) {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

constexpr double uniform(std::uint64_t seed, Stream stream,
                         std::initializer_list<std::uint64_t> counters) {
  return to_unit(hash(seed, stream, counters));
}

// Exponential with the given rate (1/s) by inversion.
inline double exponential(double rate, double unit) { return -std::log1p(-unit) / rate; }

}  // namespace mpfsim::rng
