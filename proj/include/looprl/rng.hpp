#pragma once

#include <cstdint>
#include <random>

namespace looprl {

using Rng = std::mt19937_64;

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent stream keyed by (seed, stream id). Streams with different ids
// never share state, so work items can be sampled in any order or thread.
inline Rng make_stream(std::uint64_t seed, std::uint64_t stream) {
  return Rng(splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x632be59bd9b4e019ULL)));
}

// Stream ids are (tag, index) packed into 64 bits.
constexpr std::uint64_t stream_id(std::uint32_t tag, std::uint32_t index) {
  return (static_cast<std::uint64_t>(tag) << 32) | index;
}

}  // namespace looprl
