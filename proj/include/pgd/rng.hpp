#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <string_view>

namespace pgd {

using Engine = std::mt19937_64;

// FNV-1a, used to turn substream names into stable seed material.
constexpr std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Derives an independent engine for a named purpose ("data", "init",
/// "shuffle", "split", "warmup", "simulation", ...) from a single root seed.
inline Engine substream(std::uint64_t root_seed, std::string_view name,
                        std::uint64_t index = 0) {
  const std::uint64_t tag = fnv1a(name);
  std::seed_seq seq{static_cast<std::uint32_t>(root_seed),
                    static_cast<std::uint32_t>(root_seed >> 32),
                    static_cast<std::uint32_t>(tag),
                    static_cast<std::uint32_t>(tag >> 32),
                    static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return Engine(seq);
}

inline std::string engine_state(const Engine& e) {
  std::ostringstream os;
  os << e;
  return os.str();
}

inline Engine engine_from_state(const std::string& state) {
  Engine e;
  std::istringstream is(state);
  is >> e;
  return e;
}

}  // namespace pgd
