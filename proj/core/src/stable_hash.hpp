#pragma once

#include <cstdint>
#include <string_view>

namespace hakw::detail {

// FNV-1a followed by a splitmix64 finalizer; identical on every platform.
inline std::uint64_t stable_hash64(std::string_view text, std::uint64_t seed) noexcept {
  std::uint64_t h = 1469598103934665603ull ^ (seed * 0x9E3779B97F4A7C15ull);
  for (char c : text) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  h ^= h >> 30;
  h *= 0xBF58476D1CE4E5B9ull;
  h ^= h >> 27;
  h *= 0x94D049BB133111EBull;
  h ^= h >> 31;
  return h;
}

}  // namespace hakw::detail
