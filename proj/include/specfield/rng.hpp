#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace specfield {

/// Independent deterministic stream keyed by (seed, purpose).
inline std::mt19937_64 make_rng(std::uint64_t seed, std::string_view purpose) {
  std::uint64_t tag = 1469598103934665603ull;  // FNV-1a of the purpose string
  for (char c : purpose) {
    tag ^= static_cast<unsigned char>(c);
    tag *= 1099511628211ull;
  }
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(tag >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace specfield
