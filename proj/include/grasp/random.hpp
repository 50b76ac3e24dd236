#pragma once

#include <cstdint>
#include <random>

namespace grasp {

using Rng = std::mt19937_64;

/// Independent generator for (seed, stream); used to give every consumer of
/// randomness (init, shuffling, augmentation, per-cloud synthesis) its own
/// reproducible sequence.
inline Rng derive_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream),
                    static_cast<std::uint32_t>(stream >> 32), 0x6a09e667u};
  return Rng(seq);
}

}  // namespace grasp
