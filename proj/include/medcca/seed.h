#pragma once

#include <cstdint>
#include <string_view>

#include "medcca/text_io.h"

namespace medcca {

inline uint64_t SplitMix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// All randomness flows from one root seed: each stage (and each indexed unit
// within a stage) gets SplitMix64(root ^ FNV-1a(stage)) mixed with its index.
inline uint64_t DeriveSeed(uint64_t root, std::string_view stage, uint64_t index = 0) {
  return SplitMix64(SplitMix64(root ^ text::Fnv1a(stage)) + index);
}

}  // namespace medcca
