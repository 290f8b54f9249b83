#pragma once

#include <random>

namespace qadapter {

// 53-bit mantissa draw in [0,1); bit-stable across platforms, unlike
// std::uniform_real_distribution.
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace qadapter
