#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <string_view>

#include "dattn/tensor.hpp"

namespace dattn {

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

inline std::uint64_t fnv1a64(std::span<const unsigned char> bytes, std::uint64_t h = kFnvOffset) {
  for (unsigned char b : bytes) {
    h ^= b;
    h *= kFnvPrime;
  }
  return h;
}

inline std::uint64_t fnv1a64(std::string_view text, std::uint64_t h = kFnvOffset) {
  return fnv1a64(std::span(reinterpret_cast<const unsigned char*>(text.data()), text.size()), h);
}

/// Hash of the little-endian IEEE-754 encoding of every element.
inline std::uint64_t fnv1a64(const Tensor& t) {
  std::uint64_t h = kFnvOffset;
  for (double v : t.data()) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    unsigned char le[8];
    for (int i = 0; i < 8; ++i) le[i] = static_cast<unsigned char>(bits >> (8 * i));
    h = fnv1a64(std::span<const unsigned char>(le, 8), h);
  }
  return h;
}

}  // namespace dattn
