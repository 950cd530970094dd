#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace msp {

// FNV-1a, 64-bit.
inline uint64_t fnv1a64(const void* data, size_t n,
                        uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x00000100000001b3ULL;
  }
  return h;
}

inline uint64_t fnv1a64(const std::string& s,
                        uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a64(s.data(), s.size(), h);
}

uint64_t fnv1a64_file(const std::string& path);

std::string hash_hex(uint64_t h);

}  // namespace msp
