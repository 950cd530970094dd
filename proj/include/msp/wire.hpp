#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "msp/errors.hpp"

namespace msp::wire {

// Little-endian primitives shared by all binary file formats.

inline void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t get_u32(std::istream& is, const std::string& path) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) {
    throw io_error(path + ": truncated header");
  }
  return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 |
         uint32_t(b[3]) << 24;
}

inline void put_u64(std::ostream& os, uint64_t v) {
  put_u32(os, static_cast<uint32_t>(v));
  put_u32(os, static_cast<uint32_t>(v >> 32));
}

inline uint64_t get_u64(std::istream& is, const std::string& path) {
  const uint64_t lo = get_u32(is, path);
  const uint64_t hi = get_u32(is, path);
  return lo | hi << 32;
}

inline void put_f32(std::ostream& os, float v) {
  uint32_t u;
  std::memcpy(&u, &v, 4);
  put_u32(os, u);
}

inline float get_f32(std::istream& is, const std::string& path) {
  const uint32_t u = get_u32(is, path);
  float v;
  std::memcpy(&v, &u, 4);
  return v;
}

inline void put_f32_array(std::ostream& os, const float* p, size_t n) {
  os.write(reinterpret_cast<const char*>(p),
           static_cast<std::streamsize>(n * 4));
}

inline void get_f32_array(std::istream& is, float* p, size_t n,
                          const std::string& path) {
  if (!is.read(reinterpret_cast<char*>(p),
               static_cast<std::streamsize>(n * 4))) {
    throw io_error(path + ": truncated payload");
  }
}

inline void check_magic(std::istream& is, const char* magic,
                        const std::string& path) {
  char got[4];
  if (!is.read(got, 4)) throw io_error(path + ": truncated header");
  if (std::memcmp(got, magic, 4) != 0) {
    throw io_error(path + ": bad magic, expected " + magic);
  }
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw io_error(path + ": cannot open for writing");
  return os;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error(path + ": cannot open for reading");
  return is;
}

}  // namespace msp::wire
