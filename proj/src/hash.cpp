#include "msp/hash.hpp"

#include <cstdio>
#include <fstream>
#include <vector>

#include "msp/errors.hpp"

namespace msp {

uint64_t fnv1a64_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open for hashing: " + path);
  uint64_t h = 0xcbf29ce484222325ULL;
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), (std::streamsize)buf.size());
    h = fnv1a64(buf.data(), (size_t)in.gcount(), h);
  }
  return h;
}

std::string hash_hex(uint64_t h) {
  char out[17];
  std::snprintf(out, sizeof(out), "%016llx", (unsigned long long)h);
  return out;
}

}  // namespace msp
