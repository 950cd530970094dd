#include "msp/volume.hpp"

#include <limits>

#include "msp/wire.hpp"

namespace msp {

using namespace wire;

namespace {

constexpr uint32_t kVersion = 1;
constexpr int64_t kMaxElements = int64_t(1) << 31;

int checked_extent(uint32_t v, const std::string& path) {
  if (v == 0 || v > uint32_t(std::numeric_limits<int>::max())) {
    throw io_error(path + ": invalid extent " + std::to_string(v));
  }
  return static_cast<int>(v);
}

}  // namespace

void write_volume(const Volume& v, const std::string& path) {
  if (v.data.size() != static_cast<size_t>(v.x) * v.y * v.z * v.c) {
    throw shape_error("volume data length does not match extents");
  }
  for (float s : v.voxel_size) {
    if (!(s > 0.f)) throw value_error("voxel size must be positive");
  }
  std::ofstream os = open_out(path);
  os.write("MSPV", 4);
  put_u32(os, kVersion);
  put_u32(os, static_cast<uint32_t>(v.x));
  put_u32(os, static_cast<uint32_t>(v.y));
  put_u32(os, static_cast<uint32_t>(v.z));
  put_u32(os, static_cast<uint32_t>(v.c));
  for (float s : v.voxel_size) put_f32(os, s);
  os.write(reinterpret_cast<const char*>(v.data.data()),
           static_cast<std::streamsize>(v.data.size() * 4));
  if (!os) throw io_error(path + ": write failed");
}

Volume read_volume(const std::string& path) {
  std::ifstream is = open_in(path);
  check_magic(is, "MSPV", path);
  const uint32_t version = get_u32(is, path);
  if (version != kVersion) {
    throw io_error(path + ": unsupported version " + std::to_string(version));
  }
  const int x = checked_extent(get_u32(is, path), path);
  const int y = checked_extent(get_u32(is, path), path);
  const int z = checked_extent(get_u32(is, path), path);
  const int c = checked_extent(get_u32(is, path), path);
  const int64_t n = int64_t(x) * y * z * c;
  if (n > kMaxElements) throw io_error(path + ": extent overflow");
  Volume v;
  v.x = x;
  v.y = y;
  v.z = z;
  v.c = c;
  for (float& s : v.voxel_size) {
    s = get_f32(is, path);
    if (!(s > 0.f)) throw io_error(path + ": non-positive voxel size");
  }
  v.data.resize(static_cast<size_t>(n));
  if (!is.read(reinterpret_cast<char*>(v.data.data()),
               static_cast<std::streamsize>(n * 4))) {
    throw io_error(path + ": truncated payload");
  }
  return v;
}

void write_mask(const Mask& m, const std::string& path) {
  if (m.data.size() != static_cast<size_t>(m.x) * m.y * m.z) {
    throw shape_error("mask data length does not match extents");
  }
  for (uint8_t b : m.data) {
    if (b > 1) throw value_error("mask values must be 0 or 1");
  }
  std::ofstream os = open_out(path);
  os.write("MSPM", 4);
  put_u32(os, kVersion);
  put_u32(os, static_cast<uint32_t>(m.x));
  put_u32(os, static_cast<uint32_t>(m.y));
  put_u32(os, static_cast<uint32_t>(m.z));
  os.write(reinterpret_cast<const char*>(m.data.data()),
           static_cast<std::streamsize>(m.data.size()));
  if (!os) throw io_error(path + ": write failed");
}

Mask read_mask(const std::string& path) {
  std::ifstream is = open_in(path);
  check_magic(is, "MSPM", path);
  const uint32_t version = get_u32(is, path);
  if (version != kVersion) {
    throw io_error(path + ": unsupported version " + std::to_string(version));
  }
  const int x = checked_extent(get_u32(is, path), path);
  const int y = checked_extent(get_u32(is, path), path);
  const int z = checked_extent(get_u32(is, path), path);
  const int64_t n = int64_t(x) * y * z;
  if (n > kMaxElements) throw io_error(path + ": extent overflow");
  Mask m;
  m.x = x;
  m.y = y;
  m.z = z;
  m.data.resize(static_cast<size_t>(n));
  if (!is.read(reinterpret_cast<char*>(m.data.data()),
               static_cast<std::streamsize>(n))) {
    throw io_error(path + ": truncated payload");
  }
  for (uint8_t b : m.data) {
    if (b > 1) throw io_error(path + ": mask byte outside {0,1}");
  }
  return m;
}

}  // namespace msp
