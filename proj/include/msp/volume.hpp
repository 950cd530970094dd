#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "msp/errors.hpp"

namespace msp {

// Multi-channel volumetric image. Storage matches the on-disk layout:
// channel fastest, then z, y, x slowest, i.e. index (((x*Y + y)*Z + z)*C + c).
struct Volume {
  int x = 0, y = 0, z = 0, c = 0;
  std::array<float, 3> voxel_size{1.f, 1.f, 1.f};
  std::vector<float> data;

  static Volume create(int x, int y, int z, int c,
                       std::array<float, 3> voxel_size = {1.f, 1.f, 1.f}) {
    if (x <= 0 || y <= 0 || z <= 0 || c <= 0) {
      throw shape_error("volume extents must be positive");
    }
    Volume v;
    v.x = x;
    v.y = y;
    v.z = z;
    v.c = c;
    v.voxel_size = voxel_size;
    v.data.assign(static_cast<size_t>(x) * y * z * c, 0.f);
    return v;
  }

  int64_t index(int xi, int yi, int zi, int ci) const {
    return ((static_cast<int64_t>(xi) * y + yi) * z + zi) * c + ci;
  }
  float at(int xi, int yi, int zi, int ci) const {
    return data[static_cast<size_t>(index(xi, yi, zi, ci))];
  }
  float& at(int xi, int yi, int zi, int ci) {
    return data[static_cast<size_t>(index(xi, yi, zi, ci))];
  }
  int64_t voxels() const { return static_cast<int64_t>(x) * y * z; }
  bool same_grid(const Volume& o) const {
    return x == o.x && y == o.y && z == o.z && c == o.c;
  }
};

// Binary brain mask on the same spatial grid as its volume, one byte per
// voxel, index ((x*Y + y)*Z + z).
struct Mask {
  int x = 0, y = 0, z = 0;
  std::vector<uint8_t> data;

  static Mask create(int x, int y, int z) {
    if (x <= 0 || y <= 0 || z <= 0) {
      throw shape_error("mask extents must be positive");
    }
    Mask m;
    m.x = x;
    m.y = y;
    m.z = z;
    m.data.assign(static_cast<size_t>(x) * y * z, 0);
    return m;
  }

  int64_t index(int xi, int yi, int zi) const {
    return (static_cast<int64_t>(xi) * y + yi) * z + zi;
  }
  bool at(int xi, int yi, int zi) const {
    return data[static_cast<size_t>(index(xi, yi, zi))] != 0;
  }
  void set(int xi, int yi, int zi, bool on) {
    data[static_cast<size_t>(index(xi, yi, zi))] = on ? 1 : 0;
  }
  int64_t count() const {
    int64_t n = 0;
    for (uint8_t b : data) n += b;
    return n;
  }
};

// Little-endian binary formats. Volume: magic "MSPV", u32 version=1,
// u32 X,Y,Z,C, f32 voxel size x3, then X*Y*Z*C f32 values (36-byte header).
// Mask: magic "MSPM", u32 version=1, u32 X,Y,Z, then X*Y*Z u8 values.
void write_volume(const Volume& v, const std::string& path);
Volume read_volume(const std::string& path);
void write_mask(const Mask& m, const std::string& path);
Mask read_mask(const std::string& path);

}  // namespace msp
