#include "msp/patches.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>

#include "msp/hash.hpp"
#include "msp/parallel.hpp"
#include "msp/rng.hpp"
#include "msp/sh.hpp"
#include "msp/wire.hpp"

namespace msp {

namespace {

constexpr uint32_t kDatasetVersion = 1;

std::string canonical_manifest(const CohortManifest& m) {
  std::string s;
  char buf[64];
  for (const auto& name : m.subjects) s += "s:" + name + "\n";
  for (const auto& p : m.platforms) {
    s += "p:" + p.name + ":" + std::to_string(p.scale);
    if (p.stats) {
      for (int c = 0; c < p.stats->channels(); ++c) {
        std::snprintf(buf, sizeof(buf), ":%.17g/%.17g", p.stats->mean[c],
                      p.stats->stddev[c]);
        s += buf;
      }
    }
    s += "\n";
  }
  for (const auto& e : m.entries) {
    s += "e:" + std::to_string(e.subject) + ":" + std::to_string(e.platform) +
         ":" + e.volume + ":" + e.mask + "\n";
  }
  return s;
}

// Patch block copy with zero padding, layout [C, X, Y, Z], z fastest.
void extract_block(const Volume& v, int cx, int cy, int cz, int extent,
                   float* out) {
  const int half = extent / 2;
  std::memset(out, 0, sizeof(float) * (size_t)v.c * extent * extent * extent);
  for (int c = 0; c < v.c; ++c) {
    for (int ix = 0; ix < extent; ++ix) {
      const int x = cx - half + ix;
      if (x < 0 || x >= v.x) continue;
      for (int iy = 0; iy < extent; ++iy) {
        const int y = cy - half + iy;
        if (y < 0 || y >= v.y) continue;
        for (int iz = 0; iz < extent; ++iz) {
          const int z = cz - half + iz;
          if (z < 0 || z >= v.z) continue;
          out[((size_t)(c * extent + ix) * extent + iy) * extent + iz] =
              v.at(x, y, z, c);
        }
      }
    }
  }
}

int64_t round_half_up(double x) { return (int64_t)std::floor(x + 0.5); }

}  // namespace

NormStats pooled_stats(const std::vector<const Volume*>& volumes,
                       const std::vector<const Mask*>& masks) {
  if (volumes.empty() || volumes.size() != masks.size()) {
    throw value_error("pooled_stats: need matching volume and mask lists");
  }
  const int channels = volumes[0]->c;
  std::vector<double> sum(channels, 0.0), sumsq(channels, 0.0);
  int64_t count = 0;
  for (size_t i = 0; i < volumes.size(); ++i) {
    const Volume& v = *volumes[i];
    const Mask& m = *masks[i];
    if (v.c != channels) throw shape_error("pooled_stats: channel mismatch");
    if (v.x != m.x || v.y != m.y || v.z != m.z) {
      throw shape_error("pooled_stats: mask grid mismatch");
    }
    for (int x = 0; x < v.x; ++x) {
      for (int y = 0; y < v.y; ++y) {
        for (int z = 0; z < v.z; ++z) {
          if (!m.at(x, y, z)) continue;
          ++count;
          for (int c = 0; c < channels; ++c) {
            const double s = v.at(x, y, z, c);
            sum[c] += s;
            sumsq[c] += s * s;
          }
        }
      }
    }
  }
  if (count == 0) throw value_error("pooled_stats: no masked voxels");
  NormStats st;
  st.mean.resize(channels);
  st.stddev.resize(channels);
  for (int c = 0; c < channels; ++c) {
    st.mean[c] = sum[c] / (double)count;
    const double var = sumsq[c] / (double)count - st.mean[c] * st.mean[c];
    st.stddev[c] = std::sqrt(std::max(var, 0.0));
    if (!(st.stddev[c] > 0.0)) {
      throw value_error("pooled_stats: zero variance in channel " +
                        std::to_string(c));
    }
  }
  return st;
}

NormalizedCohort load_normalized_cohort(const CohortManifest& m) {
  const int S = m.n_subjects();
  const int P = m.n_platforms();
  if (S == 0 || P == 0) throw value_error("empty cohort manifest");

  NormalizedCohort out;
  out.manifest = m;
  out.volumes.resize(S);
  out.masks.resize(S);
  for (int s = 0; s < S; ++s) {
    out.volumes[s].reserve(P);
    out.masks[s].reserve(P);
    for (int p = 0; p < P; ++p) {
      const auto* e = m.find(s, p);
      if (!e) {
        throw value_error("manifest missing cell subject " + std::to_string(s) +
                          " platform " + std::to_string(p));
      }
      out.volumes[s].push_back(read_volume(m.resolve(e->volume)));
      out.masks[s].push_back(read_mask(m.resolve(e->mask)));
      const Volume& v = out.volumes[s].back();
      const Mask& k = out.masks[s].back();
      if (v.x != k.x || v.y != k.y || v.z != k.z) {
        throw shape_error("mask grid mismatch for subject " +
                          std::to_string(s) + " platform " + std::to_string(p));
      }
    }
  }

  out.stats.resize(P);
  for (int p = 0; p < P; ++p) {
    if (m.platforms[p].stats) {
      out.stats[p] = *m.platforms[p].stats;
    } else {
      std::vector<const Volume*> vs;
      std::vector<const Mask*> ks;
      for (int s = 0; s < S; ++s) {
        vs.push_back(&out.volumes[s][p]);
        ks.push_back(&out.masks[s][p]);
      }
      out.stats[p] = pooled_stats(vs, ks);
    }
  }

  for (int s = 0; s < S; ++s) {
    for (int p = 0; p < P; ++p) {
      Volume& v = out.volumes[s][p];
      v = normalize_channels(v, out.stats[p]);
      const Mask& k = out.masks[s][p];
      for (int x = 0; x < v.x; ++x) {
        for (int y = 0; y < v.y; ++y) {
          for (int z = 0; z < v.z; ++z) {
            if (k.at(x, y, z)) continue;
            for (int c = 0; c < v.c; ++c) v.at(x, y, z, c) = 0.f;
          }
        }
      }
    }
  }
  return out;
}

int PatchDataset::slot_of(int platform) const {
  for (size_t j = 0; j < target_platforms.size(); ++j) {
    if (target_platforms[j] == platform) return (int)j;
  }
  throw value_error("dataset has no target slot for platform " +
                    std::to_string(platform));
}

PatchDataset extract_patches(const NormalizedCohort& cohort,
                             const std::vector<int>& target_platforms) {
  const int S = (int)cohort.volumes.size();
  const int P = cohort.manifest.n_platforms();
  if (target_platforms.empty()) throw value_error("no target platforms given");
  for (size_t j = 0; j < target_platforms.size(); ++j) {
    const int p = target_platforms[j];
    if (p < 0 || p >= P) {
      throw value_error("target platform index out of range: " +
                        std::to_string(p));
    }
    for (size_t i = 0; i < j; ++i) {
      if (target_platforms[i] == p) {
        throw value_error("duplicate target platform " + std::to_string(p));
      }
    }
  }

  PatchDataset ds;
  ds.channels = cohort.volumes[0][0].c;
  ds.target_platforms = target_platforms;
  for (int p : target_platforms) {
    const int scale = cohort.manifest.platforms[p].scale;
    ds.target_scales.push_back(scale);
    ds.target_extents.push_back(scale == 2 ? kSrExtent : kInputExtent);
  }
  ds.manifest_hash = fnv1a64(canonical_manifest(cohort.manifest));
  uint64_t mh = 0xcbf29ce484222325ULL;
  for (int s = 0; s < S; ++s) {
    const Mask& m = cohort.masks[s][0];
    mh = fnv1a64(m.data.data(), m.data.size(), mh);
  }
  ds.mask_hash = mh;

  std::vector<std::vector<PatchPair>> per_subject(S);
  parallel_for(S, [&](int64_t s) {
    const Volume& v0 = cohort.volumes[s][0];
    const Mask& m0 = cohort.masks[s][0];
    std::vector<PatchPair>& pairs = per_subject[s];
    for (int z = 0; z < v0.z; ++z) {
      for (int y = 0; y < v0.y; ++y) {
        for (int x = 0; x < v0.x; ++x) {
          if (!m0.at(x, y, z)) continue;
          PatchPair pp;
          pp.cx = x;
          pp.cy = y;
          pp.cz = z;
          pp.subject = (int)s;
          pp.input.resize((size_t)ds.channels * kInputExtent * kInputExtent *
                          kInputExtent);
          extract_block(v0, x, y, z, kInputExtent, pp.input.data());
          pp.targets.resize(target_platforms.size());
          for (size_t j = 0; j < target_platforms.size(); ++j) {
            const Volume& vt = cohort.volumes[s][target_platforms[j]];
            const int sc = ds.target_scales[j];
            const int e = ds.target_extents[j];
            pp.targets[j].resize((size_t)ds.channels * e * e * e);
            extract_block(vt, sc * x, sc * y, sc * z, e,
                          pp.targets[j].data());
          }
          pairs.push_back(std::move(pp));
        }
      }
    }
  });
  for (int s = 0; s < S; ++s) {
    for (auto& pp : per_subject[s]) ds.pairs.push_back(std::move(pp));
  }
  if (ds.pairs.empty()) throw value_error("no masked voxels to extract");
  return ds;
}

SplitIndices split(const PatchDataset& ds, double fraction, uint64_t seed) {
  const int64_t n = ds.size();
  if (n < 2) throw value_error("split needs at least two patches");
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw value_error("split fraction must be inside (0, 1)");
  }
  const int64_t n_train = round_half_up(fraction * (double)n);
  const std::vector<int64_t> perm =
      random_permutation(n, derive_seed(seed, seed_tag::kSplit));
  SplitIndices out;
  out.seed = seed;
  out.train.assign(perm.begin(), perm.begin() + n_train);
  out.test.assign(perm.begin() + n_train, perm.end());
  return out;
}

SplitIndices split_by_subject(const PatchDataset& ds, double fraction,
                              uint64_t seed) {
  const int64_t n = ds.size();
  if (n < 2) throw value_error("split needs at least two patches");
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw value_error("split fraction must be inside (0, 1)");
  }
  int max_subject = 0;
  for (const auto& pp : ds.pairs) max_subject = std::max(max_subject, pp.subject);
  const int S = max_subject + 1;
  if (S < 2) throw value_error("subject split needs at least two subjects");

  const int64_t test_budget = n - round_half_up(fraction * (double)n);
  const std::vector<int64_t> order =
      random_permutation(S, derive_seed(seed, seed_tag::kSplit));
  std::vector<int64_t> per_subject(S, 0);
  for (const auto& pp : ds.pairs) ++per_subject[pp.subject];

  std::vector<char> held(S, 0);
  int64_t held_patches = 0;
  for (int64_t s : order) {
    if (held_patches >= test_budget && held_patches > 0) break;
    if ((int64_t)std::count(held.begin(), held.end(), 1) == S - 1) break;
    held[s] = 1;
    held_patches += per_subject[s];
  }

  SplitIndices out;
  out.seed = seed;
  for (int64_t i = 0; i < n; ++i) {
    (held[ds.pairs[(size_t)i].subject] ? out.test : out.train).push_back(i);
  }
  return out;
}

SplitIndices carve_validation(const SplitIndices& sp, double fraction) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw value_error("validation fraction must be inside (0, 1)");
  }
  const int64_t n = (int64_t)sp.train.size();
  const int64_t n_val = round_half_up(fraction * (double)n);
  if (n_val < 1 || n_val >= n) {
    throw value_error("validation carve leaves an empty side");
  }
  SplitIndices out;
  out.seed = sp.seed;
  out.train.assign(sp.train.begin(), sp.train.end() - n_val);
  out.test.assign(sp.train.end() - n_val, sp.train.end());
  return out;
}

std::vector<std::vector<int64_t>> batch_plan(
    const std::vector<int64_t>& indices, int batch_size, uint64_t shuffle_seed,
    int epoch) {
  if (indices.empty()) throw value_error("batch_plan: empty index list");
  if (batch_size < 1) throw value_error("batch_plan: batch size must be >= 1");
  const std::vector<int64_t> perm = random_permutation(
      (int64_t)indices.size(),
      derive_seed(shuffle_seed, seed_tag::kShuffle, (uint64_t)epoch));
  std::vector<std::vector<int64_t>> out;
  for (size_t start = 0; start < indices.size(); start += (size_t)batch_size) {
    const size_t stop = std::min(indices.size(), start + (size_t)batch_size);
    std::vector<int64_t> batch;
    batch.reserve(stop - start);
    for (size_t i = start; i < stop; ++i) {
      batch.push_back(indices[(size_t)perm[i]]);
    }
    out.push_back(std::move(batch));
  }
  return out;
}

Batch stack_batch(const PatchDataset& ds,
                  const std::vector<int64_t>& indices) {
  if (indices.empty()) throw value_error("stack_batch: empty batch");
  const int B = (int)indices.size();
  const int C = ds.channels;
  const int e0 = ds.input_extent;
  Batch b;
  b.indices = indices;
  b.input = Tensor<float>::zeros({B, C, e0, e0, e0});
  for (int i = 0; i < B; ++i) {
    const PatchPair& pp = ds.pairs[(size_t)indices[(size_t)i]];
    std::memcpy(b.input.data_mut() + (size_t)i * pp.input.size(),
                pp.input.data(), pp.input.size() * sizeof(float));
  }
  for (size_t j = 0; j < ds.target_platforms.size(); ++j) {
    const int e = ds.target_extents[j];
    Tensor<float> t = Tensor<float>::zeros({B, C, e, e, e});
    for (int i = 0; i < B; ++i) {
      const PatchPair& pp = ds.pairs[(size_t)indices[(size_t)i]];
      std::memcpy(t.data_mut() + (size_t)i * pp.targets[j].size(),
                  pp.targets[j].data(), pp.targets[j].size() * sizeof(float));
    }
    b.targets.push_back(std::move(t));
  }
  return b;
}

Tensor<float> patch_input_tensor(const PatchDataset& ds, int64_t index) {
  const PatchPair& pp = ds.pairs[(size_t)index];
  const int e = ds.input_extent;
  return Tensor<float>::from_values({ds.channels, e, e, e}, pp.input);
}

Tensor<float> patch_target_tensor(const PatchDataset& ds, int64_t index,
                                  int slot) {
  const PatchPair& pp = ds.pairs[(size_t)index];
  const int e = ds.target_extents[(size_t)slot];
  return Tensor<float>::from_values({ds.channels, e, e, e},
                                    pp.targets[(size_t)slot]);
}

void save_dataset(const PatchDataset& ds, const std::string& path) {
  std::ofstream os = wire::open_out(path);
  os.write("MSPD", 4);
  wire::put_u32(os, kDatasetVersion);
  wire::put_u32(os, (uint32_t)ds.channels);
  wire::put_u32(os, (uint32_t)ds.input_extent);
  wire::put_u32(os, (uint32_t)ds.target_platforms.size());
  for (size_t j = 0; j < ds.target_platforms.size(); ++j) {
    wire::put_u32(os, (uint32_t)ds.target_platforms[j]);
    wire::put_u32(os, (uint32_t)ds.target_extents[j]);
    wire::put_u32(os, (uint32_t)ds.target_scales[j]);
  }
  wire::put_u64(os, ds.manifest_hash);
  wire::put_u64(os, ds.mask_hash);
  wire::put_u64(os, (uint64_t)ds.pairs.size());
  for (const auto& pp : ds.pairs) {
    wire::put_u32(os, (uint32_t)pp.cx);
    wire::put_u32(os, (uint32_t)pp.cy);
    wire::put_u32(os, (uint32_t)pp.cz);
    wire::put_u32(os, (uint32_t)pp.subject);
    wire::put_f32_array(os, pp.input.data(), pp.input.size());
    for (const auto& t : pp.targets) {
      wire::put_f32_array(os, t.data(), t.size());
    }
  }
  if (!os) throw io_error(path + ": write failed");
}

PatchDataset load_dataset(const std::string& path) {
  std::ifstream is = wire::open_in(path);
  wire::check_magic(is, "MSPD", path);
  const uint32_t version = wire::get_u32(is, path);
  if (version != kDatasetVersion) {
    throw io_error(path + ": unsupported version " + std::to_string(version));
  }
  PatchDataset ds;
  ds.channels = (int)wire::get_u32(is, path);
  ds.input_extent = (int)wire::get_u32(is, path);
  const uint32_t n_targets = wire::get_u32(is, path);
  if (ds.channels < 1 || ds.input_extent < 1 || n_targets < 1 ||
      n_targets > 1024) {
    throw io_error(path + ": implausible dataset header");
  }
  for (uint32_t j = 0; j < n_targets; ++j) {
    ds.target_platforms.push_back((int)wire::get_u32(is, path));
    ds.target_extents.push_back((int)wire::get_u32(is, path));
    ds.target_scales.push_back((int)wire::get_u32(is, path));
  }
  ds.manifest_hash = wire::get_u64(is, path);
  ds.mask_hash = wire::get_u64(is, path);
  const uint64_t n = wire::get_u64(is, path);
  ds.pairs.resize(n);
  const size_t in_len = (size_t)ds.channels * ds.input_extent *
                        ds.input_extent * ds.input_extent;
  for (uint64_t i = 0; i < n; ++i) {
    PatchPair& pp = ds.pairs[i];
    pp.cx = (int)wire::get_u32(is, path);
    pp.cy = (int)wire::get_u32(is, path);
    pp.cz = (int)wire::get_u32(is, path);
    pp.subject = (int)wire::get_u32(is, path);
    pp.input.resize(in_len);
    wire::get_f32_array(is, pp.input.data(), in_len, path);
    pp.targets.resize(n_targets);
    for (uint32_t j = 0; j < n_targets; ++j) {
      const size_t e = (size_t)ds.target_extents[j];
      pp.targets[j].resize((size_t)ds.channels * e * e * e);
      wire::get_f32_array(is, pp.targets[j].data(), pp.targets[j].size(),
                          path);
    }
  }
  return ds;
}

}  // namespace msp
