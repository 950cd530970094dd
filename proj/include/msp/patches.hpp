#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "msp/manifest.hpp"
#include "msp/tensor.hpp"
#include "msp/volume.hpp"

namespace msp {

inline constexpr int kInputExtent = 11;
inline constexpr int kSrExtent = 19;

// Cohort loaded into memory with per-platform channel normalization applied
// and background (voxels outside the platform mask) zeroed afterwards.
// volumes[s][p] is subject s on platform p.
struct NormalizedCohort {
  CohortManifest manifest;
  std::vector<std::vector<Volume>> volumes;
  std::vector<std::vector<Mask>> masks;
  std::vector<NormStats> stats;  // per platform, the stats actually applied
};

// Uses stats embedded in the manifest when present, otherwise computes
// per-platform stats pooled over all subjects' masked voxels.
NormalizedCohort load_normalized_cohort(const CohortManifest& m);

// Pooled per-channel stats over the masked voxels of several volumes.
NormStats pooled_stats(const std::vector<const Volume*>& volumes,
                       const std::vector<const Mask*>& masks);

// One multi-platform training example: an input patch from platform 0 and
// one target patch per requested target platform, all centered on the same
// anatomical location. Patch layout is [C, X, Y, Z], z fastest.
struct PatchPair {
  std::vector<float> input;                  // C * 11^3
  std::vector<std::vector<float>> targets;   // per target slot, C * ext^3
  int cx = 0, cy = 0, cz = 0;                // center in the platform-0 grid
  int subject = 0;
};

struct PatchDataset {
  int channels = 0;
  int input_extent = kInputExtent;
  std::vector<int> target_platforms;  // manifest platform indices
  std::vector<int> target_extents;    // 11, or 19 for scale-2 targets
  std::vector<int> target_scales;
  std::vector<PatchPair> pairs;
  uint64_t manifest_hash = 0;
  uint64_t mask_hash = 0;

  int64_t size() const { return (int64_t)pairs.size(); }
  int slot_of(int platform) const;  // target slot index, throws if absent
};

// One PatchPair per masked platform-0 voxel, ordered by subject, then
// z, y, x of the center. Out-of-bounds reads are zero.
PatchDataset extract_patches(const NormalizedCohort& cohort,
                             const std::vector<int>& target_platforms);

struct SplitIndices {
  std::vector<int64_t> train;
  std::vector<int64_t> test;
  uint64_t seed = 0;
};

// Random permutation split: first round(fraction * n) indices train.
SplitIndices split(const PatchDataset& ds, double fraction, uint64_t seed);

// Holds out whole subjects (at least one) so the test set is approximately
// 1 - fraction of the patches.
SplitIndices split_by_subject(const PatchDataset& ds, double fraction,
                              uint64_t seed);

// Carves a validation set (round-half-up fraction, tail of the shuffled
// train list) out of a split's train side, leaving the test side untouched.
SplitIndices carve_validation(const SplitIndices& sp, double fraction);

// Partition of `indices` into batches, reshuffled per (seed, epoch).
// The final short batch is kept.
std::vector<std::vector<int64_t>> batch_plan(
    const std::vector<int64_t>& indices, int batch_size, uint64_t shuffle_seed,
    int epoch);

// Patches stacked along a leading batch axis.
struct Batch {
  std::vector<int64_t> indices;
  Tensor<float> input;                  // [B, C, 11, 11, 11]
  std::vector<Tensor<float>> targets;   // per target slot, [B, C, e, e, e]
};

Batch stack_batch(const PatchDataset& ds, const std::vector<int64_t>& indices);

// Single-sample tensors for per-sample tapes.
Tensor<float> patch_input_tensor(const PatchDataset& ds, int64_t index);
Tensor<float> patch_target_tensor(const PatchDataset& ds, int64_t index,
                                  int slot);

// Dataset cache, magic "MSPD", little-endian; bit-exact roundtrip.
void save_dataset(const PatchDataset& ds, const std::string& path);
PatchDataset load_dataset(const std::string& path);

}  // namespace msp
