#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "msp/manifest.hpp"
#include "msp/volume.hpp"

namespace msp {

// One acquisition platform's degradation recipe. Platform volumes are the
// shared subject anatomy pushed through: optional 2x trilinear upsample ->
// Gaussian blur -> per-voxel channel mixing -> smooth multiplicative gain
// field -> additive Gaussian noise. Stages at their identity settings are
// skipped, so an all-identity spec is a bit-exact pass-through.
struct PlatformSpec {
  std::string name;
  int scale = 1;            // 1 or 2 (2 emits an exactly 2x grid)
  double blur_sigma = 0.0;  // voxels
  Eigen::MatrixXd mixing;   // CxC near-identity; 0x0 means identity
  double gain_amplitude = 0.0;
  double noise_sigma = 0.0;
};

struct CohortConfig {
  int subjects = 4;
  std::array<int, 3> base_dims{24, 24, 24};
  int channels = 6;
  uint64_t seed = 1;
  std::array<float, 3> voxel_size{2.f, 2.f, 2.f};
  std::vector<PlatformSpec> platforms;  // index 0 = degraded input platform

  // anatomy texture
  int bumps_per_channel = 6;
  int shared_bumps = 4;
  double bump_radius_min = 2.5;
  double bump_radius_max = 4.5;
  double channel_correlation = 0.5;
  double mask_threshold = 0.3;
};

struct SubjectAnatomy {
  Volume volume;  // smooth multi-channel field, values in [-1, 1]
  Mask mask;      // support above the configured threshold
};

// Near-identity mixing matrix I + strength * U with U uniform in [-1, 1];
// strength below 1/(2C) keeps it strictly diagonally dominant.
Eigen::MatrixXd make_mixing(int channels, double strength, uint64_t seed);

// Random smooth bump fields with cross-channel correlation, deterministic
// in the seed.
SubjectAnatomy generate_subject_anatomy(const CohortConfig& cfg,
                                        uint64_t seed);

Volume apply_platform(const Volume& base, const PlatformSpec& spec,
                      uint64_t seed);

// Writes subjects x platforms volumes, masks, per-subject clean anatomy,
// and the manifest (cohort.json) into out_dir; returns the loaded manifest.
CohortManifest generate_cohort(const CohortConfig& cfg,
                               const std::string& out_dir);

// File naming used by generate_cohort.
std::string anatomy_volume_name(int subject);
std::string platform_volume_name(int subject, int platform);
std::string platform_mask_name(int subject, int platform);

// The stock 4-platform desk cohort: platform 0 a blurry/noisy input,
// platforms 1-2 same-resolution targets with distinct mixing, platform 3 a
// 2x-resolution target.
CohortConfig default_cohort_config();

CohortConfig load_cohort_config(const std::string& path);
void save_cohort_config(const CohortConfig& cfg, const std::string& path);

// Shared volumetric helpers (also used by evaluation).
Volume upsample2x_trilinear(const Volume& v);
Volume gaussian_blur(const Volume& v, double sigma);
Mask upsample2x_mask(const Mask& m);

// Mean squared discrete Laplacian over all voxels and channels.
double laplacian_energy(const Volume& v);

}  // namespace msp
