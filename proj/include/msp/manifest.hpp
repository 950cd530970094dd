#pragma once

#include <optional>
#include <string>
#include <vector>

#include "msp/volume.hpp"

namespace msp {

// Per-channel normalization statistics (population standard deviation).
struct NormStats {
  std::vector<double> mean;
  std::vector<double> stddev;
  int channels() const { return static_cast<int>(mean.size()); }
};

struct PlatformInfo {
  std::string name;
  int scale = 1;  // grid multiple relative to platform 0
  std::optional<NormStats> stats;
};

// Index of a traveling-heads cohort: N subjects scanned on P platforms,
// platform 0 being the input platform all others are predicted from.
struct CohortManifest {
  struct Entry {
    int subject = 0;
    int platform = 0;
    std::string volume;  // paths relative to the manifest directory
    std::string mask;
  };

  std::vector<std::string> subjects;
  std::vector<PlatformInfo> platforms;
  std::vector<Entry> entries;
  std::string root;  // directory of the manifest file, set on load

  int n_subjects() const { return static_cast<int>(subjects.size()); }
  int n_platforms() const { return static_cast<int>(platforms.size()); }
  const Entry* find(int subject, int platform) const;
  std::string resolve(const std::string& rel) const;
};

CohortManifest load_manifest(const std::string& path);
void save_manifest(const CohortManifest& m, const std::string& path);

// Checks every manifest invariant (cell completeness, file existence,
// shape consistency, integer-multiple grids) and reports all violations
// instead of stopping at the first.
std::vector<std::string> validate_manifest(const CohortManifest& m);

}  // namespace msp
