#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "msp/models.hpp"
#include "msp/patches.hpp"

namespace msp {

struct PatchError {
  int64_t patch_index = 0;
  int subject = 0;
  int target_platform = 0;
  double mse = 0;
};

struct EvalRow {
  std::string model;
  int target = 0;
  int64_t n = 0;
  double mean = 0;
  double stddev = 0;  // population
  uint64_t checkpoint_hash = 0;
  uint64_t dataset_hash = 0;
};

struct PairedTestResult {
  double w = 0;         // min(W+, W-), midranks allowed
  int64_t n_used = 0;   // pairs with nonzero difference
  double p = 1;         // two-sided
  double p_corrected = 1;
  bool exact = false;
  bool degenerate = false;
};

// Mean over channels and voxels of the squared error, float64 accumulation.
double patch_mse(const Tensor<float>& pred, const Tensor<float>& target);

std::vector<PatchError> evaluate_model(const SingleNet& net,
                                       const PatchDataset& ds,
                                       const std::vector<int64_t>& indices,
                                       int target_platform);

std::vector<PatchError> evaluate_model(const MspModel& msp,
                                       const PatchDataset& ds,
                                       const std::vector<int64_t>& indices);

// Multi-head baselines: one error list per head, in model platform order.
std::vector<std::vector<PatchError>> evaluate_model(
    const CpmModel& model, const PatchDataset& ds,
    const std::vector<int64_t>& indices);

std::vector<std::vector<PatchError>> evaluate_model(
    const HnedModel& model, const PatchDataset& ds,
    const std::vector<int64_t>& indices);

// No-harmonization baseline: the input patch itself (trilinearly upsampled
// and center-cropped for super-resolved targets).
std::vector<PatchError> evaluate_identity(const PatchDataset& ds,
                                          const std::vector<int64_t>& indices,
                                          int target_platform);

EvalRow summarize(const std::string& model, int target,
                  const std::vector<PatchError>& errors,
                  uint64_t checkpoint_hash = 0, uint64_t dataset_hash = 0);

// Exact two-sided Wilcoxon p over all sign assignments for n <= 20, else
// normal approximation with midrank tie correction and 0.5 continuity.
PairedTestResult wilcoxon_signed_rank(const std::vector<double>& a,
                                      const std::vector<double>& b, int m = 3,
                                      bool force_approx = false);

double bonferroni(double p, int m);

// "patch_index,subject,target,mse" rows at full precision.
std::string errors_csv(const std::vector<PatchError>& errors);

// Mean (±std) grid, models down, target platforms across.
std::string report_text(const std::vector<EvalRow>& rows, int decimals = 0);

std::string report_json(const std::vector<EvalRow>& rows);

}  // namespace msp
