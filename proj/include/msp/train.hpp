#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "msp/models.hpp"
#include "msp/patches.hpp"

namespace msp {

// ADAM moments and a float64 master copy of the parameters; the float
// parameters are refreshed from the master after every step.
struct AdamState {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  int64_t t = 0;
  std::vector<std::vector<double>> master, m, v;

  explicit AdamState(const std::vector<Tensor<float>*>& params);
};

// One bias-corrected ADAM update. lr_scales, when nonempty, multiplies the
// learning rate per parameter tensor (0 freezes it).
void adam_step(const std::vector<Tensor<float>*>& params,
               const std::vector<std::vector<double>>& grads, AdamState& state,
               double lr, const std::vector<double>& lr_scales = {});

struct ScheduleSpec {
  double lr0 = 1e-4;
  int period = 15;
};

// lr0 / sqrt(2)^floor(epoch / period)
double lr_at(int epoch, const ScheduleSpec& schedule);

struct AlphaSchedule {
  int e0 = 0;
  int e1 = 1;
};

// clamp((epoch - e0) / (e1 - e0), 0, 1)
float alpha_at(int epoch, const AlphaSchedule& schedule);

struct TrainConfig {
  uint64_t seed = 0;
  int epochs = 0;
  int batch_size = 12;
  ScheduleSpec schedule;
  std::optional<AlphaSchedule> alpha;  // default ramp: e0=0, e1=epochs/2
  std::optional<float> alpha_override;
  double connection_lr_scale = 1.0;
  bool freeze_singles = false;
  std::optional<int> snapshot_epoch;  // copy parameters after this many epochs
  // When set, validation is carved out of the train side and the held-out
  // split stays untouched by model selection; default reuses the held-out
  // split as validation.
  std::optional<double> val_fraction;
};

// Strict parser for the JSON fields of TrainConfig; unknown keys and
// out-of-range values raise config_error.
TrainConfig parse_train_config(const std::string& json_text);

struct EpochRecord {
  int epoch = 0;
  double lr = 0;
  float alpha = 0;
  double train_loss = 0;
  double val_loss = 0;
};

struct TrainRun {
  std::vector<EpochRecord> history;
  double first_batch_loss = 0;  // total loss of epoch 0, batch 0
  int best_epoch = -1;
  std::vector<std::vector<float>> snapshot;  // set when snapshot_epoch hits
};

// "epoch,lr,alpha,train_loss,val_loss" rows at full precision.
std::string history_csv(const TrainRun& run);

std::vector<std::vector<float>> copy_param_values(
    const std::vector<Tensor<float>*>& params);
void assign_param_values(const std::vector<Tensor<float>*>& params,
                         const std::vector<std::vector<float>>& values);

// Mean per-patch MSE of a single net over the given patches.
double dataset_mse(const SingleNet& net, const PatchDataset& ds,
                   const std::vector<int64_t>& indices, int target_platform);

// Mean per-patch second-stage MSE of an MSP model.
double dataset_mse(const MspModel& msp, const PatchDataset& ds,
                   const std::vector<int64_t>& indices);

// Minimizes MSE against the net's platform; the net is left at the
// best-validation epoch.
TrainRun train_single(SingleNet& net, const PatchDataset& ds,
                      const SplitIndices& split, int target_platform,
                      const TrainConfig& cfg);

// Joint refinement with per-batch loss
//   sum_i MSE(stage1_i, y_i) + MSE(stage2, y_T),
// alpha ramped by schedule. The model is left at the best-validation epoch
// among those with alpha == 1 (or the final epoch if none reached 1).
TrainRun train_msp(MspModel& msp, const PatchDataset& ds,
                   const SplitIndices& split, const TrainConfig& cfg);

// Multi-head baselines, loss = sum over platforms of MSE(pred_i, y_i).
TrainRun train_cpm(CpmModel& model, const PatchDataset& ds,
                   const SplitIndices& split, const TrainConfig& cfg);

TrainRun train_hned(HnedModel& model, const PatchDataset& ds,
                    const SplitIndices& split, const TrainConfig& cfg);

}  // namespace msp
