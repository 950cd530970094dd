#include "msp/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>

#include "json.hpp"
#include "msp/parallel.hpp"
#include "msp/rng.hpp"

namespace msp {

namespace {

using nlohmann::json;

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_f(float v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", (double)v);
  return buf;
}

}  // namespace

AdamState::AdamState(const std::vector<Tensor<float>*>& params) {
  for (const Tensor<float>* p : params) {
    const auto& v = p->values();
    master.emplace_back(v.begin(), v.end());
    m.emplace_back(v.size(), 0.0);
    this->v.emplace_back(v.size(), 0.0);
  }
}

void adam_step(const std::vector<Tensor<float>*>& params,
               const std::vector<std::vector<double>>& grads, AdamState& state,
               double lr, const std::vector<double>& lr_scales) {
  if (!(lr > 0)) throw value_error("learning rate must be positive");
  if (params.size() != grads.size() || params.size() != state.master.size()) {
    throw shape_error("adam_step: parameter/gradient/state counts differ");
  }
  if (!lr_scales.empty() && lr_scales.size() != params.size()) {
    throw shape_error("adam_step: lr_scales count differs from parameters");
  }
  state.t += 1;
  const double b1 = state.beta1, b2 = state.beta2;
  const double c1 = 1.0 - std::pow(b1, (double)state.t);
  const double c2 = 1.0 - std::pow(b2, (double)state.t);
  for (size_t p = 0; p < params.size(); ++p) {
    auto& theta = state.master[p];
    auto& m = state.m[p];
    auto& v = state.v[p];
    const auto& g = grads[p];
    if (g.size() != theta.size()) {
      throw shape_error("adam_step: gradient size mismatch");
    }
    const double step = lr * (lr_scales.empty() ? 1.0 : lr_scales[p]);
    float* out = params[p]->data_mut();
    for (size_t i = 0; i < g.size(); ++i) {
      if (!std::isfinite(g[i])) {
        throw divergence_error("non-finite gradient in adam_step");
      }
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      theta[i] -= step * (m[i] / c1) / (std::sqrt(v[i] / c2) + state.eps);
      out[i] = (float)theta[i];
    }
  }
}

double lr_at(int epoch, const ScheduleSpec& schedule) {
  if (epoch < 0) throw value_error("epoch must be >= 0");
  if (schedule.period < 1) throw value_error("schedule period must be >= 1");
  if (!(schedule.lr0 > 0)) throw value_error("lr0 must be positive");
  return schedule.lr0 * std::exp2(-0.5 * (double)(epoch / schedule.period));
}

float alpha_at(int epoch, const AlphaSchedule& schedule) {
  if (schedule.e1 <= schedule.e0) {
    throw value_error("alpha ramp needs e1 > e0");
  }
  const double a = ((double)epoch - schedule.e0) / (schedule.e1 - schedule.e0);
  return (float)std::clamp(a, 0.0, 1.0);
}

TrainConfig parse_train_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw config_error(std::string("train config: ") + e.what());
  }
  TrainConfig cfg;
  try {
    for (const auto& [key, val] : j.items()) {
      if (key == "seed") {
        cfg.seed = val.get<uint64_t>();
      } else if (key == "epochs") {
        cfg.epochs = val.get<int>();
      } else if (key == "batch_size") {
        cfg.batch_size = val.get<int>();
      } else if (key == "schedule") {
        for (const auto& [k2, v2] : val.items()) {
          if (k2 == "lr0") {
            cfg.schedule.lr0 = v2.get<double>();
          } else if (k2 == "period") {
            cfg.schedule.period = v2.get<int>();
          } else {
            throw config_error("train config: unknown schedule key " + k2);
          }
        }
      } else if (key == "alpha") {
        AlphaSchedule a;
        for (const auto& [k2, v2] : val.items()) {
          if (k2 == "e0") {
            a.e0 = v2.get<int>();
          } else if (k2 == "e1") {
            a.e1 = v2.get<int>();
          } else {
            throw config_error("train config: unknown alpha key " + k2);
          }
        }
        cfg.alpha = a;
      } else if (key == "alpha_override") {
        cfg.alpha_override = val.get<float>();
      } else if (key == "connection_lr_scale") {
        cfg.connection_lr_scale = val.get<double>();
      } else if (key == "freeze_singles") {
        cfg.freeze_singles = val.get<bool>();
      } else if (key == "snapshot_epoch") {
        cfg.snapshot_epoch = val.get<int>();
      } else if (key == "val_fraction") {
        cfg.val_fraction = val.get<double>();
      } else {
        throw config_error("train config: unknown key " + key);
      }
    }
  } catch (const json::exception& e) {
    throw config_error(std::string("train config: ") + e.what());
  }
  if (cfg.epochs < 0) throw config_error("train config: epochs must be >= 0");
  if (cfg.batch_size < 1) {
    throw config_error("train config: batch_size must be >= 1");
  }
  if (!(cfg.schedule.lr0 > 0)) {
    throw config_error("train config: lr0 must be positive");
  }
  if (cfg.schedule.period != 15 && cfg.schedule.period != 25) {
    throw config_error("train config: period must be 15 or 25");
  }
  if (cfg.alpha && cfg.alpha->e1 <= cfg.alpha->e0) {
    throw config_error("train config: alpha ramp needs e1 > e0");
  }
  if (cfg.alpha_override &&
      !(*cfg.alpha_override >= 0.f && *cfg.alpha_override <= 1.f)) {
    throw config_error("train config: alpha_override must lie in [0, 1]");
  }
  if (cfg.connection_lr_scale < 0) {
    throw config_error("train config: connection_lr_scale must be >= 0");
  }
  if (cfg.snapshot_epoch && *cfg.snapshot_epoch < 0) {
    throw config_error("train config: snapshot_epoch must be >= 0");
  }
  if (cfg.val_fraction && !(*cfg.val_fraction > 0 && *cfg.val_fraction < 1)) {
    throw config_error("train config: val_fraction must be inside (0, 1)");
  }
  return cfg;
}

std::string history_csv(const TrainRun& run) {
  std::string out = "epoch,lr,alpha,train_loss,val_loss\n";
  for (const auto& r : run.history) {
    out += std::to_string(r.epoch) + "," + fmt_g(r.lr) + "," + fmt_f(r.alpha) +
           "," + fmt_g(r.train_loss) + "," + fmt_g(r.val_loss) + "\n";
  }
  return out;
}

std::vector<std::vector<float>> copy_param_values(
    const std::vector<Tensor<float>*>& params) {
  std::vector<std::vector<float>> out;
  out.reserve(params.size());
  for (const Tensor<float>* p : params) out.push_back(p->values());
  return out;
}

void assign_param_values(const std::vector<Tensor<float>*>& params,
                         const std::vector<std::vector<float>>& values) {
  if (params.size() != values.size()) {
    throw shape_error("parameter value lists have different lengths");
  }
  for (size_t i = 0; i < params.size(); ++i) {
    if (params[i]->values().size() != values[i].size()) {
      throw shape_error("parameter value size mismatch");
    }
    std::copy(values[i].begin(), values[i].end(), params[i]->data_mut());
  }
}

namespace {

double mean_sample_loss(
    const std::vector<int64_t>& indices,
    const std::function<double(int64_t)>& sample_loss) {
  if (indices.empty()) throw value_error("loss over an empty index set");
  std::vector<double> losses(indices.size());
  parallel_for((int64_t)indices.size(),
               [&](int64_t i) { losses[i] = sample_loss(indices[i]); });
  double sum = 0;
  for (double l : losses) sum += l;
  return sum / (double)indices.size();
}

struct EngineHooks {
  std::function<float(int epoch)> epoch_alpha;
  std::function<Tensor<float>(int64_t index, Tape<float>&)> sample_loss;
  std::function<double()> val_loss;
  std::function<bool(float alpha)> best_eligible;
};

TrainRun run_engine(const std::vector<Tensor<float>*>& params,
                    const std::vector<double>& lr_scales,
                    const std::vector<int64_t>& train_idx,
                    const TrainConfig& cfg, const EngineHooks& hooks) {
  if (cfg.epochs < 0) throw value_error("epochs must be >= 0");
  if (cfg.batch_size < 1) throw value_error("batch_size must be >= 1");
  if (train_idx.empty()) throw value_error("empty training split");

  TrainRun run;
  run.first_batch_loss = std::numeric_limits<double>::quiet_NaN();
  if (cfg.snapshot_epoch && *cfg.snapshot_epoch == 0) {
    run.snapshot = copy_param_values(params);
  }
  if (cfg.epochs == 0) return run;

  AdamState state(params);
  std::vector<std::vector<float>> best_values;
  double best_val = std::numeric_limits<double>::infinity();

  std::vector<std::vector<double>> acc(params.size());
  for (size_t p = 0; p < params.size(); ++p) {
    acc[p].resize(params[p]->values().size());
  }

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const float alpha = hooks.epoch_alpha(epoch);
    const double lr = lr_at(epoch, cfg.schedule);
    const auto batches = batch_plan(train_idx, cfg.batch_size, cfg.seed, epoch);
    double loss_sum = 0;

    for (size_t bi = 0; bi < batches.size(); ++bi) {
      const auto& batch = batches[bi];
      const int64_t B = (int64_t)batch.size();
      std::vector<double> sample_losses(B);
      std::vector<std::vector<std::vector<float>>> sample_grads(
          (size_t)B, std::vector<std::vector<float>>(params.size()));

      parallel_for(B, [&](int64_t b) {
        Tape<float> tape;
        Tensor<float> loss = hooks.sample_loss(batch[(size_t)b], tape);
        tape.backward(loss, false);
        sample_losses[(size_t)b] = (double)loss.values()[0];
        for (size_t p = 0; p < params.size(); ++p) {
          const std::vector<float>* g = tape.local_grad(*params[p]);
          if (g) sample_grads[(size_t)b][p] = *g;
        }
      });

      for (auto& a : acc) std::fill(a.begin(), a.end(), 0.0);
      double batch_loss = 0;
      for (int64_t b = 0; b < B; ++b) {
        if (!std::isfinite(sample_losses[(size_t)b])) {
          throw divergence_error("loss diverged at epoch " +
                                 std::to_string(epoch) + ", batch " +
                                 std::to_string(bi));
        }
        batch_loss += sample_losses[(size_t)b];
        for (size_t p = 0; p < params.size(); ++p) {
          const auto& g = sample_grads[(size_t)b][p];
          if (g.empty()) continue;
          for (size_t i = 0; i < g.size(); ++i) acc[p][i] += (double)g[i];
        }
      }
      const double inv = 1.0 / (double)B;
      for (auto& a : acc) {
        for (double& x : a) x *= inv;
      }
      adam_step(params, acc, state, lr, lr_scales);

      if (epoch == 0 && bi == 0) run.first_batch_loss = batch_loss * inv;
      loss_sum += batch_loss;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.alpha = alpha;
    rec.train_loss = loss_sum / (double)train_idx.size();
    rec.val_loss = hooks.val_loss();
    if (!std::isfinite(rec.val_loss)) {
      throw divergence_error("validation loss diverged at epoch " +
                             std::to_string(epoch));
    }
    run.history.push_back(rec);

    if (cfg.snapshot_epoch && *cfg.snapshot_epoch == epoch + 1) {
      run.snapshot = copy_param_values(params);
    }
    if (hooks.best_eligible(alpha) && rec.val_loss < best_val) {
      best_val = rec.val_loss;
      best_values = copy_param_values(params);
      run.best_epoch = epoch;
    }
  }

  if (run.best_epoch >= 0) {
    assign_param_values(params, best_values);
  } else {
    run.best_epoch = cfg.epochs - 1;  // nothing eligible: keep the last state
  }
  return run;
}

int checked_slot(const PatchDataset& ds, int channels, int platform) {
  if (ds.channels != channels) {
    throw shape_error("network expects " + std::to_string(channels) +
                      " channels, dataset has " + std::to_string(ds.channels));
  }
  return ds.slot_of(platform);
}

}  // namespace

double dataset_mse(const SingleNet& net, const PatchDataset& ds,
                   const std::vector<int64_t>& indices, int target_platform) {
  const int slot = checked_slot(ds, net.spec.c_in, target_platform);
  return mean_sample_loss(indices, [&](int64_t idx) {
    Tensor<float> x = patch_input_tensor(ds, idx);
    Tensor<float> y = patch_target_tensor(ds, idx, slot);
    return (double)mse_loss(forward_net(net, x).y, y).values()[0];
  });
}

double dataset_mse(const MspModel& msp, const PatchDataset& ds,
                   const std::vector<int64_t>& indices) {
  const int tslot = ds.slot_of(msp.target);
  return mean_sample_loss(indices, [&](int64_t idx) {
    Tensor<float> x = patch_input_tensor(ds, idx);
    Tensor<float> y = patch_target_tensor(ds, idx, tslot);
    return (double)mse_loss(msp_forward(msp, x).stage2, y).values()[0];
  });
}

TrainRun train_single(SingleNet& net, const PatchDataset& ds,
                      const SplitIndices& split, int target_platform,
                      const TrainConfig& cfg) {
  const int slot = checked_slot(ds, net.spec.c_in, target_platform);
  if (net.spec.output_extent(ds.input_extent) != ds.target_extents[slot]) {
    throw shape_error("network output extent does not match the target grid");
  }
  if (split.test.empty()) throw value_error("empty validation split");

  std::vector<Tensor<float>*> params = collect_params(net);
  EngineHooks hooks;
  hooks.epoch_alpha = [](int) { return 0.f; };
  hooks.sample_loss = [&](int64_t idx, Tape<float>& tape) {
    Tensor<float> x = patch_input_tensor(ds, idx);
    Tensor<float> y = patch_target_tensor(ds, idx, slot);
    return mse_loss(forward_net(net, x, &tape).y, y, &tape);
  };
  hooks.val_loss = [&]() {
    return dataset_mse(net, ds, split.test, target_platform);
  };
  hooks.best_eligible = [](float) { return true; };
  return run_engine(params, {}, split.train, cfg, hooks);
}

TrainRun train_msp(MspModel& msp, const PatchDataset& ds,
                   const SplitIndices& split, const TrainConfig& cfg) {
  std::vector<int> slots;
  for (int platform : msp.platforms) {
    slots.push_back(checked_slot(ds, msp.singles[0].spec.c_in, platform));
  }
  const int tslot = ds.slot_of(msp.target);
  if (split.test.empty()) throw value_error("empty validation split");

  const AlphaSchedule sched =
      cfg.alpha ? *cfg.alpha : AlphaSchedule{0, std::max(1, cfg.epochs / 2)};

  std::vector<Tensor<float>*> params = collect_params(msp);
  std::vector<double> lr_scales;
  for (const auto& net : msp.singles) {
    for (size_t i = 0; i < net.params.size(); ++i) {
      lr_scales.push_back(cfg.freeze_singles ? 0.0 : 1.0);
    }
  }
  for (const auto& net : msp.conns) {
    for (size_t i = 0; i < net.params.size(); ++i) {
      lr_scales.push_back(cfg.connection_lr_scale);
    }
  }

  EngineHooks hooks;
  hooks.epoch_alpha = [&](int epoch) {
    msp.alpha = cfg.alpha_override ? *cfg.alpha_override
                                   : alpha_at(epoch, sched);
    return msp.alpha;
  };
  hooks.sample_loss = [&](int64_t idx, Tape<float>& tape) {
    Tensor<float> x = patch_input_tensor(ds, idx);
    MspForward f = msp_forward(msp, x, &tape);
    Tensor<float> loss;
    for (size_t i = 0; i < slots.size(); ++i) {
      Tensor<float> y = patch_target_tensor(ds, idx, slots[i]);
      Tensor<float> term = mse_loss(f.stage1[i], y, &tape);
      loss = i == 0 ? term : add(loss, term, &tape);
    }
    Tensor<float> y_t = patch_target_tensor(ds, idx, tslot);
    return add(loss, mse_loss(f.stage2, y_t, &tape), &tape);
  };
  hooks.val_loss = [&]() { return dataset_mse(msp, ds, split.test); };
  hooks.best_eligible = [](float alpha) { return alpha == 1.f; };
  return run_engine(params, lr_scales, split.train, cfg, hooks);
}

namespace {

// Shared driver for the multi-head baselines: per-sample loss is the sum of
// per-platform MSEs and validation uses the same total.
template <typename Model, typename ForwardFn>
TrainRun train_multi_head(Model& model, const std::vector<int>& platforms,
                          int c_in, const PatchDataset& ds,
                          const SplitIndices& split, const TrainConfig& cfg,
                          ForwardFn&& fwd) {
  std::vector<int> slots;
  for (int platform : platforms) {
    slots.push_back(checked_slot(ds, c_in, platform));
  }
  if (split.test.empty()) throw value_error("empty validation split");

  std::vector<Tensor<float>*> params = collect_params(model);
  EngineHooks hooks;
  hooks.epoch_alpha = [](int) { return 0.f; };
  hooks.sample_loss = [&](int64_t idx, Tape<float>& tape) {
    Tensor<float> x = patch_input_tensor(ds, idx);
    std::vector<Tensor<float>> preds = fwd(model, x, &tape);
    Tensor<float> loss;
    for (size_t i = 0; i < slots.size(); ++i) {
      Tensor<float> y = patch_target_tensor(ds, idx, slots[i]);
      Tensor<float> term = mse_loss(preds[i], y, &tape);
      loss = i == 0 ? term : add(loss, term, &tape);
    }
    return loss;
  };
  hooks.val_loss = [&]() {
    return mean_sample_loss(split.test, [&](int64_t idx) {
      Tensor<float> x = patch_input_tensor(ds, idx);
      std::vector<Tensor<float>> preds = fwd(model, x, nullptr);
      double total = 0.0;
      for (size_t i = 0; i < slots.size(); ++i) {
        Tensor<float> y = patch_target_tensor(ds, idx, slots[i]);
        total += (double)mse_loss(preds[i], y).values()[0];
      }
      return total;
    });
  };
  hooks.best_eligible = [](float) { return true; };
  return run_engine(params, {}, split.train, cfg, hooks);
}

}  // namespace

TrainRun train_cpm(CpmModel& model, const PatchDataset& ds,
                   const SplitIndices& split, const TrainConfig& cfg) {
  return train_multi_head(model, model.platforms,
                          model.stages[0].trunk.spec.c_in, ds, split, cfg,
                          [](CpmModel& m, const Tensor<float>& x,
                             Tape<float>* tape) {
                            return cpm_forward(m, x, tape);
                          });
}

TrainRun train_hned(HnedModel& model, const PatchDataset& ds,
                    const SplitIndices& split, const TrainConfig& cfg) {
  return train_multi_head(model, model.platforms, model.segments[0].spec.c_in,
                          ds, split, cfg,
                          [](HnedModel& m, const Tensor<float>& x,
                             Tape<float>* tape) {
                            return hned_forward(m, x, tape);
                          });
}

}  // namespace msp
