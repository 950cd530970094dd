#include "msp/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>

#include "json.hpp"
#include "msp/hash.hpp"
#include "msp/parallel.hpp"
#include "msp/synthetic.hpp"

namespace msp {

namespace {

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<PatchError> evaluate_with(
    const PatchDataset& ds, const std::vector<int64_t>& indices,
    int target_platform,
    const std::function<Tensor<float>(int64_t)>& predict) {
  if (indices.empty()) throw value_error("empty test set");
  const int slot = ds.slot_of(target_platform);
  std::vector<PatchError> out(indices.size());
  parallel_for((int64_t)indices.size(), [&](int64_t i) {
    const int64_t idx = indices[(size_t)i];
    Tensor<float> y = patch_target_tensor(ds, idx, slot);
    PatchError e;
    e.patch_index = idx;
    e.subject = (int)ds.pairs[(size_t)idx].subject;
    e.target_platform = target_platform;
    e.mse = patch_mse(predict(idx), y);
    out[(size_t)i] = e;
  });
  return out;
}

// Trilinear 2x upsample of an input patch, center-cropped to the
// super-resolved grid (even upsampled voxels coincide with input voxels).
Tensor<float> upsample_crop(const Tensor<float>& x, int out_extent) {
  const int c = x.dim(0), e = x.dim(1);
  Volume v = Volume::create(e, e, e, c);
  for (int cc = 0; cc < c; ++cc) {
    for (int ix = 0; ix < e; ++ix) {
      for (int iy = 0; iy < e; ++iy) {
        for (int iz = 0; iz < e; ++iz) {
          v.at(ix, iy, iz, cc) =
              x.values()[((((int64_t)cc * e + ix) * e + iy) * e + iz)];
        }
      }
    }
  }
  Volume up = upsample2x_trilinear(v);
  const int off = (2 * e - out_extent) / 2;
  Tensor<float> out = Tensor<float>::zeros({c, out_extent, out_extent,
                                            out_extent});
  float* dst = out.data_mut();
  for (int cc = 0; cc < c; ++cc) {
    for (int ix = 0; ix < out_extent; ++ix) {
      for (int iy = 0; iy < out_extent; ++iy) {
        for (int iz = 0; iz < out_extent; ++iz) {
          *dst++ = up.at(ix + off, iy + off, iz + off, cc);
        }
      }
    }
  }
  return out;
}

double ranks_with_ties(const std::vector<double>& absd,
                       std::vector<double>& ranks, double& tie_sum) {
  const size_t n = absd.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t(0));
  std::sort(order.begin(), order.end(),
            [&](size_t i, size_t j) { return absd[i] < absd[j]; });
  ranks.assign(n, 0.0);
  tie_sum = 0;
  size_t i = 0;
  double total = 0;
  while (i < n) {
    size_t j = i;
    while (j < n && absd[order[j]] == absd[order[i]]) ++j;
    const double mid = 0.5 * ((double)(i + 1) + (double)j);
    for (size_t k = i; k < j; ++k) ranks[order[k]] = mid;
    const double t = (double)(j - i);
    tie_sum += t * t * t - t;
    total += mid * t;
    i = j;
  }
  return total;
}

double exact_two_sided_p(const std::vector<double>& ranks, double w) {
  // Count sign assignments by the doubled positive-rank sum (midranks make
  // doubled ranks integers).
  std::vector<int64_t> r2;
  int64_t total2 = 0;
  for (double r : ranks) {
    r2.push_back((int64_t)std::llround(2.0 * r));
    total2 += r2.back();
  }
  std::vector<double> count((size_t)total2 + 1, 0.0);
  count[0] = 1.0;
  for (int64_t r : r2) {
    for (int64_t s = total2; s >= r; --s) {
      count[(size_t)s] += count[(size_t)(s - r)];
    }
  }
  const int64_t w2 = (int64_t)std::llround(2.0 * w);
  double tail = 0;
  for (int64_t s = 0; s <= std::min(w2, total2); ++s) {
    tail += count[(size_t)s];
  }
  const double p = 2.0 * tail / std::exp2((double)ranks.size());
  return std::min(1.0, p);
}

}  // namespace

double patch_mse(const Tensor<float>& pred, const Tensor<float>& target) {
  if (!pred.same_shape(target)) {
    throw shape_error("patch_mse: shape mismatch " + shape_str(pred.shape()) +
                      " vs " + shape_str(target.shape()));
  }
  const auto& a = pred.values();
  const auto& b = target.values();
  double sum = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = (double)a[i] - (double)b[i];
    sum += d * d;
  }
  return sum / (double)a.size();
}

std::vector<PatchError> evaluate_model(const SingleNet& net,
                                       const PatchDataset& ds,
                                       const std::vector<int64_t>& indices,
                                       int target_platform) {
  return evaluate_with(ds, indices, target_platform, [&](int64_t idx) {
    return forward_net(net, patch_input_tensor(ds, idx)).y;
  });
}

std::vector<PatchError> evaluate_model(const MspModel& msp,
                                       const PatchDataset& ds,
                                       const std::vector<int64_t>& indices) {
  return evaluate_with(ds, indices, msp.target, [&](int64_t idx) {
    return msp_forward(msp, patch_input_tensor(ds, idx)).stage2;
  });
}

namespace {

// One forward pass per sample, errors fanned out to every head.
template <typename Model, typename ForwardFn>
std::vector<std::vector<PatchError>> evaluate_heads(
    const Model& model, const PatchDataset& ds,
    const std::vector<int64_t>& indices, ForwardFn&& fwd) {
  if (indices.empty()) throw value_error("empty test set");
  std::vector<int> slots;
  for (int platform : model.platforms) slots.push_back(ds.slot_of(platform));
  std::vector<std::vector<PatchError>> out(
      slots.size(), std::vector<PatchError>(indices.size()));
  parallel_for((int64_t)indices.size(), [&](int64_t i) {
    const int64_t idx = indices[(size_t)i];
    std::vector<Tensor<float>> preds = fwd(model, patch_input_tensor(ds, idx));
    for (size_t h = 0; h < slots.size(); ++h) {
      Tensor<float> y = patch_target_tensor(ds, idx, slots[h]);
      PatchError e;
      e.patch_index = idx;
      e.subject = ds.pairs[(size_t)idx].subject;
      e.target_platform = model.platforms[h];
      e.mse = patch_mse(preds[h], y);
      out[h][(size_t)i] = e;
    }
  });
  return out;
}

}  // namespace

std::vector<std::vector<PatchError>> evaluate_model(
    const CpmModel& model, const PatchDataset& ds,
    const std::vector<int64_t>& indices) {
  return evaluate_heads(model, ds, indices,
                        [](const CpmModel& m, const Tensor<float>& x) {
                          return cpm_forward(m, x);
                        });
}

std::vector<std::vector<PatchError>> evaluate_model(
    const HnedModel& model, const PatchDataset& ds,
    const std::vector<int64_t>& indices) {
  return evaluate_heads(model, ds, indices,
                        [](const HnedModel& m, const Tensor<float>& x) {
                          return hned_forward(m, x);
                        });
}

std::vector<PatchError> evaluate_identity(const PatchDataset& ds,
                                          const std::vector<int64_t>& indices,
                                          int target_platform) {
  const int slot = ds.slot_of(target_platform);
  const int out_extent = ds.target_extents[(size_t)slot];
  return evaluate_with(ds, indices, target_platform, [&](int64_t idx) {
    Tensor<float> x = patch_input_tensor(ds, idx);
    if (out_extent == ds.input_extent) return x;
    return upsample_crop(x, out_extent);
  });
}

EvalRow summarize(const std::string& model, int target,
                  const std::vector<PatchError>& errors,
                  uint64_t checkpoint_hash, uint64_t dataset_hash) {
  if (errors.empty()) throw value_error("empty test set");
  EvalRow row;
  row.model = model;
  row.target = target;
  row.n = (int64_t)errors.size();
  row.checkpoint_hash = checkpoint_hash;
  row.dataset_hash = dataset_hash;
  double sum = 0;
  for (const auto& e : errors) sum += e.mse;
  row.mean = sum / (double)errors.size();
  double ss = 0;
  for (const auto& e : errors) {
    const double d = e.mse - row.mean;
    ss += d * d;
  }
  row.stddev = std::sqrt(ss / (double)errors.size());
  return row;
}

PairedTestResult wilcoxon_signed_rank(const std::vector<double>& a,
                                      const std::vector<double>& b, int m,
                                      bool force_approx) {
  if (a.size() != b.size()) {
    throw value_error("wilcoxon: paired lists differ in length");
  }
  if (a.empty()) throw value_error("wilcoxon: empty error lists");

  std::vector<double> absd, sign;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    if (d == 0.0) continue;
    absd.push_back(std::abs(d));
    sign.push_back(d > 0 ? 1.0 : -1.0);
  }

  PairedTestResult res;
  if (absd.empty()) {
    res.degenerate = true;
    res.p = 1.0;
    res.p_corrected = bonferroni(res.p, m);
    return res;
  }

  std::vector<double> ranks;
  double tie_sum = 0;
  ranks_with_ties(absd, ranks, tie_sum);
  const int64_t n = (int64_t)ranks.size();
  double w_plus = 0, w_minus = 0;
  for (size_t i = 0; i < ranks.size(); ++i) {
    (sign[i] > 0 ? w_plus : w_minus) += ranks[i];
  }
  res.n_used = n;
  res.w = std::min(w_plus, w_minus);

  if (n <= 20 && !force_approx) {
    res.exact = true;
    res.p = exact_two_sided_p(ranks, res.w);
  } else {
    const double mu = (double)n * (double)(n + 1) / 4.0;
    const double var =
        (double)n * (double)(n + 1) * (double)(2 * n + 1) / 24.0 -
        tie_sum / 48.0;
    if (var <= 0) {
      res.degenerate = true;
      res.p = 1.0;
    } else {
      const double z = (res.w - mu + 0.5) / std::sqrt(var);
      res.p = std::clamp(std::erfc(-z / std::sqrt(2.0)), 0.0, 1.0);
    }
  }
  res.p_corrected = bonferroni(res.p, m);
  return res;
}

double bonferroni(double p, int m) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw value_error("bonferroni: p must lie in [0, 1]");
  }
  if (m < 1) throw value_error("bonferroni: m must be >= 1");
  return std::min(1.0, (double)m * p);
}

std::string errors_csv(const std::vector<PatchError>& errors) {
  std::string out = "patch_index,subject,target,mse\n";
  for (const auto& e : errors) {
    out += std::to_string(e.patch_index) + "," + std::to_string(e.subject) +
           "," + std::to_string(e.target_platform) + "," + fmt_g(e.mse) + "\n";
  }
  return out;
}

std::string report_text(const std::vector<EvalRow>& rows, int decimals) {
  if (decimals < 0) throw value_error("decimals must be >= 0");
  std::vector<int> targets;
  std::vector<std::string> models;
  for (const auto& r : rows) {
    if (std::find(targets.begin(), targets.end(), r.target) == targets.end()) {
      targets.push_back(r.target);
    }
    if (std::find(models.begin(), models.end(), r.model) == models.end()) {
      models.push_back(r.model);
    }
  }
  std::sort(targets.begin(), targets.end());

  auto cell = [&](const std::string& model, int target) -> std::string {
    for (const auto& r : rows) {
      if (r.model == model && r.target == target) {
        char buf[80];
        std::snprintf(buf, sizeof buf, "%.*f (±%.*f)", decimals, r.mean,
                      decimals, r.stddev);
        return buf;
      }
    }
    return "-";
  };

  std::vector<std::vector<std::string>> grid;
  std::vector<std::string> head{"model"};
  for (int t : targets) head.push_back("platform " + std::to_string(t));
  grid.push_back(head);
  for (const auto& model : models) {
    std::vector<std::string> line{model};
    for (int t : targets) line.push_back(cell(model, t));
    grid.push_back(line);
  }

  std::vector<size_t> width(head.size(), 0);
  for (const auto& line : grid) {
    for (size_t c = 0; c < line.size(); ++c) {
      width[c] = std::max(width[c], line[c].size());
    }
  }
  std::string out;
  for (const auto& line : grid) {
    for (size_t c = 0; c < line.size(); ++c) {
      out += line[c];
      if (c + 1 < line.size()) {
        out.append(width[c] - line[c].size() + 2, ' ');
      }
    }
    out += "\n";
  }
  return out;
}

std::string report_json(const std::vector<EvalRow>& rows) {
  nlohmann::json j;
  j["rows"] = nlohmann::json::array();
  for (const auto& r : rows) {
    j["rows"].push_back({{"model", r.model},
                         {"target", r.target},
                         {"n", r.n},
                         {"mean", r.mean},
                         {"stddev", r.stddev},
                         {"checkpoint_hash", hash_hex(r.checkpoint_hash)},
                         {"dataset_hash", hash_hex(r.dataset_hash)}});
  }
  return j.dump(2) + "\n";
}

}  // namespace msp
