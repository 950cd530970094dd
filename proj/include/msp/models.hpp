#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "msp/ops.hpp"
#include "msp/tensor.hpp"

namespace msp {

enum class LayerKind { conv, tconv };

struct LayerSpec {
  LayerKind kind = LayerKind::conv;
  int k = 3, stride = 1, pad = 1;
  int in_channels = 0, out_channels = 0;
  bool relu = true;
  bool residual = false;
  int group = -1;  // tower index for grouped layers, -1 = joint
};

// Layer list runs grouped tower layers first (per channel group, then
// concatenated in group order), followed by joint layers. The last layer
// never has an activation.
struct NetworkSpec {
  std::string arch;
  int c_in = 0, c_out = 0;
  int width = 0;
  bool sr = false;             // 11^3 -> 19^3 via a transposed-conv layer
  std::vector<int> groups;     // channel partition, empty = no towers
  std::vector<LayerSpec> layers;

  int output_extent(int input_extent) const;
};

struct SingleNet {
  NetworkSpec spec;
  std::vector<Tensor<float>> params;  // per layer: weight, then bias
};

SingleNet clone_net(const SingleNet& net);

// Channel partition treating the channel count as a full even-degree SH
// coefficient layout: blocks of 1, 5, 9, 13, ... channels.
std::vector<int> sh_degree_groups(int channels);

// arch is one of cnnrish5 (5 plain conv layers), shresnet7 (7 layers,
// per-degree towers with residual skips), diqt (8 layers, layer 5 a
// transposed conv k=3 s=2 p=2 when sr). width 0 picks the arch default.
SingleNet build_single(const std::string& arch, int c_in, int c_out, bool sr,
                       uint64_t init_seed, int width = 0);

// Two-layer adapter from a donor feature map to a target patch shape; the
// first layer is strided or transposed when the extents differ.
SingleNet build_connection(int donor_channels, int donor_extent,
                           int target_channels, int target_extent,
                           uint64_t init_seed, int width = 0);

struct ForwardResult {
  Tensor<float> y;  // prediction
  Tensor<float> z;  // last feature map: the activation feeding the last layer
};

ForwardResult forward_net(const SingleNet& net, const Tensor<float>& x,
                          Tape<float>* tape = nullptr);

// The platform-composition model: P-1 single nets (one per predicted
// platform), connection nets from every non-target feature map, and the
// blended second-stage prediction
//   stage2 = (1 - alpha) * y1[T] + (alpha / (P-1)) * (sum_i conn_i(z_i) + y1[T]).
struct MspModel {
  int target = 0;                  // platform index among `platforms`
  std::vector<int> platforms;      // predicted platform indices, ascending
  std::vector<SingleNet> singles;  // aligned with platforms
  std::vector<int> donors;         // platform indices, aligned with conns
  std::vector<SingleNet> conns;
  float alpha = 0.f;
};

MspModel build_msp(std::vector<SingleNet> singles,
                   const std::vector<int>& platforms, int target,
                   uint64_t connection_seed);

struct MspForward {
  std::vector<Tensor<float>> stage1;  // aligned with msp.platforms
  Tensor<float> stage2;
};

MspForward msp_forward(const MspModel& msp, const Tensor<float>& x,
                       Tape<float>* tape = nullptr);

// Cascaded baseline: stages in ascending platform order; stage i consumes
// the input concatenated with the previous stage's features.
struct CpmStage {
  SingleNet trunk;
  SingleNet head;
};

struct CpmModel {
  std::vector<int> platforms;
  std::vector<CpmStage> stages;
};

CpmModel build_cpm(int c_in, int c_out, const std::vector<int>& platforms,
                   const std::vector<bool>& sr_flags, uint64_t init_seed,
                   int width = 0);

std::vector<Tensor<float>> cpm_forward(const CpmModel& model,
                                       const Tensor<float>& x,
                                       Tape<float>* tape = nullptr);

// Shared-trunk baseline: one side-output head per platform after each
// trunk segment.
struct HnedModel {
  std::vector<int> platforms;
  std::vector<SingleNet> segments;
  std::vector<SingleNet> heads;
};

HnedModel build_hned(int c_in, int c_out, const std::vector<int>& platforms,
                     const std::vector<bool>& sr_flags, uint64_t init_seed,
                     int width = 0);

std::vector<Tensor<float>> hned_forward(const HnedModel& model,
                                        const Tensor<float>& x,
                                        Tape<float>* tape = nullptr);

// Parameter tensors in checkpoint order.
std::vector<Tensor<float>*> collect_params(SingleNet& net);
std::vector<Tensor<float>*> collect_params(MspModel& m);
std::vector<Tensor<float>*> collect_params(CpmModel& m);
std::vector<Tensor<float>*> collect_params(HnedModel& m);

// Checkpoint file, magic "MSPC": JSON descriptor, then parameter tensors
// in declaration order (rank, dims, f32 payload, little-endian).
struct ModelFile {
  std::string kind;  // single | msp | cpm | hned
  int target_platform = -1;
  SingleNet single;
  MspModel msp;
  CpmModel cpm;
  HnedModel hned;
};

void save_model(const ModelFile& mf, const std::string& path);
ModelFile load_model(const std::string& path);

}  // namespace msp
