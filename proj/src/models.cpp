#include "msp/models.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"
#include "msp/patches.hpp"
#include "msp/rng.hpp"
#include "msp/wire.hpp"

namespace msp {

namespace {

using nlohmann::json;

constexpr uint32_t kCheckpointVersion = 1;

int default_width(const std::string& arch) {
  if (arch == "diqt") return 48;
  return 32;
}

int layer_output_extent(const LayerSpec& l, int e) {
  if (l.kind == LayerKind::conv) {
    return (e + 2 * l.pad - l.k) / l.stride + 1;
  }
  return (e - 1) * l.stride - 2 * l.pad + l.k;
}

LayerSpec conv_layer(int c_in, int c_out, bool act, bool residual = false,
                     int group = -1, int stride = 1, int pad = 1) {
  LayerSpec l;
  l.kind = LayerKind::conv;
  l.k = 3;
  l.stride = stride;
  l.pad = pad;
  l.in_channels = c_in;
  l.out_channels = c_out;
  l.relu = act;
  l.residual = residual;
  l.group = group;
  return l;
}

LayerSpec tconv_layer(int c_in, int c_out, bool act) {
  LayerSpec l;
  l.kind = LayerKind::tconv;
  l.k = 3;
  l.stride = 2;
  l.pad = 2;
  l.in_channels = c_in;
  l.out_channels = c_out;
  l.relu = act;
  l.group = -1;
  return l;
}

void init_params(SingleNet& net, uint64_t seed) {
  Rng rng(seed);
  net.params.clear();
  for (const LayerSpec& l : net.spec.layers) {
    const Shape wshape = l.kind == LayerKind::conv
                             ? Shape{l.out_channels, l.in_channels, l.k, l.k,
                                     l.k}
                             : Shape{l.in_channels, l.out_channels, l.k, l.k,
                                     l.k};
    double stddev =
        std::sqrt(2.0 / ((double)l.in_channels * l.k * l.k * l.k));
    // Residual blocks start near identity so deep stacks keep output scale.
    if (l.residual) stddev *= 0.1;
    Tensor<float> w = Tensor<float>::zeros(wshape, true);
    for (float& v : w.values_mut()) v = (float)rng.gauss(0.0, stddev);
    net.params.push_back(std::move(w));
    net.params.push_back(Tensor<float>::zeros({l.out_channels}, true));
  }
}

Tensor<float> apply_layer(const LayerSpec& l, const Tensor<float>& x,
                          const Tensor<float>& w, const Tensor<float>& b,
                          Tape<float>* tape) {
  Tensor<float> t = l.kind == LayerKind::conv
                        ? conv3d(x, w, b, l.stride, l.pad, tape)
                        : transposed_conv3d(x, w, b, l.stride, l.pad, tape);
  if (l.relu) t = relu(t, tape);
  if (l.residual) t = add(t, x, tape);
  return t;
}

json layer_to_json(const LayerSpec& l) {
  return json{{"kind", l.kind == LayerKind::conv ? "conv" : "tconv"},
              {"k", l.k},
              {"stride", l.stride},
              {"pad", l.pad},
              {"in", l.in_channels},
              {"out", l.out_channels},
              {"relu", l.relu},
              {"residual", l.residual},
              {"group", l.group}};
}

LayerSpec layer_from_json(const json& j) {
  LayerSpec l;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "conv") {
    l.kind = LayerKind::conv;
  } else if (kind == "tconv") {
    l.kind = LayerKind::tconv;
  } else {
    throw io_error("checkpoint: unknown layer kind " + kind);
  }
  l.k = j.at("k").get<int>();
  l.stride = j.at("stride").get<int>();
  l.pad = j.at("pad").get<int>();
  l.in_channels = j.at("in").get<int>();
  l.out_channels = j.at("out").get<int>();
  l.relu = j.at("relu").get<bool>();
  l.residual = j.at("residual").get<bool>();
  l.group = j.at("group").get<int>();
  return l;
}

json spec_to_json(const NetworkSpec& s) {
  json layers = json::array();
  for (const auto& l : s.layers) layers.push_back(layer_to_json(l));
  return json{{"arch", s.arch},   {"c_in", s.c_in},     {"c_out", s.c_out},
              {"width", s.width}, {"sr", s.sr},         {"groups", s.groups},
              {"layers", layers}};
}

NetworkSpec spec_from_json(const json& j) {
  NetworkSpec s;
  s.arch = j.at("arch").get<std::string>();
  s.c_in = j.at("c_in").get<int>();
  s.c_out = j.at("c_out").get<int>();
  s.width = j.at("width").get<int>();
  s.sr = j.at("sr").get<bool>();
  s.groups = j.at("groups").get<std::vector<int>>();
  for (const auto& lj : j.at("layers")) s.layers.push_back(layer_from_json(lj));
  return s;
}

void check_positive_channels(int c_in, int c_out) {
  if (c_in < 1 || c_out < 1) {
    throw value_error("channel counts must be >= 1");
  }
}

}  // namespace

int NetworkSpec::output_extent(int input_extent) const {
  int e = input_extent;
  for (const auto& l : layers) {
    if (l.group > 0) continue;  // towers share the group-0 extent path
    e = layer_output_extent(l, e);
  }
  return e;
}

SingleNet clone_net(const SingleNet& net) {
  SingleNet out;
  out.spec = net.spec;
  for (const auto& p : net.params) {
    Tensor<float> c = p.clone();
    c.set_requires_grad(true);
    out.params.push_back(std::move(c));
  }
  return out;
}

std::vector<int> sh_degree_groups(int channels) {
  if (channels < 1) throw shape_error("channel count must be >= 1");
  std::vector<int> groups;
  int sum = 0;
  for (int degree = 0; sum < channels; degree += 2) {
    groups.push_back(2 * degree + 1);
    sum += 2 * degree + 1;
  }
  if (sum != channels) {
    throw shape_error("channel count " + std::to_string(channels) +
                      " is not a full even-degree SH layout");
  }
  return groups;
}

SingleNet build_single(const std::string& arch, int c_in, int c_out, bool sr,
                       uint64_t init_seed, int width) {
  check_positive_channels(c_in, c_out);
  if (width == 0) width = default_width(arch);
  if (sr && arch != "diqt") {
    throw value_error("architecture " + arch +
                      " has no super-resolution variant");
  }

  SingleNet net;
  net.spec.arch = arch;
  net.spec.c_in = c_in;
  net.spec.c_out = c_out;
  net.spec.width = width;
  net.spec.sr = sr;
  auto& L = net.spec.layers;

  if (arch == "cnnrish5") {
    L.push_back(conv_layer(c_in, width, true));
    for (int i = 0; i < 3; ++i) L.push_back(conv_layer(width, width, true));
    L.push_back(conv_layer(width, c_out, false));
  } else if (arch == "shresnet7") {
    net.spec.groups = sh_degree_groups(c_in);
    const int G = (int)net.spec.groups.size();
    for (int g = 0; g < G; ++g) {
      L.push_back(conv_layer(net.spec.groups[(size_t)g], width, true, false, g));
      L.push_back(conv_layer(width, width, true, true, g));
      L.push_back(conv_layer(width, width, true, true, g));
    }
    L.push_back(conv_layer(G * width, width, true));
    L.push_back(conv_layer(width, width, true, true));
    L.push_back(conv_layer(width, width, true, true));
    L.push_back(conv_layer(width, c_out, false));
  } else if (arch == "diqt") {
    L.push_back(conv_layer(c_in, width, true));
    for (int i = 0; i < 3; ++i) L.push_back(conv_layer(width, width, true));
    L.push_back(sr ? tconv_layer(width, width, true)
                   : conv_layer(width, width, true));
    L.push_back(conv_layer(width, width, true));
    L.push_back(conv_layer(width, width, true));
    L.push_back(conv_layer(width, c_out, false));
  } else {
    throw value_error("unknown architecture: " + arch);
  }

  init_params(net, init_seed);
  return net;
}

SingleNet build_connection(int donor_channels, int donor_extent,
                           int target_channels, int target_extent,
                           uint64_t init_seed, int width) {
  check_positive_channels(donor_channels, target_channels);
  if (width == 0) width = donor_channels;

  SingleNet net;
  net.spec.arch = "connection";
  net.spec.c_in = donor_channels;
  net.spec.c_out = target_channels;
  net.spec.width = width;
  auto& L = net.spec.layers;

  if (donor_extent == target_extent) {
    L.push_back(conv_layer(donor_channels, width, true));
  } else if (2 * donor_extent - 3 == target_extent) {
    L.push_back(tconv_layer(donor_channels, width, true));
    net.spec.sr = true;
  } else if (donor_extent % 2 == 1 && (donor_extent + 1) / 2 + 1 == target_extent) {
    L.push_back(conv_layer(donor_channels, width, true, false, -1, 2, 2));
  } else {
    throw value_error("no legal two-layer resampler from extent " +
                      std::to_string(donor_extent) + " to " +
                      std::to_string(target_extent));
  }
  L.push_back(conv_layer(width, target_channels, false));

  init_params(net, init_seed);
  return net;
}

ForwardResult forward_net(const SingleNet& net, const Tensor<float>& x,
                          Tape<float>* tape) {
  if (x.shape().size() != 4 || x.dim(0) != net.spec.c_in) {
    throw shape_error("network input must be [" +
                      std::to_string(net.spec.c_in) +
                      ", X, Y, Z], got " + shape_str(x.shape()));
  }
  if (net.params.size() != 2 * net.spec.layers.size()) {
    throw value_error("parameter list does not match the layer list");
  }
  const auto& L = net.spec.layers;
  const auto& P = net.params;

  Tensor<float> t;
  size_t li = 0;
  if (net.spec.groups.empty()) {
    t = x;
  } else {
    std::vector<Tensor<float>> tower_out;
    int c0 = 0;
    for (size_t g = 0; g < net.spec.groups.size(); ++g) {
      Tensor<float> tg = channel_slice(x, c0, c0 + net.spec.groups[g], tape);
      c0 += net.spec.groups[g];
      while (li < L.size() && L[li].group == (int)g) {
        tg = apply_layer(L[li], tg, P[2 * li], P[2 * li + 1], tape);
        ++li;
      }
      tower_out.push_back(std::move(tg));
    }
    t = concat_channels(tower_out, tape);
  }

  ForwardResult out;
  for (; li < L.size(); ++li) {
    if (li + 1 == L.size()) out.z = t;
    t = apply_layer(L[li], t, P[2 * li], P[2 * li + 1], tape);
  }
  out.y = t;
  return out;
}

MspModel build_msp(std::vector<SingleNet> singles,
                   const std::vector<int>& platforms, int target,
                   uint64_t connection_seed) {
  if (singles.size() != platforms.size() || singles.empty()) {
    throw value_error("need one single net per predicted platform");
  }
  if (std::find(platforms.begin(), platforms.end(), target) ==
      platforms.end()) {
    throw value_error("target platform " + std::to_string(target) +
                      " has no single net");
  }

  MspModel m;
  m.target = target;
  m.platforms = platforms;
  m.singles = std::move(singles);
  m.alpha = 0.f;

  const size_t tslot = (size_t)(std::find(platforms.begin(), platforms.end(),
                                          target) -
                                platforms.begin());
  const NetworkSpec& tspec = m.singles[tslot].spec;
  const int target_extent = tspec.output_extent(kInputExtent);

  for (size_t i = 0; i < m.platforms.size(); ++i) {
    if (i == tslot) continue;
    const NetworkSpec& dspec = m.singles[i].spec;
    const int donor_extent = dspec.output_extent(kInputExtent);
    m.donors.push_back(m.platforms[i]);
    m.conns.push_back(build_connection(
        dspec.width, donor_extent, tspec.c_out, target_extent,
        derive_seed(connection_seed, seed_tag::kConnection,
                    (uint64_t)m.platforms[i])));
  }
  return m;
}

MspForward msp_forward(const MspModel& msp, const Tensor<float>& x,
                       Tape<float>* tape) {
  if (!(msp.alpha >= 0.f && msp.alpha <= 1.f)) {
    throw value_error("alpha must lie in [0, 1]");
  }
  MspForward out;
  std::vector<Tensor<float>> features;
  for (const auto& net : msp.singles) {
    ForwardResult r = forward_net(net, x, tape);
    out.stage1.push_back(std::move(r.y));
    features.push_back(std::move(r.z));
  }

  size_t tslot = 0;
  while (msp.platforms[tslot] != msp.target) ++tslot;

  Tensor<float> sum = out.stage1[tslot];
  for (size_t j = 0; j < msp.conns.size(); ++j) {
    size_t dslot = 0;
    while (msp.platforms[dslot] != msp.donors[j]) ++dslot;
    ForwardResult c = forward_net(msp.conns[j], features[dslot], tape);
    if (!c.y.same_shape(out.stage1[tslot])) {
      throw shape_error("connection output " + shape_str(c.y.shape()) +
                        " does not match the target prediction " +
                        shape_str(out.stage1[tslot].shape()));
    }
    sum = add(sum, c.y, tape);
  }

  const float inv = 1.f / (float)msp.platforms.size();
  Tensor<float> mean_term = scale(sum, inv, tape);
  out.stage2 = linear_blend(out.stage1[tslot], mean_term, msp.alpha, tape);
  return out;
}

CpmModel build_cpm(int c_in, int c_out, const std::vector<int>& platforms,
                   const std::vector<bool>& sr_flags, uint64_t init_seed,
                   int width) {
  if (platforms.size() < 1 || platforms.size() != sr_flags.size()) {
    throw value_error("need one platform per stage with an sr flag each");
  }
  check_positive_channels(c_in, c_out);
  if (width == 0) width = 32;

  CpmModel m;
  m.platforms = platforms;
  for (size_t i = 0; i < platforms.size(); ++i) {
    CpmStage st;
    const int in_ch = c_in + (i > 0 ? width : 0);
    st.trunk.spec.arch = "cpm_trunk";
    st.trunk.spec.c_in = in_ch;
    st.trunk.spec.c_out = width;
    st.trunk.spec.width = width;
    st.trunk.spec.layers.push_back(conv_layer(in_ch, width, true));
    st.trunk.spec.layers.push_back(conv_layer(width, width, true));
    st.trunk.spec.layers.push_back(conv_layer(width, width, true));
    init_params(st.trunk, derive_seed(init_seed, seed_tag::kInit, 2 * i));

    st.head.spec.arch = "cpm_head";
    st.head.spec.c_in = width;
    st.head.spec.c_out = c_out;
    st.head.spec.width = width;
    st.head.spec.sr = sr_flags[i];
    if (sr_flags[i]) {
      st.head.spec.layers.push_back(tconv_layer(width, width, true));
    } else {
      st.head.spec.layers.push_back(conv_layer(width, width, true));
    }
    st.head.spec.layers.push_back(conv_layer(width, c_out, false));
    init_params(st.head, derive_seed(init_seed, seed_tag::kInit, 2 * i + 1));
    m.stages.push_back(std::move(st));
  }
  return m;
}

std::vector<Tensor<float>> cpm_forward(const CpmModel& model,
                                       const Tensor<float>& x,
                                       Tape<float>* tape) {
  std::vector<Tensor<float>> preds;
  Tensor<float> prev_features;
  for (size_t i = 0; i < model.stages.size(); ++i) {
    const Tensor<float> in =
        i == 0 ? x : concat_channels({x, prev_features}, tape);
    ForwardResult trunk = forward_net(model.stages[i].trunk, in, tape);
    preds.push_back(forward_net(model.stages[i].head, trunk.y, tape).y);
    prev_features = trunk.y;
  }
  return preds;
}

HnedModel build_hned(int c_in, int c_out, const std::vector<int>& platforms,
                     const std::vector<bool>& sr_flags, uint64_t init_seed,
                     int width) {
  if (platforms.size() < 1 || platforms.size() != sr_flags.size()) {
    throw value_error("need one platform per side output with an sr flag each");
  }
  check_positive_channels(c_in, c_out);
  if (width == 0) width = 32;

  HnedModel m;
  m.platforms = platforms;
  for (size_t i = 0; i < platforms.size(); ++i) {
    SingleNet seg;
    const int in_ch = i == 0 ? c_in : width;
    seg.spec.arch = "hned_segment";
    seg.spec.c_in = in_ch;
    seg.spec.c_out = width;
    seg.spec.width = width;
    seg.spec.layers.push_back(conv_layer(in_ch, width, true));
    seg.spec.layers.push_back(conv_layer(width, width, true));
    init_params(seg, derive_seed(init_seed, seed_tag::kInit, 2 * i));
    m.segments.push_back(std::move(seg));

    SingleNet head;
    head.spec.arch = "hned_head";
    head.spec.c_in = width;
    head.spec.c_out = c_out;
    head.spec.width = width;
    head.spec.sr = sr_flags[i];
    if (sr_flags[i]) {
      head.spec.layers.push_back(tconv_layer(width, width, true));
    } else {
      head.spec.layers.push_back(conv_layer(width, width, true));
    }
    head.spec.layers.push_back(conv_layer(width, c_out, false));
    init_params(head, derive_seed(init_seed, seed_tag::kInit, 2 * i + 1));
    m.heads.push_back(std::move(head));
  }
  return m;
}

std::vector<Tensor<float>> hned_forward(const HnedModel& model,
                                        const Tensor<float>& x,
                                        Tape<float>* tape) {
  std::vector<Tensor<float>> preds;
  Tensor<float> t = x;
  for (size_t i = 0; i < model.segments.size(); ++i) {
    t = forward_net(model.segments[i], t, tape).y;
    preds.push_back(forward_net(model.heads[i], t, tape).y);
  }
  return preds;
}

std::vector<Tensor<float>*> collect_params(SingleNet& net) {
  std::vector<Tensor<float>*> out;
  for (auto& p : net.params) out.push_back(&p);
  return out;
}

std::vector<Tensor<float>*> collect_params(MspModel& m) {
  std::vector<Tensor<float>*> out;
  for (auto& net : m.singles) {
    for (auto& p : net.params) out.push_back(&p);
  }
  for (auto& net : m.conns) {
    for (auto& p : net.params) out.push_back(&p);
  }
  return out;
}

std::vector<Tensor<float>*> collect_params(CpmModel& m) {
  std::vector<Tensor<float>*> out;
  for (auto& st : m.stages) {
    for (auto& p : st.trunk.params) out.push_back(&p);
    for (auto& p : st.head.params) out.push_back(&p);
  }
  return out;
}

std::vector<Tensor<float>*> collect_params(HnedModel& m) {
  std::vector<Tensor<float>*> out;
  for (auto& net : m.segments) {
    for (auto& p : net.params) out.push_back(&p);
  }
  for (auto& net : m.heads) {
    for (auto& p : net.params) out.push_back(&p);
  }
  return out;
}

namespace {

void append_component_params(const SingleNet& net,
                             std::vector<const Tensor<float>*>& out) {
  for (const auto& p : net.params) out.push_back(&p);
}

void write_param(std::ostream& os, const Tensor<float>& t) {
  wire::put_u32(os, (uint32_t)t.shape().size());
  for (int d : t.shape()) wire::put_u32(os, (uint32_t)d);
  wire::put_f32_array(os, t.data(), t.values().size());
}

Tensor<float> read_param(std::istream& is, const std::string& path) {
  const uint32_t rank = wire::get_u32(is, path);
  if (rank > 8) throw io_error(path + ": implausible tensor rank");
  Shape shape;
  int64_t n = 1;
  for (uint32_t i = 0; i < rank; ++i) {
    const uint32_t d = wire::get_u32(is, path);
    if (d == 0 || d > (1u << 24)) {
      throw io_error(path + ": implausible tensor extent");
    }
    shape.push_back((int)d);
    n *= d;
  }
  Tensor<float> t = Tensor<float>::zeros(shape, true);
  wire::get_f32_array(is, t.data_mut(), (size_t)n, path);
  return t;
}

void read_component_params(std::istream& is, SingleNet& net,
                           const std::string& path) {
  net.params.clear();
  for (const LayerSpec& l : net.spec.layers) {
    Tensor<float> w = read_param(is, path);
    const Shape expect = l.kind == LayerKind::conv
                             ? Shape{l.out_channels, l.in_channels, l.k, l.k,
                                     l.k}
                             : Shape{l.in_channels, l.out_channels, l.k, l.k,
                                     l.k};
    if (w.shape() != expect) {
      throw io_error(path + ": weight shape does not match the descriptor");
    }
    Tensor<float> b = read_param(is, path);
    if (b.shape() != Shape{l.out_channels}) {
      throw io_error(path + ": bias shape does not match the descriptor");
    }
    net.params.push_back(std::move(w));
    net.params.push_back(std::move(b));
  }
}

}  // namespace

void save_model(const ModelFile& mf, const std::string& path) {
  json desc;
  std::vector<const Tensor<float>*> params;
  desc["kind"] = mf.kind;
  if (mf.kind == "single") {
    desc["target_platform"] = mf.target_platform;
    desc["spec"] = spec_to_json(mf.single.spec);
    append_component_params(mf.single, params);
  } else if (mf.kind == "msp") {
    desc["target"] = mf.msp.target;
    desc["platforms"] = mf.msp.platforms;
    desc["donors"] = mf.msp.donors;
    desc["alpha"] = (double)mf.msp.alpha;
    json singles = json::array();
    for (const auto& net : mf.msp.singles) {
      singles.push_back(spec_to_json(net.spec));
      append_component_params(net, params);
    }
    desc["singles"] = singles;
    json conns = json::array();
    for (const auto& net : mf.msp.conns) {
      conns.push_back(spec_to_json(net.spec));
      append_component_params(net, params);
    }
    desc["conns"] = conns;
  } else if (mf.kind == "cpm") {
    desc["platforms"] = mf.cpm.platforms;
    json trunks = json::array(), heads = json::array();
    for (const auto& st : mf.cpm.stages) {
      trunks.push_back(spec_to_json(st.trunk.spec));
      heads.push_back(spec_to_json(st.head.spec));
      append_component_params(st.trunk, params);
      append_component_params(st.head, params);
    }
    desc["trunks"] = trunks;
    desc["heads"] = heads;
  } else if (mf.kind == "hned") {
    desc["platforms"] = mf.hned.platforms;
    json segments = json::array(), heads = json::array();
    for (const auto& net : mf.hned.segments) {
      segments.push_back(spec_to_json(net.spec));
      append_component_params(net, params);
    }
    for (const auto& net : mf.hned.heads) {
      heads.push_back(spec_to_json(net.spec));
      append_component_params(net, params);
    }
    desc["segments"] = segments;
    desc["heads"] = heads;
  } else {
    throw value_error("unknown model kind: " + mf.kind);
  }

  const std::string text = desc.dump();
  std::ofstream os = wire::open_out(path);
  os.write("MSPC", 4);
  wire::put_u32(os, kCheckpointVersion);
  wire::put_u32(os, (uint32_t)text.size());
  os.write(text.data(), (std::streamsize)text.size());
  wire::put_u32(os, (uint32_t)params.size());
  for (const auto* p : params) write_param(os, *p);
  if (!os) throw io_error(path + ": write failed");
}

ModelFile load_model(const std::string& path) {
  std::ifstream is = wire::open_in(path);
  wire::check_magic(is, "MSPC", path);
  const uint32_t version = wire::get_u32(is, path);
  if (version != kCheckpointVersion) {
    throw io_error(path + ": unsupported version " + std::to_string(version));
  }
  const uint32_t text_len = wire::get_u32(is, path);
  if (text_len > (1u << 24)) throw io_error(path + ": implausible descriptor");
  std::string text(text_len, '\0');
  if (!is.read(text.data(), text_len)) {
    throw io_error(path + ": truncated descriptor");
  }
  json desc;
  try {
    desc = json::parse(text);
  } catch (const json::exception& e) {
    throw io_error(path + ": bad descriptor: " + e.what());
  }

  ModelFile mf;
  try {
    mf.kind = desc.at("kind").get<std::string>();
    const uint32_t n_params = wire::get_u32(is, path);
    size_t expected = 0;

    if (mf.kind == "single") {
      mf.target_platform = desc.at("target_platform").get<int>();
      mf.single.spec = spec_from_json(desc.at("spec"));
      read_component_params(is, mf.single, path);
      expected = mf.single.params.size();
    } else if (mf.kind == "msp") {
      mf.msp.target = desc.at("target").get<int>();
      mf.msp.platforms = desc.at("platforms").get<std::vector<int>>();
      mf.msp.donors = desc.at("donors").get<std::vector<int>>();
      mf.msp.alpha = (float)desc.at("alpha").get<double>();
      mf.target_platform = mf.msp.target;
      for (const auto& sj : desc.at("singles")) {
        SingleNet net;
        net.spec = spec_from_json(sj);
        read_component_params(is, net, path);
        expected += net.params.size();
        mf.msp.singles.push_back(std::move(net));
      }
      for (const auto& cj : desc.at("conns")) {
        SingleNet net;
        net.spec = spec_from_json(cj);
        read_component_params(is, net, path);
        expected += net.params.size();
        mf.msp.conns.push_back(std::move(net));
      }
      if (mf.msp.singles.size() != mf.msp.platforms.size() ||
          mf.msp.conns.size() != mf.msp.donors.size()) {
        throw io_error(path + ": component counts do not match the topology");
      }
    } else if (mf.kind == "cpm") {
      mf.cpm.platforms = desc.at("platforms").get<std::vector<int>>();
      const auto& trunks = desc.at("trunks");
      const auto& heads = desc.at("heads");
      if (trunks.size() != heads.size()) {
        throw io_error(path + ": trunk/head count mismatch");
      }
      for (size_t i = 0; i < trunks.size(); ++i) {
        CpmStage st;
        st.trunk.spec = spec_from_json(trunks[i]);
        read_component_params(is, st.trunk, path);
        st.head.spec = spec_from_json(heads[i]);
        read_component_params(is, st.head, path);
        expected += st.trunk.params.size() + st.head.params.size();
        mf.cpm.stages.push_back(std::move(st));
      }
    } else if (mf.kind == "hned") {
      mf.hned.platforms = desc.at("platforms").get<std::vector<int>>();
      for (const auto& sj : desc.at("segments")) {
        SingleNet net;
        net.spec = spec_from_json(sj);
        read_component_params(is, net, path);
        expected += net.params.size();
        mf.hned.segments.push_back(std::move(net));
      }
      for (const auto& hj : desc.at("heads")) {
        SingleNet net;
        net.spec = spec_from_json(hj);
        read_component_params(is, net, path);
        expected += net.params.size();
        mf.hned.heads.push_back(std::move(net));
      }
    } else {
      throw io_error(path + ": unknown model kind " + mf.kind);
    }

    if (expected != n_params) {
      throw io_error(path + ": parameter count does not match the descriptor");
    }
  } catch (const json::exception& e) {
    throw io_error(path + ": bad descriptor: " + e.what());
  }
  return mf;
}

}  // namespace msp
