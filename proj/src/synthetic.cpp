#include "msp/synthetic.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "msp/rng.hpp"

namespace msp {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kMinBaseDim = 11;  // input patch extent

struct Bump {
  double cx, cy, cz, radius, amplitude;
};

std::vector<Bump> draw_bumps(Rng& rng, int n, const std::array<int, 3>& dims,
                             double rmin, double rmax) {
  std::vector<Bump> out;
  out.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    Bump b;
    b.cx = rng.uniform(0.0, dims[0] - 1.0);
    b.cy = rng.uniform(0.0, dims[1] - 1.0);
    b.cz = rng.uniform(0.0, dims[2] - 1.0);
    b.radius = rng.uniform(rmin, rmax);
    const double mag = rng.uniform(0.5, 1.0);
    b.amplitude = rng.below(2) == 0 ? mag : -mag;
    out.push_back(b);
  }
  return out;
}

double eval_bumps(const std::vector<Bump>& bumps, int x, int y, int z) {
  double acc = 0.0;
  for (const Bump& b : bumps) {
    const double dx = x - b.cx, dy = y - b.cy, dz = z - b.cz;
    const double d2 = dx * dx + dy * dy + dz * dz;
    acc += b.amplitude * std::exp(-d2 / (2.0 * b.radius * b.radius));
  }
  return acc;
}

bool is_identity(const Eigen::MatrixXd& m) {
  if (m.size() == 0) return true;
  return m == Eigen::MatrixXd::Identity(m.rows(), m.cols());
}

// Smooth field in [-1, 1] used for multiplicative gain.
std::vector<double> smooth_field(const std::array<int, 3>& dims,
                                 uint64_t seed) {
  Rng rng(seed);
  const double r = std::max({dims[0], dims[1], dims[2]}) / 2.0;
  auto bumps = draw_bumps(rng, 3, dims, r * 0.6, r);
  std::vector<double> f(static_cast<size_t>(dims[0]) * dims[1] * dims[2]);
  size_t i = 0;
  double maxabs = 0.0;
  for (int x = 0; x < dims[0]; ++x) {
    for (int y = 0; y < dims[1]; ++y) {
      for (int z = 0; z < dims[2]; ++z, ++i) {
        f[i] = eval_bumps(bumps, x, y, z);
        maxabs = std::max(maxabs, std::abs(f[i]));
      }
    }
  }
  if (maxabs > 0.0) {
    for (double& v : f) v /= maxabs;
  }
  return f;
}

void check_spec(const PlatformSpec& spec, int channels) {
  if (spec.scale != 1 && spec.scale != 2) {
    throw value_error("platform scale must be 1 or 2");
  }
  if (spec.blur_sigma < 0 || spec.noise_sigma < 0 || spec.gain_amplitude < 0) {
    throw value_error("platform sigmas and gain amplitude must be >= 0");
  }
  if (spec.mixing.size() != 0) {
    if (spec.mixing.rows() != channels || spec.mixing.cols() != channels) {
      throw shape_error("mixing matrix must be " + std::to_string(channels) +
                        "x" + std::to_string(channels));
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(spec.mixing);
    if (!lu.isInvertible()) {
      throw value_error("mixing matrix is not invertible");
    }
  }
}

}  // namespace

Eigen::MatrixXd make_mixing(int channels, double strength, uint64_t seed) {
  if (channels < 1) throw value_error("channel count must be positive");
  if (strength < 0) throw value_error("mixing strength must be >= 0");
  Rng rng(seed);
  Eigen::MatrixXd m = Eigen::MatrixXd::Identity(channels, channels);
  for (int i = 0; i < channels; ++i) {
    for (int j = 0; j < channels; ++j) {
      m(i, j) += strength * rng.uniform(-1.0, 1.0);
    }
  }
  return m;
}

SubjectAnatomy generate_subject_anatomy(const CohortConfig& cfg,
                                        uint64_t seed) {
  const auto& dims = cfg.base_dims;
  const int need = std::max(
      kMinBaseDim, static_cast<int>(std::ceil(2.0 * cfg.bump_radius_max)));
  if (std::min({dims[0], dims[1], dims[2]}) < need) {
    throw value_error("base dims too small for the configured bump radii");
  }
  if (cfg.bump_radius_min <= 0 || cfg.bump_radius_max < cfg.bump_radius_min) {
    throw value_error("bump radius range is invalid");
  }

  Rng rng(seed);
  const auto shared =
      draw_bumps(rng, cfg.shared_bumps, dims, cfg.bump_radius_min,
                 cfg.bump_radius_max);
  std::vector<std::vector<Bump>> per_channel;
  for (int c = 0; c < cfg.channels; ++c) {
    per_channel.push_back(draw_bumps(rng, cfg.bumps_per_channel, dims,
                                     cfg.bump_radius_min,
                                     cfg.bump_radius_max));
  }

  Volume v = Volume::create(dims[0], dims[1], dims[2], cfg.channels,
                            cfg.voxel_size);
  const double rho = cfg.channel_correlation;
  std::vector<double> field(v.data.size());
  double maxabs = 0.0;
  for (int x = 0; x < dims[0]; ++x) {
    for (int y = 0; y < dims[1]; ++y) {
      for (int z = 0; z < dims[2]; ++z) {
        const double s = eval_bumps(shared, x, y, z);
        for (int c = 0; c < cfg.channels; ++c) {
          const double own = eval_bumps(per_channel[c], x, y, z);
          const double val = (1.0 - rho) * own + rho * s;
          field[static_cast<size_t>(v.index(x, y, z, c))] = val;
          maxabs = std::max(maxabs, std::abs(val));
        }
      }
    }
  }
  const double scale = maxabs > 1.0 ? 1.0 / maxabs : 1.0;
  for (size_t i = 0; i < field.size(); ++i) {
    v.data[i] = static_cast<float>(field[i] * scale);
  }

  Mask mask = Mask::create(dims[0], dims[1], dims[2]);
  for (int x = 0; x < dims[0]; ++x) {
    for (int y = 0; y < dims[1]; ++y) {
      for (int z = 0; z < dims[2]; ++z) {
        bool on = false;
        for (int c = 0; c < cfg.channels && !on; ++c) {
          on = std::abs(v.at(x, y, z, c)) > cfg.mask_threshold;
        }
        mask.set(x, y, z, on);
      }
    }
  }
  return {std::move(v), std::move(mask)};
}

Volume upsample2x_trilinear(const Volume& v) {
  Volume out = Volume::create(2 * v.x, 2 * v.y, 2 * v.z, v.c,
                              {v.voxel_size[0] / 2, v.voxel_size[1] / 2,
                               v.voxel_size[2] / 2});
  auto split = [](int o, int extent, int& i0, int& i1, double& t) {
    const double f = std::min(o * 0.5, extent - 1.0);
    i0 = static_cast<int>(f);
    i1 = std::min(i0 + 1, extent - 1);
    t = f - i0;
  };
  for (int xo = 0; xo < out.x; ++xo) {
    int x0, x1;
    double tx;
    split(xo, v.x, x0, x1, tx);
    for (int yo = 0; yo < out.y; ++yo) {
      int y0, y1;
      double ty;
      split(yo, v.y, y0, y1, ty);
      for (int zo = 0; zo < out.z; ++zo) {
        int z0, z1;
        double tz;
        split(zo, v.z, z0, z1, tz);
        for (int c = 0; c < v.c; ++c) {
          const double c00 = (1 - tx) * v.at(x0, y0, z0, c) + tx * v.at(x1, y0, z0, c);
          const double c01 = (1 - tx) * v.at(x0, y0, z1, c) + tx * v.at(x1, y0, z1, c);
          const double c10 = (1 - tx) * v.at(x0, y1, z0, c) + tx * v.at(x1, y1, z0, c);
          const double c11 = (1 - tx) * v.at(x0, y1, z1, c) + tx * v.at(x1, y1, z1, c);
          const double c0 = (1 - ty) * c00 + ty * c10;
          const double c1 = (1 - ty) * c01 + ty * c11;
          out.at(xo, yo, zo, c) = static_cast<float>((1 - tz) * c0 + tz * c1);
        }
      }
    }
  }
  return out;
}

Mask upsample2x_mask(const Mask& m) {
  Mask out = Mask::create(2 * m.x, 2 * m.y, 2 * m.z);
  for (int x = 0; x < out.x; ++x) {
    for (int y = 0; y < out.y; ++y) {
      for (int z = 0; z < out.z; ++z) {
        out.set(x, y, z, m.at(x / 2, y / 2, z / 2));
      }
    }
  }
  return out;
}

Volume gaussian_blur(const Volume& v, double sigma) {
  if (sigma < 0) throw value_error("blur sigma must be >= 0");
  if (sigma == 0) return v;
  const int h = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> w(static_cast<size_t>(2 * h + 1));
  for (int i = -h; i <= h; ++i) {
    w[static_cast<size_t>(i + h)] = std::exp(-(double)i * i / (2 * sigma * sigma));
  }

  Volume cur = v;
  for (int axis = 0; axis < 3; ++axis) {
    Volume next = cur;
    const int ex[3] = {cur.x, cur.y, cur.z};
    for (int x = 0; x < cur.x; ++x) {
      for (int y = 0; y < cur.y; ++y) {
        for (int z = 0; z < cur.z; ++z) {
          int pos[3] = {x, y, z};
          const int p = pos[axis];
          for (int c = 0; c < cur.c; ++c) {
            double acc = 0.0, norm = 0.0;
            for (int i = -h; i <= h; ++i) {
              const int q = p + i;
              if (q < 0 || q >= ex[axis]) continue;  // renormalized at edges
              pos[axis] = q;
              acc += w[static_cast<size_t>(i + h)] *
                     cur.at(pos[0], pos[1], pos[2], c);
              norm += w[static_cast<size_t>(i + h)];
            }
            pos[axis] = p;
            next.at(x, y, z, c) = static_cast<float>(acc / norm);
          }
        }
      }
    }
    cur = std::move(next);
  }
  return cur;
}

double laplacian_energy(const Volume& v) {
  double acc = 0.0;
  int64_t n = 0;
  for (int x = 1; x + 1 < v.x; ++x) {
    for (int y = 1; y + 1 < v.y; ++y) {
      for (int z = 1; z + 1 < v.z; ++z) {
        for (int c = 0; c < v.c; ++c) {
          const double l = v.at(x + 1, y, z, c) + v.at(x - 1, y, z, c) +
                           v.at(x, y + 1, z, c) + v.at(x, y - 1, z, c) +
                           v.at(x, y, z + 1, c) + v.at(x, y, z - 1, c) -
                           6.0 * v.at(x, y, z, c);
          acc += l * l;
          ++n;
        }
      }
    }
  }
  return n ? acc / static_cast<double>(n) : 0.0;
}

Volume apply_platform(const Volume& base, const PlatformSpec& spec,
                      uint64_t seed) {
  check_spec(spec, base.c);
  Volume v = base;
  if (spec.scale == 2) v = upsample2x_trilinear(v);
  if (spec.blur_sigma > 0) v = gaussian_blur(v, spec.blur_sigma);
  if (!is_identity(spec.mixing)) {
    std::vector<double> in(static_cast<size_t>(v.c));
    const int64_t vox = v.voxels();
    for (int64_t i = 0; i < vox; ++i) {
      float* p = v.data.data() + i * v.c;
      for (int c = 0; c < v.c; ++c) in[static_cast<size_t>(c)] = p[c];
      for (int c = 0; c < v.c; ++c) {
        double acc = 0.0;
        for (int d = 0; d < v.c; ++d) acc += spec.mixing(c, d) * in[static_cast<size_t>(d)];
        p[c] = static_cast<float>(acc);
      }
    }
  }
  if (spec.gain_amplitude > 0) {
    const auto field =
        smooth_field({v.x, v.y, v.z}, derive_seed(seed, seed_tag::kGain));
    const int64_t vox = v.voxels();
    for (int64_t i = 0; i < vox; ++i) {
      const float g =
          static_cast<float>(1.0 + spec.gain_amplitude * field[static_cast<size_t>(i)]);
      float* p = v.data.data() + i * v.c;
      for (int c = 0; c < v.c; ++c) p[c] *= g;
    }
  }
  if (spec.noise_sigma > 0) {
    Rng rng(derive_seed(seed, seed_tag::kNoise));
    for (float& x : v.data) {
      x += static_cast<float>(rng.gauss(0.0, spec.noise_sigma));
    }
  }
  return v;
}

std::string anatomy_volume_name(int subject) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "sub%03d_anatomy.mspv", subject);
  return buf;
}

std::string platform_volume_name(int subject, int platform) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "sub%03d_plat%d.mspv", subject, platform);
  return buf;
}

std::string platform_mask_name(int subject, int platform) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "sub%03d_plat%d.mspm", subject, platform);
  return buf;
}

CohortManifest generate_cohort(const CohortConfig& cfg,
                               const std::string& out_dir) {
  if (cfg.subjects < 2) throw value_error("cohort needs at least 2 subjects");
  if (cfg.platforms.size() < 2) {
    throw value_error("cohort needs at least 2 platforms");
  }
  if (cfg.platforms[0].scale != 1) {
    throw value_error("platform 0 is the input platform and must be scale 1");
  }
  if (std::min({cfg.base_dims[0], cfg.base_dims[1], cfg.base_dims[2]}) <
      kMinBaseDim) {
    throw value_error("base dims must be at least the patch extent (11)");
  }
  for (const auto& p : cfg.platforms) check_spec(p, cfg.channels);

  fs::create_directories(out_dir);
  CohortManifest m;
  for (size_t p = 0; p < cfg.platforms.size(); ++p) {
    m.platforms.push_back({cfg.platforms[p].name, cfg.platforms[p].scale,
                           std::nullopt});
  }
  for (int s = 0; s < cfg.subjects; ++s) {
    char name[32];
    std::snprintf(name, sizeof name, "sub%03d", s);
    m.subjects.push_back(name);
    SubjectAnatomy anat = generate_subject_anatomy(
        cfg, derive_seed(cfg.seed, seed_tag::kAnatomy, (uint64_t)s));
    write_volume(anat.volume,
                 (fs::path(out_dir) / anatomy_volume_name(s)).string());
    for (size_t p = 0; p < cfg.platforms.size(); ++p) {
      Volume v = apply_platform(
          anat.volume, cfg.platforms[p],
          derive_seed(cfg.seed, seed_tag::kPlatform, (uint64_t)s, p));
      const Mask mask = cfg.platforms[p].scale == 2
                            ? upsample2x_mask(anat.mask)
                            : anat.mask;
      const std::string vn = platform_volume_name(s, (int)p);
      const std::string mn = platform_mask_name(s, (int)p);
      write_volume(v, (fs::path(out_dir) / vn).string());
      write_mask(mask, (fs::path(out_dir) / mn).string());
      m.entries.push_back({s, (int)p, vn, mn});
    }
  }
  const std::string mpath = (fs::path(out_dir) / "cohort.json").string();
  save_manifest(m, mpath);
  CohortManifest loaded = load_manifest(mpath);
  auto bad = validate_manifest(loaded);
  if (!bad.empty()) {
    throw value_error("generated cohort failed validation: " + bad[0]);
  }
  return loaded;
}

namespace {

std::vector<PlatformSpec> stock_platforms(int channels, uint64_t seed) {
  auto mix = [&](int platform, double strength) {
    return make_mixing(channels, strength,
                       derive_seed(seed, seed_tag::kMixing, (uint64_t)platform));
  };
  return {
      {"input", 1, 2.0, mix(0, 0.05), 0.15, 0.18},
      {"site_a", 1, 0.7, mix(1, 0.08), 0.05, 0.02},
      {"site_b", 1, 1.0, mix(2, 0.08), 0.05, 0.02},
      {"site_c_hr", 2, 0.6, mix(3, 0.08), 0.05, 0.02},
  };
}

}  // namespace

CohortConfig default_cohort_config() {
  CohortConfig cfg;
  cfg.mask_threshold = 0.65;  // a few hundred patches: desk-scale budgets
  cfg.platforms = stock_platforms(cfg.channels, cfg.seed);
  return cfg;
}

namespace {

json mixing_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd mixing_from_json(const json& j, int channels, uint64_t seed,
                                 int platform) {
  if (j.is_number()) {
    return make_mixing(channels, j.get<double>(),
                       derive_seed(seed, seed_tag::kMixing, (uint64_t)platform));
  }
  const auto rows = j.get<std::vector<std::vector<double>>>();
  Eigen::MatrixXd m(rows.size(), rows.empty() ? 0 : rows[0].size());
  for (size_t i = 0; i < rows.size(); ++i) {
    if ((Eigen::Index)rows[i].size() != m.cols()) {
      throw config_error("mixing matrix rows have uneven lengths");
    }
    for (size_t k = 0; k < rows[i].size(); ++k) m((Eigen::Index)i, (Eigen::Index)k) = rows[i][k];
  }
  return m;
}

}  // namespace

CohortConfig load_cohort_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw io_error(path + ": cannot open for reading");
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw config_error(path + ": malformed config: " + e.what());
  }
  CohortConfig cfg;
  std::string field = "?";
  try {
    field = "subjects";
    cfg.subjects = j.value("subjects", cfg.subjects);
    field = "base_dims";
    if (j.contains("base_dims")) {
      auto d = j["base_dims"].get<std::vector<int>>();
      if (d.size() != 3) throw config_error("base_dims must have 3 entries");
      cfg.base_dims = {d[0], d[1], d[2]};
    }
    field = "channels";
    cfg.channels = j.value("channels", cfg.channels);
    field = "seed";
    cfg.seed = j.value("seed", cfg.seed);
    field = "voxel_size";
    if (j.contains("voxel_size")) {
      auto v = j["voxel_size"].get<std::vector<float>>();
      if (v.size() != 3) throw config_error("voxel_size must have 3 entries");
      cfg.voxel_size = {v[0], v[1], v[2]};
    }
    field = "anatomy";
    if (j.contains("anatomy")) {
      const auto& a = j["anatomy"];
      cfg.bumps_per_channel = a.value("bumps_per_channel", cfg.bumps_per_channel);
      cfg.shared_bumps = a.value("shared_bumps", cfg.shared_bumps);
      if (a.contains("radius")) {
        auto r = a["radius"].get<std::vector<double>>();
        if (r.size() != 2) throw config_error("anatomy radius must be [min, max]");
        cfg.bump_radius_min = r[0];
        cfg.bump_radius_max = r[1];
      }
      cfg.channel_correlation = a.value("correlation", cfg.channel_correlation);
      cfg.mask_threshold = a.value("mask_threshold", cfg.mask_threshold);
    }
    if (j.contains("platforms")) {
      cfg.platforms.clear();
      int idx = 0;
      for (const auto& pj : j["platforms"]) {
        field = "platforms[" + std::to_string(idx) + "]";
        PlatformSpec p;
        p.name = pj.value("name", "platform" + std::to_string(idx));
        p.scale = pj.value("scale", 1);
        p.blur_sigma = pj.value("blur_sigma", 0.0);
        p.gain_amplitude = pj.value("gain_amplitude", 0.0);
        p.noise_sigma = pj.value("noise_sigma", 0.0);
        if (pj.contains("mixing")) {
          p.mixing = mixing_from_json(pj["mixing"], cfg.channels, cfg.seed, idx);
        }
        cfg.platforms.push_back(std::move(p));
        ++idx;
      }
    } else {
      cfg.platforms = stock_platforms(cfg.channels, cfg.seed);
    }
  } catch (const json::exception& e) {
    throw config_error(path + ": field '" + field + "': " + e.what());
  }
  return cfg;
}

void save_cohort_config(const CohortConfig& cfg, const std::string& path) {
  json j;
  j["subjects"] = cfg.subjects;
  j["base_dims"] = {cfg.base_dims[0], cfg.base_dims[1], cfg.base_dims[2]};
  j["channels"] = cfg.channels;
  j["seed"] = cfg.seed;
  j["voxel_size"] = {cfg.voxel_size[0], cfg.voxel_size[1], cfg.voxel_size[2]};
  j["anatomy"] = {
      {"bumps_per_channel", cfg.bumps_per_channel},
      {"shared_bumps", cfg.shared_bumps},
      {"radius", {cfg.bump_radius_min, cfg.bump_radius_max}},
      {"correlation", cfg.channel_correlation},
      {"mask_threshold", cfg.mask_threshold},
  };
  j["platforms"] = json::array();
  for (const auto& p : cfg.platforms) {
    j["platforms"].push_back(json{{"name", p.name},
                                  {"scale", p.scale},
                                  {"blur_sigma", p.blur_sigma},
                                  {"mixing", mixing_to_json(p.mixing)},
                                  {"gain_amplitude", p.gain_amplitude},
                                  {"noise_sigma", p.noise_sigma}});
  }
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw io_error(path + ": cannot open for writing");
  os << j.dump(2) << "\n";
  if (!os) throw io_error(path + ": write failed");
}

}  // namespace msp
