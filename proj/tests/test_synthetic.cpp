#include <cstring>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "msp/rng.hpp"
#include "msp/sh.hpp"
#include "msp/synthetic.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using msp::CohortConfig;
using msp::PlatformSpec;
using msp::Volume;

namespace {

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

CohortConfig small_config() {
  CohortConfig cfg = msp::default_cohort_config();
  cfg.subjects = 2;
  cfg.base_dims = {16, 16, 16};
  return cfg;
}

// masked MSE of a platform volume against the clean anatomy it came from,
// sampling aligned voxels only
double mse_vs_anatomy(const Volume& plat, const Volume& anat,
                      const msp::Mask& mask, int scale) {
  double acc = 0.0;
  int64_t n = 0;
  for (int x = 0; x < anat.x; ++x) {
    for (int y = 0; y < anat.y; ++y) {
      for (int z = 0; z < anat.z; ++z) {
        if (!mask.at(x, y, z)) continue;
        for (int c = 0; c < anat.c; ++c) {
          const double d =
              plat.at(scale * x, scale * y, scale * z, c) - anat.at(x, y, z, c);
          acc += d * d;
          ++n;
        }
      }
    }
  }
  return acc / (double)n;
}

}  // namespace

TEST_CASE("anatomy generation is deterministic in the seed") {
  CohortConfig cfg = small_config();
  auto a = msp::generate_subject_anatomy(cfg, 42);
  auto b = msp::generate_subject_anatomy(cfg, 42);
  REQUIRE(a.volume.data.size() == b.volume.data.size());
  CHECK(std::memcmp(a.volume.data.data(), b.volume.data.data(),
                    a.volume.data.size() * 4) == 0);
  CHECK(a.mask.data == b.mask.data);
  CHECK(a.mask.count() > 0);

  auto c = msp::generate_subject_anatomy(cfg, 43);
  int64_t differing = 0;
  for (int x = 0; x < 16; ++x) {
    for (int y = 0; y < 16; ++y) {
      for (int z = 0; z < 16; ++z) {
        if (!a.mask.at(x, y, z)) continue;
        bool diff = false;
        for (int ch = 0; ch < cfg.channels && !diff; ++ch) {
          diff = std::abs(a.volume.at(x, y, z, ch) - c.volume.at(x, y, z, ch)) >
                 1e-3;
        }
        if (diff) ++differing;
      }
    }
  }
  CHECK(differing * 100 >= a.mask.count());  // at least 1% of masked voxels
}

TEST_CASE("anatomy values stay in the unit interval") {
  CohortConfig cfg = small_config();
  auto a = msp::generate_subject_anatomy(cfg, 7);
  for (float v : a.volume.data) {
    CHECK(v >= -1.f);
    CHECK(v <= 1.f);
  }
}

TEST_CASE("zero-bump anatomy is empty") {
  CohortConfig cfg = small_config();
  cfg.bumps_per_channel = 0;
  cfg.shared_bumps = 0;
  auto a = msp::generate_subject_anatomy(cfg, 1);
  for (float v : a.volume.data) CHECK(v == 0.f);
  CHECK(a.mask.count() == 0);
}

TEST_CASE("anatomy rejects grids smaller than the bump scale") {
  CohortConfig cfg = small_config();
  cfg.base_dims = {6, 16, 16};
  CHECK_THROWS_AS(msp::generate_subject_anatomy(cfg, 1), msp::value_error);
}

TEST_CASE("identity platform spec is a bit-exact pass-through") {
  CohortConfig cfg = small_config();
  auto a = msp::generate_subject_anatomy(cfg, 3);
  PlatformSpec id;
  id.name = "id";
  SUBCASE("empty mixing") {}
  SUBCASE("explicit identity mixing") {
    id.mixing = Eigen::MatrixXd::Identity(cfg.channels, cfg.channels);
  }
  Volume out = msp::apply_platform(a.volume, id, 99);
  REQUIRE(out.data.size() == a.volume.data.size());
  CHECK(std::memcmp(out.data.data(), a.volume.data.data(),
                    out.data.size() * 4) == 0);
}

TEST_CASE("blur strictly lowers laplacian energy") {
  CohortConfig cfg = small_config();
  auto a = msp::generate_subject_anatomy(cfg, 5);
  PlatformSpec blur;
  blur.blur_sigma = 1.0;
  Volume out = msp::apply_platform(a.volume, blur, 1);
  CHECK(msp::laplacian_energy(out) < msp::laplacian_energy(a.volume));
}

TEST_CASE("scale-2 platforms double every extent") {
  CohortConfig cfg = small_config();
  auto a = msp::generate_subject_anatomy(cfg, 6);
  PlatformSpec up;
  up.scale = 2;
  Volume out = msp::apply_platform(a.volume, up, 1);
  CHECK(out.x == 32);
  CHECK(out.y == 32);
  CHECK(out.z == 32);
  CHECK(out.voxel_size[0] == doctest::Approx(cfg.voxel_size[0] / 2));

  // even output voxels coincide with the source grid exactly
  for (int x = 0; x < 16; x += 3) {
    for (int y = 0; y < 16; y += 5) {
      for (int z = 0; z < 16; z += 4) {
        for (int c = 0; c < cfg.channels; c += 2) {
          CHECK(out.at(2 * x, 2 * y, 2 * z, c) == a.volume.at(x, y, z, c));
        }
      }
    }
  }

  msp::Mask um = msp::upsample2x_mask(a.mask);
  CHECK(um.count() == 8 * a.mask.count());
  CHECK(um.at(2 * 7 + 1, 2 * 8, 2 * 3 + 1) == a.mask.at(7, 8, 3));
}

TEST_CASE("mixing guards") {
  Eigen::MatrixXd singular = Eigen::MatrixXd::Ones(4, 4);
  PlatformSpec bad;
  bad.mixing = singular;
  Volume v = Volume::create(12, 12, 12, 4);
  CHECK_THROWS_AS(msp::apply_platform(v, bad, 1), msp::value_error);

  PlatformSpec wrong;
  wrong.mixing = Eigen::MatrixXd::Identity(3, 3);
  CHECK_THROWS_AS(msp::apply_platform(v, wrong, 1), msp::shape_error);

  Eigen::MatrixXd m = msp::make_mixing(6, 0.05, 12345);
  Eigen::MatrixXd id = Eigen::MatrixXd::Identity(6, 6);
  CHECK(((m - id).cwiseAbs().maxCoeff()) <= 0.05 + 1e-12);
  CHECK(msp::make_mixing(6, 0.0, 1) == id);
}

TEST_CASE("cohort generation produces a valid, reproducible directory") {
  CohortConfig cfg = msp::default_cohort_config();
  fs::path dir1 = fresh_dir("msp_test_cohort1");
  msp::CohortManifest m = msp::generate_cohort(cfg, dir1.string());
  CHECK(m.n_subjects() == 4);
  CHECK(m.n_platforms() == 4);
  CHECK(validate_manifest(m).empty());

  int volumes = 0;
  for (const auto& e : fs::directory_iterator(dir1)) {
    if (e.path().extension() == ".mspv") ++volumes;
  }
  CHECK(volumes == 16 + 4);  // 16 platform volumes + 4 clean anatomies

  fs::path dir2 = fresh_dir("msp_test_cohort2");
  msp::generate_cohort(cfg, dir2.string());
  for (const auto& e : fs::directory_iterator(dir1)) {
    std::ifstream a(e.path(), std::ios::binary);
    std::ifstream b(dir2 / e.path().filename(), std::ios::binary);
    REQUIRE(b.good());
    std::vector<char> ba((std::istreambuf_iterator<char>(a)), {});
    std::vector<char> bb((std::istreambuf_iterator<char>(b)), {});
    CHECK(ba == bb);
  }
}

TEST_CASE("the stock input platform is the noisiest against clean anatomy") {
  CohortConfig cfg = msp::default_cohort_config();
  cfg.subjects = 2;
  fs::path dir = fresh_dir("msp_test_cohort_noise");
  msp::CohortManifest m = msp::generate_cohort(cfg, dir.string());

  for (int s = 0; s < cfg.subjects; ++s) {
    Volume anat =
        msp::read_volume((dir / msp::anatomy_volume_name(s)).string());
    msp::Mask mask =
        msp::read_mask((dir / msp::platform_mask_name(s, 0)).string());
    double mse0 = 0.0;
    double best_other = 0.0;
    for (int p = 0; p < m.n_platforms(); ++p) {
      Volume plat =
          msp::read_volume((dir / msp::platform_volume_name(s, p)).string());
      const double e =
          mse_vs_anatomy(plat, anat, mask, m.platforms[p].scale);
      if (p == 0) {
        mse0 = e;
      } else {
        best_other = std::max(best_other, e);
      }
    }
    CHECK(mse0 > best_other);
  }
}

TEST_CASE("cohort config survives a json round trip") {
  CohortConfig cfg = msp::default_cohort_config();
  fs::path dir = fresh_dir("msp_test_cohort_cfg");
  const std::string p = (dir / "cfg.json").string();
  msp::save_cohort_config(cfg, p);
  CohortConfig back = msp::load_cohort_config(p);
  CHECK(back.subjects == cfg.subjects);
  CHECK(back.base_dims == cfg.base_dims);
  CHECK(back.channels == cfg.channels);
  CHECK(back.seed == cfg.seed);
  CHECK(back.mask_threshold == cfg.mask_threshold);
  REQUIRE(back.platforms.size() == cfg.platforms.size());
  for (size_t i = 0; i < cfg.platforms.size(); ++i) {
    CHECK(back.platforms[i].name == cfg.platforms[i].name);
    CHECK(back.platforms[i].scale == cfg.platforms[i].scale);
    CHECK(back.platforms[i].blur_sigma == cfg.platforms[i].blur_sigma);
    CHECK(back.platforms[i].mixing == cfg.platforms[i].mixing);
  }

  {
    std::ofstream os(dir / "strength.json");
    os << R"({"channels": 4, "platforms": [
         {"name": "a", "mixing": 0.05},
         {"name": "b", "mixing": [[1,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,1]]}
       ]})";
  }
  CohortConfig mixed = msp::load_cohort_config((dir / "strength.json").string());
  REQUIRE(mixed.platforms.size() == 2);
  CHECK(mixed.platforms[0].mixing.rows() == 4);
  CHECK(mixed.platforms[1].mixing == Eigen::MatrixXd::Identity(4, 4));

  {
    std::ofstream os(dir / "broken.json");
    os << "{ nope";
  }
  CHECK_THROWS_AS(msp::load_cohort_config((dir / "broken.json").string()),
                  msp::config_error);
  CHECK_THROWS_AS(msp::load_cohort_config((dir / "absent.json").string()),
                  msp::io_error);
}

TEST_CASE("cohort generation rejects invalid configurations") {
  CohortConfig cfg = msp::default_cohort_config();
  fs::path dir = fresh_dir("msp_test_cohort_badcfg");
  SUBCASE("too few subjects") { cfg.subjects = 1; }
  SUBCASE("too few platforms") { cfg.platforms.resize(1); }
  SUBCASE("scaled input platform") { cfg.platforms[0].scale = 2; }
  SUBCASE("grid below patch extent") { cfg.base_dims = {10, 24, 24}; }
  CHECK_THROWS_AS(msp::generate_cohort(cfg, dir.string()), msp::value_error);
}
