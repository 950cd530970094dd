#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "msp/patches.hpp"
#include "msp/synthetic.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using msp::kInputExtent;
using msp::Mask;
using msp::PatchDataset;
using msp::Volume;

namespace {

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Hand-built 1-subject cohort: an 8x8x8 2-channel input platform plus a
// 16x16x16 scale-2 platform, with 5 masked voxels including a corner.
struct TinyCohort {
  msp::CohortManifest manifest;
  Mask mask0;

  explicit TinyCohort(const fs::path& dir) {
    Volume v0 = Volume::create(8, 8, 8, 2, {2.f, 2.f, 2.f});
    for (int x = 0; x < 8; ++x) {
      for (int y = 0; y < 8; ++y) {
        for (int z = 0; z < 8; ++z) {
          for (int c = 0; c < 2; ++c) {
            v0.at(x, y, z, c) = float(x + 10 * y + 100 * z + 1000 * c);
          }
        }
      }
    }
    Volume v1 = Volume::create(16, 16, 16, 2, {1.f, 1.f, 1.f});
    for (int x = 0; x < 16; ++x) {
      for (int y = 0; y < 16; ++y) {
        for (int z = 0; z < 16; ++z) {
          for (int c = 0; c < 2; ++c) {
            v1.at(x, y, z, c) = float(z + 20 * y + 400 * x + 8000 * c);
          }
        }
      }
    }
    mask0 = Mask::create(8, 8, 8);
    mask0.set(0, 0, 0, true);
    mask0.set(3, 4, 5, true);
    mask0.set(4, 4, 4, true);
    mask0.set(7, 7, 7, true);
    mask0.set(2, 6, 1, true);
    Mask mask1 = msp::upsample2x_mask(mask0);

    msp::write_volume(v0, (dir / "v0.mspv").string());
    msp::write_volume(v1, (dir / "v1.mspv").string());
    msp::write_mask(mask0, (dir / "m0.mspm").string());
    msp::write_mask(mask1, (dir / "m1.mspm").string());

    manifest.subjects = {"sub000"};
    manifest.platforms = {{"input", 1, std::nullopt}, {"hr", 2, std::nullopt}};
    manifest.entries = {{0, 0, "v0.mspv", "m0.mspm"},
                        {0, 1, "v1.mspv", "m1.mspm"}};
    manifest.root = dir.string();
  }
};

size_t patch_index(int c, int ix, int iy, int iz, int e) {
  return ((size_t(c) * e + ix) * e + iy) * e + iz;
}

}  // namespace

TEST_CASE("extraction yields one ordered pair per masked voxel") {
  fs::path dir = fresh_dir("msp_test_patches1");
  TinyCohort tc(dir);
  auto cohort = msp::load_normalized_cohort(tc.manifest);
  PatchDataset ds = msp::extract_patches(cohort, {1});

  REQUIRE(ds.size() == 5);
  CHECK(ds.channels == 2);
  CHECK(ds.target_extents[0] == 19);
  CHECK(ds.target_scales[0] == 2);

  // ordering: subject, then z, y, x of the center
  std::vector<std::array<int, 3>> centers;
  for (const auto& pp : ds.pairs) centers.push_back({pp.cz, pp.cy, pp.cx});
  CHECK(std::is_sorted(centers.begin(), centers.end()));

  for (const auto& pp : ds.pairs) {
    CHECK(tc.mask0.at(pp.cx, pp.cy, pp.cz));
    for (int c = 0; c < 2; ++c) {
      // center voxel of the input patch equals the normalized volume value
      CHECK(pp.input[patch_index(c, 5, 5, 5, 11)] ==
            cohort.volumes[0][0].at(pp.cx, pp.cy, pp.cz, c));
    }
  }
}

TEST_CASE("corner patches are zero padded") {
  fs::path dir = fresh_dir("msp_test_patches2");
  TinyCohort tc(dir);
  auto cohort = msp::load_normalized_cohort(tc.manifest);
  PatchDataset ds = msp::extract_patches(cohort, {1});

  const auto& pp = ds.pairs[0];  // z,y,x order puts (0,0,0) first
  REQUIRE(pp.cx == 0);
  REQUIRE(pp.cy == 0);
  REQUIRE(pp.cz == 0);
  CHECK(pp.input[patch_index(0, 5, 5, 5, 11)] ==
        cohort.volumes[0][0].at(0, 0, 0, 0));
  for (int c = 0; c < 2; ++c) {
    for (int i = 0; i < 11; ++i) {
      for (int j = 0; j < 11; ++j) {
        CHECK(pp.input[patch_index(c, 0, i, j, 11)] == 0.f);
        CHECK(pp.input[patch_index(c, i, 4, j, 11)] == 0.f);
        CHECK(pp.input[patch_index(c, i, j, 2, 11)] == 0.f);
      }
    }
  }
}

TEST_CASE("scale-2 target patches are centered at doubled coordinates") {
  fs::path dir = fresh_dir("msp_test_patches3");
  TinyCohort tc(dir);
  auto cohort = msp::load_normalized_cohort(tc.manifest);
  PatchDataset ds = msp::extract_patches(cohort, {1});

  bool found = false;
  for (const auto& pp : ds.pairs) {
    if (pp.cx != 3 || pp.cy != 4 || pp.cz != 5) continue;
    found = true;
    for (int c = 0; c < 2; ++c) {
      CHECK(pp.targets[0][patch_index(c, 9, 9, 9, 19)] ==
            cohort.volumes[0][1].at(6, 8, 10, c));
      // a voxel one step off center maps to the doubled grid as well
      CHECK(pp.targets[0][patch_index(c, 10, 9, 8, 19)] ==
            cohort.volumes[0][1].at(7, 8, 9, c));
    }
  }
  CHECK(found);
}

TEST_CASE("normalization pools per-platform stats and zeroes background") {
  fs::path dir = fresh_dir("msp_test_patches4");
  TinyCohort tc(dir);
  auto cohort = msp::load_normalized_cohort(tc.manifest);

  for (int p = 0; p < 2; ++p) {
    const Volume& v = cohort.volumes[0][p];
    const Mask& m = cohort.masks[0][p];
    for (int c = 0; c < v.c; ++c) {
      double sum = 0.0, sumsq = 0.0;
      int64_t n = 0;
      for (int x = 0; x < v.x; ++x) {
        for (int y = 0; y < v.y; ++y) {
          for (int z = 0; z < v.z; ++z) {
            if (!m.at(x, y, z)) {
              CHECK(v.at(x, y, z, c) == 0.f);
              continue;
            }
            sum += v.at(x, y, z, c);
            sumsq += v.at(x, y, z, c) * v.at(x, y, z, c);
            ++n;
          }
        }
      }
      CHECK(std::abs(sum / double(n)) < 1e-5);
      CHECK(std::abs(sumsq / double(n) - 1.0) < 1e-4);
    }
  }

  // embedded manifest stats take precedence over recomputation
  msp::CohortManifest with_stats = tc.manifest;
  msp::NormStats st;
  st.mean = {1.0, 2.0};
  st.stddev = {2.0, 4.0};
  with_stats.platforms[0].stats = st;
  auto cohort2 = msp::load_normalized_cohort(with_stats);
  msp::Volume raw = msp::read_volume((dir / "v0.mspv").string());
  CHECK(cohort2.volumes[0][0].at(4, 4, 4, 0) ==
        doctest::Approx((raw.at(4, 4, 4, 0) - 1.0) / 2.0));
  CHECK(cohort2.volumes[0][0].at(4, 4, 4, 1) ==
        doctest::Approx((raw.at(4, 4, 4, 1) - 2.0) / 4.0));
}

TEST_CASE("empty masks are rejected") {
  fs::path dir = fresh_dir("msp_test_patches5");
  TinyCohort tc(dir);
  Mask empty = Mask::create(8, 8, 8);
  msp::write_mask(empty, (dir / "m0.mspm").string());
  CHECK_THROWS_AS(msp::load_normalized_cohort(tc.manifest), msp::value_error);
}

TEST_CASE("split follows round-half-up and is a seeded partition") {
  fs::path dir = fresh_dir("msp_test_patches6");
  TinyCohort tc(dir);
  auto cohort = msp::load_normalized_cohort(tc.manifest);
  PatchDataset ds = msp::extract_patches(cohort, {1});

  // synthetic sizes: pad the dataset by repetition to reach n=100 and n=10
  PatchDataset big = ds;
  while (big.size() < 100) big.pairs.push_back(big.pairs[0]);
  big.pairs.resize(100);
  auto s100 = msp::split(big, 0.9, 7);
  CHECK(s100.train.size() == 90);
  CHECK(s100.test.size() == 10);

  PatchDataset ten = ds;
  while (ten.size() < 10) ten.pairs.push_back(ten.pairs[0]);
  auto s10 = msp::split(ten, 0.9, 7);
  CHECK(s10.train.size() == 9);
  CHECK(s10.test.size() == 1);

  auto again = msp::split(big, 0.9, 7);
  CHECK(again.train == s100.train);
  CHECK(again.test == s100.test);
  CHECK(msp::split(big, 0.9, 8).train != s100.train);

  std::set<int64_t> seen(s100.train.begin(), s100.train.end());
  for (int64_t i : s100.test) CHECK(seen.insert(i).second);
  CHECK(seen.size() == 100);

  CHECK_THROWS_AS(msp::split(big, 0.0, 1), msp::value_error);
  CHECK_THROWS_AS(msp::split(big, 1.0, 1), msp::value_error);
}

TEST_CASE("subject split holds out whole subjects") {
  msp::CohortConfig cfg = msp::default_cohort_config();
  cfg.subjects = 3;
  cfg.base_dims = {14, 14, 14};
  fs::path dir = fresh_dir("msp_test_patches7");
  auto manifest = msp::generate_cohort(cfg, dir.string());
  auto cohort = msp::load_normalized_cohort(manifest);
  PatchDataset ds = msp::extract_patches(cohort, {1, 2, 3});

  auto sp = msp::split_by_subject(ds, 0.9, 11);
  CHECK(!sp.test.empty());
  CHECK(!sp.train.empty());
  CHECK(sp.train.size() + sp.test.size() == (size_t)ds.size());
  std::set<int> train_subjects, test_subjects;
  for (int64_t i : sp.train) train_subjects.insert(ds.pairs[(size_t)i].subject);
  for (int64_t i : sp.test) test_subjects.insert(ds.pairs[(size_t)i].subject);
  for (int s : test_subjects) CHECK(train_subjects.count(s) == 0);
}

TEST_CASE("validation carving takes the train tail and keeps the test side") {
  msp::SplitIndices sp;
  sp.seed = 9;
  sp.train = {5, 3, 8, 1, 6, 2, 9};
  sp.test = {0, 4, 7};

  msp::SplitIndices c = msp::carve_validation(sp, 0.3);
  CHECK(c.seed == 9);
  CHECK(c.train == std::vector<int64_t>{5, 3, 8, 1, 6});
  CHECK(c.test == std::vector<int64_t>{2, 9});

  CHECK_THROWS_AS(msp::carve_validation(sp, 0.0), msp::value_error);
  CHECK_THROWS_AS(msp::carve_validation(sp, 1.0), msp::value_error);
  msp::SplitIndices tiny;
  tiny.train = {1};
  CHECK_THROWS_AS(msp::carve_validation(tiny, 0.5), msp::value_error);
}

TEST_CASE("batch plans partition the index set per epoch") {
  std::vector<int64_t> indices;
  for (int64_t i = 0; i < 25; ++i) indices.push_back(i * 3);

  auto plan = msp::batch_plan(indices, 12, 5, 0);
  REQUIRE(plan.size() == 3);
  CHECK(plan[0].size() == 12);
  CHECK(plan[1].size() == 12);
  CHECK(plan[2].size() == 1);

  auto plan2 = msp::batch_plan(indices, 12, 5, 0);
  CHECK(plan == plan2);
  auto other_epoch = msp::batch_plan(indices, 12, 5, 1);
  CHECK(plan != other_epoch);

  for (const auto& epoch_plan : {plan, other_epoch}) {
    std::multiset<int64_t> covered;
    for (const auto& b : epoch_plan) covered.insert(b.begin(), b.end());
    CHECK(covered == std::multiset<int64_t>(indices.begin(), indices.end()));
  }

  CHECK_THROWS_AS(msp::batch_plan({}, 12, 1, 0), msp::value_error);
  CHECK_THROWS_AS(msp::batch_plan(indices, 0, 1, 0), msp::value_error);
}

TEST_CASE("stacked batches hold patches along the leading axis") {
  fs::path dir = fresh_dir("msp_test_patches8");
  TinyCohort tc(dir);
  auto cohort = msp::load_normalized_cohort(tc.manifest);
  PatchDataset ds = msp::extract_patches(cohort, {0, 1});

  msp::Batch b = msp::stack_batch(ds, {0, 2, 4});
  CHECK(b.input.shape() == msp::Shape{3, 2, 11, 11, 11});
  REQUIRE(b.targets.size() == 2);
  CHECK(b.targets[0].shape() == msp::Shape{3, 2, 11, 11, 11});
  CHECK(b.targets[1].shape() == msp::Shape{3, 2, 19, 19, 19});

  for (int i = 0; i < 3; ++i) {
    auto one = msp::patch_input_tensor(ds, b.indices[(size_t)i]);
    const size_t len = one.values().size();
    for (size_t k = 0; k < len; ++k) {
      CHECK(b.input.values()[(size_t)i * len + k] == one.values()[k]);
    }
  }
}

TEST_CASE("dataset cache round trips bit-exactly") {
  fs::path dir = fresh_dir("msp_test_patches9");
  TinyCohort tc(dir);
  auto cohort = msp::load_normalized_cohort(tc.manifest);
  PatchDataset ds = msp::extract_patches(cohort, {0, 1});

  const std::string path = (dir / "cache.mspd").string();
  msp::save_dataset(ds, path);
  PatchDataset back = msp::load_dataset(path);

  CHECK(back.channels == ds.channels);
  CHECK(back.target_platforms == ds.target_platforms);
  CHECK(back.target_extents == ds.target_extents);
  CHECK(back.manifest_hash == ds.manifest_hash);
  CHECK(back.mask_hash == ds.mask_hash);
  REQUIRE(back.size() == ds.size());
  for (int64_t i = 0; i < ds.size(); ++i) {
    const auto& a = ds.pairs[(size_t)i];
    const auto& b = back.pairs[(size_t)i];
    CHECK(a.cx == b.cx);
    CHECK(a.cy == b.cy);
    CHECK(a.cz == b.cz);
    CHECK(a.subject == b.subject);
    CHECK(a.input == b.input);
    CHECK(a.targets == b.targets);
  }

  std::ofstream truncate(path, std::ios::binary | std::ios::trunc);
  truncate << "MSPD";
  truncate.close();
  CHECK_THROWS_AS(msp::load_dataset(path), msp::io_error);
}

TEST_CASE("extraction guards") {
  fs::path dir = fresh_dir("msp_test_patches10");
  TinyCohort tc(dir);
  auto cohort = msp::load_normalized_cohort(tc.manifest);
  CHECK_THROWS_AS(msp::extract_patches(cohort, {}), msp::value_error);
  CHECK_THROWS_AS(msp::extract_patches(cohort, {5}), msp::value_error);
  CHECK_THROWS_AS(msp::extract_patches(cohort, {1, 1}), msp::value_error);
}
