#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "msp/manifest.hpp"
#include "msp/models.hpp"
#include "msp/patches.hpp"
#include "msp/stats.hpp"
#include "msp/synthetic.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

void spit(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  os << text;
}

CliResult run_cli(const fs::path& workdir, const std::string& args,
                  const std::string& env = "") {
  static int counter = 0;
  const fs::path so = workdir / ("stdout_" + std::to_string(counter));
  const fs::path se = workdir / ("stderr_" + std::to_string(counter));
  ++counter;
  const std::string cmd = "cd " + workdir.string() + " && " + env + " " +
                          std::string(MSP_CLI_PATH) + " " + args + " > " +
                          so.string() + " 2> " + se.string();
  const int raw = std::system(cmd.c_str());
  CliResult r;
  r.code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  r.out = slurp(so);
  r.err = slurp(se);
  fs::remove(so);
  fs::remove(se);
  return r;
}

std::string tiny_cohort_json() {
  return R"({
  "subjects": 2,
  "base_dims": [14, 14, 14],
  "channels": 1,
  "seed": 77,
  "anatomy": {"mask_threshold": 0.8},
  "platforms": [
    {"name": "input", "blur_sigma": 0.6, "noise_sigma": 0.02},
    {"name": "siteA", "noise_sigma": 0.01},
    {"name": "siteB", "scale": 2, "noise_sigma": 0.01}
  ]
})";
}

std::string tiny_train_json() {
  return R"({"schedule": {"lr0": 0.01}, "batch_size": 12})";
}

// One scratch tree shared by the whole file: a tiny 2-subject cohort plus a
// trained identity/single/msp checkpoint suite, built once through the real
// binary.
struct CliWorld {
  fs::path root;
  fs::path cohort;
  fs::path suite;
  CliResult gen;
  CliResult train_msp2;
  CliResult train_msp1;

  CliWorld() {
    root = fs::temp_directory_path() / "msp_cli_world";
    fs::remove_all(root);
    fs::create_directories(root);
    cohort = root / "cohort";
    suite = root / "suite";
    spit(root / "cohort.json", tiny_cohort_json());
    spit(root / "train.json", tiny_train_json());
    gen = run_cli(root, "gen-data --config cohort.json --out cohort");
    train_msp2 = run_cli(root,
                         "train --cohort cohort --mode msp --target siteB "
                         "--config train.json --epochs 2 --seed 5 --width 4 "
                         "--out suite");
    train_msp1 = run_cli(root,
                         "train --cohort cohort --mode msp --target siteA "
                         "--config train.json --epochs 2 --seed 5 --width 4 "
                         "--pretrained suite --out suite");
  }
};

CliWorld& world() {
  static CliWorld w;
  return w;
}

std::vector<double> csv_last_column(const std::string& text) {
  std::vector<double> out;
  std::istringstream is(text);
  std::string line;
  std::getline(is, line);  // header
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    out.push_back(std::stod(line.substr(line.rfind(',') + 1)));
  }
  return out;
}

// First "mean (±std)" cell of the named model row in a text report.
std::pair<double, double> first_cell(const std::string& table,
                                     const std::string& model) {
  std::istringstream is(table);
  std::string line;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string name, mean, std_tok;
    ls >> name >> mean >> std_tok;
    if (name != model) continue;
    REQUIRE(std_tok.rfind("(\xc2\xb1", 0) == 0);
    return {std::stod(mean), std::stod(std_tok.substr(3))};
  }
  REQUIRE(false);
  return {0, 0};
}

uint64_t tree_fingerprint(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  uint64_t h = 1469598103934665603ULL;
  for (const auto& f : files) {
    const std::string bytes = f.filename().string() + slurp(f);
    for (unsigned char ch : bytes) {
      h ^= ch;
      h *= 1099511628211ULL;
    }
  }
  return h;
}

}  // namespace

TEST_CASE("cli: world setup succeeds") {
  const CliWorld& w = world();
  REQUIRE(w.gen.code == 0);
  REQUIRE(w.train_msp2.code == 0);
  REQUIRE(w.train_msp1.code == 0);
  CHECK(fs::exists(w.cohort / "cohort.json"));
  CHECK(fs::exists(w.suite / "msp_p1.mspc"));
  CHECK(fs::exists(w.suite / "msp_p2.mspc"));
}

TEST_CASE("cli: gen-data default config writes 16 volumes plus manifest") {
  const CliWorld& w = world();
  const fs::path out = w.root / "default_cohort";
  CliResult r = run_cli(w.root, "gen-data --out default_cohort --quiet");
  REQUIRE(r.code == 0);
  int platform_volumes = 0;
  for (const auto& e : fs::directory_iterator(out)) {
    const std::string name = e.path().filename().string();
    if (name.find("_plat") != std::string::npos &&
        e.path().extension() == ".mspv") {
      ++platform_volumes;
    }
  }
  CHECK(platform_volumes == 16);
  CHECK(fs::exists(out / "cohort.json"));
  CHECK(fs::exists(out / "cohort_config.json"));
  fs::remove_all(out);
}

TEST_CASE("cli: gen-data rerun into the same directory is byte-identical") {
  const CliWorld& w = world();
  const uint64_t before = tree_fingerprint(w.cohort);
  CliResult r = run_cli(w.root, "gen-data --config cohort.json --out cohort");
  REQUIRE(r.code == 0);
  CHECK(tree_fingerprint(w.cohort) == before);
}

TEST_CASE("cli: single:diqt checkpoint records the transposed conv") {
  const CliWorld& w = world();
  CliResult r = run_cli(w.root,
                        "train --cohort cohort --mode single:diqt --target "
                        "siteB --epochs 0 --seed 9 --width 4 --out diqt_run");
  REQUIRE(r.code == 0);
  msp::ModelFile mf =
      msp::load_model((w.root / "diqt_run" / "single_p2.mspc").string());
  REQUIRE(mf.kind == "single");
  CHECK(mf.target_platform == 2);
  bool has_tconv = false;
  for (const auto& layer : mf.single.spec.layers) {
    if (layer.kind == msp::LayerKind::tconv) {
      has_tconv = true;
      CHECK(layer.k == 3);
      CHECK(layer.stride == 2);
      CHECK(layer.pad == 2);
    }
  }
  CHECK(has_tconv);
  CHECK(mf.single.spec.output_extent(11) == 19);
}

TEST_CASE("cli: val_fraction carves validation out of the train side") {
  const CliWorld& w = world();
  spit(w.root / "val_train.json",
       "{\"schedule\": {\"lr0\": 0.01}, \"batch_size\": 12, "
       "\"val_fraction\": 0.1}");
  CliResult r = run_cli(w.root,
                        "train --cohort cohort --mode single:cnnrish5 "
                        "--target siteA --config val_train.json --epochs 1 "
                        "--seed 9 --width 4 --out val_run");
  REQUIRE(r.code == 0);
  CHECK(r.err.find("(train 94, val 10, held-out 12)") != std::string::npos);

  const json run_doc =
      json::parse(slurp(w.root / "val_run" / "run_config.json"));
  CHECK(run_doc.at("train").at("val_fraction").get<double>() == 0.1);
}

TEST_CASE("cli: msp training pretrains missing singles, history per phase") {
  const CliWorld& w = world();
  CHECK(w.train_msp2.err.find("pretraining") != std::string::npos);
  CHECK(fs::exists(w.suite / "single_p1.mspc"));
  CHECK(fs::exists(w.suite / "single_p2.mspc"));
  CHECK(fs::exists(w.suite / "history_single_p1.csv"));
  CHECK(fs::exists(w.suite / "history_single_p2.csv"));
  CHECK(fs::exists(w.suite / "history_msp_p2.csv"));

  // second msp run found the suite checkpoints instead of retraining
  CHECK(w.train_msp1.err.find("loaded pretrained single p1") !=
        std::string::npos);
  CHECK(w.train_msp1.err.find("pretraining") == std::string::npos);

  const std::string hist = slurp(w.suite / "history_msp_p2.csv");
  CHECK(hist.rfind("epoch,lr,alpha,train_loss,val_loss\n", 0) == 0);
}

TEST_CASE("cli: identical seeds reproduce checkpoints and histories") {
  const CliWorld& w = world();
  CliResult r = run_cli(w.root,
                        "train --cohort cohort --mode msp --target siteB "
                        "--config train.json --epochs 2 --seed 5 --width 4 "
                        "--out rerun --quiet");
  REQUIRE(r.code == 0);
  for (const char* name :
       {"single_p1.mspc", "single_p2.mspc", "msp_p2.mspc",
        "history_single_p1.csv", "history_single_p2.csv",
        "history_msp_p2.csv"}) {
    CAPTURE(name);
    CHECK(slurp(w.root / "rerun" / name) == slurp(w.suite / name));
  }
  fs::remove_all(w.root / "rerun");
}

TEST_CASE("cli: malformed configs and missing inputs map to exit codes") {
  const CliWorld& w = world();
  spit(w.root / "bad_cohort.json", "{\"subjects\": \"four\"}");
  CliResult r1 = run_cli(w.root, "gen-data --config bad_cohort.json --out x1");
  CHECK(r1.code == 2);
  CHECK(r1.err.find("subjects") != std::string::npos);

  spit(w.root / "bad_train.json", "{\"learning_rate\": 0.1}");
  CliResult r2 = run_cli(w.root,
                         "train --cohort cohort --mode msp --target siteA "
                         "--config bad_train.json --out x2");
  CHECK(r2.code == 2);
  CHECK(r2.err.find("unknown key") != std::string::npos);

  CliResult r3 = run_cli(w.root, "train --cohort nodir --mode msp "
                                 "--target siteA --out x3");
  CHECK(r3.code == 3);

  CliResult r4 = run_cli(w.root, "evaluate --cohort cohort "
                                 "--checkpoint nosuch.mspc --out x4");
  CHECK(r4.code == 3);

  CliResult r5 = run_cli(w.root,
                         "train --cohort cohort --mode single:vnet "
                         "--target siteA --out x5");
  CHECK(r5.code == 2);

  CliResult r6 = run_cli(w.root,
                         "train --cohort cohort --mode single:cnnrish5 "
                         "--target nowhere --out x6");
  CHECK(r6.code == 2);
}

TEST_CASE("cli: evaluate emits CSV, JSON, and text that agree") {
  const CliWorld& w = world();
  CliResult r = run_cli(w.root,
                        "evaluate --cohort cohort --checkpoint "
                        "suite/msp_p2.mspc --seed 5 --out ev");
  REQUIRE(r.code == 0);
  CHECK(!r.err.empty());

  const fs::path out = w.root / "ev";
  const std::vector<double> errors =
      csv_last_column(slurp(out / "errors_msp_p2_p2.csv"));
  REQUIRE(!errors.empty());
  double mean = 0;
  for (double e : errors) mean += e;
  mean /= (double)errors.size();
  double var = 0;
  for (double e : errors) var += (e - mean) * (e - mean);
  const double stddev = std::sqrt(var / (double)errors.size());

  const json report = json::parse(slurp(out / "report.json"));
  REQUIRE(report.at("rows").size() == 1);
  const auto& row = report.at("rows")[0];
  CHECK(row.at("n").get<int64_t>() == (int64_t)errors.size());
  CHECK(row.at("mean").get<double>() == doctest::Approx(mean).epsilon(1e-12));
  CHECK(row.at("stddev").get<double>() ==
        doctest::Approx(stddev).epsilon(1e-12));

  const std::string table = slurp(out / "report.txt");
  auto [tmean, tstd] = first_cell(table, "msp_p2");
  CHECK(std::abs(tmean - mean) < 1e-9);
  CHECK(std::abs(tstd - stddev) < 1e-9);

  // stdout carries exactly the table; diagnostics went to stderr
  CHECK(r.out == table);

  CliResult rq = run_cli(w.root,
                         "evaluate --cohort cohort --checkpoint "
                         "suite/msp_p2.mspc --seed 5 --out ev --quiet");
  REQUIRE(rq.code == 0);
  CHECK(rq.err.empty());
}

TEST_CASE("cli: compare runs the default suite with pairwise tests") {
  const CliWorld& w = world();
  CliResult r = run_cli(w.root,
                        "compare --cohort cohort --pretrained suite --seed 5 "
                        "--out cmp --quiet");
  REQUIRE(r.code == 0);

  const json report = json::parse(slurp(w.root / "cmp" / "report.json"));
  REQUIRE(report.at("rows").size() == 6);  // 3 models x 2 targets
  std::vector<std::string> models;
  for (const auto& row : report.at("rows")) {
    const std::string m = row.at("model").get<std::string>();
    if (std::find(models.begin(), models.end(), m) == models.end()) {
      models.push_back(m);
    }
  }
  CHECK(models == std::vector<std::string>{"identity", "single", "msp"});

  REQUIRE(report.at("tests").size() == 6);  // 2 targets x 3 pairs
  for (const auto& t : report.at("tests")) {
    const double p = t.at("p").get<double>();
    const double pc = t.at("p_corrected").get<double>();
    CHECK(p >= 0.0);
    CHECK(p <= 1.0);
    CHECK(pc == doctest::Approx(std::min(1.0, 3.0 * p)).epsilon(1e-12));
  }

  const std::string table = slurp(w.root / "cmp" / "report.txt");
  CHECK(table.find("identity") != std::string::npos);
  CHECK(table.find("platform 1") != std::string::npos);
  CHECK(table.find("platform 2") != std::string::npos);
  CHECK(table.find("Wilcoxon") != std::string::npos);
  CHECK(r.out == table);

  for (const char* name :
       {"errors_identity_p1.csv", "errors_identity_p2.csv",
        "errors_single_p1.csv", "errors_single_p2.csv", "errors_msp_p1.csv",
        "errors_msp_p2.csv"}) {
    CAPTURE(name);
    CHECK(fs::exists(w.root / "cmp" / name));
  }
}

TEST_CASE("cli: comparing a model with itself is degenerate") {
  const CliWorld& w = world();
  CliResult r = run_cli(w.root,
                        "compare --cohort cohort --model a=suite/msp_p2.mspc "
                        "--model b=suite/msp_p2.mspc --seed 5 --out selfcmp "
                        "--quiet");
  REQUIRE(r.code == 0);
  const json report = json::parse(slurp(w.root / "selfcmp" / "report.json"));
  REQUIRE(report.at("tests").size() == 1);
  const auto& t = report.at("tests")[0];
  CHECK(t.at("degenerate").get<bool>());
  CHECK(t.at("p").get<double>() == 1.0);
  CHECK(t.at("n_used").get<int64_t>() == 0);
  CHECK(report.at("rows")[0].at("mean") == report.at("rows")[1].at("mean"));
}

TEST_CASE("cli: predict stitches denormalized centers into the volume") {
  const CliWorld& w = world();
  CliResult r1 = run_cli(w.root,
                         "predict --cohort cohort --checkpoint "
                         "suite/single_p1.mspc --subject 0 --out pred "
                         "--quiet");
  CliResult r2 = run_cli(w.root,
                         "predict --cohort cohort --checkpoint "
                         "suite/msp_p2.mspc --subject sub000 --out pred "
                         "--quiet");
  REQUIRE(r1.code == 0);
  REQUIRE(r2.code == 0);

  msp::CohortManifest m =
      msp::load_manifest((w.cohort / "cohort.json").string());
  msp::NormalizedCohort cohort = msp::load_normalized_cohort(m);
  msp::PatchDataset ds = msp::extract_patches(cohort, {1, 2});

  msp::Volume same_res =
      msp::read_volume((w.root / "pred" / "predicted_s0_p1.mspv").string());
  msp::Volume sr =
      msp::read_volume((w.root / "pred" / "predicted_s0_p2.mspv").string());
  CHECK(same_res.x == 14);
  CHECK(sr.x == 28);

  msp::ModelFile single =
      msp::load_model((w.suite / "single_p1.mspc").string());
  msp::ModelFile mspm = msp::load_model((w.suite / "msp_p2.mspc").string());

  int checked = 0;
  for (int64_t i = 0; i < ds.size() && checked < 3; ++i) {
    const msp::PatchPair& pair = ds.pairs[(size_t)i];
    if (pair.subject != 0) continue;
    ++checked;
    msp::Tensor<float> x = msp::patch_input_tensor(ds, i);

    msp::Tensor<float> y1 = msp::forward_net(single.single, x).y;
    const float expect1 =
        (float)(y1.values()[5 * 11 * 11 + 5 * 11 + 5] *
                    cohort.stats[1].stddev[0] +
                cohort.stats[1].mean[0]);
    CHECK(same_res.at(pair.cx, pair.cy, pair.cz, 0) == expect1);

    msp::Tensor<float> y2 = msp::msp_forward(mspm.msp, x).stage2;
    const float expect2 =
        (float)(y2.values()[(9 * 19 + 9) * 19 + 10] *
                    cohort.stats[2].stddev[0] +
                cohort.stats[2].mean[0]);
    CHECK(sr.at(2 * pair.cx, 2 * pair.cy, 2 * pair.cz + 1, 0) == expect2);
  }
  CHECK(checked == 3);

  // voxels never assigned stay zero: corners are outside every mask
  CHECK(same_res.at(0, 0, 0, 0) == 0.f);
  CHECK(sr.at(27, 27, 27, 0) == 0.f);

  // rerun is byte-identical
  const std::string before =
      slurp(w.root / "pred" / "predicted_s0_p2.mspv");
  CliResult r3 = run_cli(w.root,
                         "predict --cohort cohort --checkpoint "
                         "suite/msp_p2.mspc --subject 0 --out pred --quiet");
  REQUIRE(r3.code == 0);
  CHECK(slurp(w.root / "pred" / "predicted_s0_p2.mspv") == before);
}

TEST_CASE("cli: MSP_THREADS does not change emitted results") {
  const CliWorld& w = world();
  CliResult r1 = run_cli(w.root,
                         "evaluate --cohort cohort --checkpoint "
                         "suite/msp_p1.mspc --seed 5 --out ev1 --quiet",
                         "MSP_THREADS=1");
  CliResult r2 = run_cli(w.root,
                         "evaluate --cohort cohort --checkpoint "
                         "suite/msp_p1.mspc --seed 5 --out ev2 --quiet",
                         "MSP_THREADS=4");
  REQUIRE(r1.code == 0);
  REQUIRE(r2.code == 0);
  CHECK(slurp(w.root / "ev1" / "report.json") ==
        slurp(w.root / "ev2" / "report.json"));
  CHECK(slurp(w.root / "ev1" / "errors_msp_p1_p1.csv") ==
        slurp(w.root / "ev2" / "errors_msp_p1_p1.csv"));
}
