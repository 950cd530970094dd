#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "msp/errors.hpp"
#include "msp/hash.hpp"
#include "msp/manifest.hpp"
#include "msp/models.hpp"
#include "msp/parallel.hpp"
#include "msp/patches.hpp"
#include "msp/rng.hpp"
#include "msp/stats.hpp"
#include "msp/synthetic.hpp"
#include "msp/train.hpp"
#include "msp/volume.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Options {
  std::string config;
  std::string out;
  std::string cohort;
  std::string target;
  std::string mode;
  std::string pretrained;
  std::string checkpoint;
  std::string subject;
  std::vector<std::string> models;
  uint64_t seed = 0;
  int epochs = 0;
  int width = 0;
  bool quiet = false;
};

void note(const Options& o, const std::string& msg) {
  if (!o.quiet) std::cerr << msg << std::endl;
}

std::string read_text_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw msp::io_error(path + ": cannot open for reading");
  std::string text((std::istreambuf_iterator<char>(is)),
                   std::istreambuf_iterator<char>());
  if (is.bad()) throw msp::io_error(path + ": read failed");
  return text;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw msp::io_error(path + ": cannot open for writing");
  os << text;
  if (!os) throw msp::io_error(path + ": write failed");
}

void ensure_out_dir(const std::string& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw msp::io_error(out + ": cannot create directory");
}

std::string join_path(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

void write_run_config(const std::string& out, const json& doc) {
  write_text_file(join_path(out, "run_config.json"), doc.dump(2) + "\n");
}

msp::CohortManifest open_cohort(const std::string& dir) {
  msp::CohortManifest m = msp::load_manifest(join_path(dir, "cohort.json"));
  std::vector<std::string> problems = msp::validate_manifest(m);
  if (!problems.empty()) {
    std::string msg = "invalid cohort at " + dir + ":";
    for (const auto& p : problems) msg += "\n  " + p;
    throw msp::io_error(msg);
  }
  return m;
}

int resolve_platform(const msp::CohortManifest& m, const std::string& spec) {
  if (spec.empty()) throw msp::value_error("--target is required");
  const bool digits =
      std::all_of(spec.begin(), spec.end(),
                  [](unsigned char ch) { return std::isdigit(ch); });
  if (digits) {
    const int t = std::stoi(spec);
    if (t < 1 || t >= m.n_platforms()) {
      throw msp::value_error("target platform index " + spec +
                             " out of range 1.." +
                             std::to_string(m.n_platforms() - 1));
    }
    return t;
  }
  for (int i = 1; i < m.n_platforms(); ++i) {
    if (m.platforms[(size_t)i].name == spec) return i;
  }
  std::string msg = "unknown target platform '" + spec + "'; predicted:";
  for (int i = 1; i < m.n_platforms(); ++i) {
    msg += " " + m.platforms[(size_t)i].name;
  }
  throw msp::value_error(msg);
}

int resolve_subject(const msp::CohortManifest& m, const std::string& spec) {
  if (spec.empty()) throw msp::value_error("--subject is required");
  const bool digits =
      std::all_of(spec.begin(), spec.end(),
                  [](unsigned char ch) { return std::isdigit(ch); });
  if (digits) {
    const int s = std::stoi(spec);
    if (s < 0 || s >= m.n_subjects()) {
      throw msp::value_error("subject index " + spec + " out of range 0.." +
                             std::to_string(m.n_subjects() - 1));
    }
    return s;
  }
  for (int i = 0; i < m.n_subjects(); ++i) {
    if (m.subjects[(size_t)i] == spec) return i;
  }
  throw msp::value_error("unknown subject '" + spec + "'");
}

std::vector<int> predicted_platforms(const msp::CohortManifest& m) {
  std::vector<int> out;
  for (int i = 1; i < m.n_platforms(); ++i) out.push_back(i);
  if (out.empty()) throw msp::value_error("cohort has no predicted platforms");
  return out;
}

msp::TrainConfig resolve_train_config(const Options& o, const CLI::App* sub) {
  msp::TrainConfig cfg;
  if (!o.config.empty()) {
    cfg = msp::parse_train_config(read_text_file(o.config));
  }
  if (sub->count("--seed") > 0) cfg.seed = o.seed;
  if (sub->count("--epochs") > 0) {
    if (o.epochs < 0) throw msp::config_error("epochs must be >= 0");
    cfg.epochs = o.epochs;
  }
  return cfg;
}

json train_config_json(const msp::TrainConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["lr0"] = cfg.schedule.lr0;
  j["period"] = cfg.schedule.period;
  if (cfg.alpha) {
    j["alpha"] = json{{"e0", cfg.alpha->e0}, {"e1", cfg.alpha->e1}};
  } else {
    j["alpha"] = nullptr;
  }
  j["alpha_override"] =
      cfg.alpha_override ? json(*cfg.alpha_override) : json(nullptr);
  j["connection_lr_scale"] = cfg.connection_lr_scale;
  j["freeze_singles"] = cfg.freeze_singles;
  j["snapshot_epoch"] =
      cfg.snapshot_epoch ? json(*cfg.snapshot_epoch) : json(nullptr);
  j["val_fraction"] =
      cfg.val_fraction ? json(*cfg.val_fraction) : json(nullptr);
  return j;
}

uint64_t dataset_fingerprint(const msp::PatchDataset& ds) {
  uint64_t h = msp::fnv1a64(&ds.manifest_hash, sizeof ds.manifest_hash);
  return msp::fnv1a64(&ds.mask_hash, sizeof ds.mask_hash, h);
}

std::string single_name(int platform) {
  return "single_p" + std::to_string(platform) + ".mspc";
}

std::string msp_name(int platform) {
  return "msp_p" + std::to_string(platform) + ".mspc";
}

void save_single(const msp::SingleNet& net, int target,
                 const std::string& path) {
  msp::ModelFile mf;
  mf.kind = "single";
  mf.target_platform = target;
  mf.single = net;
  msp::save_model(mf, path);
}

// ---------------------------------------------------------------- gen-data

int cmd_gen_data(const Options& o, const CLI::App* sub) {
  msp::CohortConfig cfg = o.config.empty() ? msp::default_cohort_config()
                                           : msp::load_cohort_config(o.config);
  if (sub->count("--seed") > 0) cfg.seed = o.seed;
  ensure_out_dir(o.out);

  msp::CohortManifest m = msp::generate_cohort(cfg, o.out);
  msp::save_cohort_config(cfg, join_path(o.out, "cohort_config.json"));

  json run;
  run["subcommand"] = "gen-data";
  run["config"] = o.config;
  run["out"] = o.out;
  run["seed"] = cfg.seed;
  run["resolved_config"] = "cohort_config.json";
  run["subjects"] = m.n_subjects();
  run["platforms"] = m.n_platforms();
  write_run_config(o.out, run);

  note(o, "wrote " + std::to_string(m.n_subjects() * m.n_platforms()) +
              " platform volumes + cohort.json to " + o.out);
  return 0;
}

// ------------------------------------------------------------------- train

// 90/10 split keyed by the run seed; with val_fraction set, validation is
// carved from the train side and the held-out 10% stays untouched.
msp::SplitIndices training_split(const Options& o, const msp::PatchDataset& ds,
                                 const msp::TrainConfig& cfg) {
  msp::SplitIndices sp = msp::split(ds, 0.9, cfg.seed);
  if (cfg.val_fraction) {
    const int64_t held = (int64_t)sp.test.size();
    sp = msp::carve_validation(sp, *cfg.val_fraction);
    note(o, "patches: " + std::to_string(ds.size()) + " (train " +
                std::to_string(sp.train.size()) + ", val " +
                std::to_string(sp.test.size()) + ", held-out " +
                std::to_string(held) + ")");
  } else {
    note(o, "patches: " + std::to_string(ds.size()) + " (train " +
                std::to_string(sp.train.size()) + ", held-out " +
                std::to_string(sp.test.size()) + ")");
  }
  return sp;
}

int cmd_train_single(const Options& o, const CLI::App* sub,
                     const std::string& arch) {
  msp::TrainConfig cfg = resolve_train_config(o, sub);
  msp::CohortManifest manifest = open_cohort(o.cohort);
  const int target = resolve_platform(manifest, o.target);
  const bool sr = manifest.platforms[(size_t)target].scale == 2;
  ensure_out_dir(o.out);

  json run_doc;
  run_doc["subcommand"] = "train";
  run_doc["mode"] = o.mode;
  run_doc["arch"] = arch;
  run_doc["target"] = target;
  run_doc["width"] = o.width;
  run_doc["cohort"] = o.cohort;
  run_doc["config"] = o.config;
  run_doc["out"] = o.out;
  run_doc["split_fraction"] = 0.9;
  run_doc["train"] = train_config_json(cfg);
  write_run_config(o.out, run_doc);

  msp::NormalizedCohort cohort = msp::load_normalized_cohort(manifest);
  msp::PatchDataset ds = msp::extract_patches(cohort, {target});
  msp::SplitIndices sp = training_split(o, ds, cfg);

  msp::SingleNet net = msp::build_single(
      arch, ds.channels, ds.channels, sr,
      msp::derive_seed(cfg.seed, msp::seed_tag::kInit, (uint64_t)target),
      o.width);
  msp::TrainRun run = msp::train_single(net, ds, sp, target, cfg);

  const std::string ckpt = join_path(o.out, single_name(target));
  save_single(net, target, ckpt);
  write_text_file(join_path(o.out,
                            "history_single_p" + std::to_string(target) +
                                ".csv"),
                  msp::history_csv(run));

  if (cfg.snapshot_epoch && !run.snapshot.empty()) {
    std::vector<msp::Tensor<float>*> params = msp::collect_params(net);
    std::vector<std::vector<float>> best = msp::copy_param_values(params);
    msp::assign_param_values(params, run.snapshot);
    save_single(net, target,
                join_path(o.out, "single_p" + std::to_string(target) + "_ep" +
                                     std::to_string(*cfg.snapshot_epoch) +
                                     ".mspc"));
    msp::assign_param_values(params, best);
  }

  note(o, "best epoch " + std::to_string(run.best_epoch) + ", checkpoint " +
              ckpt);
  return 0;
}

int cmd_train_msp(const Options& o, const CLI::App* sub) {
  msp::TrainConfig cfg = resolve_train_config(o, sub);
  msp::CohortManifest manifest = open_cohort(o.cohort);
  const int target = resolve_platform(manifest, o.target);
  const std::vector<int> platforms = predicted_platforms(manifest);
  ensure_out_dir(o.out);

  json run_doc;
  run_doc["subcommand"] = "train";
  run_doc["mode"] = "msp";
  run_doc["target"] = target;
  run_doc["width"] = o.width;
  run_doc["cohort"] = o.cohort;
  run_doc["config"] = o.config;
  run_doc["out"] = o.out;
  run_doc["pretrained"] = o.pretrained;
  run_doc["split_fraction"] = 0.9;
  msp::TrainConfig resolved = cfg;
  if (!resolved.alpha && !resolved.alpha_override) {
    resolved.alpha = msp::AlphaSchedule{0, std::max(1, cfg.epochs / 2)};
  }
  run_doc["train"] = train_config_json(resolved);

  msp::NormalizedCohort cohort = msp::load_normalized_cohort(manifest);
  msp::PatchDataset ds = msp::extract_patches(cohort, platforms);
  msp::SplitIndices sp = training_split(o, ds, cfg);

  const std::string single_dir = o.pretrained.empty() ? o.out : o.pretrained;
  std::vector<msp::SingleNet> singles;
  json phase_doc = json::array();
  for (int platform : platforms) {
    const std::string path = join_path(single_dir, single_name(platform));
    if (fs::exists(path)) {
      msp::ModelFile mf = msp::load_model(path);
      if (mf.kind != "single") {
        throw msp::value_error(path + ": expected a single-net checkpoint");
      }
      if (mf.target_platform != platform) {
        throw msp::value_error(path + ": trained for platform " +
                               std::to_string(mf.target_platform) +
                               ", expected " + std::to_string(platform));
      }
      note(o, "loaded pretrained single p" + std::to_string(platform));
      singles.push_back(mf.single);
      phase_doc.push_back(
          json{{"platform", platform}, {"source", "checkpoint"}});
    } else {
      note(o, "no checkpoint for p" + std::to_string(platform) +
                  ", pretraining");
      const bool sr = manifest.platforms[(size_t)platform].scale == 2;
      const std::string arch = sr ? "diqt" : "cnnrish5";
      msp::SingleNet net = msp::build_single(
          arch, ds.channels, ds.channels, sr,
          msp::derive_seed(cfg.seed, msp::seed_tag::kInit, (uint64_t)platform),
          o.width);
      msp::TrainRun run = msp::train_single(net, ds, sp, platform, cfg);
      save_single(net, platform, join_path(o.out, single_name(platform)));
      write_text_file(join_path(o.out, "history_single_p" +
                                           std::to_string(platform) + ".csv"),
                      msp::history_csv(run));
      singles.push_back(std::move(net));
      phase_doc.push_back(
          json{{"platform", platform}, {"source", "pretrained"}});
    }
  }
  run_doc["singles"] = phase_doc;
  write_run_config(o.out, run_doc);

  msp::MspModel msp_model = msp::build_msp(
      singles, platforms, target,
      msp::derive_seed(cfg.seed, msp::seed_tag::kConnection));
  note(o, "joint phase: target p" + std::to_string(target));
  msp::TrainRun run = msp::train_msp(msp_model, ds, sp, cfg);

  msp::ModelFile mf;
  mf.kind = "msp";
  mf.msp = std::move(msp_model);
  const std::string ckpt = join_path(o.out, msp_name(target));
  msp::save_model(mf, ckpt);
  write_text_file(join_path(o.out,
                            "history_msp_p" + std::to_string(target) + ".csv"),
                  msp::history_csv(run));
  note(o, "best epoch " + std::to_string(run.best_epoch) + ", checkpoint " +
              ckpt);
  return 0;
}

int cmd_train_multi(const Options& o, const CLI::App* sub,
                    const std::string& kind) {
  msp::TrainConfig cfg = resolve_train_config(o, sub);
  msp::CohortManifest manifest = open_cohort(o.cohort);
  const std::vector<int> platforms = predicted_platforms(manifest);
  ensure_out_dir(o.out);

  json run_doc;
  run_doc["subcommand"] = "train";
  run_doc["mode"] = kind;
  run_doc["width"] = o.width;
  run_doc["cohort"] = o.cohort;
  run_doc["config"] = o.config;
  run_doc["out"] = o.out;
  run_doc["split_fraction"] = 0.9;
  run_doc["train"] = train_config_json(cfg);
  write_run_config(o.out, run_doc);

  msp::NormalizedCohort cohort = msp::load_normalized_cohort(manifest);
  msp::PatchDataset ds = msp::extract_patches(cohort, platforms);
  msp::SplitIndices sp = training_split(o, ds, cfg);

  std::vector<bool> sr_flags;
  for (int platform : platforms) {
    sr_flags.push_back(manifest.platforms[(size_t)platform].scale == 2);
  }
  const uint64_t init =
      msp::derive_seed(cfg.seed, msp::seed_tag::kInit, kind == "cpm" ? 1 : 2);

  msp::ModelFile mf;
  mf.kind = kind;
  msp::TrainRun run;
  if (kind == "cpm") {
    msp::CpmModel model = msp::build_cpm(ds.channels, ds.channels, platforms,
                                         sr_flags, init, o.width);
    run = msp::train_cpm(model, ds, sp, cfg);
    mf.cpm = std::move(model);
  } else {
    msp::HnedModel model = msp::build_hned(ds.channels, ds.channels, platforms,
                                           sr_flags, init, o.width);
    run = msp::train_hned(model, ds, sp, cfg);
    mf.hned = std::move(model);
  }
  const std::string ckpt = join_path(o.out, kind + ".mspc");
  msp::save_model(mf, ckpt);
  write_text_file(join_path(o.out, "history_" + kind + ".csv"),
                  msp::history_csv(run));
  note(o, "best epoch " + std::to_string(run.best_epoch) + ", checkpoint " +
              ckpt);
  return 0;
}

int cmd_train(const Options& o, const CLI::App* sub) {
  if (o.mode.rfind("single:", 0) == 0) {
    return cmd_train_single(o, sub, o.mode.substr(7));
  }
  if (o.mode == "msp") return cmd_train_msp(o, sub);
  if (o.mode == "cpm" || o.mode == "hned") {
    return cmd_train_multi(o, sub, o.mode);
  }
  throw msp::value_error("unknown mode '" + o.mode +
                         "'; expected single:<arch>, msp, cpm, or hned");
}

// -------------------------------------------------------- evaluate/compare

std::string errors_name(const std::string& model, int target) {
  return "errors_" + model + "_p" + std::to_string(target) + ".csv";
}

// Per-target error lists produced by one checkpoint (or the identity
// baseline, path "identity").
std::map<int, std::vector<msp::PatchError>> model_errors(
    const msp::ModelFile& mf, const msp::PatchDataset& ds,
    const std::vector<int64_t>& indices) {
  std::map<int, std::vector<msp::PatchError>> out;
  if (mf.kind == "single") {
    out[mf.target_platform] =
        msp::evaluate_model(mf.single, ds, indices, mf.target_platform);
  } else if (mf.kind == "msp") {
    out[mf.msp.target] = msp::evaluate_model(mf.msp, ds, indices);
  } else if (mf.kind == "cpm") {
    auto per_head = msp::evaluate_model(mf.cpm, ds, indices);
    for (size_t h = 0; h < per_head.size(); ++h) {
      out[mf.cpm.platforms[h]] = std::move(per_head[h]);
    }
  } else {
    auto per_head = msp::evaluate_model(mf.hned, ds, indices);
    for (size_t h = 0; h < per_head.size(); ++h) {
      out[mf.hned.platforms[h]] = std::move(per_head[h]);
    }
  }
  return out;
}

std::vector<int> model_targets(const msp::ModelFile& mf) {
  if (mf.kind == "single") return {mf.target_platform};
  if (mf.kind == "msp") return {mf.msp.target};
  if (mf.kind == "cpm") return mf.cpm.platforms;
  return mf.hned.platforms;
}

int cmd_evaluate(const Options& o, const CLI::App* sub) {
  msp::CohortManifest manifest = open_cohort(o.cohort);
  ensure_out_dir(o.out);
  const uint64_t seed = sub->count("--seed") > 0 ? o.seed : 0;

  msp::ModelFile mf = msp::load_model(o.checkpoint);
  const std::vector<int> targets = model_targets(mf);
  const std::string label = fs::path(o.checkpoint).stem().string();

  json run_doc;
  run_doc["subcommand"] = "evaluate";
  run_doc["cohort"] = o.cohort;
  run_doc["checkpoint"] = o.checkpoint;
  run_doc["out"] = o.out;
  run_doc["seed"] = seed;
  run_doc["split_fraction"] = 0.9;
  write_run_config(o.out, run_doc);

  msp::NormalizedCohort cohort = msp::load_normalized_cohort(manifest);
  msp::PatchDataset ds = msp::extract_patches(cohort, targets);
  msp::SplitIndices sp = msp::split(ds, 0.9, seed);
  note(o, "evaluating " + label + " on " + std::to_string(sp.test.size()) +
              " held-out patches");

  const uint64_t ckpt_hash = msp::fnv1a64_file(o.checkpoint);
  const uint64_t ds_hash = dataset_fingerprint(ds);
  std::vector<msp::EvalRow> rows;
  for (auto& [target, errors] : model_errors(mf, ds, sp.test)) {
    write_text_file(join_path(o.out, errors_name(label, target)),
                    msp::errors_csv(errors));
    rows.push_back(msp::summarize(label, target, errors, ckpt_hash, ds_hash));
  }

  const std::string table = msp::report_text(rows, 12);
  write_text_file(join_path(o.out, "report.txt"), table);
  write_text_file(join_path(o.out, "report.json"), msp::report_json(rows));
  std::cout << table;
  return 0;
}

struct CompareModel {
  std::string name;
  std::string path;  // "identity" for the baseline predictor
  msp::ModelFile file;
  uint64_t hash = 0;
  std::map<int, std::vector<msp::PatchError>> errors;
};

int cmd_compare(const Options& o, const CLI::App* sub) {
  msp::CohortManifest manifest = open_cohort(o.cohort);
  ensure_out_dir(o.out);
  const uint64_t seed = sub->count("--seed") > 0 ? o.seed : 0;

  std::vector<CompareModel> models;
  if (o.models.empty()) {
    if (o.pretrained.empty()) {
      throw msp::value_error(
          "--pretrained (checkpoint directory) is required for the default "
          "compare suite");
    }
    CompareModel identity;
    identity.name = "identity";
    identity.path = "identity";
    models.push_back(std::move(identity));
    CompareModel single;
    single.name = "single";
    CompareModel mspm;
    mspm.name = "msp";
    models.push_back(std::move(single));
    models.push_back(std::move(mspm));
  } else {
    for (const std::string& entry : o.models) {
      const size_t eq = entry.find('=');
      if (eq == std::string::npos || eq == 0 || eq + 1 == entry.size()) {
        throw msp::value_error("--model expects name=path, got '" + entry +
                               "'");
      }
      CompareModel m;
      m.name = entry.substr(0, eq);
      m.path = entry.substr(eq + 1);
      for (const auto& prev : models) {
        if (prev.name == m.name) {
          throw msp::value_error("duplicate model name '" + m.name + "'");
        }
      }
      models.push_back(std::move(m));
    }
  }

  // Per-target checkpoints for the default suite rows, one file per
  // predicted platform; explicit --model rows carry their own files.
  const std::vector<int> platforms = predicted_platforms(manifest);
  std::vector<int> targets;
  std::map<std::string, std::map<int, std::string>> suite_paths;
  if (o.models.empty()) {
    targets = platforms;
    for (int t : platforms) {
      suite_paths["single"][t] = join_path(o.pretrained, single_name(t));
      suite_paths["msp"][t] = join_path(o.pretrained, msp_name(t));
    }
  } else {
    std::vector<int> seen;
    for (auto& m : models) {
      if (m.path == "identity") continue;
      m.file = msp::load_model(m.path);
      m.hash = msp::fnv1a64_file(m.path);
      for (int t : model_targets(m.file)) seen.push_back(t);
    }
    std::sort(seen.begin(), seen.end());
    seen.erase(std::unique(seen.begin(), seen.end()), seen.end());
    if (seen.empty()) {
      throw msp::value_error("compare needs at least one checkpoint model");
    }
    for (int t : seen) {
      if (t < 1 || t >= manifest.n_platforms()) {
        throw msp::value_error("checkpoint targets platform " +
                               std::to_string(t) +
                               " absent from this cohort");
      }
    }
    targets = seen;
  }

  json run_doc;
  run_doc["subcommand"] = "compare";
  run_doc["cohort"] = o.cohort;
  run_doc["out"] = o.out;
  run_doc["pretrained"] = o.pretrained;
  run_doc["seed"] = seed;
  run_doc["split_fraction"] = 0.9;
  {
    json jm = json::array();
    for (const auto& m : models) {
      jm.push_back(json{{"name", m.name}, {"path", m.path}});
    }
    run_doc["models"] = jm;
  }
  write_run_config(o.out, run_doc);

  msp::NormalizedCohort cohort = msp::load_normalized_cohort(manifest);
  msp::PatchDataset ds = msp::extract_patches(cohort, targets);
  msp::SplitIndices sp = msp::split(ds, 0.9, seed);
  const uint64_t ds_hash = dataset_fingerprint(ds);
  note(o, "comparing " + std::to_string(models.size()) + " models on " +
              std::to_string(sp.test.size()) + " held-out patches");

  std::vector<msp::EvalRow> rows;
  for (auto& m : models) {
    if (m.path == "identity") {
      for (int t : targets) {
        m.errors[t] = msp::evaluate_identity(ds, sp.test, t);
      }
    } else if (o.models.empty()) {
      // default suite: load this row's per-target checkpoints
      for (int t : targets) {
        const std::string path = suite_paths[m.name][t];
        msp::ModelFile mf = msp::load_model(path);
        if (!model_targets(mf).empty() && model_targets(mf)[0] != t) {
          throw msp::value_error(path + ": trained for platform " +
                                 std::to_string(model_targets(mf)[0]) +
                                 ", expected " + std::to_string(t));
        }
        auto errs = model_errors(mf, ds, sp.test);
        m.hash = msp::fnv1a64_file(path);
        rows.push_back(msp::summarize(m.name, t, errs[t], m.hash, ds_hash));
        m.errors[t] = std::move(errs[t]);
        write_text_file(join_path(o.out, errors_name(m.name, t)),
                        msp::errors_csv(m.errors[t]));
      }
      continue;
    } else {
      m.errors = model_errors(m.file, ds, sp.test);
    }
    for (auto& [t, errs] : m.errors) {
      rows.push_back(msp::summarize(m.name, t, errs, m.hash, ds_hash));
      write_text_file(join_path(o.out, errors_name(m.name, t)),
                      msp::errors_csv(errs));
    }
  }

  // Every unordered model pair per target, Bonferroni over the pair count.
  struct TestLine {
    int target;
    std::string a, b;
    msp::PairedTestResult r;
  };
  std::vector<TestLine> tests;
  for (int t : targets) {
    std::vector<const CompareModel*> present;
    for (const auto& m : models) {
      if (m.errors.count(t)) present.push_back(&m);
    }
    const int m_count = (int)(present.size() * (present.size() - 1) / 2);
    for (size_t i = 0; i < present.size(); ++i) {
      for (size_t j = i + 1; j < present.size(); ++j) {
        std::vector<double> a, b;
        for (const auto& e : present[i]->errors.at(t)) a.push_back(e.mse);
        for (const auto& e : present[j]->errors.at(t)) b.push_back(e.mse);
        tests.push_back({t, present[i]->name, present[j]->name,
                         msp::wilcoxon_signed_rank(a, b, m_count)});
      }
    }
  }

  std::string text = msp::report_text(rows, 12);
  text += "\npairwise Wilcoxon signed-rank, Bonferroni-corrected:\n";
  for (const auto& tl : tests) {
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "  platform %d  %s vs %s  W=%.10g  n=%lld  p=%.6g  "
                  "corrected=%.6g  %s%s\n",
                  tl.target, tl.a.c_str(), tl.b.c_str(), tl.r.w,
                  (long long)tl.r.n_used, tl.r.p, tl.r.p_corrected,
                  tl.r.exact ? "exact" : "approx",
                  tl.r.degenerate ? " degenerate" : "");
    text += buf;
  }
  write_text_file(join_path(o.out, "report.txt"), text);

  json doc;
  doc["rows"] = json::parse(msp::report_json(rows)).at("rows");
  json jt = json::array();
  for (const auto& tl : tests) {
    jt.push_back(json{{"target", tl.target},
                      {"a", tl.a},
                      {"b", tl.b},
                      {"w", tl.r.w},
                      {"n_used", tl.r.n_used},
                      {"p", tl.r.p},
                      {"p_corrected", tl.r.p_corrected},
                      {"exact", tl.r.exact},
                      {"degenerate", tl.r.degenerate}});
  }
  doc["tests"] = jt;
  write_text_file(join_path(o.out, "report.json"), doc.dump(2) + "\n");
  std::cout << text;
  return 0;
}

// ----------------------------------------------------------------- predict

int cmd_predict(const Options& o, const CLI::App* sub) {
  (void)sub;
  msp::CohortManifest manifest = open_cohort(o.cohort);
  ensure_out_dir(o.out);
  const int subject = resolve_subject(manifest, o.subject);
  msp::ModelFile mf = msp::load_model(o.checkpoint);
  const std::vector<int> targets = model_targets(mf);

  json run_doc;
  run_doc["subcommand"] = "predict";
  run_doc["cohort"] = o.cohort;
  run_doc["checkpoint"] = o.checkpoint;
  run_doc["out"] = o.out;
  run_doc["subject"] = manifest.subjects[(size_t)subject];
  write_run_config(o.out, run_doc);

  msp::NormalizedCohort cohort = msp::load_normalized_cohort(manifest);
  msp::PatchDataset ds = msp::extract_patches(cohort, targets);

  std::vector<int64_t> mine;
  for (int64_t i = 0; i < ds.size(); ++i) {
    if (ds.pairs[(size_t)i].subject == subject) mine.push_back(i);
  }
  if (mine.empty()) throw msp::value_error("subject has no masked voxels");

  for (size_t slot = 0; slot < targets.size(); ++slot) {
    const int t = targets[slot];
    const int scale = manifest.platforms[(size_t)t].scale;
    const msp::Volume& ref = cohort.volumes[(size_t)subject][(size_t)t];
    const msp::NormStats& st = cohort.stats[(size_t)t];
    msp::Volume out =
        msp::Volume::create(ref.x, ref.y, ref.z, ref.c, ref.voxel_size);
    const int e = ds.target_extents[ds.slot_of(t)];
    const int center = ds.input_extent / 2;

    msp::parallel_for((int64_t)mine.size(), [&](int64_t k) {
      const msp::PatchPair& pair = ds.pairs[(size_t)mine[(size_t)k]];
      msp::Tensor<float> x = msp::patch_input_tensor(ds, mine[(size_t)k]);
      msp::Tensor<float> pred;
      if (mf.kind == "single") {
        pred = msp::forward_net(mf.single, x).y;
      } else if (mf.kind == "msp") {
        pred = msp::msp_forward(mf.msp, x).stage2;
      } else if (mf.kind == "cpm") {
        pred = msp::cpm_forward(mf.cpm, x)[slot];
      } else {
        pred = msp::hned_forward(mf.hned, x)[slot];
      }
      const float* v = pred.data();
      auto pval = [&](int c, int px, int py, int pz) {
        return v[(((int64_t)c * e + px) * e + py) * e + pz];
      };
      if (scale == 1) {
        for (int c = 0; c < out.c; ++c) {
          out.at(pair.cx, pair.cy, pair.cz, c) =
              (float)(pval(c, center, center, center) * st.stddev[(size_t)c] +
                      st.mean[(size_t)c]);
        }
      } else {
        const int pc = e / 2;  // fine voxel (2cx, 2cy, 2cz) in patch coords
        for (int c = 0; c < out.c; ++c) {
          for (int bx = 0; bx < 2; ++bx) {
            for (int by = 0; by < 2; ++by) {
              for (int bz = 0; bz < 2; ++bz) {
                out.at(2 * pair.cx + bx, 2 * pair.cy + by, 2 * pair.cz + bz,
                       c) =
                    (float)(pval(c, pc + bx, pc + by, pc + bz) *
                                st.stddev[(size_t)c] +
                            st.mean[(size_t)c]);
              }
            }
          }
        }
      }
    });

    const std::string name = "predicted_s" + std::to_string(subject) + "_p" +
                             std::to_string(t) + ".mspv";
    msp::write_volume(out, join_path(o.out, name));
    note(o, "wrote " + name + " (" + std::to_string(mine.size()) +
                " stitched patches)");
  }
  return 0;
}

int fail(int code, const std::string& what) {
  std::cerr << "error: " << what << std::endl;
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MSP harmonization workbench"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "configuration file (JSON)");
    sub->add_option("--out", o.out, "output directory")->required();
    sub->add_option("--seed", o.seed, "seed override");
    sub->add_flag("--quiet", o.quiet, "suppress progress messages");
  };
  auto add_cohort = [&](CLI::App* sub) {
    sub->add_option("--cohort", o.cohort, "cohort directory (with cohort.json)")
        ->required();
  };

  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic cohort");
  add_common(gen);

  CLI::App* train = app.add_subcommand("train", "train a model");
  add_common(train);
  add_cohort(train);
  train->add_option("--mode", o.mode,
                    "single:<arch> | msp | cpm | hned (arch: cnnrish5, "
                    "shresnet7, diqt)")
      ->required();
  train->add_option("--target", o.target, "target platform (index or name)");
  train->add_option("--pretrained", o.pretrained,
                    "directory with single-net checkpoints (msp mode)");
  train->add_option("--epochs", o.epochs, "epoch count override");
  train->add_option("--width", o.width, "channel width override (0 = stock)");

  CLI::App* evaluate =
      app.add_subcommand("evaluate", "held-out evaluation of one checkpoint");
  add_common(evaluate);
  add_cohort(evaluate);
  evaluate->add_option("--checkpoint", o.checkpoint, "model checkpoint")
      ->required();

  CLI::App* compare = app.add_subcommand(
      "compare", "evaluate a model suite and run paired significance tests");
  add_common(compare);
  add_cohort(compare);
  compare->add_option("--pretrained", o.pretrained,
                      "checkpoint directory for the default "
                      "identity/single/msp suite");
  compare->add_option("--model", o.models,
                      "name=path model rows overriding the default suite "
                      "(path 'identity' for the baseline)");

  CLI::App* predict = app.add_subcommand(
      "predict", "apply a checkpoint to one subject's full volume");
  add_common(predict);
  add_cohort(predict);
  predict->add_option("--checkpoint", o.checkpoint, "model checkpoint")
      ->required();
  predict->add_option("--subject", o.subject, "subject (index or name)")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(o, gen);
    if (train->parsed()) return cmd_train(o, train);
    if (evaluate->parsed()) return cmd_evaluate(o, evaluate);
    if (compare->parsed()) return cmd_compare(o, compare);
    if (predict->parsed()) return cmd_predict(o, predict);
  } catch (const msp::config_error& e) {
    return fail(2, e.what());
  } catch (const msp::value_error& e) {
    return fail(2, e.what());
  } catch (const msp::io_error& e) {
    return fail(3, e.what());
  } catch (const msp::divergence_error& e) {
    return fail(4, e.what());
  } catch (const msp::shape_error& e) {
    return fail(5, e.what());
  } catch (const std::exception& e) {
    return fail(1, e.what());
  }
  return 0;
}
