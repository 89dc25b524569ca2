#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "xmatch/cli.hpp"
#include "xmatch/error.hpp"
#include "xmatch/png_io.hpp"

using namespace xmatch;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

/// Two synthetic pairs laid out as a dataset on disk.
void make_dataset(const fs::path& root, int n = 2, int size = 64) {
  fs::create_directories(root / "spectrum_a");
  fs::create_directories(root / "spectrum_b");
  for (int i = 0; i < n; ++i) {
    const AlignedPair p = synth_pair(40 + i, size, size);
    const std::string name = "pair" + std::to_string(i) + ".png";
    save_png_gray(p.image_a, (root / "spectrum_a" / name).string(), 16);
    save_png_gray(p.image_b, (root / "spectrum_b" / name).string(), 16);
  }
}

/// Small enough to train/evaluate in a few seconds.
const char* kTinyConfig = R"({
  "model": {"enc_c1": 4, "enc_c2": 8, "enc_c3": 8, "feature_channels": 16,
            "desc_dim": 8, "hom_channels": 8, "hom_pool": 4, "hom_fc": 32},
  "adaptation": {"n_homographies": 10},
  "eval": {"coarse_align": {"rotation_step": 10, "refine_rounds": 2}},
  "train": {"steps": 2, "batch_pairs": 1, "crop": 32, "checkpoint_every": 0},
  "inference": {"det_threshold": 0.01, "max_points": 200},
  "label_max_points": 100
})";

RunConfig tiny_config(const fs::path& dir) {
  write_file(dir / "config.json", kTinyConfig);
  return load_run_config((dir / "config.json").string());
}

}  // namespace

TEST_CASE("empty config path yields defaults") {
  const RunConfig cfg = load_run_config("");
  CHECK(cfg.inference.det_threshold == doctest::Approx(0.015));
  CHECK(cfg.train.steps == 500);
  CHECK(cfg.adaptation.n_homographies == 100);
}

TEST_CASE("config values override defaults") {
  TempDir tmp("xmatch_cli_cfg");
  const RunConfig cfg = tiny_config(tmp.path);
  CHECK(cfg.model.desc_dim == 8);
  CHECK(cfg.train.steps == 2);
  CHECK(cfg.train.sample.crop == 32);
  CHECK(cfg.adaptation.n_homographies == 10);
  CHECK(cfg.label_max_points == 100);
  CHECK(cfg.eval.coarse.rotation_step == doctest::Approx(10.0));
  CHECK(cfg.eval.coarse.refine_rounds == 2);
  // untouched fields keep their defaults
  CHECK(cfg.eval.pixel_tolerance == doctest::Approx(5.0));
  CHECK_FALSE(cfg.eval.coarse.enabled);
}

TEST_CASE("malformed or unreadable config files raise bad-config") {
  TempDir tmp("xmatch_cli_badcfg");
  write_file(tmp.path / "broken.json", "{not json");
  CHECK_THROWS_AS(load_run_config((tmp.path / "broken.json").string()), Error);
  try {
    load_run_config((tmp.path / "broken.json").string());
  } catch (const Error& e) {
    CHECK(e.code() == "bad-config");
  }
  try {
    load_run_config((tmp.path / "missing.json").string());
  } catch (const Error& e) {
    CHECK(e.code() == "bad-config");
  }
  write_file(tmp.path / "badval.json", R"({"eval": {"pixel_tolerance": -1}})");
  CHECK_THROWS_AS(load_run_config((tmp.path / "badval.json").string()), Error);
}

TEST_CASE("exit codes follow the contract") {
  CHECK(exit_code_for("bad-config") == 2);
  CHECK(exit_code_for("io-error") == 3);
  CHECK(exit_code_for("unpaired-image") == 3);
  CHECK(exit_code_for("bad-checkpoint") == 3);
  CHECK(exit_code_for("bad-label-file") == 3);
  CHECK(exit_code_for("no-consensus") == 4);
  CHECK(exit_code_for("insufficient-matches") == 4);
  CHECK(exit_code_for("nan-loss") == 1);
}

TEST_CASE("detect_with_model handles non-multiple-of-8 frames") {
  TempDir tmp("xmatch_cli_detect");
  RunConfig cfg = tiny_config(tmp.path);
  nn::Model model(cfg.model);
  Rng rng(1);
  model.init(rng);

  // 70x52 pads to 72x56
  const Image big = synth_pair(9, 72, 56).image_a;
  Image img(70, 52);
  for (int u = 0; u < 70; ++u)
    for (int v = 0; v < 52; ++v) img.at(u, v) = big.at(u, v);
  cfg.inference.det_threshold = 0.0;
  const Detections det = detect_with_model(model, img, cfg.inference);
  CHECK(det.kps.size() == det.descs.size());
  for (const Keypoint& k : det.kps) {
    CHECK(k.u < 70);
    CHECK(k.v < 52);
  }
  for (const auto& d : det.descs) {
    double n2 = 0;
    for (double x : d) n2 += x * x;
    CHECK(n2 == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("label/train/eval/match round trip on a tiny dataset") {
  TempDir tmp("xmatch_cli_pipeline");
  make_dataset(tmp.path / "data");
  const RunConfig cfg = tiny_config(tmp.path);

  const fs::path label_out = tmp.path / "labels_run";
  cmd_label((tmp.path / "data").string(), cfg, 11, 1, label_out.string());
  CHECK(fs::exists(label_out / "labels" / "pair0.json"));
  CHECK(fs::exists(label_out / "labels" / "pair1.json"));
  CHECK(fs::exists(label_out / "summary.json"));
  CHECK(fs::exists(label_out / "manifest.json"));

  // deterministic relabeling
  const fs::path label_out2 = tmp.path / "labels_run2";
  cmd_label((tmp.path / "data").string(), cfg, 11, 1, label_out2.string());
  CHECK(slurp(label_out / "labels" / "pair0.json") == slurp(label_out2 / "labels" / "pair0.json"));
  CHECK(slurp(label_out / "summary.json") == slurp(label_out2 / "summary.json"));

  const fs::path train_out = tmp.path / "train_run";
  cmd_train((tmp.path / "data").string(), (label_out / "labels").string(), cfg, 12,
            train_out.string());
  CHECK(fs::exists(train_out / "model.ckpt"));
  CHECK(fs::exists(train_out / "manifest.json"));
  int log_lines = 0;
  std::istringstream log(slurp(train_out / "train_log.jsonl"));
  for (std::string line; std::getline(log, line);) ++log_lines;
  CHECK(log_lines == cfg.train.steps);

  const fs::path eval_out = tmp.path / "eval_run";
  cmd_eval((tmp.path / "data").string(), (train_out / "model.ckpt").string(), cfg, 13,
           eval_out.string());
  CHECK(fs::exists(eval_out / "report.json"));
  CHECK(fs::exists(eval_out / "report.csv"));
  CHECK(fs::exists(eval_out / "corner_accuracy_curve.csv"));

  // byte-identical rerun
  const fs::path eval_out2 = tmp.path / "eval_run2";
  cmd_eval((tmp.path / "data").string(), (train_out / "model.ckpt").string(), cfg, 13,
           eval_out2.string());
  CHECK(slurp(eval_out / "report.json") == slurp(eval_out2 / "report.json"));
  CHECK(slurp(eval_out / "report.csv") == slurp(eval_out2 / "report.csv"));

  // match always leaves a matches.json behind, consensus or not
  const fs::path match_out = tmp.path / "match_run";
  bool threw = false;
  try {
    cmd_match((tmp.path / "data" / "spectrum_a" / "pair0.png").string(),
              (tmp.path / "data" / "spectrum_b" / "pair0.png").string(),
              (train_out / "model.ckpt").string(), cfg, 14, match_out.string());
  } catch (const Error& e) {
    threw = true;
    CHECK(e.code() == "no-consensus");
  }
  CHECK(fs::exists(match_out / "matches.json"));
  if (!threw) CHECK(slurp(match_out / "matches.json").find("homography") != std::string::npos);
}

TEST_CASE("eval on a garbage checkpoint raises bad-checkpoint") {
  TempDir tmp("xmatch_cli_badckpt");
  make_dataset(tmp.path / "data", 1);
  write_file(tmp.path / "junk.ckpt", "not a checkpoint");
  try {
    cmd_eval((tmp.path / "data").string(), (tmp.path / "junk.ckpt").string(), load_run_config(""),
             0, (tmp.path / "out").string());
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == "bad-checkpoint");
  }
}

TEST_CASE("train on a dataset with a missing label file raises io-error") {
  TempDir tmp("xmatch_cli_nolabel");
  make_dataset(tmp.path / "data", 1);
  try {
    cmd_train((tmp.path / "data").string(), (tmp.path / "empty_labels").string(),
              load_run_config(""), 0, (tmp.path / "out").string());
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == "io-error");
  }
}
