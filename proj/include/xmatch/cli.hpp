#pragma once

#include <string>

#include "xmatch/adaptation.hpp"
#include "xmatch/evaluation.hpp"
#include "xmatch/nn/model.hpp"
#include "xmatch/train.hpp"

namespace xmatch {

/// Keypoint/descriptor extraction settings shared by eval, match, register.
struct InferenceConfig {
  double det_threshold = 0.015;
  int nms_radius = 4;  // < 0 disables suppression entirely
  int max_points = 1000;

  void validate() const;
};

/// Everything a run needs, loadable from a JSON config file and fully
/// serialized into each run's manifest.
struct RunConfig {
  nn::ModelConfig model;
  AdaptationConfig adaptation;
  TrainConfig train;
  EvalConfig eval;
  InferenceConfig inference;
  int label_max_points = 1000;
};

/// Parses a JSON config file; an empty path yields the defaults. Unparseable
/// files or bad values raise "bad-config".
RunConfig load_run_config(const std::string& path);

/// Reproducibility manifest: command, seed, workers, and the full config.
void write_manifest(const RunConfig& cfg, const std::string& command, uint64_t seed, int workers,
                    const std::string& out_dir);

/// Runs the model on one image (reflection-padded to multiples of 8) and
/// returns thresholded + NMS'd keypoints with sampled dense descriptors.
Detections detect_with_model(nn::Model& model, const Image& img, const InferenceConfig& cfg);

/// Alignment scorer for coarse_to_fine_fit: mean cosine similarity between
/// A's dense descriptor map and the map of B unwarped by the candidate
/// homography. A's map is computed once per pair.
AlignScorerFactory model_align_scorer(nn::Model& model);

/// Pseudo-labels every pair under dataset_root into out_dir/labels plus a
/// summary.json. Deterministic under seed.
void cmd_label(const std::string& dataset_root, const RunConfig& cfg, uint64_t seed, int workers,
               const std::string& out_dir);

/// Trains a model from out-of-band labels; writes model.ckpt, train_log.jsonl
/// and a manifest under out_dir.
void cmd_train(const std::string& dataset_root, const std::string& labels_dir, const RunConfig& cfg,
               uint64_t seed, const std::string& out_dir);

/// Runs the warped-pair protocol against a checkpoint; writes report.json,
/// report.csv, and corner_accuracy_curve.csv under out_dir.
void cmd_eval(const std::string& dataset_root, const std::string& checkpoint, const RunConfig& cfg,
              uint64_t seed, const std::string& out_dir);

/// Matches two images; writes matches.json (keypoints, matches, inlier mask,
/// homography). Throws "no-consensus" (after writing the diagnostic match
/// file) when no model survives.
void cmd_match(const std::string& image_a, const std::string& image_b,
               const std::string& checkpoint, const RunConfig& cfg, uint64_t seed,
               const std::string& out_dir);

/// Full registration: cmd_match plus the warped-B-onto-A overlay PNG.
void cmd_register(const std::string& image_a, const std::string& image_b,
                  const std::string& checkpoint, const RunConfig& cfg, uint64_t seed,
                  const std::string& out_dir);

/// Maps an error code to the CLI exit code contract: 2 config, 3 data,
/// 4 no-consensus, 1 anything else.
int exit_code_for(const std::string& error_code);

}  // namespace xmatch
