#include "xmatch/cli.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>

#include "json.hpp"
#include "xmatch/error.hpp"
#include "xmatch/matching.hpp"
#include "xmatch/nn/ops.hpp"
#include "xmatch/png_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace xmatch {

void InferenceConfig::validate() const {
  if (det_threshold < 0.0) throw Error("bad-config", "det_threshold must be non-negative");
}

// ------------------------------------------------------------- config file

namespace {

template <typename T>
void read_key(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void read_warp(const json& j, HomographySampleConfig& cfg) {
  read_key(j, "translation_frac", cfg.translation_frac);
  read_key(j, "scale_frac", cfg.scale_frac);
  read_key(j, "rotation_deg", cfg.rotation_deg);
  read_key(j, "perspective_frac", cfg.perspective_frac);
  read_key(j, "center_crop_frac", cfg.center_crop_frac);
  read_key(j, "truncation", cfg.truncation);
}

json warp_to_json(const HomographySampleConfig& cfg) {
  return {{"translation_frac", cfg.translation_frac}, {"scale_frac", cfg.scale_frac},
          {"rotation_deg", cfg.rotation_deg},         {"perspective_frac", cfg.perspective_frac},
          {"center_crop_frac", cfg.center_crop_frac}, {"truncation", cfg.truncation}};
}

void read_fit(const json& j, RobustFitConfig& cfg) {
  read_key(j, "reproj_threshold", cfg.reproj_threshold);
  read_key(j, "max_iterations", cfg.max_iterations);
  read_key(j, "confidence", cfg.confidence);
  read_key(j, "min_matches", cfg.min_matches);
  if (j.contains("scoring")) {
    const std::string s = j.at("scoring").get<std::string>();
    if (s == "inlier-count")
      cfg.scoring = RobustFitConfig::Scoring::kInlierCount;
    else if (s == "truncated-quality")
      cfg.scoring = RobustFitConfig::Scoring::kTruncatedQuality;
    else
      throw Error("bad-config", "unknown robust scoring '" + s + "'");
  }
}

void read_coarse(const json& j, CoarseAlignConfig& cfg) {
  read_key(j, "enabled", cfg.enabled);
  read_key(j, "rotation_range", cfg.rotation_range);
  read_key(j, "rotation_step", cfg.rotation_step);
  read_key(j, "scale_min", cfg.scale_min);
  read_key(j, "scale_max", cfg.scale_max);
  read_key(j, "scale_step", cfg.scale_step);
  read_key(j, "translation_range", cfg.translation_range);
  read_key(j, "translation_step", cfg.translation_step);
  read_key(j, "refine_rounds", cfg.refine_rounds);
}

json coarse_to_json(const CoarseAlignConfig& cfg) {
  return {{"enabled", cfg.enabled},
          {"rotation_range", cfg.rotation_range},
          {"rotation_step", cfg.rotation_step},
          {"scale_min", cfg.scale_min},
          {"scale_max", cfg.scale_max},
          {"scale_step", cfg.scale_step},
          {"translation_range", cfg.translation_range},
          {"translation_step", cfg.translation_step},
          {"refine_rounds", cfg.refine_rounds}};
}

json fit_to_json(const RobustFitConfig& cfg) {
  return {{"reproj_threshold", cfg.reproj_threshold},
          {"max_iterations", cfg.max_iterations},
          {"confidence", cfg.confidence},
          {"min_matches", cfg.min_matches},
          {"scoring", cfg.scoring == RobustFitConfig::Scoring::kInlierCount ? "inlier-count"
                                                                            : "truncated-quality"}};
}

void read_loss(const json& j, LossConfig& cfg) {
  read_key(j, "lambda_d", cfg.lambda_d);
  read_key(j, "m_p", cfg.m_p);
  read_key(j, "m_n", cfg.m_n);
  read_key(j, "lambda", cfg.lambda);
  read_key(j, "gamma", cfg.gamma);
  read_key(j, "plain_mean", cfg.plain_mean);
  if (j.contains("dustbin_weight")) cfg.class_weights[64] = j.at("dustbin_weight").get<double>();
}

json loss_to_json(const LossConfig& cfg) {
  return {{"lambda_d", cfg.lambda_d}, {"m_p", cfg.m_p},
          {"m_n", cfg.m_n},           {"lambda", cfg.lambda},
          {"gamma", cfg.gamma},       {"plain_mean", cfg.plain_mean},
          {"dustbin_weight", cfg.class_weights[64]}};
}

}  // namespace

RunConfig load_run_config(const std::string& path) {
  RunConfig cfg;
  if (path.empty()) return cfg;
  std::ifstream in(path);
  if (!in) throw Error("bad-config", "cannot read config file " + path);
  json doc;
  try {
    doc = json::parse(in);

    if (doc.contains("model")) {
      const json& m = doc.at("model");
      if (m.value("preset", "") == "toy") cfg.model = nn::ModelConfig::toy();
      read_key(m, "encoder", cfg.model.encoder);
      read_key(m, "enc_c1", cfg.model.enc_c1);
      read_key(m, "enc_c2", cfg.model.enc_c2);
      read_key(m, "enc_c3", cfg.model.enc_c3);
      read_key(m, "feature_channels", cfg.model.feature_channels);
      read_key(m, "desc_dim", cfg.model.desc_dim);
      read_key(m, "hom_channels", cfg.model.hom_channels);
      read_key(m, "hom_pool", cfg.model.hom_pool);
      read_key(m, "hom_fc", cfg.model.hom_fc);
      read_key(m, "hom_dropout", cfg.model.hom_dropout);
    }
    if (doc.contains("adaptation")) {
      const json& a = doc.at("adaptation");
      read_key(a, "n_homographies", cfg.adaptation.n_homographies);
      read_key(a, "window_radius", cfg.adaptation.window_radius);
      read_key(a, "accept_threshold", cfg.adaptation.accept_threshold);
      read_key(a, "det_threshold", cfg.adaptation.det_threshold);
      read_key(a, "nms_radius", cfg.adaptation.nms_radius);
      read_key(a, "gaussian_mode", cfg.adaptation.gaussian_mode);
      read_key(a, "gaussian_sigma", cfg.adaptation.gaussian_sigma);
      if (a.contains("warp")) read_warp(a.at("warp"), cfg.adaptation.sample_cfg);
    }
    if (doc.contains("train")) {
      const json& t = doc.at("train");
      read_key(t, "steps", cfg.train.steps);
      read_key(t, "batch_pairs", cfg.train.batch_pairs);
      read_key(t, "checkpoint_every", cfg.train.checkpoint_every);
      read_key(t, "crop", cfg.train.sample.crop);
      read_key(t, "cross_spectrum_prob", cfg.train.sample.cross_spectrum_prob);
      if (t.contains("warp")) read_warp(t.at("warp"), cfg.train.sample.warp);
      if (t.contains("adam")) {
        read_key(t.at("adam"), "lr", cfg.train.adam.lr);
        read_key(t.at("adam"), "beta1", cfg.train.adam.beta1);
        read_key(t.at("adam"), "beta2", cfg.train.adam.beta2);
        read_key(t.at("adam"), "eps", cfg.train.adam.eps);
      }
      if (t.contains("loss")) read_loss(t.at("loss"), cfg.train.loss);
    }
    if (doc.contains("eval")) {
      const json& e = doc.at("eval");
      read_key(e, "pixel_tolerance", cfg.eval.pixel_tolerance);
      read_key(e, "epsilons", cfg.eval.epsilons);
      if (e.contains("warp")) read_warp(e.at("warp"), cfg.eval.warp_cfg);
      if (e.contains("fit")) read_fit(e.at("fit"), cfg.eval.fit);
      if (e.contains("coarse_align")) read_coarse(e.at("coarse_align"), cfg.eval.coarse);
    }
    if (doc.contains("inference")) {
      const json& i = doc.at("inference");
      read_key(i, "det_threshold", cfg.inference.det_threshold);
      read_key(i, "nms_radius", cfg.inference.nms_radius);
      read_key(i, "max_points", cfg.inference.max_points);
    }
    read_key(doc, "label_max_points", cfg.label_max_points);
  } catch (const json::exception& e) {
    throw Error("bad-config", std::string("malformed config: ") + e.what());
  }
  cfg.adaptation.validate();
  cfg.train.validate();
  cfg.eval.validate();
  cfg.inference.validate();
  return cfg;
}

namespace {

json run_config_to_json(const RunConfig& cfg) {
  return {
      {"model",
       {{"encoder", cfg.model.encoder},
        {"enc_c1", cfg.model.enc_c1},
        {"enc_c2", cfg.model.enc_c2},
        {"enc_c3", cfg.model.enc_c3},
        {"feature_channels", cfg.model.feature_channels},
        {"desc_dim", cfg.model.desc_dim},
        {"hom_channels", cfg.model.hom_channels},
        {"hom_pool", cfg.model.hom_pool},
        {"hom_fc", cfg.model.hom_fc},
        {"hom_dropout", cfg.model.hom_dropout}}},
      {"adaptation",
       {{"n_homographies", cfg.adaptation.n_homographies},
        {"window_radius", cfg.adaptation.window_radius},
        {"accept_threshold", cfg.adaptation.accept_threshold},
        {"det_threshold", cfg.adaptation.det_threshold},
        {"nms_radius", cfg.adaptation.nms_radius},
        {"gaussian_mode", cfg.adaptation.gaussian_mode},
        {"gaussian_sigma", cfg.adaptation.gaussian_sigma},
        {"warp", warp_to_json(cfg.adaptation.sample_cfg)}}},
      {"train",
       {{"steps", cfg.train.steps},
        {"batch_pairs", cfg.train.batch_pairs},
        {"checkpoint_every", cfg.train.checkpoint_every},
        {"crop", cfg.train.sample.crop},
        {"cross_spectrum_prob", cfg.train.sample.cross_spectrum_prob},
        {"warp", warp_to_json(cfg.train.sample.warp)},
        {"adam",
         {{"lr", cfg.train.adam.lr},
          {"beta1", cfg.train.adam.beta1},
          {"beta2", cfg.train.adam.beta2},
          {"eps", cfg.train.adam.eps}}},
        {"loss", loss_to_json(cfg.train.loss)}}},
      {"eval",
       {{"pixel_tolerance", cfg.eval.pixel_tolerance},
        {"epsilons", cfg.eval.epsilons},
        {"warp", warp_to_json(cfg.eval.warp_cfg)},
        {"fit", fit_to_json(cfg.eval.fit)},
        {"coarse_align", coarse_to_json(cfg.eval.coarse)}}},
      {"inference",
       {{"det_threshold", cfg.inference.det_threshold},
        {"nms_radius", cfg.inference.nms_radius},
        {"max_points", cfg.inference.max_points}}},
      {"label_max_points", cfg.label_max_points}};
}

}  // namespace

void write_manifest(const RunConfig& cfg, const std::string& command, uint64_t seed, int workers,
                    const std::string& out_dir) {
  fs::create_directories(out_dir);
  json doc{{"tool", "xmatch"},
           {"version", "0.1.0"},
           {"command", command},
           {"seed", seed},
           {"workers", workers},
           {"config", run_config_to_json(cfg)}};
  std::ofstream out(fs::path(out_dir) / "manifest.json");
  if (!out) throw Error("io-error", "cannot write manifest in " + out_dir);
  out << doc.dump(2) << "\n";
}

// --------------------------------------------------------------- pipeline

namespace {

/// reflect-101 pad on the bottom/right up to the next multiples of 8
Image pad_to_multiple8(const Image& img) {
  const int rows = (img.rows + 7) / 8 * 8;
  const int cols = (img.cols + 7) / 8 * 8;
  if (rows == img.rows && cols == img.cols) return img;
  auto reflect = [](int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * n - 2;
    i = ((i % period) + period) % period;
    return i < n ? i : period - i;
  };
  Image out(rows, cols);
  for (int u = 0; u < rows; ++u)
    for (int v = 0; v < cols; ++v) out.at(u, v) = img.at(reflect(u, img.rows), reflect(v, img.cols));
  return out;
}

}  // namespace

AlignScorerFactory model_align_scorer(nn::Model& model) {
  return [&model](const Image& a, const Image& b) -> AlignScoreFn {
    const nn::FeatureMap feat_a = model.encode_image(pad_to_multiple8(a));
    const auto desc_a = std::make_shared<nn::Tensor>(model.describe_image(feat_a));
    return [&model, desc_a, &b](const Homography& h) {
      const Image unwarped = pad_to_multiple8(warp_image(b, h.inverse()));
      const nn::FeatureMap feat_b = model.encode_image(unwarped);
      const nn::Tensor desc_b = model.describe_image(feat_b);
      if (desc_b.data.size() != desc_a->data.size())
        throw Error("shape-mismatch", "alignment scoring needs equal-sized images");
      double dot = 0.0;
      for (size_t i = 0; i < desc_b.data.size(); ++i) dot += desc_a->data[i] * desc_b.data[i];
      return dot / (desc_b.shape[1] * desc_b.shape[2]);
    };
  };
}

Detections detect_with_model(nn::Model& model, const Image& img, const InferenceConfig& cfg) {
  cfg.validate();
  const Image padded = pad_to_multiple8(img);
  const nn::FeatureMap feat = model.encode_image(padded);
  const Image heat = nn::logits_to_heatmap(model.detect_image(feat));

  KeypointSet kps = extract_keypoints(heat, cfg.det_threshold, std::max(cfg.nms_radius, 0),
                                      cfg.max_points);
  // discard detections that live only in the padding
  std::erase_if(kps, [&](const Keypoint& k) { return k.u >= img.rows || k.v >= img.cols; });

  Detections out;
  out.kps = std::move(kps);
  out.descs = sample_descriptors(nn::densify_descriptors(model.describe_image(feat)), out.kps);
  return out;
}

// ---------------------------------------------------------------- commands

void cmd_label(const std::string& dataset_root, const RunConfig& cfg, uint64_t seed, int workers,
               const std::string& out_dir) {
  const std::vector<AlignedPair> pairs = load_dataset(dataset_root);
  const fs::path labels_dir = fs::path(out_dir) / "labels";
  fs::create_directories(labels_dir);

  const BaseDetector detector = corner_detector();
  Rng master(seed);
  json summary_pairs = json::array();
  long long total = 0;
  for (const AlignedPair& pair : pairs) {
    Rng pair_rng = master.fork();
    const Image map =
        run_adaptation(pair.image_a, pair.image_b, detector, cfg.adaptation, pair_rng, workers);
    const KeypointSet kps = finalize_keypoints(map, cfg.label_max_points);

    LabelRecord rec;
    rec.id = pair.id;
    rec.rows = pair.image_a.rows;
    rec.cols = pair.image_a.cols;
    rec.keypoints = kps;
    write_label_file(rec, (labels_dir / (pair.id + ".json")).string());

    summary_pairs.push_back({{"id", pair.id}, {"keypoints", kps.size()}});
    total += static_cast<long long>(kps.size());
  }

  json summary{{"pairs", summary_pairs},
               {"total_keypoints", total},
               {"mean_keypoints", pairs.empty() ? 0.0 : static_cast<double>(total) / pairs.size()}};
  std::ofstream out(fs::path(out_dir) / "summary.json");
  if (!out) throw Error("io-error", "cannot write summary in " + out_dir);
  out << summary.dump(2) << "\n";
  write_manifest(cfg, "label", seed, workers, out_dir);
}

void cmd_train(const std::string& dataset_root, const std::string& labels_dir, const RunConfig& cfg,
               uint64_t seed, const std::string& out_dir) {
  const std::vector<AlignedPair> pairs = load_dataset(dataset_root);
  std::vector<LabelRecord> labels;
  labels.reserve(pairs.size());
  for (const AlignedPair& pair : pairs)
    labels.push_back(read_label_file((fs::path(labels_dir) / (pair.id + ".json")).string()));

  nn::Model model(cfg.model);
  Rng init_rng(seed);
  model.init(init_rng);

  TrainConfig train_cfg = cfg.train;
  train_cfg.seed = seed;
  fs::create_directories(out_dir);
  std::ofstream log(fs::path(out_dir) / "train_log.jsonl");
  if (!log) throw Error("io-error", "cannot write training log in " + out_dir);
  train_model(model, pairs, labels, train_cfg, out_dir, &log);
  write_manifest(cfg, "train", seed, 1, out_dir);
}

void cmd_eval(const std::string& dataset_root, const std::string& checkpoint, const RunConfig& cfg,
              uint64_t seed, const std::string& out_dir) {
  const std::vector<AlignedPair> pairs = load_dataset(dataset_root);
  nn::Model model = nn::Model::load(checkpoint);

  EvalConfig eval_cfg = cfg.eval;
  eval_cfg.seed = seed;
  const auto warped = make_eval_warps(pairs, eval_cfg);
  const DetectFn detect = [&](const Image& img) {
    return detect_with_model(model, img, cfg.inference);
  };
  const EvalReport report = run_protocol(detect, warped, eval_cfg, model_align_scorer(model));

  fs::create_directories(out_dir);
  write_report_json(report, (fs::path(out_dir) / "report.json").string());
  write_report_csv(report, (fs::path(out_dir) / "report.csv").string());
  {
    std::ofstream curve(fs::path(out_dir) / "corner_accuracy_curve.csv");
    curve << "epsilon,accuracy\n";
    for (size_t e = 0; e < report.epsilons.size(); ++e)
      curve << report.epsilons[e] << "," << report.mean_corner_acc[e] << "\n";
  }
  {
    // timings live outside the deterministic report files
    std::ofstream timings(fs::path(out_dir) / "timings.csv");
    timings << "id,runtime_s\n";
    for (const PairRecord& rec : report.pairs) timings << rec.id << "," << rec.runtime_s << "\n";
  }
  write_manifest(cfg, "eval", seed, 1, out_dir);
}

namespace {

struct MatchOutcome {
  Detections det_a, det_b;
  MatchSet matches;
  bool fit_ok = false;
  RobustFitResult fit;
};

json match_to_json(const MatchOutcome& o) {
  auto kps_json = [](const KeypointSet& kps) {
    json arr = json::array();
    for (const Keypoint& k : kps) arr.push_back({k.u, k.v, k.score});
    return arr;
  };
  json doc{{"keypoints_a", kps_json(o.det_a.kps)}, {"keypoints_b", kps_json(o.det_b.kps)}};
  json marr = json::array();
  for (const Match& m : o.matches) marr.push_back({m.index_a, m.index_b, m.distance});
  doc["matches"] = marr;
  if (o.fit_ok) {
    doc["inliers"] = json::array();
    for (char c : o.fit.inliers) doc["inliers"].push_back(c != 0);
    json h = json::array();
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) h.push_back(o.fit.h.m(r, c));
    doc["homography"] = h;  // row-major, (u, v, 1) convention
    doc["inlier_count"] = o.fit.inlier_count;
  }
  return doc;
}

MatchOutcome write_match_file(const MatchOutcome& o, const std::string& out_dir) {
  std::ofstream out(fs::path(out_dir) / "matches.json");
  if (!out) throw Error("io-error", "cannot write matches in " + out_dir);
  out << match_to_json(o).dump(2) << "\n";
  return o;
}

MatchOutcome match_images(nn::Model& model, const Image& a, const Image& b, const RunConfig& cfg,
                          uint64_t seed, const std::string& out_dir) {
  MatchOutcome o;
  o.det_a = detect_with_model(model, a, cfg.inference);
  fs::create_directories(out_dir);
  if (cfg.eval.coarse.enabled) {
    const AlignScoreFn score = model_align_scorer(model)(a, b);
    const DetectFn detect = [&](const Image& img) {
      return detect_with_model(model, img, cfg.inference);
    };
    Rng fit_rng(seed);
    const CoarseToFineResult ctf =
        coarse_to_fine_fit(o.det_a, b, detect, score, cfg.eval.coarse, cfg.eval.fit, fit_rng);
    o.det_b.kps = ctf.kps_b;  // re-detections on the aligned image, mapped back to the b frame
    o.matches = ctf.matches;
    o.fit.h = ctf.h;
    o.fit.inliers = ctf.inliers;
    o.fit.inlier_count = ctf.inlier_count;
    o.fit_ok = true;
    return write_match_file(o, out_dir);
  }
  o.det_b = detect_with_model(model, b, cfg.inference);
  o.matches = mutual_nn_match(o.det_a.descs, o.det_b.descs);
  try {
    Rng fit_rng(seed);
    o.fit = robust_homography(o.det_a.kps, o.det_b.kps, o.matches, cfg.eval.fit, fit_rng);
    o.fit_ok = true;
  } catch (const Error&) {
    // diagnostic match file still gets written by the caller
  }
  return write_match_file(o, out_dir);
}

}  // namespace

void cmd_match(const std::string& image_a, const std::string& image_b,
               const std::string& checkpoint, const RunConfig& cfg, uint64_t seed,
               const std::string& out_dir) {
  nn::Model model = nn::Model::load(checkpoint);
  const Image a = load_png_gray(image_a);
  const Image b = load_png_gray(image_b);
  const MatchOutcome o = match_images(model, a, b, cfg, seed, out_dir);
  write_manifest(cfg, "match", seed, 1, out_dir);
  if (!o.fit_ok) throw Error("no-consensus", "no homography survived; see matches.json");
}

void cmd_register(const std::string& image_a, const std::string& image_b,
                  const std::string& checkpoint, const RunConfig& cfg, uint64_t seed,
                  const std::string& out_dir) {
  nn::Model model = nn::Model::load(checkpoint);
  const Image a = load_png_gray(image_a);
  const Image b = load_png_gray(image_b);
  const MatchOutcome o = match_images(model, a, b, cfg, seed, out_dir);
  write_manifest(cfg, "register", seed, 1, out_dir);
  if (!o.fit_ok) throw Error("no-consensus", "no homography survived; see matches.json");

  // pull B into the A frame: the fit maps A points onto B points
  const Image b_in_a = warp_image(b, o.fit.h.inverse());
  Image overlay(a.rows, a.cols);
  for (size_t i = 0; i < overlay.data.size(); ++i)
    overlay.data[i] = 0.5 * a.data[i] + 0.5 * b_in_a.data[i];
  save_png_gray(overlay, (fs::path(out_dir) / "overlay.png").string());
  save_png_gray(b_in_a, (fs::path(out_dir) / "registered_b.png").string());

  json h = json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) h.push_back(o.fit.h.m(r, c));
  std::ofstream out(fs::path(out_dir) / "homography.json");
  out << json{{"homography", h}, {"inlier_count", o.fit.inlier_count}}.dump(2) << "\n";
}

int exit_code_for(const std::string& error_code) {
  if (error_code == "bad-config") return 2;
  if (error_code == "no-consensus" || error_code == "insufficient-matches") return 4;
  if (error_code == "io-error" || error_code == "unpaired-image" ||
      error_code == "shape-mismatch" || error_code == "bad-label-file" ||
      error_code == "image-too-small" || error_code == "bad-checkpoint" ||
      error_code == "bad-input-dims" || error_code == "unpaired-label")
    return 3;
  return 1;
}

}  // namespace xmatch
