#include "xmatch/evaluation.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>

#include "json.hpp"
#include "xmatch/error.hpp"

namespace xmatch {

void CoarseAlignConfig::validate() const {
  if (rotation_range < 0.0 || rotation_range > 180.0)
    throw Error("bad-config", "rotation_range must be in [0, 180]");
  if (rotation_step <= 0.0) throw Error("bad-config", "rotation_step must be positive");
  if (scale_min <= 0.0 || scale_min > scale_max)
    throw Error("bad-config", "need 0 < scale_min <= scale_max");
  if (scale_step <= 0.0) throw Error("bad-config", "scale_step must be positive");
  if (translation_range < 0.0) throw Error("bad-config", "translation_range must be non-negative");
  if (translation_step <= 0.0) throw Error("bad-config", "translation_step must be positive");
  if (refine_rounds < 0) throw Error("bad-config", "refine_rounds must be non-negative");
}

void EvalConfig::validate() const {
  if (pixel_tolerance <= 0.0) throw Error("bad-config", "pixel_tolerance must be positive");
  if (epsilons.empty() || !std::is_sorted(epsilons.begin(), epsilons.end()))
    throw Error("bad-config", "epsilons must be non-empty and ascending");
  warp_cfg.validate();
  fit.validate();
  coarse.validate();
}

std::vector<WarpedEvalPair> make_eval_warps(const std::vector<AlignedPair>& pairs,
                                            const EvalConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  std::vector<WarpedEvalPair> out;
  out.reserve(pairs.size());
  for (const AlignedPair& p : pairs) {
    WarpedEvalPair w;
    w.id = p.id;
    w.h_gt = sample_homography(cfg.warp_cfg, p.image_b.rows, p.image_b.cols, rng);
    w.image_a = p.image_a;
    w.image_b = warp_image(p.image_b, w.h_gt);
    out.push_back(std::move(w));
  }
  return out;
}

namespace {

bool in_frame(const Pt& p, int rows, int cols) {
  return p.u >= 0.0 && p.u <= rows - 1 && p.v >= 0.0 && p.v <= cols - 1;
}

/// Keypoints that are in frame and whose image under h stays in frame,
/// returned as (own location, mapped location) pairs.
std::vector<std::pair<Pt, Pt>> overlap_points(const KeypointSet& kps, const Homography& h,
                                              int rows, int cols) {
  std::vector<std::pair<Pt, Pt>> out;
  for (const Keypoint& kp : kps) {
    const Pt own{kp.u, kp.v};
    if (!in_frame(own, rows, cols)) continue;
    try {
      const Pt mapped = warp_point(own, h);
      if (in_frame(mapped, rows, cols)) out.emplace_back(own, mapped);
    } catch (const Error&) {
      // mapped to infinity: outside any overlap
    }
  }
  return out;
}

double dist(const Pt& a, const Pt& b) { return std::hypot(a.u - b.u, a.v - b.v); }

}  // namespace

double repeatability(const KeypointSet& kp1, const KeypointSet& kp2, const Homography& h_gt,
                     int rows, int cols, double tol) {
  if (tol <= 0.0) throw Error("bad-config", "tolerance must be positive");
  const Homography h_inv = h_gt.inverse();
  const auto o1 = overlap_points(kp1, h_gt, rows, cols);
  const auto o2 = overlap_points(kp2, h_inv, rows, cols);
  if (o1.empty() && o2.empty()) return 0.0;

  int repeated = 0;
  for (const auto& [own, mapped] : o1)
    for (const auto& [other_own, other_mapped] : o2)
      if (dist(mapped, other_own) <= tol) {
        ++repeated;
        break;
      }
  for (const auto& [own, mapped] : o2)
    for (const auto& [other_own, other_mapped] : o1)
      if (dist(mapped, other_own) <= tol) {
        ++repeated;
        break;
      }
  return static_cast<double>(repeated) / static_cast<double>(o1.size() + o2.size());
}

double matching_score(const MatchSet& matches, const KeypointSet& kp1, const KeypointSet& kp2,
                      const Homography& h_gt, int rows, int cols, double tol) {
  if (tol <= 0.0) throw Error("bad-config", "tolerance must be positive");
  const size_t n1 = overlap_points(kp1, h_gt, rows, cols).size();
  const size_t n2 = overlap_points(kp2, h_gt.inverse(), rows, cols).size();
  if (n1 == 0 || n2 == 0) return 0.0;

  int correct = 0;
  for (const Match& m : matches) {
    const Keypoint& a = kp1[m.index_a];
    const Keypoint& b = kp2[m.index_b];
    try {
      if (dist(warp_point(Pt{a.u, a.v}, h_gt), Pt{b.u, b.v}) <= tol) ++correct;
    } catch (const Error&) {
      // point at infinity: incorrect match
    }
  }
  return 0.5 * (static_cast<double>(correct) / n1 + static_cast<double>(correct) / n2);
}

std::vector<double> corner_accuracy(const Homography& h_est, const Homography& h_gt, int rows,
                                    int cols, const std::vector<double>& epsilons) {
  const auto corners = image_corners(rows, cols);
  std::array<double, 4> err{};
  for (int i = 0; i < 4; ++i) {
    try {
      err[i] = dist(warp_point(corners[i], h_est), warp_point(corners[i], h_gt));
    } catch (const Error&) {
      err[i] = std::numeric_limits<double>::infinity();
    }
  }
  std::vector<double> acc(epsilons.size());
  for (size_t e = 0; e < epsilons.size(); ++e) {
    int ok = 0;
    for (double v : err) ok += v <= epsilons[e] ? 1 : 0;
    acc[e] = ok / 4.0;
  }
  return acc;
}

Homography similarity_about_center(double rot_deg, double scale, double du, double dv, int rows,
                                   int cols) {
  const double cu = (rows - 1) / 2.0, cv = (cols - 1) / 2.0;
  const double rad = rot_deg * M_PI / 180.0;
  const double c = scale * std::cos(rad), s = scale * std::sin(rad);
  Eigen::Matrix3d to_center, rot_scale, back;
  to_center << 1, 0, -cu, 0, 1, -cv, 0, 0, 1;
  rot_scale << c, -s, 0, s, c, 0, 0, 0, 1;
  back << 1, 0, cu + du, 0, 1, cv + dv, 0, 0, 1;
  return Homography{back * rot_scale * to_center};
}

Homography coarse_align_search(int rows, int cols, const AlignScoreFn& score,
                               const CoarseAlignConfig& cfg) {
  cfg.validate();
  double rot = 0.0, scl = 1.0, du = 0.0, dv = 0.0;
  double best = -std::numeric_limits<double>::infinity();
  const auto try_params = [&](double r, double s, double tu, double tv) {
    const double v = score(similarity_about_center(r, s, tu, tv, rows, cols));
    if (v > best) {
      best = v;
      rot = r;
      scl = s;
      du = tu;
      dv = tv;
    }
  };
  for (double r = -cfg.rotation_range; r <= cfg.rotation_range + 1e-9; r += cfg.rotation_step)
    try_params(r, scl, du, dv);
  for (double s = cfg.scale_min; s <= cfg.scale_max + 1e-9; s += cfg.scale_step)
    try_params(rot, s, du, dv);
  for (double t = -cfg.translation_range; t <= cfg.translation_range + 1e-9;
       t += cfg.translation_step)
    try_params(rot, scl, t, dv);
  for (double t = -cfg.translation_range; t <= cfg.translation_range + 1e-9;
       t += cfg.translation_step)
    try_params(rot, scl, du, t);
  // progressively finer sweeps around the incumbent
  const double r0 = rot, fine = cfg.rotation_step / 5.0;
  for (double r = r0 - 0.8 * cfg.rotation_step; r <= r0 + 0.8 * cfg.rotation_step + 1e-9; r += fine)
    try_params(r, scl, du, dv);
  const double s0 = scl;
  for (double s = s0 - cfg.scale_step; s <= s0 + cfg.scale_step + 1e-9; s += cfg.scale_step / 2.0)
    try_params(rot, s, du, dv);
  const double u0 = du, half_t = cfg.translation_step / 2.0;
  for (double t = u0 - cfg.translation_step; t <= u0 + cfg.translation_step + 1e-9; t += half_t)
    try_params(rot, scl, t, dv);
  const double v0 = dv;
  for (double t = v0 - cfg.translation_step; t <= v0 + cfg.translation_step + 1e-9; t += half_t)
    try_params(rot, scl, du, t);
  const double r1 = rot;
  for (double r = r1 - 1.5 * fine; r <= r1 + 1.5 * fine + 1e-9; r += fine / 2.0)
    try_params(r, scl, du, dv);
  return similarity_about_center(rot, scl, du, dv, rows, cols);
}

CoarseToFineResult coarse_to_fine_fit(const Detections& det_a, const Image& b,
                                      const DetectFn& detect, const AlignScoreFn& score,
                                      const CoarseAlignConfig& ccfg, const RobustFitConfig& fcfg,
                                      Rng& rng) {
  CoarseToFineResult res;
  res.h_coarse = coarse_align_search(b.rows, b.cols, score, ccfg);
  Homography hc = res.h_coarse;
  res.h = hc;
  double best_score = score(hc);
  for (int round = 0; round < ccfg.refine_rounds; ++round) {
    Rng round_rng(rng.raw());  // drawn every round so early exits stay deterministic
    MatchSet matches;
    KeypointSet kps_b;
    try {
      const Image unwarped = warp_image(b, hc.inverse());
      const Detections det_b = detect(unwarped);
      matches = mutual_nn_match(det_a.descs, det_b.descs);
      kps_b = det_b.kps;
      for (Keypoint& kp : kps_b) {
        const Pt mapped = warp_point(Pt{kp.u, kp.v}, hc);
        kp.u = mapped.u;
        kp.v = mapped.v;
      }
    } catch (const Error&) {
      break;  // degenerate incumbent; keep the best estimate so far
    }
    if (round == 0) {
      res.kps_b = kps_b;
      res.matches = matches;
      res.inliers.assign(matches.size(), 0);
    }
    RobustFitResult fit;
    try {
      fit = robust_homography(det_a.kps, kps_b, matches, fcfg, round_rng);
    } catch (const Error&) {
      break;
    }
    hc = fit.h;
    const double s = score(hc);
    if (s > best_score) {
      best_score = s;
      res.h = hc;
      res.kps_b = std::move(kps_b);
      res.matches = std::move(matches);
      res.inliers = std::move(fit.inliers);
      res.inlier_count = fit.inlier_count;
      res.refined = true;
    }
  }
  return res;
}

EvalReport run_protocol(const DetectFn& detect, const std::vector<WarpedEvalPair>& pairs,
                        const EvalConfig& cfg, const AlignScorerFactory& make_scorer) {
  cfg.validate();
  EvalReport report;
  report.epsilons = cfg.epsilons;

  // per-pair fit seeds drawn upfront so the report is order-independent
  Rng master(cfg.seed);
  std::vector<uint64_t> fit_seeds(pairs.size());
  for (uint64_t& s : fit_seeds) s = master.raw();

  for (size_t i = 0; i < pairs.size(); ++i) {
    const WarpedEvalPair& pair = pairs[i];
    const auto t0 = std::chrono::steady_clock::now();

    const Detections det_a = detect(pair.image_a);
    const Detections det_b = detect(pair.image_b);

    PairRecord rec;
    rec.id = pair.id;
    rec.keypoints_a = static_cast<int>(det_a.kps.size());
    rec.keypoints_b = static_cast<int>(det_b.kps.size());
    const int rows = pair.image_a.rows, cols = pair.image_a.cols;
    rec.repeatability =
        repeatability(det_a.kps, det_b.kps, pair.h_gt, rows, cols, cfg.pixel_tolerance);

    if (cfg.coarse.enabled && make_scorer) {
      const AlignScoreFn score = make_scorer(pair.image_a, pair.image_b);
      Rng fit_rng(fit_seeds[i]);
      const CoarseToFineResult ctf =
          coarse_to_fine_fit(det_a, pair.image_b, detect, score, cfg.coarse, cfg.fit, fit_rng);
      rec.matches = static_cast<int>(ctf.matches.size());
      rec.matching_score = matching_score(ctf.matches, det_a.kps, ctf.kps_b, pair.h_gt, rows, cols,
                                          cfg.pixel_tolerance);
      rec.fit_ok = true;
      rec.inliers = ctf.inlier_count;
      rec.corner_acc = corner_accuracy(ctf.h, pair.h_gt, rows, cols, cfg.epsilons);
    } else {
      const MatchSet matches = mutual_nn_match(det_a.descs, det_b.descs);
      rec.matches = static_cast<int>(matches.size());
      rec.matching_score =
          matching_score(matches, det_a.kps, det_b.kps, pair.h_gt, rows, cols, cfg.pixel_tolerance);
      try {
        Rng fit_rng(fit_seeds[i]);
        const RobustFitResult fit =
            robust_homography(det_a.kps, det_b.kps, matches, cfg.fit, fit_rng);
        rec.fit_ok = true;
        rec.inliers = fit.inlier_count;
        rec.corner_acc = corner_accuracy(fit.h, pair.h_gt, rows, cols, cfg.epsilons);
      } catch (const Error&) {
        rec.corner_acc.assign(cfg.epsilons.size(), 0.0);
      }
    }
    rec.runtime_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report.pairs.push_back(std::move(rec));
  }

  report.mean_corner_acc.assign(cfg.epsilons.size(), 0.0);
  for (const PairRecord& rec : report.pairs) {
    report.mean_repeatability += rec.repeatability;
    report.mean_matching_score += rec.matching_score;
    for (size_t e = 0; e < rec.corner_acc.size(); ++e)
      report.mean_corner_acc[e] += rec.corner_acc[e];
  }
  if (!report.pairs.empty()) {
    const double n = static_cast<double>(report.pairs.size());
    report.mean_repeatability /= n;
    report.mean_matching_score /= n;
    for (double& v : report.mean_corner_acc) v /= n;
  }
  return report;
}

void write_report_json(const EvalReport& report, const std::string& path) {
  nlohmann::json doc;
  doc["epsilons"] = report.epsilons;
  doc["mean_repeatability"] = report.mean_repeatability;
  doc["mean_matching_score"] = report.mean_matching_score;
  doc["mean_corner_accuracy"] = report.mean_corner_acc;
  auto& rows = doc["pairs"] = nlohmann::json::array();
  for (const PairRecord& rec : report.pairs) {
    rows.push_back({{"id", rec.id},
                    {"repeatability", rec.repeatability},
                    {"matching_score", rec.matching_score},
                    {"corner_accuracy", rec.corner_acc},
                    {"keypoints_a", rec.keypoints_a},
                    {"keypoints_b", rec.keypoints_b},
                    {"matches", rec.matches},
                    {"inliers", rec.inliers},
                    {"fit_ok", rec.fit_ok}});
  }
  std::ofstream out(path);
  if (!out) throw Error("io-error", "cannot write report " + path);
  out << doc.dump(2) << "\n";
}

void write_report_csv(const EvalReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("io-error", "cannot write report " + path);
  // wall-clock timings deliberately stay out of the report so reruns with the
  // same seed are byte-identical
  out << "id,repeatability,matching_score,keypoints_a,keypoints_b,matches,inliers,fit_ok";
  for (double e : report.epsilons) out << ",corner_acc_eps" << e;
  out << "\n";
  for (const PairRecord& rec : report.pairs) {
    out << rec.id << "," << rec.repeatability << "," << rec.matching_score << ","
        << rec.keypoints_a << "," << rec.keypoints_b << "," << rec.matches << "," << rec.inliers
        << "," << (rec.fit_ok ? 1 : 0);
    for (double v : rec.corner_acc) out << "," << v;
    out << "\n";
  }
}

}  // namespace xmatch
