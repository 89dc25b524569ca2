#pragma once

#include <functional>
#include <string>
#include <vector>

#include "xmatch/datahub.hpp"
#include "xmatch/geometry.hpp"
#include "xmatch/matching.hpp"

namespace xmatch {

/// Coarse-to-fine registration: a grid + coordinate-descent search over
/// center similarities (rotation, scale, translation) maximizing an
/// alignment score, followed by refine_rounds of re-detect / re-match /
/// robust refit on the coarsely unwarped image. Large rotations defeat
/// plain descriptor matching; the search brings the residual warp inside
/// matching's working range.
struct CoarseAlignConfig {
  bool enabled = false;
  double rotation_range = 90.0;  // degrees, +- extent of the coarse grid
  double rotation_step = 5.0;
  double scale_min = 0.85;
  double scale_max = 1.18;
  double scale_step = 0.03;
  double translation_range = 8.0;  // px
  double translation_step = 2.0;
  int refine_rounds = 3;

  void validate() const;
};

struct EvalConfig {
  double pixel_tolerance = 5.0;
  std::vector<double> epsilons = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  HomographySampleConfig warp_cfg = HomographySampleConfig::eval_defaults();
  uint64_t seed = 0;
  RobustFitConfig fit;
  CoarseAlignConfig coarse;

  void validate() const;
};

/// Evaluation instance: spectrum A kept fixed, spectrum B warped by h_gt
/// (A-frame point p corresponds to h_gt * p in the warped B frame).
struct WarpedEvalPair {
  std::string id;
  Image image_a;
  Image image_b;  // warped
  Homography h_gt;
};

std::vector<WarpedEvalPair> make_eval_warps(const std::vector<AlignedPair>& pairs,
                                            const EvalConfig& cfg);

/// Symmetric repeatability: restrict both sets to the overlap (own location
/// in frame and mapped location in frame); a point is repeated when the
/// other restricted set has a point within `tol` of its mapped location;
/// ratio = (repeated_1 + repeated_2) / (n_1 + n_2), 0 when both empty.
double repeatability(const KeypointSet& kp1, const KeypointSet& kp2, const Homography& h_gt,
                     int rows, int cols, double tol);

/// Mean over both directions of correct matches / keypoints in overlap;
/// a match is correct when |h_gt * p1 - p2| <= tol. 0 when either
/// denominator is 0.
double matching_score(const MatchSet& matches, const KeypointSet& kp1, const KeypointSet& kp2,
                      const Homography& h_gt, int rows, int cols, double tol);

/// Fraction of the 4 image corners whose h_est and h_gt images are within
/// each epsilon; a corner mapped to infinity fails every epsilon.
std::vector<double> corner_accuracy(const Homography& h_est, const Homography& h_gt, int rows,
                                    int cols, const std::vector<double>& epsilons);

/// One side of an evaluation pair: keypoints plus their descriptors.
struct Detections {
  KeypointSet kps;
  std::vector<Descriptor> descs;
};

using DetectFn = std::function<Detections(const Image&)>;

/// Alignment quality of a candidate homography h (a-frame -> b-frame);
/// larger is better. Implementations typically unwarp B by h and compare
/// dense appearance against A.
using AlignScoreFn = std::function<double(const Homography& h_ab)>;

/// Builds a per-pair scorer; lets expensive per-A state (e.g. a dense
/// descriptor map) be computed once per pair.
using AlignScorerFactory = std::function<AlignScoreFn(const Image& a, const Image& b)>;

/// Similarity transform about the image center: rotate by rot_deg, scale,
/// then translate by (du, dv), in (u, v, 1) coordinates.
Homography similarity_about_center(double rot_deg, double scale, double du, double dv, int rows,
                                   int cols);

/// Coordinate-descent maximization of `score` over center similarities:
/// a coarse rotation grid, then scale, translation, and progressively finer
/// sweeps. Deterministic; cost is one score call per grid point.
Homography coarse_align_search(int rows, int cols, const AlignScoreFn& score,
                               const CoarseAlignConfig& cfg);

/// Outcome of the two-stage (coarse search + matched refit) estimation.
/// kps_b / matches / inlier mask belong to the refine round that produced
/// the selected homography; when no refit beat the coarse score the round-0
/// matches are reported with an all-zero inlier mask.
struct CoarseToFineResult {
  Homography h;          // selected estimate, a-frame -> b-frame
  Homography h_coarse;   // similarity found by the search
  KeypointSet kps_b;     // detections on the unwarped image, mapped back to the b frame
  MatchSet matches;
  std::vector<char> inliers;
  int inlier_count = 0;
  bool refined = false;  // true when a refit round won the score selection
};

CoarseToFineResult coarse_to_fine_fit(const Detections& det_a, const Image& b,
                                      const DetectFn& detect, const AlignScoreFn& score,
                                      const CoarseAlignConfig& ccfg, const RobustFitConfig& fcfg,
                                      Rng& rng);

struct PairRecord {
  std::string id;
  double repeatability = 0.0;
  double matching_score = 0.0;
  std::vector<double> corner_acc;  // per epsilon
  int keypoints_a = 0;
  int keypoints_b = 0;
  int matches = 0;
  int inliers = 0;
  bool fit_ok = false;
  double runtime_s = 0.0;
};

struct EvalReport {
  std::vector<double> epsilons;
  std::vector<PairRecord> pairs;
  double mean_repeatability = 0.0;
  double mean_matching_score = 0.0;
  std::vector<double> mean_corner_acc;  // per epsilon
};

/// Full protocol: detect on both sides, mutual-NN match, robust fit, all
/// three metrics; a failed fit scores 0 corner accuracy at every epsilon.
/// Deterministic under cfg.seed. When cfg.coarse.enabled and a scorer
/// factory is supplied, the homography estimate (and the matches feeding the
/// matching score) come from coarse_to_fine_fit; repeatability always uses
/// the direct detections on both original images.
EvalReport run_protocol(const DetectFn& detect, const std::vector<WarpedEvalPair>& pairs,
                        const EvalConfig& cfg, const AlignScorerFactory& make_scorer = {});

void write_report_json(const EvalReport& report, const std::string& path);
void write_report_csv(const EvalReport& report, const std::string& path);

}  // namespace xmatch
