#pragma once

#include <vector>

#include "xmatch/geometry.hpp"
#include "xmatch/image.hpp"
#include "xmatch/keypoints.hpp"
#include "xmatch/nn/tensor.hpp"

namespace xmatch {

using Descriptor = std::vector<double>;

struct Match {
  int index_a = 0;
  int index_b = 0;
  double distance = 0.0;  // Euclidean descriptor distance
};

/// Mutual-nearest-neighbor matches; each index appears at most once per side.
using MatchSet = std::vector<Match>;

struct RobustFitConfig {
  enum class Scoring { kInlierCount, kTruncatedQuality };

  double reproj_threshold = 2.0;
  int max_iterations = 2000;
  double confidence = 0.995;
  int min_matches = 4;
  Scoring scoring = Scoring::kInlierCount;

  void validate() const;
};

struct RobustFitResult {
  Homography h;                // maps a-frame points onto b-frame points
  std::vector<char> inliers;   // one flag per input match
  int inlier_count = 0;
};

/// Heatmap -> discrete keypoints: threshold, greedy score-descending NMS
/// (Chebyshev radius), keep the top max_points. nms_radius 0 disables
/// suppression; max_points <= 0 means unlimited.
KeypointSet extract_keypoints(const Image& heatmap, double det_threshold, int nms_radius,
                              int max_points);

/// Bilinear lookup of a dense [D, H, W] descriptor field at each keypoint,
/// re-normalized to unit L2. Samples clamp to the border; keypoints outside
/// the frame raise "keypoint-out-of-bounds".
std::vector<Descriptor> sample_descriptors(const nn::Tensor& dense, const KeypointSet& kps);

/// Bidirectional nearest-neighbor matching on Euclidean distance with a
/// lower-index tie-break. Either side empty yields an empty MatchSet.
MatchSet mutual_nn_match(const std::vector<Descriptor>& da, const std::vector<Descriptor>& db);

/// Hypothesize-and-verify homography fit over the matched keypoints:
/// 4-point minimal samples solved by normalized DLT, scored either by inlier
/// count at reproj_threshold or by a truncated-quadratic quality, then refit
/// on all inliers. Deterministic given the rng state.
/// Throws "insufficient-matches" below cfg.min_matches and "no-consensus"
/// when no hypothesis reaches 4 inliers.
RobustFitResult robust_homography(const KeypointSet& kpa, const KeypointSet& kpb,
                                  const MatchSet& matches, const RobustFitConfig& cfg, Rng& rng);

}  // namespace xmatch
