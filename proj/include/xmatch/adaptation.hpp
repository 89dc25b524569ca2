#pragma once

#include <utility>

#include "xmatch/detector.hpp"
#include "xmatch/geometry.hpp"
#include "xmatch/keypoints.hpp"

namespace xmatch {

struct AdaptationConfig {
  int n_homographies = 100;
  int window_radius = 2;  // Chebyshev; a 5x5 acceptance window
  double accept_threshold = 0.3;
  HomographySampleConfig sample_cfg = HomographySampleConfig::training_defaults();

  double det_threshold = 0.1;  // base-detector binarization threshold
  int nms_radius = 4;

  // Ablation: element-wise product of raw heatmaps with Gaussian smoothing
  // instead of windowed acceptance.
  bool gaussian_mode = false;
  double gaussian_sigma = 1.0;

  void validate() const;
};

/// Binarized detection map: 1 where the detector score survives greedy NMS
/// and the threshold, else 0. nms_radius <= 0 disables suppression.
Image detect_binary(const BaseDetector& detector, const Image& img, double det_threshold,
                    int nms_radius);

/// Cross-spectral windowed acceptance: a point of one map survives iff the
/// other map fires within Chebyshev distance window_radius.
std::pair<Image, Image> windowed_accept(const Image& map_a, const Image& map_b, int window_radius);

/// Improved multispectral homographic adaptation over an aligned pair.
/// Accumulates per-trial windowed acceptances across n_homographies random
/// warps (identity always included as trial 1), normalizes by the trial
/// count, and zeroes entries below accept_threshold. Deterministic under a
/// fixed rng seed for any worker count.
Image run_adaptation(const Image& img_a, const Image& img_b, const BaseDetector& detector,
                     const AdaptationConfig& cfg, Rng& rng, int workers = 1);

/// All nonzero locations of a finalized probability map as keypoints, score
/// descending, ties by (row, col), truncated to max_points (<= 0: unlimited).
KeypointSet finalize_keypoints(const Image& map, int max_points);

}  // namespace xmatch
