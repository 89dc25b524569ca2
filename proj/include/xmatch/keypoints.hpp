#pragma once

#include <vector>

#include "xmatch/image.hpp"

namespace xmatch {

struct Keypoint {
  double u = 0.0;  // row
  double v = 0.0;  // col
  double score = 0.0;
};

using KeypointSet = std::vector<Keypoint>;

/// Greedy score-descending non-max suppression over a score map. Candidates
/// below `threshold` (or with non-positive score) are dropped; survivors
/// suppress later candidates within Chebyshev distance `radius`. Equal scores
/// break ties by (row, col), so the result is reproducible bit for bit.
/// max_points <= 0 means unlimited.
KeypointSet greedy_nms(const Image& score, double threshold, int radius, int max_points);

}  // namespace xmatch
