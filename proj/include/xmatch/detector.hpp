#pragma once

#include <functional>
#include <string>

#include "xmatch/image.hpp"

namespace xmatch {

/// Classical keypoint detector interface: image in, per-pixel score map in
/// [0, 1] out. Must be deterministic for a fixed image. Heavier multispectral
/// detectors plug in behind the same signature.
struct BaseDetector {
  std::string name;
  std::function<Image(const Image&)> detect;
};

/// Shi-Tomasi minimum-eigenvalue corner response, Gaussian-smoothed structure
/// tensor, normalized to [0, 1] by the map maximum.
BaseDetector corner_detector();

}  // namespace xmatch
