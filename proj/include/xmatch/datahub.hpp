#pragma once

#include <string>
#include <vector>

#include "xmatch/geometry.hpp"
#include "xmatch/image.hpp"
#include "xmatch/keypoints.hpp"
#include "xmatch/losses.hpp"

namespace xmatch {

/// Co-registered same-scene images from two spectral bands.
struct AlignedPair {
  std::string id;
  Image image_a;
  Image image_b;
};

/// Loads `root/spectrum_a/*.png` and `root/spectrum_b/*.png`, matched by
/// filename and sorted by id. Throws "unpaired-image" for a file present on
/// one side only and "shape-mismatch" when a pair's dims differ.
std::vector<AlignedPair> load_dataset(const std::string& root);

/// Controls for the synthetic scene generator.
struct SynthStyle {
  int polygons = 6;
  int lines = 8;
  int blobs = 4;
  double noise_sigma = 0.01;
  int contrast_regions = 3;  // patches of spectrum B with reversed contrast
};

/// Deterministic synthetic multispectral pair: spectrum A is a rendered scene
/// (textured background, polygons, lines, blobs); spectrum B shares its
/// geometry but goes through value inversion + gamma, per-region contrast
/// reversal, mild blur, and noise.
AlignedPair synth_pair(uint64_t seed, int rows, int cols, const SynthStyle& style = {});

struct TrainSampleConfig {
  int crop = 256;  // multiple of 8
  HomographySampleConfig warp = HomographySampleConfig::training_defaults();
  double cross_spectrum_prob = 0.5;

  void validate() const;
};

struct TrainSample {
  Image src;
  Image dst;           // warped view of the (possibly other-spectrum) crop
  Homography h_gt;     // src crop coords -> dst crop coords
  CellLabelGrid labels_src;
  CellLabelGrid labels_dst;
  int src_spectrum = 0;  // 0 = A, 1 = B
  int dst_spectrum = 0;
  int crop_u = 0;  // crop origin in the pair frame
  int crop_v = 0;
};

/// One training example: shared random crop from both spectra, one side
/// warped by a sampled homography, pseudo-labels transformed into each frame
/// (out-of-frame points dropped). Throws "image-too-small" when the pair is
/// smaller than the crop.
TrainSample make_train_sample(const AlignedPair& pair, const KeypointSet& labels,
                              const TrainSampleConfig& cfg, Rng& rng);

/// Pseudo-label record persisted between the labeling and training stages.
struct LabelRecord {
  std::string id;
  int rows = 0;
  int cols = 0;
  KeypointSet keypoints;
};

void write_label_file(const LabelRecord& rec, const std::string& path);

/// Throws "bad-label-file" on malformed JSON and "io-error" on unreadable
/// files.
LabelRecord read_label_file(const std::string& path);

}  // namespace xmatch
