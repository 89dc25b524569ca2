#pragma once

#include <array>

#include "xmatch/geometry.hpp"
#include "xmatch/keypoints.hpp"
#include "xmatch/nn/tensor.hpp"

namespace xmatch {

/// H/8 x W/8 detector ground truth; 0..63 are in-cell positions (row-major),
/// 64 is the dustbin.
struct CellLabelGrid {
  int rows_c = 0;
  int cols_c = 0;
  std::vector<int> labels;

  int at(int h, int w) const { return labels[static_cast<size_t>(h) * cols_c + w]; }
  int& at(int h, int w) { return labels[static_cast<size_t>(h) * cols_c + w]; }
};

/// Binary relation between the cells of two images, row-major over
/// (cell_1, cell_2) with cells flattened h * W_c + w.
struct CorrespondenceMask {
  int cells = 0;  // H_c * W_c
  std::vector<char> s;

  char at(int cell1, int cell2) const { return s[static_cast<size_t>(cell1) * cells + cell2]; }
  char& at(int cell1, int cell2) { return s[static_cast<size_t>(cell1) * cells + cell2]; }
};

struct LossConfig {
  std::array<double, 65> class_weights;  // w_c; index 64 is the dustbin weight
  double lambda_d = 250.0;               // descriptor inner weight
  double m_p = 1.0;                      // positive hinge margin
  double m_n = 0.2;                      // negative hinge margin
  double lambda = 0.0001;                // descriptor term weight
  double gamma = 0.01;                   // homography term weight
  bool plain_mean = false;               // ablation: 1/(HcWc) mean instead of weighted mean

  LossConfig() { class_weights.fill(1.0); }

  void validate() const;
};

/// Keypoints to one-hot cell labels; multiple keypoints in a cell resolve by
/// a uniform draw. Pixel positions round to nearest; rounded positions
/// outside the frame raise "keypoint-out-of-bounds".
CellLabelGrid cells_from_keypoints(const KeypointSet& kps, int rows, int cols, Rng& rng);

/// Weighted multi-class cross-entropy over cells. With plain_mean the sum is
/// divided by the cell count; otherwise by the sum of applied weights.
/// If grad is non-null it receives d(loss)/d(logits).
double detector_loss(const nn::Tensor& logits, const CellLabelGrid& labels, const LossConfig& cfg,
                     nn::Tensor* grad = nullptr);

/// s = 1 iff the homography-warped center of cell (h, w) lies within
/// Euclidean distance 4 px of the center of cell (h', w').
CorrespondenceMask correspondence_mask(const Homography& h, int rows, int cols);

/// Hinge descriptor loss over all coarse cell pairs.
double descriptor_loss(const nn::Tensor& d1, const nn::Tensor& d2, const CorrespondenceMask& mask,
                       const LossConfig& cfg, nn::Tensor* grad1 = nullptr,
                       nn::Tensor* grad2 = nullptr);

/// Sum over the 4 corners of the squared displacement error.
double homography_loss(const FourPointDelta& pred, const FourPointDelta& gt);

/// Same loss on a flat prediction row [8]; grad_pred (if non-null) receives
/// d(loss)/d(pred).
double homography_loss_flat(const double* pred8, const FourPointDelta& gt, double* grad_pred = nullptr);

struct LossParts {
  double det_src = 0.0;
  double det_dst = 0.0;
  double desc = 0.0;
  double hom = 0.0;
};

/// L = L_p + L_p' + lambda * L_d + gamma * L_h. Non-finite parts raise
/// "nan-loss" naming the offending term.
double total_loss(const LossParts& parts, const LossConfig& cfg);

}  // namespace xmatch
