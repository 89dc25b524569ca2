#pragma once

#include <Eigen/Dense>
#include <array>
#include <vector>

#include "xmatch/error.hpp"
#include "xmatch/image.hpp"
#include "xmatch/random.hpp"

namespace xmatch {

/// Planar projective transform in pixel coordinates. The matrix acts on
/// homogeneous (u, v, 1) vectors with u = row, v = col.
struct Homography {
  Eigen::Matrix3d m = Eigen::Matrix3d::Identity();

  static Homography identity() { return Homography{}; }
  static Homography translation(double du, double dv);

  /// Fix the projective scale: m(2,2) = 1, falling back to unit Frobenius
  /// norm when m(2,2) is within 1e-12 of zero.
  void canonicalize();

  Homography inverse() const;
  double det() const { return m.determinant(); }
  bool invertible() const;
};

Homography operator*(const Homography& a, const Homography& b);

/// Corner displacements (du, dv) in pixels, corner order TL, TR, BR, BL
/// of the source image rectangle. This order is global: the homography
/// head output and the 4-point loss use the same one.
struct FourPointDelta {
  std::array<Pt, 4> deltas{};
};

struct HomographySampleConfig {
  double translation_frac = 0.0;  // +- fraction of image size
  double scale_frac = 0.0;        // +- fraction
  double rotation_deg = 0.0;      // +- degrees
  double perspective_frac = 0.0;  // +- fraction of width/height
  double center_crop_frac = 0.0;  // root center crop fraction
  double truncation = 2.0;        // normal truncated at +-truncation sigma

  /// Training-time ranges: translation +-5%, scale +-20%, rotation +-90deg,
  /// perspective +-20%, with a 10% root center crop.
  static HomographySampleConfig training_defaults();
  /// Evaluation ranges: translation +-5%, scale +-10%, rotation +-90deg,
  /// perspective +-5%.
  static HomographySampleConfig eval_defaults();

  void validate() const;
};

/// Image corners in the fixed TL, TR, BR, BL order.
std::array<Pt, 4> image_corners(int rows, int cols);

/// Random homography composed as crop * perspective * rotation * scale *
/// translation (translation acts first on points). Every parameter is an
/// independent truncated-normal draw; the draw order is fixed, so a fixed
/// seed gives a bit-identical matrix.
Homography sample_homography(const HomographySampleConfig& cfg, int rows, int cols, Rng& rng);

Pt warp_point(const Pt& p, const Homography& h);
std::vector<Pt> warp_points(const std::vector<Pt>& pts, const Homography& h);

/// Inverse-mapped bilinear warp with reflected border reads. Output has the
/// input's dims.
Image warp_image(const Image& img, const Homography& h);

FourPointDelta four_point_from_matrix(const Homography& h, int rows, int cols);

/// Exact homography through the four displaced corners via normalized DLT.
Homography matrix_from_four_point(const FourPointDelta& d, int rows, int cols);

/// Normalized DLT least-squares fit over n >= 4 correspondences a[i] -> b[i].
Homography dlt_homography(const std::vector<Pt>& a, const std::vector<Pt>& b);

}  // namespace xmatch
