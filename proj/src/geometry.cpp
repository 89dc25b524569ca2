#include "xmatch/geometry.hpp"

#include <cmath>
#include <numbers>

namespace xmatch {

namespace {

constexpr double kEps = 1e-12;

Eigen::Matrix3d about_center(const Eigen::Matrix3d& m, double cu, double cv) {
  Eigen::Matrix3d to_origin = Eigen::Matrix3d::Identity();
  to_origin(0, 2) = -cu;
  to_origin(1, 2) = -cv;
  Eigen::Matrix3d back = Eigen::Matrix3d::Identity();
  back(0, 2) = cu;
  back(1, 2) = cv;
  return back * m * to_origin;
}

/// Reflect an integer index into [0, n), mirroring about the edge pixel
/// centers (period 2n - 2).
int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * n - 2;
  i = i % period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

}  // namespace

Homography Homography::translation(double du, double dv) {
  Homography h;
  h.m(0, 2) = du;
  h.m(1, 2) = dv;
  return h;
}

void Homography::canonicalize() {
  double fro = m.norm();
  if (fro < kEps) throw Error("degenerate-homography", "zero matrix");
  m /= fro;
  if (std::abs(m(2, 2)) > kEps) m /= m(2, 2);
}

bool Homography::invertible() const {
  Homography c = *this;
  c.canonicalize();
  return std::abs(c.m.determinant()) > kEps;
}

Homography Homography::inverse() const {
  if (!invertible()) throw Error("degenerate-homography", "non-invertible matrix");
  Homography h;
  h.m = m.inverse();
  h.canonicalize();
  return h;
}

Homography operator*(const Homography& a, const Homography& b) {
  Homography h;
  h.m = a.m * b.m;
  return h;
}

HomographySampleConfig HomographySampleConfig::training_defaults() {
  HomographySampleConfig c;
  c.translation_frac = 0.05;
  c.scale_frac = 0.20;
  c.rotation_deg = 90.0;
  c.perspective_frac = 0.20;
  c.center_crop_frac = 0.10;
  return c;
}

HomographySampleConfig HomographySampleConfig::eval_defaults() {
  HomographySampleConfig c;
  c.translation_frac = 0.05;
  c.scale_frac = 0.10;
  c.rotation_deg = 90.0;
  c.perspective_frac = 0.05;
  c.center_crop_frac = 0.0;
  return c;
}

void HomographySampleConfig::validate() const {
  auto frac_ok = [](double f) { return f >= 0.0 && f < 1.0; };
  if (!frac_ok(translation_frac) || !frac_ok(scale_frac) || !frac_ok(perspective_frac) ||
      !frac_ok(center_crop_frac))
    throw Error("bad-config", "sample fractions must lie in [0, 1)");
  if (rotation_deg < 0.0 || rotation_deg > 180.0)
    throw Error("bad-config", "rotation_deg must lie in [0, 180]");
  if (truncation <= 0.0) throw Error("bad-config", "truncation must be positive");
}

std::array<Pt, 4> image_corners(int rows, int cols) {
  const double h = rows - 1.0;
  const double w = cols - 1.0;
  return {Pt{0.0, 0.0}, Pt{0.0, w}, Pt{h, w}, Pt{h, 0.0}};
}

Homography sample_homography(const HomographySampleConfig& cfg, int rows, int cols, Rng& rng) {
  cfg.validate();
  if (rows <= 0 || cols <= 0) throw Error("bad-config", "image dims must be positive");

  const double cu = (rows - 1.0) / 2.0;
  const double cv = (cols - 1.0) / 2.0;
  // Sigma chosen so the truncation point coincides with the advertised range.
  auto draw = [&](double range) { return rng.truncated_normal(range / cfg.truncation, cfg.truncation); };

  for (int attempt = 0; attempt < 16; ++attempt) {
    // Fixed draw order: translation (du, dv), scale, rotation, perspective (pu, pv).
    const double du = draw(cfg.translation_frac * rows);
    const double dv = draw(cfg.translation_frac * cols);
    const double s = 1.0 + draw(cfg.scale_frac);
    const double theta = draw(cfg.rotation_deg) * std::numbers::pi / 180.0;
    const double pu = draw(cfg.perspective_frac);
    const double pv = draw(cfg.perspective_frac);

    Eigen::Matrix3d trans = Eigen::Matrix3d::Identity();
    trans(0, 2) = du;
    trans(1, 2) = dv;

    Eigen::Matrix3d scale = Eigen::Matrix3d::Identity();
    scale(0, 0) = scale(1, 1) = s;

    Eigen::Matrix3d rot = Eigen::Matrix3d::Identity();
    rot(0, 0) = std::cos(theta);
    rot(0, 1) = -std::sin(theta);
    rot(1, 0) = std::sin(theta);
    rot(1, 1) = std::cos(theta);

    // Symmetric keystone: the homogeneous scale varies linearly with the
    // centered coordinates so opposite corners distort oppositely.
    Eigen::Matrix3d persp = Eigen::Matrix3d::Identity();
    persp(2, 0) = pu * 2.0 / rows;
    persp(2, 1) = pv * 2.0 / cols;

    Eigen::Matrix3d crop = Eigen::Matrix3d::Identity();
    crop(0, 0) = crop(1, 1) = 1.0 - cfg.center_crop_frac;

    Homography h;
    h.m = about_center(crop, cu, cv) * about_center(persp, cu, cv) * about_center(rot, cu, cv) *
          about_center(scale, cu, cv) * about_center(trans, cu, cv);
    h.canonicalize();
    if (std::abs(h.m.determinant()) <= kEps) continue;

    bool corners_finite = true;
    for (const Pt& c : image_corners(rows, cols)) {
      const Eigen::Vector3d q = h.m * Eigen::Vector3d(c.u, c.v, 1.0);
      if (std::abs(q(2)) < kEps) {
        corners_finite = false;
        break;
      }
    }
    if (corners_finite) return h;
  }
  throw Error("degenerate-homography", "16 consecutive degenerate samples");
}

Pt warp_point(const Pt& p, const Homography& h) {
  const Eigen::Vector3d q = h.m * Eigen::Vector3d(p.u, p.v, 1.0);
  if (std::abs(q(2)) < kEps)
    throw Error("point-at-infinity",
                "point (" + std::to_string(p.u) + ", " + std::to_string(p.v) + ") maps to infinity");
  return Pt{q(0) / q(2), q(1) / q(2)};
}

std::vector<Pt> warp_points(const std::vector<Pt>& pts, const Homography& h) {
  std::vector<Pt> out;
  out.reserve(pts.size());
  for (const Pt& p : pts) out.push_back(warp_point(p, h));
  return out;
}

Image warp_image(const Image& img, const Homography& h) {
  if (img.empty()) throw Error("bad-input", "empty image");
  const Homography hinv = h.inverse();  // throws degenerate-homography
  Image out(img.rows, img.cols);
  for (int u = 0; u < img.rows; ++u) {
    for (int v = 0; v < img.cols; ++v) {
      const Eigen::Vector3d q = hinv.m * Eigen::Vector3d(u, v, 1.0);
      if (std::abs(q(2)) < kEps) {
        out.at(u, v) = 0.0;
        continue;
      }
      const double su = q(0) / q(2);
      const double sv = q(1) / q(2);
      const int u0 = static_cast<int>(std::floor(su));
      const int v0 = static_cast<int>(std::floor(sv));
      const double fu = su - u0;
      const double fv = sv - v0;
      const double p00 = img.at(reflect_index(u0, img.rows), reflect_index(v0, img.cols));
      const double p01 = img.at(reflect_index(u0, img.rows), reflect_index(v0 + 1, img.cols));
      const double p10 = img.at(reflect_index(u0 + 1, img.rows), reflect_index(v0, img.cols));
      const double p11 = img.at(reflect_index(u0 + 1, img.rows), reflect_index(v0 + 1, img.cols));
      out.at(u, v) = (1.0 - fu) * ((1.0 - fv) * p00 + fv * p01) + fu * ((1.0 - fv) * p10 + fv * p11);
    }
  }
  return out;
}

FourPointDelta four_point_from_matrix(const Homography& h, int rows, int cols) {
  if (!h.invertible()) throw Error("degenerate-homography", "non-invertible matrix");
  FourPointDelta d;
  const auto corners = image_corners(rows, cols);
  for (int i = 0; i < 4; ++i) {
    const Pt w = warp_point(corners[i], h);  // throws point-at-infinity
    d.deltas[i] = Pt{w.u - corners[i].u, w.v - corners[i].v};
  }
  return d;
}

Homography matrix_from_four_point(const FourPointDelta& d, int rows, int cols) {
  const auto corners = image_corners(rows, cols);
  std::vector<Pt> src(corners.begin(), corners.end());
  std::vector<Pt> dst(4);
  for (int i = 0; i < 4; ++i) dst[i] = Pt{corners[i].u + d.deltas[i].u, corners[i].v + d.deltas[i].v};

  // Reject quadrilaterals with three (near-)collinear corners.
  for (int i = 0; i < 4; ++i) {
    const Pt& a = dst[i];
    const Pt& b = dst[(i + 1) % 4];
    const Pt& c = dst[(i + 2) % 4];
    const double cross = (b.u - a.u) * (c.v - a.v) - (b.v - a.v) * (c.u - a.u);
    if (std::abs(cross) < 1e-9) throw Error("degenerate-correspondences", "collinear corners");
  }
  return dlt_homography(src, dst);
}

Homography dlt_homography(const std::vector<Pt>& a, const std::vector<Pt>& b) {
  const size_t n = a.size();
  if (n < 4 || b.size() != n)
    throw Error("degenerate-correspondences", "need at least 4 paired correspondences");

  // Hartley normalization of both point sets.
  auto normalizer = [](const std::vector<Pt>& pts) {
    double mu = 0.0, mv = 0.0;
    for (const Pt& p : pts) {
      mu += p.u;
      mv += p.v;
    }
    mu /= pts.size();
    mv /= pts.size();
    double mean_dist = 0.0;
    for (const Pt& p : pts) mean_dist += std::hypot(p.u - mu, p.v - mv);
    mean_dist /= pts.size();
    const double s = mean_dist > kEps ? std::numbers::sqrt2 / mean_dist : 1.0;
    Eigen::Matrix3d t = Eigen::Matrix3d::Identity();
    t(0, 0) = t(1, 1) = s;
    t(0, 2) = -s * mu;
    t(1, 2) = -s * mv;
    return t;
  };
  const Eigen::Matrix3d ta = normalizer(a);
  const Eigen::Matrix3d tb = normalizer(b);

  Eigen::MatrixXd A(2 * n, 9);
  for (size_t i = 0; i < n; ++i) {
    const Eigen::Vector3d p = ta * Eigen::Vector3d(a[i].u, a[i].v, 1.0);
    const Eigen::Vector3d q = tb * Eigen::Vector3d(b[i].u, b[i].v, 1.0);
    const double x1 = p(0), x2 = p(1);
    const double y1 = q(0), y2 = q(1);
    A.row(2 * i) << 0, 0, 0, -x1, -x2, -1, y2 * x1, y2 * x2, y2;
    A.row(2 * i + 1) << x1, x2, 1, 0, 0, 0, -y1 * x1, -y1 * x2, -y1;
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const Eigen::VectorXd hvec = svd.matrixV().col(8);
  Eigen::Matrix3d hn;
  hn << hvec(0), hvec(1), hvec(2), hvec(3), hvec(4), hvec(5), hvec(6), hvec(7), hvec(8);

  Homography h;
  h.m = tb.inverse() * hn * ta;
  h.canonicalize();
  if (std::abs(h.m.determinant()) <= kEps)
    throw Error("degenerate-correspondences", "solution is non-invertible");
  return h;
}

}  // namespace xmatch
