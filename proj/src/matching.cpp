#include "xmatch/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "xmatch/error.hpp"

namespace xmatch {

void RobustFitConfig::validate() const {
  if (reproj_threshold <= 0.0) throw Error("bad-config", "reproj_threshold must be positive");
  if (max_iterations <= 0) throw Error("bad-config", "max_iterations must be positive");
  if (confidence < 0.0 || confidence >= 1.0) throw Error("bad-config", "confidence must be in [0,1)");
  if (min_matches < 4) throw Error("bad-config", "min_matches must be at least 4");
}

KeypointSet extract_keypoints(const Image& heatmap, double det_threshold, int nms_radius,
                              int max_points) {
  return greedy_nms(heatmap, det_threshold, nms_radius, max_points);
}

std::vector<Descriptor> sample_descriptors(const nn::Tensor& dense, const KeypointSet& kps) {
  if (dense.shape.size() != 3) throw Error("shape-mismatch", "expected a [D, H, W] field");
  const int d = dense.shape[0], rows = dense.shape[1], cols = dense.shape[2];
  auto at = [&](int c, int u, int v) {
    return dense.data[(static_cast<size_t>(c) * rows + u) * cols + v];
  };

  std::vector<Descriptor> out;
  out.reserve(kps.size());
  for (const Keypoint& kp : kps) {
    if (kp.u < 0.0 || kp.u > rows - 1 || kp.v < 0.0 || kp.v > cols - 1)
      throw Error("keypoint-out-of-bounds", "keypoint outside the descriptor field");
    const int u0 = std::min(static_cast<int>(std::floor(kp.u)), rows - 1);
    const int v0 = std::min(static_cast<int>(std::floor(kp.v)), cols - 1);
    const int u1 = std::min(u0 + 1, rows - 1);
    const int v1 = std::min(v0 + 1, cols - 1);
    const double fu = kp.u - u0, fv = kp.v - v0;

    Descriptor vec(d);
    double sq = 0.0;
    for (int c = 0; c < d; ++c) {
      const double val = (1.0 - fu) * ((1.0 - fv) * at(c, u0, v0) + fv * at(c, u0, v1)) +
                         fu * ((1.0 - fv) * at(c, u1, v0) + fv * at(c, u1, v1));
      vec[c] = val;
      sq += val * val;
    }
    const double inv = 1.0 / std::sqrt(sq + 1e-16);
    for (double& v : vec) v *= inv;
    out.push_back(std::move(vec));
  }
  return out;
}

namespace {

double sq_dist(const Descriptor& a, const Descriptor& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

/// Index of the nearest row of `set` to `query`; strict < keeps the lowest
/// index on exact ties.
int argmin_dist(const Descriptor& query, const std::vector<Descriptor>& set) {
  int best = 0;
  double best_d = sq_dist(query, set[0]);
  for (size_t j = 1; j < set.size(); ++j) {
    const double d = sq_dist(query, set[j]);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(j);
    }
  }
  return best;
}

}  // namespace

MatchSet mutual_nn_match(const std::vector<Descriptor>& da, const std::vector<Descriptor>& db) {
  MatchSet out;
  if (da.empty() || db.empty()) return out;
  if (da[0].size() != db[0].size()) throw Error("shape-mismatch", "descriptor lengths differ");

  std::vector<int> b_to_a(db.size());
  for (size_t j = 0; j < db.size(); ++j) b_to_a[j] = argmin_dist(db[j], da);

  for (size_t i = 0; i < da.size(); ++i) {
    const int j = argmin_dist(da[i], db);
    if (b_to_a[j] == static_cast<int>(i))
      out.push_back({static_cast<int>(i), j, std::sqrt(sq_dist(da[i], db[j]))});
  }
  return out;
}

namespace {

struct Correspondences {
  std::vector<Pt> a, b;
};

/// Squared reprojection errors of every correspondence under h; points mapped
/// to infinity score +inf.
std::vector<double> reproj_sq_errors(const Correspondences& c, const Homography& h) {
  std::vector<double> err(c.a.size(), std::numeric_limits<double>::infinity());
  for (size_t i = 0; i < c.a.size(); ++i) {
    try {
      const Pt p = warp_point(c.a[i], h);
      const double du = p.u - c.b[i].u, dv = p.v - c.b[i].v;
      err[i] = du * du + dv * dv;
    } catch (const Error&) {
      // leave +inf
    }
  }
  return err;
}

}  // namespace

RobustFitResult robust_homography(const KeypointSet& kpa, const KeypointSet& kpb,
                                  const MatchSet& matches, const RobustFitConfig& cfg, Rng& rng) {
  cfg.validate();
  const int n = static_cast<int>(matches.size());
  if (n < cfg.min_matches)
    throw Error("insufficient-matches",
                std::to_string(n) + " matches, need " + std::to_string(cfg.min_matches));

  Correspondences corr;
  corr.a.reserve(matches.size());
  corr.b.reserve(matches.size());
  for (const Match& m : matches) {
    if (m.index_a < 0 || m.index_a >= static_cast<int>(kpa.size()) || m.index_b < 0 ||
        m.index_b >= static_cast<int>(kpb.size()))
      throw Error("bad-input", "match index outside the keypoint sets");
    corr.a.push_back({kpa[m.index_a].u, kpa[m.index_a].v});
    corr.b.push_back({kpb[m.index_b].u, kpb[m.index_b].v});
  }

  const double t2 = cfg.reproj_threshold * cfg.reproj_threshold;
  const bool truncated = cfg.scoring == RobustFitConfig::Scoring::kTruncatedQuality;

  Homography best_h;
  double best_score = -1.0;
  int best_inliers = 0;
  bool have_model = false;
  int budget = cfg.max_iterations;

  for (int it = 0; it < budget; ++it) {
    // 4 distinct match indices
    int pick[4];
    for (int k = 0; k < 4;) {
      const int c = rng.uniform_int(0, n - 1);
      bool dup = false;
      for (int j = 0; j < k; ++j) dup |= pick[j] == c;
      if (!dup) pick[k++] = c;
    }
    Homography h;
    try {
      std::vector<Pt> sa, sb;
      for (int k = 0; k < 4; ++k) {
        sa.push_back(corr.a[pick[k]]);
        sb.push_back(corr.b[pick[k]]);
      }
      h = dlt_homography(sa, sb);
    } catch (const Error&) {
      continue;  // degenerate minimal sample
    }

    const std::vector<double> err = reproj_sq_errors(corr, h);
    int inliers = 0;
    double score = 0.0;
    for (double e : err) {
      if (e <= t2) {
        ++inliers;
        score += truncated ? 1.0 - e / t2 : 1.0;
      }
    }
    if (score > best_score) {
      best_score = score;
      best_inliers = inliers;
      best_h = h;
      have_model = true;
      // adaptive stop: enough iterations for the observed inlier ratio
      const double w = static_cast<double>(inliers) / n;
      const double p_good = w * w * w * w;
      if (p_good > 0.0 && cfg.confidence > 0.0) {
        const double denom = std::log(std::max(1e-12, 1.0 - p_good));
        if (denom < 0.0) {
          const int need =
              static_cast<int>(std::ceil(std::log(1.0 - cfg.confidence) / denom));
          budget = std::clamp(need, it + 1, cfg.max_iterations);
        }
      }
    }
  }

  if (!have_model || best_inliers < 4)
    throw Error("no-consensus", "no hypothesis reached 4 inliers");

  // least-squares refit on the consensus set, annealing the threshold so a
  // stray outlier that fell just inside it cannot drag the final model
  Homography final_h = best_h;
  for (const double f : {1.0, 0.5, 0.25}) {
    const std::vector<double> e = reproj_sq_errors(corr, final_h);
    std::vector<Pt> in_a, in_b;
    for (int i = 0; i < n; ++i)
      if (e[i] <= t2 * f * f) {
        in_a.push_back(corr.a[i]);
        in_b.push_back(corr.b[i]);
      }
    if (in_a.size() < 4) break;
    try {
      final_h = dlt_homography(in_a, in_b);
    } catch (const Error&) {
      break;  // keep the last good model
    }
  }

  RobustFitResult res;
  res.h = final_h;
  res.h.canonicalize();
  const std::vector<double> err = reproj_sq_errors(corr, res.h);
  res.inliers.assign(n, 0);
  for (int i = 0; i < n; ++i)
    if (err[i] <= t2) {
      res.inliers[i] = 1;
      ++res.inlier_count;
    }
  return res;
}

}  // namespace xmatch
