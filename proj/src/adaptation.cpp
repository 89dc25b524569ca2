#include "xmatch/adaptation.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "xmatch/error.hpp"

namespace xmatch {

void AdaptationConfig::validate() const {
  if (n_homographies < 1) throw Error("bad-config", "n_homographies must be >= 1");
  if (window_radius < 0) throw Error("bad-config", "window_radius must be >= 0");
  if (accept_threshold <= 0.0 || accept_threshold > 1.0)
    throw Error("bad-config", "accept_threshold must lie in (0, 1]");
  sample_cfg.validate();
}

Image detect_binary(const BaseDetector& detector, const Image& img, double det_threshold,
                    int nms_radius) {
  const Image score = detector.detect(img);
  Image out(score.rows, score.cols);
  for (const Keypoint& kp : greedy_nms(score, det_threshold, nms_radius, 0))
    out.at(static_cast<int>(kp.u), static_cast<int>(kp.v)) = 1.0;
  return out;
}

std::pair<Image, Image> windowed_accept(const Image& map_a, const Image& map_b, int window_radius) {
  if (!map_a.same_dims(map_b)) throw Error("shape-mismatch", "acceptance maps differ in dims");
  auto dilate = [window_radius](const Image& m) {
    if (window_radius == 0) return m;
    Image out(m.rows, m.cols);
    for (int u = 0; u < m.rows; ++u)
      for (int v = 0; v < m.cols; ++v) {
        double mx = 0.0;
        for (int uu = std::max(0, u - window_radius); uu <= std::min(m.rows - 1, u + window_radius);
             ++uu)
          for (int vv = std::max(0, v - window_radius); vv <= std::min(m.cols - 1, v + window_radius);
               ++vv)
            mx = std::max(mx, m.at(uu, vv));
        out.at(u, v) = mx;
      }
    return out;
  };
  const Image da = dilate(map_a);
  const Image db = dilate(map_b);
  Image out_a(map_a.rows, map_a.cols), out_b(map_a.rows, map_a.cols);
  for (size_t i = 0; i < map_a.data.size(); ++i) {
    out_a.data[i] = (map_a.data[i] > 0.0 && db.data[i] > 0.0) ? 1.0 : 0.0;
    out_b.data[i] = (map_b.data[i] > 0.0 && da.data[i] > 0.0) ? 1.0 : 0.0;
  }
  return {out_a, out_b};
}

namespace {

Image gaussian_blur(const Image& src, double sigma) {
  if (sigma <= 0.0) return src;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int d = -radius; d <= radius; ++d) {
    k[d + radius] = std::exp(-0.5 * d * d / (sigma * sigma));
    sum += k[d + radius];
  }
  for (double& x : k) x /= sum;
  auto clampi = [](int i, int hi) { return std::max(0, std::min(hi, i)); };
  Image tmp(src.rows, src.cols), out(src.rows, src.cols);
  for (int u = 0; u < src.rows; ++u)
    for (int v = 0; v < src.cols; ++v) {
      double acc = 0.0;
      for (int d = -radius; d <= radius; ++d) acc += k[d + radius] * src.at(u, clampi(v + d, src.cols - 1));
      tmp.at(u, v) = acc;
    }
  for (int u = 0; u < src.rows; ++u)
    for (int v = 0; v < src.cols; ++v) {
      double acc = 0.0;
      for (int d = -radius; d <= radius; ++d) acc += k[d + radius] * tmp.at(clampi(u + d, src.rows - 1), v);
      out.at(u, v) = acc;
    }
  return out;
}

/// One adaptation trial in the original (unwarped) frame.
Image adaptation_trial(const Image& img_a, const Image& img_b, const BaseDetector& detector,
                       const AdaptationConfig& cfg, const Homography& h, bool is_identity) {
  const Image wa = is_identity ? img_a : warp_image(img_a, h);
  const Image wb = is_identity ? img_b : warp_image(img_b, h);

  if (cfg.gaussian_mode) {
    const Image sa = detector.detect(wa);
    const Image sb = detector.detect(wb);
    Image prod(sa.rows, sa.cols);
    for (size_t i = 0; i < prod.data.size(); ++i) prod.data[i] = sa.data[i] * sb.data[i];
    return is_identity ? prod : warp_image(prod, h.inverse());
  }

  const Image ba = detect_binary(detector, wa, cfg.det_threshold, cfg.nms_radius);
  const Image bb = detect_binary(detector, wb, cfg.det_threshold, cfg.nms_radius);
  auto [acc_a, acc_b] = windowed_accept(ba, bb, cfg.window_radius);

  Image combined(acc_a.rows, acc_a.cols);
  for (size_t i = 0; i < combined.data.size(); ++i)
    combined.data[i] = std::max(acc_a.data[i], acc_b.data[i]);
  if (is_identity) return combined;

  // Sparse nearest-pixel splat of accepted locations back through h^-1;
  // out-of-frame points are dropped.
  const Homography hinv = h.inverse();
  Image out(combined.rows, combined.cols);
  for (int u = 0; u < combined.rows; ++u)
    for (int v = 0; v < combined.cols; ++v) {
      if (combined.at(u, v) <= 0.0) continue;
      Pt q;
      try {
        q = warp_point(Pt{static_cast<double>(u), static_cast<double>(v)}, hinv);
      } catch (const Error&) {
        continue;
      }
      const int qu = static_cast<int>(std::lround(q.u));
      const int qv = static_cast<int>(std::lround(q.v));
      if (qu >= 0 && qu < out.rows && qv >= 0 && qv < out.cols) out.at(qu, qv) = 1.0;
    }
  return out;
}

}  // namespace

Image run_adaptation(const Image& img_a, const Image& img_b, const BaseDetector& detector,
                     const AdaptationConfig& cfg, Rng& rng, int workers) {
  cfg.validate();
  if (!img_a.same_dims(img_b)) throw Error("shape-mismatch", "pair images differ in dims");

  // Sample every homography upfront so the draw sequence is independent of
  // worker scheduling. Trial 1 is always the identity.
  std::vector<Homography> hs(1, Homography::identity());
  for (int i = 1; i < cfg.n_homographies; ++i)
    hs.push_back(sample_homography(cfg.sample_cfg, img_a.rows, img_a.cols, rng));

  Image acc(img_a.rows, img_a.cols);
  workers = std::max(1, workers);
  for (int base = 0; base < cfg.n_homographies; base += workers) {
    const int chunk = std::min(workers, cfg.n_homographies - base);
    std::vector<Image> trial_maps(chunk);
    auto run_trial = [&](int j) {
      try {
        trial_maps[j] = adaptation_trial(img_a, img_b, detector, cfg, hs[base + j], base + j == 0);
      } catch (const Error&) {
        trial_maps[j] = Image(img_a.rows, img_a.cols);  // failed trial contributes zeros
      }
    };
    if (chunk == 1) {
      run_trial(0);
    } else {
      std::vector<std::thread> pool;
      for (int j = 0; j < chunk; ++j) pool.emplace_back(run_trial, j);
      for (auto& t : pool) t.join();
    }
    // Ordered reduction keeps the accumulator bit-identical across worker counts.
    for (int j = 0; j < chunk; ++j)
      for (size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += trial_maps[j].data[i];
  }

  for (double& x : acc.data) x /= cfg.n_homographies;
  if (cfg.gaussian_mode) {
    acc = gaussian_blur(acc, cfg.gaussian_sigma);
    double peak = 0.0;
    for (double x : acc.data) peak = std::max(peak, x);
    if (peak > 0.0)
      for (double& x : acc.data) x /= peak;
  }
  for (double& x : acc.data)
    if (x < cfg.accept_threshold) x = 0.0;
  return acc;
}

KeypointSet finalize_keypoints(const Image& map, int max_points) {
  KeypointSet out = greedy_nms(map, 0.0, 0, max_points);
  return out;
}

}  // namespace xmatch
