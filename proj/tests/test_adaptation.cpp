#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "xmatch/adaptation.hpp"

using namespace xmatch;

namespace {

Image random_image(int rows, int cols, Rng& rng) {
  Image img(rows, cols);
  for (double& x : img.data) x = rng.uniform(0, 1);
  return img;
}

// ---- straight-line reference implementation of the adaptation procedure ----

Image ref_detect_binary(const BaseDetector& det, const Image& img, double thresh, int nms_radius) {
  const Image score = det.detect(img);
  struct C {
    int u, v;
    double s;
  };
  std::vector<C> cands;
  for (int u = 0; u < score.rows; ++u)
    for (int v = 0; v < score.cols; ++v)
      if (score.at(u, v) > 0.0 && score.at(u, v) >= thresh) cands.push_back({u, v, score.at(u, v)});
  std::sort(cands.begin(), cands.end(), [](const C& a, const C& b) {
    if (a.s != b.s) return a.s > b.s;
    if (a.u != b.u) return a.u < b.u;
    return a.v < b.v;
  });
  Image out(score.rows, score.cols);
  std::vector<C> kept;
  for (const C& c : cands) {
    bool blocked = false;
    for (const C& k : kept)
      if (std::max(std::abs(k.u - c.u), std::abs(k.v - c.v)) <= nms_radius) blocked = true;
    if (!blocked) {
      kept.push_back(c);
      out.at(c.u, c.v) = 1.0;
    }
  }
  return out;
}

Image ref_adaptation(const Image& a, const Image& b, const BaseDetector& det,
                     const AdaptationConfig& cfg, uint64_t seed) {
  Rng rng(seed);
  std::vector<Homography> hs(1, Homography::identity());
  for (int i = 1; i < cfg.n_homographies; ++i)
    hs.push_back(sample_homography(cfg.sample_cfg, a.rows, a.cols, rng));

  Image acc(a.rows, a.cols);
  for (int t = 0; t < cfg.n_homographies; ++t) {
    const Image wa = t == 0 ? a : warp_image(a, hs[t]);
    const Image wb = t == 0 ? b : warp_image(b, hs[t]);
    const Image ba = ref_detect_binary(det, wa, cfg.det_threshold, cfg.nms_radius);
    const Image bb = ref_detect_binary(det, wb, cfg.det_threshold, cfg.nms_radius);

    // windowed acceptance via all-pairs double loop
    Image aa(a.rows, a.cols), ab(a.rows, a.cols);
    for (int u = 0; u < a.rows; ++u)
      for (int v = 0; v < a.cols; ++v) {
        if (ba.at(u, v) > 0.0) {
          for (int uu = 0; uu < a.rows; ++uu)
            for (int vv = 0; vv < a.cols; ++vv)
              if (bb.at(uu, vv) > 0.0 &&
                  std::max(std::abs(uu - u), std::abs(vv - v)) <= cfg.window_radius)
                aa.at(u, v) = 1.0;
        }
        if (bb.at(u, v) > 0.0) {
          for (int uu = 0; uu < a.rows; ++uu)
            for (int vv = 0; vv < a.cols; ++vv)
              if (ba.at(uu, vv) > 0.0 &&
                  std::max(std::abs(uu - u), std::abs(vv - v)) <= cfg.window_radius)
                ab.at(u, v) = 1.0;
        }
      }

    Image trial(a.rows, a.cols);
    const Homography hinv = hs[t].inverse();
    for (int u = 0; u < a.rows; ++u)
      for (int v = 0; v < a.cols; ++v) {
        if (std::max(aa.at(u, v), ab.at(u, v)) <= 0.0) continue;
        if (t == 0) {
          trial.at(u, v) = 1.0;
          continue;
        }
        const Pt q = warp_point(Pt{double(u), double(v)}, hinv);
        const int qu = int(std::lround(q.u)), qv = int(std::lround(q.v));
        if (qu >= 0 && qu < a.rows && qv >= 0 && qv < a.cols) trial.at(qu, qv) = 1.0;
      }
    for (size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += trial.data[i];
  }
  for (double& x : acc.data) {
    x /= cfg.n_homographies;
    if (x < cfg.accept_threshold) x = 0.0;
  }
  return acc;
}

}  // namespace

TEST_CASE("detect_binary: flat image has no corners") {
  Image flat(32, 32, 0.5);
  const Image out = detect_binary(corner_detector(), flat, 0.1, 4);
  for (double x : out.data) CHECK(x == 0.0);
}

TEST_CASE("detect_binary: white square responds at its corners") {
  Image img(32, 32, 0.0);
  for (int u = 10; u <= 21; ++u)
    for (int v = 10; v <= 21; ++v) img.at(u, v) = 1.0;
  const Image out = detect_binary(corner_detector(), img, 0.5, 4);
  int fired = 0;
  for (int u = 0; u < 32; ++u)
    for (int v = 0; v < 32; ++v)
      if (out.at(u, v) > 0.0) {
        ++fired;
        // every detection sits near one of the 4 square corners
        bool near = false;
        for (int cu : {10, 21})
          for (int cv : {10, 21})
            if (std::max(std::abs(u - cu), std::abs(v - cv)) <= 2) near = true;
        CHECK(near);
      }
  CHECK(fired == 4);
}

TEST_CASE("detect_binary: zero threshold with NMS disabled equals positive-score mask") {
  Rng rng(5);
  const Image img = random_image(24, 24, rng);
  const auto det = corner_detector();
  const Image score = det.detect(img);
  const Image out = detect_binary(det, img, 0.0, 0);
  for (size_t i = 0; i < out.data.size(); ++i) CHECK(out.data[i] == (score.data[i] > 0.0 ? 1.0 : 0.0));
}

TEST_CASE("windowed_accept: identical maps pass through at any radius") {
  Rng rng(6);
  Image m(16, 16);
  for (double& x : m.data) x = rng.uniform(0, 1) > 0.9 ? 1.0 : 0.0;
  for (int r : {0, 1, 3}) {
    auto [a, b] = windowed_accept(m, m, r);
    CHECK(a.data == m.data);
    CHECK(b.data == m.data);
  }
}

TEST_CASE("windowed_accept: Chebyshev radius boundary") {
  Image a(32, 32), b(32, 32);
  a.at(10, 10) = 1.0;
  b.at(12, 10) = 1.0;
  {
    auto [oa, ob] = windowed_accept(a, b, 2);
    CHECK(oa.at(10, 10) == 1.0);
    CHECK(ob.at(12, 10) == 1.0);
  }
  {
    auto [oa, ob] = windowed_accept(a, b, 1);
    for (double x : oa.data) CHECK(x == 0.0);
    for (double x : ob.data) CHECK(x == 0.0);
  }
}

TEST_CASE("windowed_accept: shape mismatch raises") {
  CHECK_THROWS_WITH_AS(windowed_accept(Image(4, 4), Image(4, 5), 1), doctest::Contains("shape-mismatch"),
                       Error);
}

TEST_CASE("windowed_accept: equals brute-force pairwise oracle") {
  Rng rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    Image a(32, 32), b(32, 32);
    for (double& x : a.data) x = rng.uniform(0, 1) > 0.92 ? 1.0 : 0.0;
    for (double& x : b.data) x = rng.uniform(0, 1) > 0.92 ? 1.0 : 0.0;
    for (int r = 0; r <= 3; ++r) {
      auto [oa, ob] = windowed_accept(a, b, r);
      for (int u = 0; u < 32; ++u)
        for (int v = 0; v < 32; ++v) {
          bool hit_b = false, hit_a = false;
          for (int uu = 0; uu < 32; ++uu)
            for (int vv = 0; vv < 32; ++vv) {
              if (std::max(std::abs(uu - u), std::abs(vv - v)) > r) continue;
              hit_b = hit_b || b.at(uu, vv) > 0.0;
              hit_a = hit_a || a.at(uu, vv) > 0.0;
            }
          CHECK(oa.at(u, v) == ((a.at(u, v) > 0.0 && hit_b) ? 1.0 : 0.0));
          CHECK(ob.at(u, v) == ((b.at(u, v) > 0.0 && hit_a) ? 1.0 : 0.0));
        }
    }
  }
}

TEST_CASE("run_adaptation: identity-only trial on identical images reduces to detect_binary") {
  Rng img_rng(8);
  const Image img = random_image(24, 24, img_rng);
  AdaptationConfig cfg;
  cfg.n_homographies = 1;
  cfg.window_radius = 0;
  cfg.accept_threshold = 1.0;
  Rng rng(1);
  const Image out = run_adaptation(img, img, corner_detector(), cfg, rng);
  const Image expect = detect_binary(corner_detector(), img, cfg.det_threshold, cfg.nms_radius);
  CHECK(out.data == expect.data);
}

TEST_CASE("run_adaptation: bit-identical to straight-line reference on 20 seeded pairs") {
  AdaptationConfig cfg;
  cfg.n_homographies = 5;
  cfg.window_radius = 1;
  cfg.accept_threshold = 0.3;
  cfg.det_threshold = 0.05;
  cfg.nms_radius = 2;
  const auto det = corner_detector();
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng img_rng(1000 + seed);
    const Image a = random_image(16, 16, img_rng);
    const Image b = random_image(16, 16, img_rng);
    Rng rng(seed);
    const Image got = run_adaptation(a, b, det, cfg, rng);
    const Image want = ref_adaptation(a, b, det, cfg, seed);
    CHECK(got.data == want.data);
  }
}

TEST_CASE("run_adaptation: monotone in window radius and accept threshold") {
  const auto det = corner_detector();
  for (uint64_t seed = 0; seed < 5; ++seed) {
    Rng img_rng(2000 + seed);
    const Image a = random_image(24, 24, img_rng);
    const Image b = random_image(24, 24, img_rng);

    AdaptationConfig cfg;
    cfg.n_homographies = 6;
    cfg.det_threshold = 0.05;
    cfg.accept_threshold = 0.3;

    Image prev;
    for (int r = 0; r <= 3; ++r) {
      cfg.window_radius = r;
      Rng rng(seed);
      const Image cur = run_adaptation(a, b, det, cfg, rng);
      if (r > 0)
        for (size_t i = 0; i < cur.data.size(); ++i)
          if (prev.data[i] > 0.0) CHECK(cur.data[i] >= prev.data[i]);
      prev = cur;
    }

    cfg.window_radius = 2;
    Image loose;
    for (double t : {0.2, 0.5, 0.9}) {
      cfg.accept_threshold = t;
      Rng rng(seed);
      const Image cur = run_adaptation(a, b, det, cfg, rng);
      if (t > 0.2)
        for (size_t i = 0; i < cur.data.size(); ++i)
          if (cur.data[i] > 0.0) CHECK(loose.data[i] > 0.0);
      if (t == 0.2) loose = cur;
    }
  }
}

TEST_CASE("run_adaptation: symmetric in pair order and deterministic") {
  const auto det = corner_detector();
  Rng img_rng(3000);
  const Image a = random_image(24, 24, img_rng);
  const Image b = random_image(24, 24, img_rng);
  AdaptationConfig cfg;
  cfg.n_homographies = 5;
  cfg.det_threshold = 0.05;

  Rng r1(9), r2(9), r3(9);
  const Image ab = run_adaptation(a, b, det, cfg, r1);
  const Image ba = run_adaptation(b, a, det, cfg, r2);
  const Image again = run_adaptation(a, b, det, cfg, r3);
  CHECK(ab.data == ba.data);
  CHECK(ab.data == again.data);
}

TEST_CASE("run_adaptation: worker count does not change the result") {
  const auto det = corner_detector();
  Rng img_rng(3100);
  const Image a = random_image(24, 24, img_rng);
  const Image b = random_image(24, 24, img_rng);
  AdaptationConfig cfg;
  cfg.n_homographies = 7;
  cfg.det_threshold = 0.05;
  Rng r1(4), r2(4);
  const Image serial = run_adaptation(a, b, det, cfg, r1, 1);
  const Image parallel = run_adaptation(a, b, det, cfg, r2, 4);
  CHECK(serial.data == parallel.data);
}

TEST_CASE("finalize_keypoints: trivial cases and tie-break stability") {
  CHECK(finalize_keypoints(Image(8, 8), 10).empty());

  Image m(8, 8);
  m.at(2, 3) = 0.9;
  m.at(5, 1) = 0.4;
  const auto top1 = finalize_keypoints(m, 1);
  REQUIRE(top1.size() == 1);
  CHECK(top1[0].u == 2.0);
  CHECK(top1[0].score == doctest::Approx(0.9));

  // equal scores order by (row, col)
  Image t(8, 8);
  t.at(4, 4) = 0.5;
  t.at(1, 6) = 0.5;
  t.at(1, 2) = 0.5;
  const auto kps = finalize_keypoints(t, 0);
  REQUIRE(kps.size() == 3);
  CHECK(kps[0].u == 1.0);
  CHECK(kps[0].v == 2.0);
  CHECK(kps[1].u == 1.0);
  CHECK(kps[1].v == 6.0);
  CHECK(kps[2].u == 4.0);
}
