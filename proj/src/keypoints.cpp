#include "xmatch/keypoints.hpp"

#include <algorithm>

namespace xmatch {

KeypointSet greedy_nms(const Image& score, double threshold, int radius, int max_points) {
  struct Cand {
    int u, v;
    double s;
  };
  std::vector<Cand> cands;
  for (int u = 0; u < score.rows; ++u)
    for (int v = 0; v < score.cols; ++v) {
      const double s = score.at(u, v);
      if (s > 0.0 && s >= threshold) cands.push_back({u, v, s});
    }
  std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    if (a.s != b.s) return a.s > b.s;
    if (a.u != b.u) return a.u < b.u;
    return a.v < b.v;
  });

  std::vector<char> suppressed(score.data.size(), 0);
  KeypointSet out;
  for (const Cand& c : cands) {
    if (suppressed[static_cast<size_t>(c.u) * score.cols + c.v]) continue;
    out.push_back({static_cast<double>(c.u), static_cast<double>(c.v), c.s});
    if (max_points > 0 && static_cast<int>(out.size()) >= max_points) break;
    if (radius > 0) {
      for (int uu = std::max(0, c.u - radius); uu <= std::min(score.rows - 1, c.u + radius); ++uu)
        for (int vv = std::max(0, c.v - radius); vv <= std::min(score.cols - 1, c.v + radius); ++vv)
          suppressed[static_cast<size_t>(uu) * score.cols + vv] = 1;
    }
  }
  return out;
}

}  // namespace xmatch
