#include "xmatch/detector.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace xmatch {

namespace {

int clampi(int i, int lo, int hi) { return std::max(lo, std::min(hi, i)); }

Image gaussian_blur_5x5(const Image& src) {
  static const double k[5] = {1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};
  Image tmp(src.rows, src.cols), out(src.rows, src.cols);
  for (int u = 0; u < src.rows; ++u)
    for (int v = 0; v < src.cols; ++v) {
      double acc = 0.0;
      for (int d = -2; d <= 2; ++d) acc += k[d + 2] * src.at(u, clampi(v + d, 0, src.cols - 1));
      tmp.at(u, v) = acc;
    }
  for (int u = 0; u < src.rows; ++u)
    for (int v = 0; v < src.cols; ++v) {
      double acc = 0.0;
      for (int d = -2; d <= 2; ++d) acc += k[d + 2] * tmp.at(clampi(u + d, 0, src.rows - 1), v);
      out.at(u, v) = acc;
    }
  return out;
}

}  // namespace

BaseDetector corner_detector() {
  BaseDetector d;
  d.name = "shi-tomasi";
  d.detect = [](const Image& img) {
    const int rows = img.rows, cols = img.cols;
    Image gu(rows, cols), gv(rows, cols);
    for (int u = 0; u < rows; ++u)
      for (int v = 0; v < cols; ++v) {
        gu.at(u, v) = 0.5 * (img.at(clampi(u + 1, 0, rows - 1), v) - img.at(clampi(u - 1, 0, rows - 1), v));
        gv.at(u, v) = 0.5 * (img.at(u, clampi(v + 1, 0, cols - 1)) - img.at(u, clampi(v - 1, 0, cols - 1)));
      }

    Image juu(rows, cols), jvv(rows, cols), juv(rows, cols);
    for (int i = 0; i < rows * cols; ++i) {
      juu.data[i] = gu.data[i] * gu.data[i];
      jvv.data[i] = gv.data[i] * gv.data[i];
      juv.data[i] = gu.data[i] * gv.data[i];
    }
    juu = gaussian_blur_5x5(juu);
    jvv = gaussian_blur_5x5(jvv);
    juv = gaussian_blur_5x5(juv);

    Image resp(rows, cols);
    double peak = 0.0;
    for (int i = 0; i < rows * cols; ++i) {
      const double tr = 0.5 * (juu.data[i] + jvv.data[i]);
      const double det_part = 0.25 * (juu.data[i] - jvv.data[i]) * (juu.data[i] - jvv.data[i]) +
                              juv.data[i] * juv.data[i];
      const double lmin = tr - std::sqrt(det_part);
      resp.data[i] = std::max(0.0, lmin);
      peak = std::max(peak, resp.data[i]);
    }
    if (peak > 0.0)
      for (double& x : resp.data) x /= peak;
    return resp;
  };
  return d;
}

}  // namespace xmatch
