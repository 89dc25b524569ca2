#include "xmatch/nn/ops.hpp"

#include <algorithm>
#include <cmath>

#include "xmatch/error.hpp"

namespace xmatch::nn {

Image logits_to_heatmap(const Tensor& logits) {
  if (logits.shape.size() != 3 || logits.shape[0] != 65)
    throw Error("shape-mismatch", "expected [65, h, w] cell logits");
  const int hc = logits.shape[1], wc = logits.shape[2];
  Image heat(8 * hc, 8 * wc);
  for (int h = 0; h < hc; ++h)
    for (int w = 0; w < wc; ++w) {
      double mx = -1e300;
      for (int c = 0; c < 65; ++c)
        mx = std::max(mx, logits.data[(static_cast<size_t>(c) * hc + h) * wc + w]);
      double denom = 0.0;
      double probs[65];
      for (int c = 0; c < 65; ++c) {
        probs[c] = std::exp(logits.data[(static_cast<size_t>(c) * hc + h) * wc + w] - mx);
        denom += probs[c];
      }
      for (int c = 0; c < 64; ++c)
        heat.at(8 * h + c / 8, 8 * w + c % 8) = probs[c] / denom;
    }
  return heat;
}

namespace {

/// Catmull-Rom cubic kernel (a = -0.5).
double cubic(double t) {
  t = std::abs(t);
  if (t <= 1.0) return 1.5 * t * t * t - 2.5 * t * t + 1.0;
  if (t < 2.0) return -0.5 * t * t * t + 2.5 * t * t - 4.0 * t + 2.0;
  return 0.0;
}

}  // namespace

Tensor densify_descriptors(const Tensor& coarse) {
  if (coarse.shape.size() != 3) throw Error("shape-mismatch", "expected [D, h, w] grid");
  const int d = coarse.shape[0], hc = coarse.shape[1], wc = coarse.shape[2];
  const int rows = 8 * hc, cols = 8 * wc;
  Tensor dense({d, rows, cols});
  auto clampi = [](int i, int hi) { return std::max(0, std::min(hi, i)); };

  for (int u = 0; u < rows; ++u) {
    const double gu = (u - 3.5) / 8.0;
    const int iu = static_cast<int>(std::floor(gu));
    double wu[4];
    for (int k = 0; k < 4; ++k) wu[k] = cubic(gu - (iu - 1 + k));
    for (int v = 0; v < cols; ++v) {
      const double gv = (v - 3.5) / 8.0;
      const int iv = static_cast<int>(std::floor(gv));
      double wv[4];
      for (int k = 0; k < 4; ++k) wv[k] = cubic(gv - (iv - 1 + k));

      double sq = 0.0;
      for (int c = 0; c < d; ++c) {
        double acc = 0.0;
        for (int ku = 0; ku < 4; ++ku) {
          const int su = clampi(iu - 1 + ku, hc - 1);
          for (int kv = 0; kv < 4; ++kv) {
            const int sv = clampi(iv - 1 + kv, wc - 1);
            acc += wu[ku] * wv[kv] * coarse.data[(static_cast<size_t>(c) * hc + su) * wc + sv];
          }
        }
        dense.data[(static_cast<size_t>(c) * rows + u) * cols + v] = acc;
        sq += acc * acc;
      }
      const double inv = 1.0 / std::sqrt(sq + 1e-16);
      for (int c = 0; c < d; ++c) dense.data[(static_cast<size_t>(c) * rows + u) * cols + v] *= inv;
    }
  }
  return dense;
}

Tensor image_to_tensor(const Image& img) {
  Tensor t({1, 1, img.rows, img.cols});
  std::copy(img.data.begin(), img.data.end(), t.data.begin());
  return t;
}

Image tensor_to_image(const Tensor& t, int rows, int cols) {
  Image img(rows, cols);
  std::copy(t.data.begin(), t.data.begin() + static_cast<long>(img.data.size()), img.data.begin());
  return img;
}

}  // namespace xmatch::nn
