#include "xmatch/losses.hpp"

#include <cmath>

#include "xmatch/error.hpp"

namespace xmatch {

void LossConfig::validate() const {
  for (double w : class_weights)
    if (w < 0.0) throw Error("bad-config", "class weights must be non-negative");
  if (lambda_d < 0.0 || lambda < 0.0 || gamma < 0.0)
    throw Error("bad-config", "loss weights must be non-negative");
  if (m_p <= m_n) throw Error("bad-config", "m_p must exceed m_n");
}

CellLabelGrid cells_from_keypoints(const KeypointSet& kps, int rows, int cols, Rng& rng) {
  CellLabelGrid grid;
  grid.rows_c = rows / 8;
  grid.cols_c = cols / 8;
  grid.labels.assign(static_cast<size_t>(grid.rows_c) * grid.cols_c, 64);

  // bucket keypoints per cell in input order
  std::vector<std::vector<int>> cell_classes(grid.labels.size());
  for (const Keypoint& kp : kps) {
    const int u = static_cast<int>(std::lround(kp.u));
    const int v = static_cast<int>(std::lround(kp.v));
    if (u < 0 || u >= rows || v < 0 || v >= cols)
      throw Error("keypoint-out-of-bounds", "keypoint (" + std::to_string(kp.u) + ", " +
                                                std::to_string(kp.v) + ") outside the frame");
    const size_t cell = static_cast<size_t>(u / 8) * grid.cols_c + v / 8;
    cell_classes[cell].push_back(8 * (u % 8) + (v % 8));
  }
  for (size_t cell = 0; cell < cell_classes.size(); ++cell) {
    const auto& cands = cell_classes[cell];
    if (cands.empty()) continue;
    grid.labels[cell] =
        cands.size() == 1 ? cands[0] : cands[rng.uniform_int(0, static_cast<int>(cands.size()) - 1)];
  }
  return grid;
}

double detector_loss(const nn::Tensor& logits, const CellLabelGrid& labels, const LossConfig& cfg,
                     nn::Tensor* grad) {
  const int hc = logits.shape[1], wc = logits.shape[2];
  if (hc != labels.rows_c || wc != labels.cols_c)
    throw Error("shape-mismatch", "logit and label grids differ in dims");
  if (grad) *grad = nn::Tensor(logits.shape);

  auto logit = [&](int c, int h, int w) {
    return logits.data[(static_cast<size_t>(c) * hc + h) * wc + w];
  };

  double sum = 0.0, weight_sum = 0.0;
  for (int h = 0; h < hc; ++h)
    for (int w = 0; w < wc; ++w) {
      const int y = labels.at(h, w);
      const double wy = cfg.class_weights[y];
      double mx = -1e300;
      for (int c = 0; c < 65; ++c) mx = std::max(mx, logit(c, h, w));
      double denom = 0.0;
      for (int c = 0; c < 65; ++c) denom += std::exp(logit(c, h, w) - mx);
      const double log_p = logit(y, h, w) - mx - std::log(denom);
      sum += -wy * log_p;
      weight_sum += wy;
      if (grad) {
        for (int c = 0; c < 65; ++c) {
          const double p = std::exp(logit(c, h, w) - mx) / denom;
          grad->data[(static_cast<size_t>(c) * hc + h) * wc + w] = wy * (p - (c == y ? 1.0 : 0.0));
        }
      }
    }

  const double norm = cfg.plain_mean ? static_cast<double>(hc) * wc : weight_sum;
  const double safe_norm = norm > 0.0 ? norm : 1.0;
  if (grad)
    for (double& g : grad->data) g /= safe_norm;
  return sum / safe_norm;
}

CorrespondenceMask correspondence_mask(const Homography& h, int rows, int cols) {
  if (!h.invertible()) throw Error("degenerate-homography", "non-invertible matrix");
  const int hc = rows / 8, wc = cols / 8;
  CorrespondenceMask mask;
  mask.cells = hc * wc;
  mask.s.assign(static_cast<size_t>(mask.cells) * mask.cells, 0);

  for (int h1 = 0; h1 < hc; ++h1)
    for (int w1 = 0; w1 < wc; ++w1) {
      Pt warped;
      try {
        warped = warp_point(Pt{8.0 * h1 + 3.5, 8.0 * w1 + 3.5}, h);
      } catch (const Error&) {
        continue;  // center at infinity: no positives in this row
      }
      const int cell1 = h1 * wc + w1;
      for (int h2 = 0; h2 < hc; ++h2)
        for (int w2 = 0; w2 < wc; ++w2) {
          const double du = warped.u - (8.0 * h2 + 3.5);
          const double dv = warped.v - (8.0 * w2 + 3.5);
          if (du * du + dv * dv <= 16.0) mask.at(cell1, h2 * wc + w2) = 1;
        }
    }
  return mask;
}

double descriptor_loss(const nn::Tensor& d1, const nn::Tensor& d2, const CorrespondenceMask& mask,
                       const LossConfig& cfg, nn::Tensor* grad1, nn::Tensor* grad2) {
  if (!d1.same_shape(d2)) throw Error("shape-mismatch", "descriptor grids differ in shape");
  const int d = d1.shape[0], hc = d1.shape[1], wc = d1.shape[2];
  const int cells = hc * wc;
  if (cells != mask.cells) throw Error("shape-mismatch", "mask does not match descriptor grid");
  if (grad1) *grad1 = nn::Tensor(d1.shape);
  if (grad2) *grad2 = nn::Tensor(d2.shape);

  const double norm = static_cast<double>(cells) * cells;
  double sum = 0.0;
  for (int c1 = 0; c1 < cells; ++c1)
    for (int c2 = 0; c2 < cells; ++c2) {
      double dot = 0.0;
      for (int k = 0; k < d; ++k)
        dot += d1.data[static_cast<size_t>(k) * cells + c1] * d2.data[static_cast<size_t>(k) * cells + c2];
      const bool pos = mask.at(c1, c2) != 0;
      double coeff = 0.0;  // d(loss_pair)/d(dot)
      if (pos) {
        if (cfg.m_p - dot > 0.0) {
          sum += cfg.lambda_d * (cfg.m_p - dot);
          coeff = -cfg.lambda_d;
        }
      } else {
        if (dot - cfg.m_n > 0.0) {
          sum += dot - cfg.m_n;
          coeff = 1.0;
        }
      }
      if (coeff != 0.0 && (grad1 || grad2)) {
        const double scale = coeff / norm;
        for (int k = 0; k < d; ++k) {
          if (grad1)
            grad1->data[static_cast<size_t>(k) * cells + c1] +=
                scale * d2.data[static_cast<size_t>(k) * cells + c2];
          if (grad2)
            grad2->data[static_cast<size_t>(k) * cells + c2] +=
                scale * d1.data[static_cast<size_t>(k) * cells + c1];
        }
      }
    }
  return sum / norm;
}

double homography_loss(const FourPointDelta& pred, const FourPointDelta& gt) {
  double sum = 0.0;
  for (int i = 0; i < 4; ++i) {
    const double du = pred.deltas[i].u - gt.deltas[i].u;
    const double dv = pred.deltas[i].v - gt.deltas[i].v;
    sum += du * du + dv * dv;
  }
  return sum;
}

double homography_loss_flat(const double* pred8, const FourPointDelta& gt, double* grad_pred) {
  double sum = 0.0;
  for (int i = 0; i < 4; ++i) {
    const double du = pred8[2 * i] - gt.deltas[i].u;
    const double dv = pred8[2 * i + 1] - gt.deltas[i].v;
    sum += du * du + dv * dv;
    if (grad_pred) {
      grad_pred[2 * i] = 2.0 * du;
      grad_pred[2 * i + 1] = 2.0 * dv;
    }
  }
  return sum;
}

double total_loss(const LossParts& parts, const LossConfig& cfg) {
  auto check = [](double v, const char* name) {
    if (!std::isfinite(v)) throw Error("nan-loss", std::string("non-finite loss term: ") + name);
  };
  check(parts.det_src, "detector-src");
  check(parts.det_dst, "detector-dst");
  check(parts.desc, "descriptor");
  check(parts.hom, "homography");
  return parts.det_src + parts.det_dst + cfg.lambda * parts.desc + cfg.gamma * parts.hom;
}

}  // namespace xmatch
