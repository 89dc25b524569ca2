#include "xmatch/nn/layers.hpp"

#include <cmath>

#include "xmatch/error.hpp"

namespace xmatch::nn {

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(int in_c, int out_c, int ksize, int stride, int pad)
    : in_c_(in_c),
      out_c_(out_c),
      k_(ksize),
      stride_(stride),
      pad_(pad),
      weight_({out_c, in_c, ksize, ksize}),
      bias_({out_c}) {}

void Conv2d::init(Rng& rng) {
  const double bound = std::sqrt(6.0 / (in_c_ * k_ * k_));
  for (double& w : weight_.value.data) w = rng.uniform(-bound, bound);
  for (double& b : bias_.value.data) b = 0.0;
}

Tensor Conv2d::forward(const Tensor& x) {
  x_ = x;
  const int n = x.shape[0], h = x.shape[2], w = x.shape[3];
  const int oh = (h + 2 * pad_ - k_) / stride_ + 1;
  const int ow = (w + 2 * pad_ - k_) / stride_ + 1;
  Tensor out({n, out_c_, oh, ow});
  for (int b = 0; b < n; ++b)
    for (int oc = 0; oc < out_c_; ++oc)
      for (int y = 0; y < oh; ++y)
        for (int x2 = 0; x2 < ow; ++x2) {
          double acc = bias_.value[oc];
          for (int ic = 0; ic < in_c_; ++ic)
            for (int ky = 0; ky < k_; ++ky) {
              const int iy = y * stride_ - pad_ + ky;
              if (iy < 0 || iy >= h) continue;
              for (int kx = 0; kx < k_; ++kx) {
                const int ix = x2 * stride_ - pad_ + kx;
                if (ix < 0 || ix >= w) continue;
                acc += weight_.value.at4(oc, ic, ky, kx) * x.at4(b, ic, iy, ix);
              }
            }
          out.at4(b, oc, y, x2) = acc;
        }
  return out;
}

Tensor Conv2d::backward(const Tensor& gout) {
  const int n = x_.shape[0], h = x_.shape[2], w = x_.shape[3];
  const int oh = gout.shape[2], ow = gout.shape[3];
  Tensor gx(x_.shape);
  for (int b = 0; b < n; ++b)
    for (int oc = 0; oc < out_c_; ++oc)
      for (int y = 0; y < oh; ++y)
        for (int x2 = 0; x2 < ow; ++x2) {
          const double g = gout.at4(b, oc, y, x2);
          if (g == 0.0) continue;
          bias_.grad[oc] += g;
          for (int ic = 0; ic < in_c_; ++ic)
            for (int ky = 0; ky < k_; ++ky) {
              const int iy = y * stride_ - pad_ + ky;
              if (iy < 0 || iy >= h) continue;
              for (int kx = 0; kx < k_; ++kx) {
                const int ix = x2 * stride_ - pad_ + kx;
                if (ix < 0 || ix >= w) continue;
                weight_.grad.at4(oc, ic, ky, kx) += g * x_.at4(b, ic, iy, ix);
                gx.at4(b, ic, iy, ix) += g * weight_.value.at4(oc, ic, ky, kx);
              }
            }
        }
  return gx;
}

// ------------------------------------------------------------ BatchNorm2d

BatchNorm2d::BatchNorm2d(int channels)
    : c_(channels), gamma_({channels}), beta_({channels}), running_mean_({channels}),
      running_var_({channels}) {
  for (double& g : gamma_.value.data) g = 1.0;
  for (double& v : running_var_.data) v = 1.0;
}

Tensor BatchNorm2d::forward(const Tensor& x, bool train) {
  train_mode_ = train;
  const int n = x.shape[0], h = x.shape[2], w = x.shape[3];
  const double m = static_cast<double>(n) * h * w;
  Tensor out(x.shape);
  xhat_ = Tensor(x.shape);
  inv_std_ = Tensor({c_});

  for (int c = 0; c < c_; ++c) {
    double mean, var;
    if (train) {
      double sum = 0.0, sq = 0.0;
      for (int b = 0; b < n; ++b)
        for (int y = 0; y < h; ++y)
          for (int x2 = 0; x2 < w; ++x2) {
            const double v = x.at4(b, c, y, x2);
            sum += v;
            sq += v * v;
          }
      mean = sum / m;
      var = sq / m - mean * mean;
      if (var < 0.0) var = 0.0;
      running_mean_[c] = (1.0 - momentum_) * running_mean_[c] + momentum_ * mean;
      running_var_[c] = (1.0 - momentum_) * running_var_[c] + momentum_ * var;
    } else {
      mean = running_mean_[c];
      var = running_var_[c];
    }
    const double istd = 1.0 / std::sqrt(var + eps_);
    inv_std_[c] = istd;
    for (int b = 0; b < n; ++b)
      for (int y = 0; y < h; ++y)
        for (int x2 = 0; x2 < w; ++x2) {
          const double xh = (x.at4(b, c, y, x2) - mean) * istd;
          xhat_.at4(b, c, y, x2) = xh;
          out.at4(b, c, y, x2) = gamma_.value[c] * xh + beta_.value[c];
        }
  }
  return out;
}

Tensor BatchNorm2d::backward(const Tensor& gout) {
  const int n = gout.shape[0], h = gout.shape[2], w = gout.shape[3];
  const double m = static_cast<double>(n) * h * w;
  Tensor gx(gout.shape);
  for (int c = 0; c < c_; ++c) {
    double gsum = 0.0, gxsum = 0.0;
    for (int b = 0; b < n; ++b)
      for (int y = 0; y < h; ++y)
        for (int x2 = 0; x2 < w; ++x2) {
          const double g = gout.at4(b, c, y, x2);
          gsum += g;
          gxsum += g * xhat_.at4(b, c, y, x2);
        }
    gamma_.grad[c] += gxsum;
    beta_.grad[c] += gsum;

    const double scale = gamma_.value[c] * inv_std_[c];
    for (int b = 0; b < n; ++b)
      for (int y = 0; y < h; ++y)
        for (int x2 = 0; x2 < w; ++x2) {
          const double g = gout.at4(b, c, y, x2);
          if (train_mode_) {
            gx.at4(b, c, y, x2) =
                scale * (g - gsum / m - xhat_.at4(b, c, y, x2) * gxsum / m);
          } else {
            gx.at4(b, c, y, x2) = scale * g;
          }
        }
  }
  return gx;
}

// ------------------------------------------------------------------ ReLU

Tensor ReLU::forward(const Tensor& x) {
  mask_ = Tensor(x.shape);
  Tensor out(x.shape);
  for (size_t i = 0; i < x.data.size(); ++i) {
    mask_[i] = x[i] > 0.0 ? 1.0 : 0.0;
    out[i] = x[i] > 0.0 ? x[i] : 0.0;
  }
  return out;
}

Tensor ReLU::backward(const Tensor& gout) {
  Tensor gx(gout.shape);
  for (size_t i = 0; i < gout.data.size(); ++i) gx[i] = gout[i] * mask_[i];
  return gx;
}

// ------------------------------------------------------------- MaxPool2d

Tensor MaxPool2d::forward(const Tensor& x) {
  in_shape_ = x.shape;
  const int n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
  const int oh = h / 2, ow = w / 2;
  Tensor out({n, c, oh, ow});
  argmax_.assign(out.data.size(), 0);
  size_t idx = 0;
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < oh; ++y)
        for (int x2 = 0; x2 < ow; ++x2, ++idx) {
          double best = -1e300;
          size_t best_i = 0;
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const size_t i =
                  ((static_cast<size_t>(b) * c + ch) * h + 2 * y + dy) * w + 2 * x2 + dx;
              if (x.data[i] > best) {
                best = x.data[i];
                best_i = i;
              }
            }
          out.data[idx] = best;
          argmax_[idx] = best_i;
        }
  return out;
}

Tensor MaxPool2d::backward(const Tensor& gout) {
  Tensor gx(in_shape_);
  for (size_t i = 0; i < gout.data.size(); ++i) gx.data[argmax_[i]] += gout.data[i];
  return gx;
}

// ----------------------------------------------------- AdaptiveAvgPool2d

Tensor AdaptiveAvgPool2d::forward(const Tensor& x) {
  in_shape_ = x.shape;
  const int n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
  Tensor out({n, c, oh_, ow_});
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < oh_; ++y) {
        const int y0 = y * h / oh_;
        const int y1 = ((y + 1) * h + oh_ - 1) / oh_;
        for (int x2 = 0; x2 < ow_; ++x2) {
          const int x0 = x2 * w / ow_;
          const int x1 = ((x2 + 1) * w + ow_ - 1) / ow_;
          double acc = 0.0;
          for (int yy = y0; yy < y1; ++yy)
            for (int xx = x0; xx < x1; ++xx) acc += x.at4(b, ch, yy, xx);
          out.at4(b, ch, y, x2) = acc / ((y1 - y0) * (x1 - x0));
        }
      }
  return out;
}

Tensor AdaptiveAvgPool2d::backward(const Tensor& gout) {
  const int n = in_shape_[0], c = in_shape_[1], h = in_shape_[2], w = in_shape_[3];
  Tensor gx(in_shape_);
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < oh_; ++y) {
        const int y0 = y * h / oh_;
        const int y1 = ((y + 1) * h + oh_ - 1) / oh_;
        for (int x2 = 0; x2 < ow_; ++x2) {
          const int x0 = x2 * w / ow_;
          const int x1 = ((x2 + 1) * w + ow_ - 1) / ow_;
          const double g = gout.at4(b, ch, y, x2) / ((y1 - y0) * (x1 - x0));
          for (int yy = y0; yy < y1; ++yy)
            for (int xx = x0; xx < x1; ++xx) gx.at4(b, ch, yy, xx) += g;
        }
      }
  return gx;
}

// ---------------------------------------------------------------- Linear

Linear::Linear(int in_f, int out_f)
    : in_f_(in_f), out_f_(out_f), weight_({out_f, in_f}), bias_({out_f}) {}

void Linear::init(Rng& rng) {
  const double bound = std::sqrt(6.0 / in_f_);
  for (double& w : weight_.value.data) w = rng.uniform(-bound, bound);
  for (double& b : bias_.value.data) b = 0.0;
}

Tensor Linear::forward(const Tensor& x) {
  x_ = x;
  const int n = x.shape[0];
  Tensor out({n, out_f_});
  for (int b = 0; b < n; ++b)
    for (int o = 0; o < out_f_; ++o) {
      double acc = bias_.value[o];
      for (int i = 0; i < in_f_; ++i) acc += weight_.value.at2(o, i) * x.at2(b, i);
      out.at2(b, o) = acc;
    }
  return out;
}

Tensor Linear::backward(const Tensor& gout) {
  const int n = x_.shape[0];
  Tensor gx(x_.shape);
  for (int b = 0; b < n; ++b)
    for (int o = 0; o < out_f_; ++o) {
      const double g = gout.at2(b, o);
      bias_.grad[o] += g;
      for (int i = 0; i < in_f_; ++i) {
        weight_.grad.at2(o, i) += g * x_.at2(b, i);
        gx.at2(b, i) += g * weight_.value.at2(o, i);
      }
    }
  return gx;
}

// --------------------------------------------------------------- Dropout

Tensor Dropout::forward(const Tensor& x, Rng* rng) {
  active_ = rng != nullptr && p_ > 0.0;
  if (!active_) return x;
  mask_ = Tensor(x.shape);
  Tensor out(x.shape);
  const double keep = 1.0 - p_;
  for (size_t i = 0; i < x.data.size(); ++i) {
    mask_[i] = rng->uniform(0.0, 1.0) < p_ ? 0.0 : 1.0 / keep;
    out[i] = x[i] * mask_[i];
  }
  return out;
}

Tensor Dropout::backward(const Tensor& gout) {
  if (!active_) return gout;
  Tensor gx(gout.shape);
  for (size_t i = 0; i < gout.data.size(); ++i) gx[i] = gout[i] * mask_[i];
  return gx;
}

// --------------------------------------------------------- ChannelL2Norm

Tensor ChannelL2Norm::forward(const Tensor& x) {
  x_ = x;
  const int n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
  out_ = Tensor(x.shape);
  inv_norm_ = Tensor({n, 1, h, w});
  for (int b = 0; b < n; ++b)
    for (int y = 0; y < h; ++y)
      for (int x2 = 0; x2 < w; ++x2) {
        double sq = 0.0;
        for (int ch = 0; ch < c; ++ch) sq += x.at4(b, ch, y, x2) * x.at4(b, ch, y, x2);
        const double inv = 1.0 / std::sqrt(sq + 1e-16);
        inv_norm_.at4(b, 0, y, x2) = inv;
        for (int ch = 0; ch < c; ++ch) out_.at4(b, ch, y, x2) = x.at4(b, ch, y, x2) * inv;
      }
  return out_;
}

Tensor ChannelL2Norm::backward(const Tensor& gout) {
  const int n = x_.shape[0], c = x_.shape[1], h = x_.shape[2], w = x_.shape[3];
  Tensor gx(x_.shape);
  for (int b = 0; b < n; ++b)
    for (int y = 0; y < h; ++y)
      for (int x2 = 0; x2 < w; ++x2) {
        const double inv = inv_norm_.at4(b, 0, y, x2);
        double dot = 0.0;
        for (int ch = 0; ch < c; ++ch) dot += gout.at4(b, ch, y, x2) * out_.at4(b, ch, y, x2);
        for (int ch = 0; ch < c; ++ch)
          gx.at4(b, ch, y, x2) = inv * (gout.at4(b, ch, y, x2) - out_.at4(b, ch, y, x2) * dot);
      }
  return gx;
}

// ------------------------------------------------------------ CostVolume

Tensor CostVolume::forward(const Tensor& x1, const Tensor& x2) {
  if (!x1.same_shape(x2)) throw Error("shape-mismatch", "cost volume inputs differ in shape");
  const int l = x1.shape[0], k = x1.shape[1];
  auto normalize = [&](const Tensor& x, Tensor& z, std::vector<double>& norms) {
    z = Tensor(x.shape);
    norms.assign(l, 0.0);
    for (int i = 0; i < l; ++i) {
      double sq = 0.0;
      for (int j = 0; j < k; ++j) sq += x.at2(i, j) * x.at2(i, j);
      norms[i] = std::max(std::sqrt(sq), 1e-8);
      for (int j = 0; j < k; ++j) z.at2(i, j) = x.at2(i, j) / norms[i];
    }
  };
  normalize(x1, z1_, n1_);
  normalize(x2, z2_, n2_);

  Tensor cv({l, l});
  for (int i = 0; i < l; ++i)
    for (int j = 0; j < l; ++j) {
      double acc = 0.0;
      for (int kk = 0; kk < k; ++kk) acc += z1_.at2(i, kk) * z2_.at2(j, kk);
      cv.at2(i, j) = acc;
    }
  return cv;
}

std::pair<Tensor, Tensor> CostVolume::backward(const Tensor& gout) {
  const int l = z1_.shape[0], k = z1_.shape[1];
  // dz1 = gout * z2, dz2 = gout^T * z1
  Tensor dz1({l, k}), dz2({l, k});
  for (int i = 0; i < l; ++i)
    for (int j = 0; j < l; ++j) {
      const double g = gout.at2(i, j);
      if (g == 0.0) continue;
      for (int kk = 0; kk < k; ++kk) {
        dz1.at2(i, kk) += g * z2_.at2(j, kk);
        dz2.at2(j, kk) += g * z1_.at2(i, kk);
      }
    }
  // back through row normalization z = x / max(||x||, eps)
  auto denorm = [&](const Tensor& z, const std::vector<double>& norms, const Tensor& dz) {
    Tensor gx({l, k});
    for (int i = 0; i < l; ++i) {
      double dot = 0.0;
      for (int kk = 0; kk < k; ++kk) dot += dz.at2(i, kk) * z.at2(i, kk);
      for (int kk = 0; kk < k; ++kk)
        gx.at2(i, kk) = (dz.at2(i, kk) - z.at2(i, kk) * dot) / norms[i];
    }
    return gx;
  };
  return {denorm(z1_, n1_, dz1), denorm(z2_, n2_, dz2)};
}

}  // namespace xmatch::nn
