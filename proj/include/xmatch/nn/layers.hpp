#pragma once

#include <vector>

#include "xmatch/nn/tensor.hpp"
#include "xmatch/random.hpp"

namespace xmatch::nn {

/// Layers cache whatever the backward pass needs during forward; each
/// instance therefore supports one in-flight forward/backward at a time.
/// Training batches both images of a pair through the same instance, so
/// weight sharing never needs a second cache.

class Conv2d {
 public:
  Conv2d(int in_c, int out_c, int ksize, int stride, int pad);

  void init(Rng& rng);  // He-uniform
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gout);
  std::vector<Param*> params() { return {&weight_, &bias_}; }

  int out_channels() const { return out_c_; }

 private:
  int in_c_, out_c_, k_, stride_, pad_;
  Param weight_;  // [out, in, k, k]
  Param bias_;    // [out]
  Tensor x_;
};

class BatchNorm2d {
 public:
  explicit BatchNorm2d(int channels);

  Tensor forward(const Tensor& x, bool train);
  Tensor backward(const Tensor& gout);
  std::vector<Param*> params() { return {&gamma_, &beta_}; }

  Tensor& running_mean() { return running_mean_; }
  Tensor& running_var() { return running_var_; }

 private:
  int c_;
  double momentum_ = 0.1;
  double eps_ = 1e-5;
  Param gamma_, beta_;
  Tensor running_mean_, running_var_;
  // caches
  bool train_mode_ = false;
  Tensor xhat_, inv_std_;
};

class ReLU {
 public:
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gout);

 private:
  Tensor mask_;
};

/// 2x2 max pooling, stride 2; ties resolve to the first element in scan order.
class MaxPool2d {
 public:
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gout);

 private:
  std::vector<int> in_shape_;
  std::vector<size_t> argmax_;
};

/// Adaptive average pooling to a fixed output grid, PyTorch bin convention.
class AdaptiveAvgPool2d {
 public:
  AdaptiveAvgPool2d(int out_h, int out_w) : oh_(out_h), ow_(out_w) {}

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gout);

 private:
  int oh_, ow_;
  std::vector<int> in_shape_;
};

class Linear {
 public:
  Linear(int in_f, int out_f);

  void init(Rng& rng);
  Tensor forward(const Tensor& x);  // [N, in] -> [N, out]
  Tensor backward(const Tensor& gout);
  std::vector<Param*> params() { return {&weight_, &bias_}; }

 private:
  int in_f_, out_f_;
  Param weight_;  // [out, in]
  Param bias_;
  Tensor x_;
};

class Dropout {
 public:
  explicit Dropout(double p) : p_(p) {}

  /// rng == nullptr means inference: identity.
  Tensor forward(const Tensor& x, Rng* rng);
  Tensor backward(const Tensor& gout);

 private:
  double p_;
  Tensor mask_;
  bool active_ = false;
};

/// Per-location L2 normalization along the channel dimension of an NCHW
/// tensor, smoothed with a tiny epsilon so gradients stay finite.
class ChannelL2Norm {
 public:
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gout);

 private:
  Tensor x_, out_, inv_norm_;
};

/// Cosine-similarity cost volume between two [L, K] feature matrices;
/// rows with norm below 1e-8 score 0 against everything.
class CostVolume {
 public:
  Tensor forward(const Tensor& x1, const Tensor& x2);  // -> [L, L]
  std::pair<Tensor, Tensor> backward(const Tensor& gout);

 private:
  Tensor z1_, z2_;          // normalized rows
  std::vector<double> n1_, n2_;  // clamped norms
};

}  // namespace xmatch::nn
