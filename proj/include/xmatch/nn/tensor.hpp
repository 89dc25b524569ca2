#pragma once

#include <cassert>
#include <cstddef>
#include <numeric>
#include <vector>

namespace xmatch::nn {

/// Dense row-major tensor of doubles. Shapes are small vectors such as
/// {N, C, H, W}; this is deliberately minimal — just what the model and
/// losses need.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(numel(shape)), 0.0);
  }

  static long long numel(const std::vector<int>& s) {
    long long n = 1;
    for (int d : s) n *= d;
    return n;
  }
  long long numel() const { return static_cast<long long>(data.size()); }

  int dim(int i) const { return shape[i]; }

  double& operator[](size_t i) { return data[i]; }
  double operator[](size_t i) const { return data[i]; }

  // NCHW accessor
  double& at4(int n, int c, int h, int w) {
    return data[((static_cast<size_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }
  double at4(int n, int c, int h, int w) const {
    return data[((static_cast<size_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }

  // (rows, cols) accessor
  double& at2(int r, int c) { return data[static_cast<size_t>(r) * shape[1] + c]; }
  double at2(int r, int c) const { return data[static_cast<size_t>(r) * shape[1] + c]; }

  void zero() { std::fill(data.begin(), data.end(), 0.0); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

/// Learnable parameter: value plus accumulated gradient.
struct Param {
  Tensor value;
  Tensor grad;

  explicit Param(std::vector<int> shape) : value(shape), grad(std::move(shape)) {}
};

}  // namespace xmatch::nn
