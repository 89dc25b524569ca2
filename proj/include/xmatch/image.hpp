#pragma once

#include <cassert>
#include <cstddef>
#include <vector>

namespace xmatch {

/// Single-channel image with values in [0,1], row-major.
/// Pixel coordinates follow the (u, v) = (row, col) convention used
/// throughout the library.
struct Image {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Image() = default;
  Image(int r, int c, double fill = 0.0) : rows(r), cols(c), data(static_cast<size_t>(r) * c, fill) {}

  double& at(int u, int v) { return data[static_cast<size_t>(u) * cols + v]; }
  double at(int u, int v) const { return data[static_cast<size_t>(u) * cols + v]; }

  bool same_dims(const Image& o) const { return rows == o.rows && cols == o.cols; }
  bool empty() const { return rows == 0 || cols == 0; }
};

struct Pt {
  double u = 0.0;  // row
  double v = 0.0;  // col
};

inline bool operator==(const Pt& a, const Pt& b) { return a.u == b.u && a.v == b.v; }

}  // namespace xmatch
