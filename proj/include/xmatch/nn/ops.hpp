#pragma once

#include "xmatch/image.hpp"
#include "xmatch/nn/tensor.hpp"

namespace xmatch::nn {

/// Channel softmax of 65-class cell logits, dustbin dropped, remaining 64
/// probabilities scattered into each cell's 8x8 pixel block in row-major
/// in-cell order (channel c -> offset (c / 8, c % 8)).
Image logits_to_heatmap(const Tensor& logits);  // [65, h, w] -> Image 8h x 8w

/// Bicubic x8 upsampling of a coarse descriptor grid followed by per-pixel
/// L2 renormalization. Cell centers align with pixels (8h + 3.5, 8w + 3.5).
Tensor densify_descriptors(const Tensor& coarse);  // [D, h, w] -> [D, 8h, 8w]

Tensor image_to_tensor(const Image& img);  // [1, 1, H, W]
Image tensor_to_image(const Tensor& t, int rows, int cols);

}  // namespace xmatch::nn
