#pragma once

#include <string>

#include "xmatch/image.hpp"

namespace xmatch {

/// Reads an 8- or 16-bit PNG as a single channel scaled to [0,1]; color
/// inputs are converted by Rec. 601 luminance. Throws "io-error" on
/// missing/undecodable files.
Image load_png_gray(const std::string& path);

/// Writes a [0,1] image as grayscale PNG, 8 or 16 bits per sample.
void save_png_gray(const Image& img, const std::string& path, int bit_depth = 8);

}  // namespace xmatch
