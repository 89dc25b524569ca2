#include "xmatch/png_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

#include "xmatch/error.hpp"

namespace xmatch {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

Image load_png_gray(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw Error("io-error", "cannot open " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error("io-error", "libpng initialization failed");
  }
  std::vector<png_bytep> row_ptrs;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error("io-error", "undecodable PNG " + path);
  }

  png_init_io(png, fp.get());
  png_read_info(png, info);

  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const int depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);

  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  if (depth == 16) png_set_swap(png);  // little-endian samples below
  png_read_update_info(png, info);

  const int channels = png_get_channels(png, info);
  const int out_depth = png_get_bit_depth(png, info);
  const size_t rowbytes = png_get_rowbytes(png, info);
  std::vector<png_byte> raw(rowbytes * h);
  row_ptrs.resize(h);
  for (png_uint_32 y = 0; y < h; ++y) row_ptrs[y] = raw.data() + y * rowbytes;
  png_read_image(png, row_ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Image img(static_cast<int>(h), static_cast<int>(w));
  const double scale = out_depth == 16 ? 65535.0 : 255.0;
  for (png_uint_32 y = 0; y < h; ++y) {
    const png_byte* row = raw.data() + y * rowbytes;
    for (png_uint_32 x = 0; x < w; ++x) {
      double samples[4] = {0, 0, 0, 0};
      for (int c = 0; c < channels; ++c) {
        const size_t i = (static_cast<size_t>(x) * channels + c);
        samples[c] = out_depth == 16
                         ? static_cast<double>(row[2 * i] | (row[2 * i + 1] << 8))
                         : static_cast<double>(row[i]);
      }
      const double v = channels >= 3
                           ? 0.299 * samples[0] + 0.587 * samples[1] + 0.114 * samples[2]
                           : samples[0];
      img.at(static_cast<int>(y), static_cast<int>(x)) = v / scale;
    }
  }
  return img;
}

void save_png_gray(const Image& img, const std::string& path, int bit_depth) {
  if (bit_depth != 8 && bit_depth != 16)
    throw Error("bad-config", "PNG bit depth must be 8 or 16");
  if (img.empty()) throw Error("bad-input", "cannot write an empty image");

  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw Error("io-error", "cannot write " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error("io-error", "libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("io-error", "PNG write failed for " + path);
  }

  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.cols), static_cast<png_uint_32>(img.rows),
               bit_depth, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  const double scale = bit_depth == 16 ? 65535.0 : 255.0;
  const size_t rowbytes = static_cast<size_t>(img.cols) * (bit_depth / 8);
  std::vector<png_byte> row(rowbytes);
  for (int y = 0; y < img.rows; ++y) {
    for (int x = 0; x < img.cols; ++x) {
      const double clamped = std::clamp(img.at(y, x), 0.0, 1.0);
      const auto q = static_cast<unsigned>(std::lround(clamped * scale));
      if (bit_depth == 16) {
        row[2 * x] = static_cast<png_byte>(q >> 8);  // network byte order
        row[2 * x + 1] = static_cast<png_byte>(q & 0xff);
      } else {
        row[x] = static_cast<png_byte>(q);
      }
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace xmatch
