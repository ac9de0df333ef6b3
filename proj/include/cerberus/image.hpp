#pragma once

#include <string>

#include "cerberus/raster.hpp"
#include "cerberus/tensor.hpp"

namespace cerberus {

// Interleaved 8-bit RGB image, row-major.
struct RgbImage {
  int h = 0;
  int w = 0;
  std::vector<std::uint8_t> px;  // 3*h*w

  RgbImage() = default;
  RgbImage(int h_, int w_) : h(h_), w(w_), px(static_cast<std::size_t>(3) * h_ * w_, 0) {}

  std::uint8_t& at(int i, int j, int c) { return px[(static_cast<std::size_t>(i) * w + j) * 3 + c]; }
  const std::uint8_t& at(int i, int j, int c) const {
    return px[(static_cast<std::size_t>(i) * w + j) * 3 + c];
  }

  bool operator==(const RgbImage& o) const { return h == o.h && w == o.w && px == o.px; }
};

void write_png_gray(const std::string& path, const ByteRaster& img);
ByteRaster read_png_gray(const std::string& path);

void write_png_rgb(const std::string& path, const RgbImage& img);
RgbImage read_png_rgb(const std::string& path);

// [3×h×w] tensor with values in [0, 1].
Tensor image_to_tensor(const RgbImage& img);

// Min-max rescale of a [h×w] tensor to 8-bit gray; a constant map becomes
// mid-gray (128).
ByteRaster tensor_to_gray(const Tensor& map);

}  // namespace cerberus
