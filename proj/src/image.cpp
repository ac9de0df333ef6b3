#include "cerberus/image.hpp"

#include <png.h>

#include <cstdio>
#include <memory>

namespace cerberus {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void write_png(const std::string& path, int h, int w, int channels,
               const std::uint8_t* data) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot open " + path + " for writing");

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng failure while writing " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(static_cast<std::size_t>(h));
  for (int i = 0; i < h; ++i) {
    rows[static_cast<std::size_t>(i)] =
        const_cast<png_bytep>(data + static_cast<std::size_t>(i) * w * channels);
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

void read_png(const std::string& path, int expected_channels, int& h, int& w,
              std::vector<std::uint8_t>& out) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ParseError("malformed PNG file " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  const png_uint_32 width = png_get_image_width(png, info);
  const png_uint_32 height = png_get_image_height(png, info);
  const int color_type = png_get_color_type(png, info);
  const int bit_depth = png_get_bit_depth(png, info);

  if (bit_depth == 16) png_set_strip_16(png);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (expected_channels == 3 &&
      (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA)) {
    png_set_gray_to_rgb(png);
  }
  if (expected_channels == 1 &&
      (color_type == PNG_COLOR_TYPE_RGB || color_type == PNG_COLOR_TYPE_RGB_ALPHA ||
       color_type == PNG_COLOR_TYPE_PALETTE)) {
    png_set_rgb_to_gray(png, 1, -1.0, -1.0);
  }
  png_read_update_info(png, info);

  h = static_cast<int>(height);
  w = static_cast<int>(width);
  out.assign(static_cast<std::size_t>(h) * w * expected_channels, 0);
  std::vector<png_bytep> rows(static_cast<std::size_t>(h));
  for (int i = 0; i < h; ++i) {
    rows[static_cast<std::size_t>(i)] = out.data() + static_cast<std::size_t>(i) * w * expected_channels;
  }
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
}

}  // namespace

void write_png_gray(const std::string& path, const ByteRaster& img) {
  write_png(path, img.h, img.w, 1, img.v.data());
}

ByteRaster read_png_gray(const std::string& path) {
  ByteRaster img;
  read_png(path, 1, img.h, img.w, img.v);
  return img;
}

void write_png_rgb(const std::string& path, const RgbImage& img) {
  write_png(path, img.h, img.w, 3, img.px.data());
}

RgbImage read_png_rgb(const std::string& path) {
  RgbImage img;
  read_png(path, 3, img.h, img.w, img.px);
  return img;
}

Tensor image_to_tensor(const RgbImage& img) {
  Eigen::ArrayXd data(static_cast<long>(3) * img.h * img.w);
  const long plane = static_cast<long>(img.h) * img.w;
  for (int i = 0; i < img.h; ++i) {
    for (int j = 0; j < img.w; ++j) {
      const long p = static_cast<long>(i) * img.w + j;
      for (int c = 0; c < 3; ++c) data[c * plane + p] = img.at(i, j, c) / 255.0;
    }
  }
  return Tensor::from_array({3, img.h, img.w}, std::move(data));
}

ByteRaster tensor_to_gray(const Tensor& map) {
  if (map.rank() != 2) {
    throw DimensionError("tensor_to_gray expects a rank-2 map, got " +
                         shape_to_string(map.shape()));
  }
  const int h = map.dim(0), w = map.dim(1);
  ByteRaster out(h, w);
  const double lo = map.array().minCoeff();
  const double hi = map.array().maxCoeff();
  if (hi - lo < 1e-300) {
    for (auto& v : out.v) v = 128;
    return out;
  }
  for (long i = 0; i < map.size(); ++i) {
    const double t = (map.array()[i] - lo) / (hi - lo);
    out.v[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(std::lround(t * 255.0));
  }
  return out;
}

}  // namespace cerberus
