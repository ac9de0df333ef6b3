#pragma once

#include <cstdint>
#include <vector>

#include "cerberus/errors.hpp"

namespace cerberus {

// Dense row-major raster of small scalar values (labels, masks, pixels).
template <typename T>
struct Raster {
  int h = 0;
  int w = 0;
  std::vector<T> v;

  Raster() = default;
  Raster(int h_, int w_, T fill = T(0)) : h(h_), w(w_), v(static_cast<std::size_t>(h_) * w_, fill) {}

  T& at(int i, int j) { return v[static_cast<std::size_t>(i) * w + j]; }
  const T& at(int i, int j) const { return v[static_cast<std::size_t>(i) * w + j]; }
  std::size_t size() const { return v.size(); }

  bool operator==(const Raster& o) const { return h == o.h && w == o.w && v == o.v; }
};

using ByteRaster = Raster<std::uint8_t>;

// k binary planes of extent h×w, stored plane-major with values in {0, 1}.
struct BinaryStack {
  int k = 0;
  int h = 0;
  int w = 0;
  std::vector<std::uint8_t> v;

  BinaryStack() = default;
  BinaryStack(int k_, int h_, int w_)
      : k(k_), h(h_), w(w_), v(static_cast<std::size_t>(k_) * h_ * w_, 0) {}

  std::uint8_t& at(int plane, int i, int j) {
    return v[(static_cast<std::size_t>(plane) * h + i) * w + j];
  }
  const std::uint8_t& at(int plane, int i, int j) const {
    return v[(static_cast<std::size_t>(plane) * h + i) * w + j];
  }

  bool operator==(const BinaryStack& o) const {
    return k == o.k && h == o.h && w == o.w && v == o.v;
  }
};

// Nearest-neighbour resize to a new extent; pixel centres are aligned via
// the (i+0.5)*src/dst mapping.
template <typename T>
Raster<T> resize_nearest(const Raster<T>& src, int nh, int nw) {
  if (src.h <= 0 || src.w <= 0) throw DimensionError("resize_nearest: empty source raster");
  Raster<T> out(nh, nw);
  for (int i = 0; i < nh; ++i) {
    int si = static_cast<int>((i + 0.5) * src.h / nh);
    if (si >= src.h) si = src.h - 1;
    for (int j = 0; j < nw; ++j) {
      int sj = static_cast<int>((j + 0.5) * src.w / nw);
      if (sj >= src.w) sj = src.w - 1;
      out.at(i, j) = src.at(si, sj);
    }
  }
  return out;
}

inline BinaryStack resize_nearest(const BinaryStack& src, int nh, int nw) {
  BinaryStack out(src.k, nh, nw);
  for (int p = 0; p < src.k; ++p) {
    for (int i = 0; i < nh; ++i) {
      int si = static_cast<int>((i + 0.5) * src.h / nh);
      if (si >= src.h) si = src.h - 1;
      for (int j = 0; j < nw; ++j) {
        int sj = static_cast<int>((j + 0.5) * src.w / nw);
        if (sj >= src.w) sj = src.w - 1;
        out.at(p, i, j) = src.at(p, si, sj);
      }
    }
  }
  return out;
}

}  // namespace cerberus
