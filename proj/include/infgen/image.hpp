#pragma once

#include <string>

#include "infgen/rng.hpp"
#include "infgen/tensor.hpp"

namespace infgen {

// RGB raster, values in [-1, 1], stored planar as a (3, H, W) tensor.
struct Image {
  Tensor pixels;  // shape {3, h, w}

  Image() = default;
  Image(int h, int w) : pixels({3, h, w}) {}
  explicit Image(Tensor t);

  int height() const { return pixels.dim(1); }
  int width() const { return pixels.dim(2); }

  float& at(int c, int y, int x) { return pixels.at(c, y, x); }
  float at(int c, int y, int x) const { return pixels.at(c, y, x); }

  void validate() const;  // dims >= 8, finite, range check
};

// 8-bit RGB PNG at the I/O boundary; [-1, 1] maps linearly onto [0, 255].
Image read_png(const std::string& path);
void write_png(const std::string& path, const Image& img);

Image crop(const Image& src, int y0, int x0, int h, int w);
Image resize_bilinear(const Image& src, int out_h, int out_w);

// Procedural test scene: smooth color gradients plus a few random rectangles
// and disks, so crops at different offsets stay distinguishable.
Image synth_image(int h, int w, Rng& rng);

}  // namespace infgen
