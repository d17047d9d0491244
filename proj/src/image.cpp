#include "infgen/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>
#include <vector>

namespace infgen {

Image::Image(Tensor t) {
  if (t.rank() != 3 || t.dim(0) != 3) throw std::invalid_argument("Image: expected (3,H,W) tensor");
  pixels = std::move(t);
}

void Image::validate() const {
  if (height() < 8 || width() < 8) throw std::invalid_argument("Image: dims must be >= 8");
  for (float v : pixels.v) {
    if (!std::isfinite(v)) throw std::invalid_argument("Image: non-finite pixel");
    if (v < -1.0f - 1e-6f || v > 1.0f + 1e-6f)
      throw std::invalid_argument("Image: pixel outside [-1, 1]");
  }
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline unsigned char to_byte(float v) {
  float u = (v + 1.0f) * 0.5f * 255.0f;
  int b = static_cast<int>(std::lround(u));
  return static_cast<unsigned char>(std::clamp(b, 0, 255));
}

inline float from_byte(unsigned char b) { return static_cast<float>(b) / 255.0f * 2.0f - 1.0f; }

}  // namespace

Image read_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw std::runtime_error("cannot open PNG: " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("PNG decode error: " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  png_uint_32 w = png_get_image_width(png, info);
  png_uint_32 h = png_get_image_height(png, info);
  int depth = png_get_bit_depth(png, info);
  int color = png_get_color_type(png, info);

  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  std::vector<unsigned char> row(static_cast<size_t>(w) * 3);
  Image img(static_cast<int>(h), static_cast<int>(w));
  for (png_uint_32 y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (png_uint_32 x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(c, static_cast<int>(y), static_cast<int>(x)) = from_byte(row[x * 3 + c]);
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_png(const std::string& path, const Image& img) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("cannot write PNG: " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("PNG encode error: " + path);
  }
  png_init_io(png, fp.get());
  // fixed settings keep output byte-stable across runs
  png_set_compression_level(png, 6);
  png_set_filter(png, 0, PNG_FILTER_NONE);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width()),
               static_cast<png_uint_32>(img.height()), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<unsigned char> row(static_cast<size_t>(img.width()) * 3);
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < 3; ++c) row[static_cast<size_t>(x) * 3 + c] = to_byte(img.at(c, y, x));
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image crop(const Image& src, int y0, int x0, int h, int w) {
  if (y0 < 0 || x0 < 0 || y0 + h > src.height() || x0 + w > src.width())
    throw std::invalid_argument("crop: window out of bounds");
  Image out(h, w);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(c, y, x) = src.at(c, y0 + y, x0 + x);
  return out;
}

Image resize_bilinear(const Image& src, int out_h, int out_w) {
  if (out_h <= 0 || out_w <= 0) throw std::invalid_argument("resize: bad target");
  Image out(out_h, out_w);
  double sy = static_cast<double>(src.height()) / out_h;
  double sx = static_cast<double>(src.width()) / out_w;
  for (int y = 0; y < out_h; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    int y0 = static_cast<int>(std::floor(fy));
    double wy = fy - y0;
    int y1 = std::min(y0 + 1, src.height() - 1);
    y0 = std::max(y0, 0);
    for (int x = 0; x < out_w; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      int x0 = static_cast<int>(std::floor(fx));
      double wx = fx - x0;
      int x1 = std::min(x0 + 1, src.width() - 1);
      x0 = std::max(x0, 0);
      for (int c = 0; c < 3; ++c) {
        double top = (1.0 - wx) * src.at(c, y0, x0) + wx * src.at(c, y0, x1);
        double bot = (1.0 - wx) * src.at(c, y1, x0) + wx * src.at(c, y1, x1);
        out.at(c, y, x) = static_cast<float>((1.0 - wy) * top + wy * bot);
      }
    }
  }
  return out;
}

Image synth_image(int h, int w, Rng& rng) {
  Image img(h, w);
  double phase[3], fx[3], fy[3];
  for (int c = 0; c < 3; ++c) {
    phase[c] = rng.uniform(0.0, 6.283);
    fx[c] = rng.uniform(1.0, 4.0);
    fy[c] = rng.uniform(1.0, 4.0);
  }
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double u = static_cast<double>(x) / w;
        double v = static_cast<double>(y) / h;
        img.at(c, y, x) =
            static_cast<float>(0.6 * std::sin(6.283 * (fx[c] * u + fy[c] * v) + phase[c]));
      }
  int n_shapes = static_cast<int>(rng.uniform_int(3, 6));
  for (int s = 0; s < n_shapes; ++s) {
    int cy = static_cast<int>(rng.uniform_int(0, h - 1));
    int cx = static_cast<int>(rng.uniform_int(0, w - 1));
    int r = static_cast<int>(rng.uniform_int(std::max(2, h / 16), std::max(3, h / 4)));
    bool disk = rng.uniform() < 0.5;
    float col[3];
    for (int c = 0; c < 3; ++c) col[c] = static_cast<float>(rng.uniform(-0.95, 0.95));
    for (int y = std::max(0, cy - r); y < std::min(h, cy + r); ++y)
      for (int x = std::max(0, cx - r); x < std::min(w, cx + r); ++x) {
        if (disk && (y - cy) * (y - cy) + (x - cx) * (x - cx) > r * r) continue;
        for (int c = 0; c < 3; ++c) img.at(c, y, x) = col[c];
      }
  }
  return img;
}

}  // namespace infgen
