#pragma once

#include <png.h>

#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "lcaunet/common.hpp"
#include "lcaunet/tensor.hpp"

namespace lcaunet::io {

namespace detail {
struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;
}  // namespace detail

// Decode any PNG to 8-bit RGB (16-bit depth narrowed, palette/gray expanded,
// alpha dropped). Row-major HWC.
struct Rgb8Image {
  std::int64_t h = 0, w = 0;
  std::vector<std::uint8_t> rgb;
};

inline Rgb8Image read_png_rgb8(const std::string& path) {
  detail::FilePtr f(std::fopen(path.c_str(), "rb"));
  LCAUNET_CHECK_CONFIG(f != nullptr, "cannot open PNG ", path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  LCAUNET_CHECK_CONFIG(png, "libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    fail<ConfigError>("libpng info init failed");
  }
  Rgb8Image out;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail<ConfigError>("failed to decode PNG ", path);
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_palette_to_rgb(png);
  if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY &&
      png_get_bit_depth(png, info) < 8)
    png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY ||
      png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  out.h = static_cast<std::int64_t>(png_get_image_height(png, info));
  out.w = static_cast<std::int64_t>(png_get_image_width(png, info));
  out.rgb.resize(static_cast<std::size_t>(out.h * out.w * 3));
  rows.resize(static_cast<std::size_t>(out.h));
  for (std::int64_t y = 0; y < out.h; ++y)
    rows[static_cast<std::size_t>(y)] = out.rgb.data() + y * out.w * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

namespace detail {
inline void write_png(const std::string& path, const std::uint8_t* data,
                      std::int64_t h, std::int64_t w, int channels) {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  LCAUNET_CHECK_CONFIG(f != nullptr, "cannot open ", path, " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  LCAUNET_CHECK_CONFIG(png, "libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    fail<ConfigError>("libpng info init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail<ConfigError>("failed to encode PNG ", path);
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(static_cast<std::size_t>(h));
  for (std::int64_t y = 0; y < h; ++y)
    rows[static_cast<std::size_t>(y)] = const_cast<png_bytep>(data + y * w * channels);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

inline std::uint8_t to_byte(float v) {
  const float s = v <= 0.f ? 0.f : (v >= 1.f ? 1.f : v);
  return static_cast<std::uint8_t>(s * 255.f + 0.5f);
}
}  // namespace detail

// (3, H, W) floats in [0,1] -> RGB8 file.
inline void write_png_rgb(const std::string& path, const Array<float>& img) {
  LCAUNET_CHECK_SHAPE(img.rank() == 3 && img.dim(0) == 3,
                      "write_png_rgb expects (3,H,W), got ", shape_str(img.shape));
  const std::int64_t h = img.dim(1), w = img.dim(2);
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(h * w * 3));
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x)
      for (std::int64_t c = 0; c < 3; ++c)
        buf[static_cast<std::size_t>((y * w + x) * 3 + c)] =
            detail::to_byte(img[(c * h + y) * w + x]);
  detail::write_png(path, buf.data(), h, w, 3);
}

// (H, W) floats in [0,1] -> 8-bit grayscale file.
inline void write_png_gray(const std::string& path, const Array<float>& img) {
  LCAUNET_CHECK_SHAPE(img.rank() == 2, "write_png_gray expects (H,W), got ",
                      shape_str(img.shape));
  const std::int64_t h = img.dim(0), w = img.dim(1);
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(h * w));
  for (std::int64_t i = 0; i < h * w; ++i) buf[static_cast<std::size_t>(i)] = detail::to_byte(img[i]);
  detail::write_png(path, buf.data(), h, w, 1);
}

// Image file -> (3, H, W) floats in [0,1].
inline Array<float> load_image(const std::string& path) {
  Rgb8Image im = read_png_rgb8(path);
  Array<float> out(Shape{3, im.h, im.w});
  for (std::int64_t y = 0; y < im.h; ++y)
    for (std::int64_t x = 0; x < im.w; ++x)
      for (std::int64_t c = 0; c < 3; ++c)
        out[(c * im.h + y) * im.w + x] =
            static_cast<float>(im.rgb[static_cast<std::size_t>((y * im.w + x) * 3 + c)]) / 255.f;
  return out;
}

// Mask file -> (H, W) binary floats; foreground where the byte value >= 128.
inline Array<float> load_mask(const std::string& path) {
  Rgb8Image im = read_png_rgb8(path);
  Array<float> out(Shape{im.h, im.w});
  for (std::int64_t i = 0; i < im.h * im.w; ++i)
    out[i] = im.rgb[static_cast<std::size_t>(i * 3)] >= 128 ? 1.f : 0.f;
  return out;
}

}  // namespace lcaunet::io
