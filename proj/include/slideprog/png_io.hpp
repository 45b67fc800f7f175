#pragma once

#include <png.h>

#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "slideprog/image.hpp"

namespace slideprog::png {

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline FilePtr open(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.string().c_str(), mode));
  if (!f) throw StageError("cannot open " + path.string());
  return f;
}

[[noreturn]] inline void on_error(png_structp, png_const_charp message) {
  throw StageError(std::string("png: ") + message);
}
inline void on_warning(png_structp, png_const_charp) {}

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : file_(open(path, "wb")) {
    png_ = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, on_error, on_warning);
    if (!png_) throw StageError("png: cannot create write struct");
    info_ = png_create_info_struct(png_);
    if (!info_) {
      png_destroy_write_struct(&png_, nullptr);
      throw StageError("png: cannot create info struct");
    }
    png_init_io(png_, file_.get());
  }
  ~Writer() { png_destroy_write_struct(&png_, &info_); }
  Writer(const Writer&) = delete;
  Writer& operator=(const Writer&) = delete;

  void write(std::int64_t width, std::int64_t height, int bit_depth, int color_type,
             const std::vector<png_bytep>& rows) {
    png_set_IHDR(png_, info_, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height),
                 bit_depth, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png_, info_);
    png_write_image(png_, const_cast<png_bytepp>(rows.data()));
    png_write_end(png_, nullptr);
  }

 private:
  FilePtr file_;
  png_structp png_ = nullptr;
  png_infop info_ = nullptr;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : file_(open(path, "rb")) {
    png_ = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, on_error, on_warning);
    if (!png_) throw StageError("png: cannot create read struct");
    info_ = png_create_info_struct(png_);
    if (!info_) {
      png_destroy_read_struct(&png_, nullptr, nullptr);
      throw StageError("png: cannot create info struct");
    }
    png_init_io(png_, file_.get());
    png_read_info(png_, info_);
  }
  ~Reader() { png_destroy_read_struct(&png_, &info_, nullptr); }
  Reader(const Reader&) = delete;
  Reader& operator=(const Reader&) = delete;

  png_structp png() { return png_; }
  png_infop info() { return info_; }

 private:
  FilePtr file_;
  png_structp png_ = nullptr;
  png_infop info_ = nullptr;
};

}  // namespace detail

inline void write_rgb(const std::filesystem::path& path, const RgbImage& image) {
  detail::Writer writer(path);
  std::vector<png_bytep> rows(static_cast<std::size_t>(image.height()));
  auto* base = const_cast<std::uint8_t*>(image.bytes().data());
  for (std::int64_t y = 0; y < image.height(); ++y) rows[y] = base + y * image.width() * 3;
  writer.write(image.width(), image.height(), 8, PNG_COLOR_TYPE_RGB, rows);
}

inline RgbImage read_rgb(const std::filesystem::path& path) {
  detail::Reader reader(path);
  png_structp p = reader.png();
  png_infop info = reader.info();
  const auto width = static_cast<std::int64_t>(png_get_image_width(p, info));
  const auto height = static_cast<std::int64_t>(png_get_image_height(p, info));
  const int color = png_get_color_type(p, info);
  const int depth = png_get_bit_depth(p, info);
  if (color != PNG_COLOR_TYPE_RGB || depth != 8)
    throw StageError(path.string() + ": expected 8-bit RGB PNG");
  RgbImage image(width, height);
  std::vector<png_bytep> rows(static_cast<std::size_t>(height));
  for (std::int64_t y = 0; y < height; ++y) rows[y] = image.bytes().data() + y * width * 3;
  png_read_image(p, rows.data());
  png_read_end(p, nullptr);
  return image;
}

/// 1-bit grayscale: `bits` holds one byte (0 or 1) per pixel, row-major.
inline void write_bilevel(const std::filesystem::path& path, std::int64_t width,
                          std::int64_t height, const std::vector<std::uint8_t>& bits) {
  const std::int64_t stride = (width + 7) / 8;
  std::vector<std::uint8_t> packed(static_cast<std::size_t>(stride * height), 0);
  for (std::int64_t y = 0; y < height; ++y)
    for (std::int64_t x = 0; x < width; ++x)
      if (bits[y * width + x]) packed[y * stride + x / 8] |= static_cast<std::uint8_t>(0x80 >> (x % 8));
  std::vector<png_bytep> rows(static_cast<std::size_t>(height));
  for (std::int64_t y = 0; y < height; ++y) rows[y] = packed.data() + y * stride;
  detail::Writer writer(path);
  writer.write(width, height, 1, PNG_COLOR_TYPE_GRAY, rows);
}

inline std::vector<std::uint8_t> read_bilevel(const std::filesystem::path& path,
                                              std::int64_t& width, std::int64_t& height) {
  detail::Reader reader(path);
  png_structp p = reader.png();
  png_infop info = reader.info();
  width = static_cast<std::int64_t>(png_get_image_width(p, info));
  height = static_cast<std::int64_t>(png_get_image_height(p, info));
  if (png_get_color_type(p, info) != PNG_COLOR_TYPE_GRAY || png_get_bit_depth(p, info) != 1)
    throw StageError(path.string() + ": expected 1-bit grayscale PNG");
  const std::int64_t stride = (width + 7) / 8;
  std::vector<std::uint8_t> packed(static_cast<std::size_t>(stride * height));
  std::vector<png_bytep> rows(static_cast<std::size_t>(height));
  for (std::int64_t y = 0; y < height; ++y) rows[y] = packed.data() + y * stride;
  png_read_image(p, rows.data());
  png_read_end(p, nullptr);
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(width * height));
  for (std::int64_t y = 0; y < height; ++y)
    for (std::int64_t x = 0; x < width; ++x)
      bits[y * width + x] = (packed[y * stride + x / 8] >> (7 - x % 8)) & 1;
  return bits;
}

}  // namespace slideprog::png
