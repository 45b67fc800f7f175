#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "slideprog/core.hpp"

namespace slideprog {

struct Rgb {
  std::uint8_t r = 255;
  std::uint8_t g = 255;
  std::uint8_t b = 255;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

inline constexpr Rgb kWhite{255, 255, 255};

/// 8-bit interleaved RGB raster.
class RgbImage {
 public:
  RgbImage() = default;
  RgbImage(std::int64_t width, std::int64_t height, Rgb fill = kWhite)
      : width_(width), height_(height) {
    if (width < 0 || height < 0) throw ValidationError("negative image dimensions");
    data_.resize(static_cast<std::size_t>(width * height * 3));
    for (std::size_t i = 0; i < data_.size(); i += 3) {
      data_[i] = fill.r;
      data_[i + 1] = fill.g;
      data_[i + 2] = fill.b;
    }
  }

  std::int64_t width() const { return width_; }
  std::int64_t height() const { return height_; }
  bool empty() const { return width_ == 0 || height_ == 0; }

  Rgb at(std::int64_t x, std::int64_t y) const {
    const std::size_t i = index(x, y);
    return {data_[i], data_[i + 1], data_[i + 2]};
  }
  void set(std::int64_t x, std::int64_t y, Rgb c) {
    const std::size_t i = index(x, y);
    data_[i] = c.r;
    data_[i + 1] = c.g;
    data_[i + 2] = c.b;
  }
  std::uint8_t channel(std::int64_t x, std::int64_t y, int c) const {
    return data_[index(x, y) + static_cast<std::size_t>(c)];
  }

  std::span<const std::uint8_t> bytes() const { return data_; }
  std::span<std::uint8_t> bytes() { return data_; }

  friend bool operator==(const RgbImage&, const RgbImage&) = default;

 private:
  std::size_t index(std::int64_t x, std::int64_t y) const {
    return static_cast<std::size_t>((y * width_ + x) * 3);
  }

  std::int64_t width_ = 0;
  std::int64_t height_ = 0;
  std::vector<std::uint8_t> data_;
};

/// Box-filter downsample by an integer factor to the given output size. Each output
/// pixel averages the source pixels of its factor x factor cell that fall inside the
/// source (round half up).
inline RgbImage box_downsample(const RgbImage& src, std::int64_t factor, std::int64_t out_w,
                               std::int64_t out_h) {
  RgbImage out(out_w, out_h);
  const auto in = src.bytes();
  auto dst = out.bytes();
  std::vector<std::uint32_t> acc(static_cast<std::size_t>(out_w) * 3);
  std::vector<std::uint32_t> count(static_cast<std::size_t>(out_w));
  for (std::int64_t oy = 0; oy < out_h; ++oy) {
    std::fill(acc.begin(), acc.end(), 0u);
    std::fill(count.begin(), count.end(), 0u);
    const std::int64_t y0 = oy * factor;
    const std::int64_t y1 = std::min(y0 + factor, src.height());
    for (std::int64_t y = y0; y < y1; ++y) {
      const std::uint8_t* row = in.data() + static_cast<std::size_t>(y * src.width() * 3);
      for (std::int64_t ox = 0; ox < out_w; ++ox) {
        const std::int64_t x0 = ox * factor;
        const std::int64_t x1 = std::min(x0 + factor, src.width());
        std::uint32_t r = 0, g = 0, b = 0;
        for (std::int64_t x = x0; x < x1; ++x) {
          r += row[x * 3];
          g += row[x * 3 + 1];
          b += row[x * 3 + 2];
        }
        acc[ox * 3] += r;
        acc[ox * 3 + 1] += g;
        acc[ox * 3 + 2] += b;
        count[ox] += static_cast<std::uint32_t>(std::max<std::int64_t>(x1 - x0, 0));
      }
    }
    for (std::int64_t ox = 0; ox < out_w; ++ox) {
      const std::uint32_t n = count[ox];
      std::uint8_t* px = dst.data() + static_cast<std::size_t>((oy * out_w + ox) * 3);
      if (n == 0) {
        px[0] = px[1] = px[2] = 255;
        continue;
      }
      for (int c = 0; c < 3; ++c) px[c] = static_cast<std::uint8_t>((acc[ox * 3 + c] + n / 2) / n);
    }
  }
  return out;
}

/// Area-average resample of one channel plane to out_w x out_h, in floating point.
/// Returns a planar array [c][y][x] of values in [0, 255].
inline std::vector<double> area_resample_planar(const RgbImage& src, std::int64_t out_w,
                                                std::int64_t out_h) {
  std::vector<double> out(static_cast<std::size_t>(3 * out_w * out_h), 0.0);
  const double sx = static_cast<double>(src.width()) / static_cast<double>(out_w);
  const double sy = static_cast<double>(src.height()) / static_cast<double>(out_h);
  for (std::int64_t oy = 0; oy < out_h; ++oy) {
    const double fy0 = static_cast<double>(oy) * sy;
    const double fy1 = fy0 + sy;
    for (std::int64_t ox = 0; ox < out_w; ++ox) {
      const double fx0 = static_cast<double>(ox) * sx;
      const double fx1 = fx0 + sx;
      std::array<double, 3> sum{0.0, 0.0, 0.0};
      double weight = 0.0;
      for (auto y = static_cast<std::int64_t>(fy0); y < src.height() && static_cast<double>(y) < fy1;
           ++y) {
        const double wy = std::min(fy1, static_cast<double>(y + 1)) - std::max(fy0, static_cast<double>(y));
        if (wy <= 0.0) continue;
        for (auto x = static_cast<std::int64_t>(fx0);
             x < src.width() && static_cast<double>(x) < fx1; ++x) {
          const double wx =
              std::min(fx1, static_cast<double>(x + 1)) - std::max(fx0, static_cast<double>(x));
          if (wx <= 0.0) continue;
          const double w = wx * wy;
          for (int c = 0; c < 3; ++c) sum[c] += w * src.channel(x, y, c);
          weight += w;
        }
      }
      for (int c = 0; c < 3; ++c)
        out[static_cast<std::size_t>((c * out_h + oy) * out_w + ox)] = sum[c] / weight;
    }
  }
  return out;
}

/// Bilinear resize of the crop [x0, x0+w) x [y0, y0+h) of src to out_size x out_size.
inline RgbImage resize_crop_bilinear(const RgbImage& src, double x0, double y0, double w, double h,
                                     std::int64_t out_w, std::int64_t out_h) {
  RgbImage out(out_w, out_h);
  const auto clampx = [&](std::int64_t x) { return std::clamp<std::int64_t>(x, 0, src.width() - 1); };
  const auto clampy = [&](std::int64_t y) { return std::clamp<std::int64_t>(y, 0, src.height() - 1); };
  for (std::int64_t oy = 0; oy < out_h; ++oy) {
    const double fy = y0 + (static_cast<double>(oy) + 0.5) * h / static_cast<double>(out_h) - 0.5;
    const auto iy = static_cast<std::int64_t>(std::floor(fy));
    const double ty = fy - static_cast<double>(iy);
    for (std::int64_t ox = 0; ox < out_w; ++ox) {
      const double fx = x0 + (static_cast<double>(ox) + 0.5) * w / static_cast<double>(out_w) - 0.5;
      const auto ix = static_cast<std::int64_t>(std::floor(fx));
      const double tx = fx - static_cast<double>(ix);
      std::array<std::uint8_t, 3> px{};
      for (int c = 0; c < 3; ++c) {
        const double v00 = src.channel(clampx(ix), clampy(iy), c);
        const double v10 = src.channel(clampx(ix + 1), clampy(iy), c);
        const double v01 = src.channel(clampx(ix), clampy(iy + 1), c);
        const double v11 = src.channel(clampx(ix + 1), clampy(iy + 1), c);
        const double v = (1 - ty) * ((1 - tx) * v00 + tx * v10) + ty * ((1 - tx) * v01 + tx * v11);
        px[c] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
      out.set(ox, oy, {px[0], px[1], px[2]});
    }
  }
  return out;
}

inline RgbImage flip_horizontal(const RgbImage& src) {
  RgbImage out(src.width(), src.height());
  for (std::int64_t y = 0; y < src.height(); ++y)
    for (std::int64_t x = 0; x < src.width(); ++x) out.set(src.width() - 1 - x, y, src.at(x, y));
  return out;
}

}  // namespace slideprog
