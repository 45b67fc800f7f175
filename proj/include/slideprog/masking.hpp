#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "slideprog/core.hpp"
#include "slideprog/image.hpp"
#include "slideprog/png_io.hpp"
#include "slideprog/pyramid.hpp"

namespace slideprog {

/// Masks live at 2.5x.
inline constexpr Magnification kMaskLevel = Magnification::x2_5;

struct BinaryMask {
  std::int64_t width = 0;
  std::int64_t height = 0;
  std::vector<std::uint8_t> grid;  // row-major, 0 or 1
  Magnification working_magnification = kMaskLevel;
  std::string slide_id;

  BinaryMask() = default;
  BinaryMask(std::int64_t w, std::int64_t h, std::string id = {}, bool fill = false)
      : width(w), height(h), grid(static_cast<std::size_t>(w * h), fill ? 1 : 0), slide_id(std::move(id)) {}

  bool at(std::int64_t x, std::int64_t y) const { return grid[static_cast<std::size_t>(y * width + x)] != 0; }
  void set(std::int64_t x, std::int64_t y, bool v) { grid[static_cast<std::size_t>(y * width + x)] = v ? 1 : 0; }
  std::int64_t count() const { return std::count(grid.begin(), grid.end(), std::uint8_t{1}); }
  bool same_shape(const BinaryMask& o) const { return width == o.width && height == o.height; }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

/// Hue on the half-degree [0, 180) scale, saturation on [0, 255].
struct HsvThresholds {
  double hue_min = 100.0;
  double hue_max = 180.0;
  double sat_min = 30.0;

  void validate() const {
    if (!(0.0 <= hue_min && hue_min <= hue_max && hue_max <= 180.0))
      throw ValidationError("hue thresholds must satisfy 0 <= hue_min <= hue_max <= 180");
    if (!(0.0 <= sat_min && sat_min <= 255.0)) throw ValidationError("sat_min must lie in [0, 255]");
  }
};

struct Hsv {
  double h;  // [0, 180)
  double s;  // [0, 255]
  double v;  // [0, 255]
};

inline Hsv to_hsv(Rgb c) {
  const double r = c.r, g = c.g, b = c.b;
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double delta = mx - mn;
  Hsv out{0.0, mx == 0.0 ? 0.0 : 255.0 * delta / mx, mx};
  if (delta == 0.0) return out;
  double degrees;
  if (mx == r)
    degrees = 60.0 * (g - b) / delta;
  else if (mx == g)
    degrees = 120.0 + 60.0 * (b - r) / delta;
  else
    degrees = 240.0 + 60.0 * (r - g) / delta;
  if (degrees < 0.0) degrees += 360.0;
  out.h = degrees / 2.0;
  return out;
}

inline bool is_tissue(Rgb c, const HsvThresholds& th) {
  const Hsv hsv = to_hsv(c);
  return hsv.h >= th.hue_min && hsv.h <= th.hue_max && hsv.s >= th.sat_min;
}

inline BinaryMask compute_tissue_mask(const RgbImage& level_image, const HsvThresholds& th = {},
                                      std::string slide_id = {}) {
  if (level_image.empty()) throw ValidationError("compute_tissue_mask: empty raster");
  th.validate();
  BinaryMask mask(level_image.width(), level_image.height(), std::move(slide_id));
  for (std::int64_t y = 0; y < mask.height; ++y)
    for (std::int64_t x = 0; x < mask.width; ++x) mask.set(x, y, is_tissue(level_image.at(x, y), th));
  return mask;
}

/// Even-odd point-in-polygon test.
inline bool inside_even_odd(std::span<const Point> poly, double px, double py) {
  bool inside = false;
  const std::size_t n = poly.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Point& a = poly[i];
    const Point& b = poly[j];
    if ((a.y > py) != (b.y > py)) {
      const double x_cross = a.x + (py - a.y) * (b.x - a.x) / (b.y - a.y);
      if (px < x_cross) inside = !inside;
    }
  }
  return inside;
}

/// Rasterize lesion polygons (40x coordinates) onto a 2.5x grid. A pixel is set when
/// its center lies inside any lesion polygon. Non-lesion polygons are ignored.
inline BinaryMask rasterize_annotations(std::span<const Polygon> polygons, PixelSize grid,
                                        std::string slide_id = {}) {
  BinaryMask mask(grid.w, grid.h, std::move(slide_id));
  const Ratio r = ratio_of(kMaskLevel);
  const double scale = static_cast<double>(r.num) / static_cast<double>(40 * r.den);
  for (const Polygon& polygon : polygons) {
    if (polygon.kind != PolygonKind::lesion) continue;
    std::vector<Point> scaled;
    scaled.reserve(polygon.vertices.size());
    double min_y = 1e300, max_y = -1e300, min_x = 1e300, max_x = -1e300;
    for (const Point& v : polygon.vertices) {
      scaled.push_back({v.x * scale, v.y * scale});
      min_x = std::min(min_x, v.x * scale);
      max_x = std::max(max_x, v.x * scale);
      min_y = std::min(min_y, v.y * scale);
      max_y = std::max(max_y, v.y * scale);
    }
    const auto y0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(min_y)) - 1);
    const auto y1 = std::min<std::int64_t>(grid.h, static_cast<std::int64_t>(std::ceil(max_y)) + 1);
    const auto x0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(min_x)) - 1);
    const auto x1 = std::min<std::int64_t>(grid.w, static_cast<std::int64_t>(std::ceil(max_x)) + 1);
    for (std::int64_t y = y0; y < y1; ++y)
      for (std::int64_t x = x0; x < x1; ++x)
        if (inside_even_odd(scaled, static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5))
          mask.set(x, y, true);
  }
  return mask;
}

namespace detail {

inline std::vector<PixelPoint> disk_offsets(int radius) {
  std::vector<PixelPoint> out;
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx)
      if (dx * dx + dy * dy <= radius * radius) out.push_back({dx, dy});
  return out;
}

// Dilation treats outside pixels as false and erosion treats them as true. The pair
// is an adjunction on the finite grid, so the derived opening and closing are exact
// morphological filters (idempotent, no border artifacts).
inline BinaryMask dilate(const BinaryMask& in, std::span<const PixelPoint> disk) {
  BinaryMask out = in;
  for (std::int64_t y = 0; y < in.height; ++y)
    for (std::int64_t x = 0; x < in.width; ++x) {
      bool hit = false;
      for (const PixelPoint& d : disk) {
        const std::int64_t sx = x + d.x, sy = y + d.y;
        if (sx >= 0 && sy >= 0 && sx < in.width && sy < in.height && in.at(sx, sy)) {
          hit = true;
          break;
        }
      }
      out.set(x, y, hit);
    }
  return out;
}

inline BinaryMask erode(const BinaryMask& in, std::span<const PixelPoint> disk) {
  BinaryMask out = in;
  for (std::int64_t y = 0; y < in.height; ++y)
    for (std::int64_t x = 0; x < in.width; ++x) {
      bool all = true;
      for (const PixelPoint& d : disk) {
        const std::int64_t sx = x + d.x, sy = y + d.y;
        if (sx >= 0 && sy >= 0 && sx < in.width && sy < in.height && !in.at(sx, sy)) {
          all = false;
          break;
        }
      }
      out.set(x, y, all);
    }
  return out;
}

}  // namespace detail

inline BinaryMask dilate(const BinaryMask& mask, int radius) {
  if (radius < 0) throw ValidationError("morphology radius must be >= 0");
  const auto disk = detail::disk_offsets(radius);
  return detail::dilate(mask, disk);
}

/// Closing (fills holes) followed by opening (removes specks), disk element.
inline BinaryMask morph_close_open(const BinaryMask& mask, int radius) {
  if (radius < 0) throw ValidationError("morphology radius must be >= 0");
  if (radius == 0) return mask;
  const auto disk = detail::disk_offsets(radius);
  const BinaryMask closed = detail::erode(detail::dilate(mask, disk), disk);
  return detail::dilate(detail::erode(closed, disk), disk);
}

inline BinaryMask intersect(const BinaryMask& a, const BinaryMask& b) {
  if (!a.same_shape(b))
    throw ValidationError("mask dimension mismatch: " + std::to_string(a.width) + "x" +
                          std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                          std::to_string(b.height));
  BinaryMask out = a;
  for (std::size_t i = 0; i < out.grid.size(); ++i) out.grid[i] = a.grid[i] & b.grid[i];
  return out;
}

/// Region R: tissue AND annotation, then closing and opening.
inline BinaryMask compute_lesion_mask(const BinaryMask& tissue, const BinaryMask& annotation,
                                      int radius) {
  return morph_close_open(intersect(tissue, annotation), radius);
}

struct MaskSettings {
  HsvThresholds thresholds;
  int radius = 5;
};

struct SlideMasks {
  BinaryMask tissue;
  BinaryMask annotation;
  BinaryMask lesion;
};

inline SlideMasks compute_slide_masks(const SlidePyramid& slide, const MaskSettings& settings) {
  const RgbImage& working = slide.level(kMaskLevel);
  SlideMasks out;
  out.tissue = compute_tissue_mask(working, settings.thresholds, slide.slide_id());
  out.annotation = rasterize_annotations(slide.annotations(), slide.level_size(kMaskLevel), slide.slide_id());
  out.lesion = compute_lesion_mask(out.tissue, out.annotation, settings.radius);
  return out;
}

/// `<stem>.png` (1-bit) plus `<stem>.json` sidecar.
inline void write_mask(const std::filesystem::path& dir, const std::string& stem,
                       const BinaryMask& mask, const MaskSettings& settings) {
  std::filesystem::create_directories(dir);
  png::write_bilevel(dir / (stem + ".png"), mask.width, mask.height, mask.grid);
  nlohmann::ordered_json sidecar = {
      {"slide_id", mask.slide_id},
      {"working_magnification", value_of(mask.working_magnification)},
      {"width", mask.width},
      {"height", mask.height},
      {"thresholds",
       {{"hue_min", settings.thresholds.hue_min},
        {"hue_max", settings.thresholds.hue_max},
        {"sat_min", settings.thresholds.sat_min}}},
      {"radius", settings.radius}};
  std::ofstream(dir / (stem + ".json")) << sidecar.dump(2) << '\n';
}

inline BinaryMask read_mask(const std::filesystem::path& dir, const std::string& stem) {
  std::ifstream in(dir / (stem + ".json"));
  if (!in) throw StageError("missing mask sidecar " + (dir / (stem + ".json")).string());
  const auto sidecar = nlohmann::json::parse(in);
  BinaryMask mask;
  mask.grid = png::read_bilevel(dir / (stem + ".png"), mask.width, mask.height);
  mask.slide_id = sidecar.at("slide_id").get<std::string>();
  mask.working_magnification = magnification_from(sidecar.at("working_magnification").get<double>());
  return mask;
}

}  // namespace slideprog
