#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "slideprog/core.hpp"
#include "slideprog/image.hpp"

namespace slideprog {

struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

struct PixelPoint {
  std::int64_t x = 0;
  std::int64_t y = 0;
  friend bool operator==(const PixelPoint&, const PixelPoint&) = default;
  friend auto operator<=>(const PixelPoint&, const PixelPoint&) = default;
};

struct PixelSize {
  std::int64_t w = 0;
  std::int64_t h = 0;
  friend bool operator==(const PixelSize&, const PixelSize&) = default;
};

enum class PolygonKind : std::uint8_t { lesion, other };

inline std::string_view to_string(PolygonKind kind) {
  return kind == PolygonKind::lesion ? "lesion" : "other";
}

/// Annotation outline in 40x pixel space, implicitly closed. Self-intersection is
/// allowed; rasterization uses the even-odd rule.
struct Polygon {
  std::vector<Point> vertices;
  PolygonKind kind = PolygonKind::lesion;
  friend bool operator==(const Polygon&, const Polygon&) = default;
};

/// Multi-resolution slide. Immutable once built, so concurrent reads are safe.
class SlidePyramid {
 public:
  SlidePyramid() = default;

  /// Takes explicit levels; every level must obey dim(m) = round(dim(40x) * m / 40).
  SlidePyramid(std::string slide_id, PrognosisLabel label, std::int64_t width_40x,
               std::int64_t height_40x, std::map<Magnification, RgbImage> levels,
               std::vector<Polygon> annotations)
      : slide_id_(std::move(slide_id)),
        label_(label),
        width_40x_(width_40x),
        height_40x_(height_40x),
        levels_(std::move(levels)),
        annotations_(std::move(annotations)) {
    for (const auto& [m, image] : levels_) {
      if (image.width() != level_dimension(width_40x_, m) ||
          image.height() != level_dimension(height_40x_, m))
        throw ValidationError("level " + magnification_label(m) + " of slide " + slide_id_ +
                              " violates the level dimension rule");
    }
    for (const auto& polygon : annotations_)
      if (polygon.vertices.size() < 3)
        throw ValidationError("annotation polygon with fewer than 3 vertices");
  }

  /// Build all four levels from a 40x raster by box filtering.
  static SlidePyramid from_base(std::string slide_id, PrognosisLabel label, RgbImage base,
                                std::vector<Polygon> annotations) {
    const std::int64_t w = base.width();
    const std::int64_t h = base.height();
    std::map<Magnification, RgbImage> levels;
    for (Magnification m : {Magnification::x20, Magnification::x10, Magnification::x2_5}) {
      const Ratio r = ratio_of(m);
      const std::int64_t factor = 40 * r.den / r.num;
      levels[m] = box_downsample(base, factor, level_dimension(w, m), level_dimension(h, m));
    }
    levels[Magnification::x40] = std::move(base);
    return SlidePyramid(std::move(slide_id), label, w, h, std::move(levels),
                        std::move(annotations));
  }

  const std::string& slide_id() const { return slide_id_; }
  PrognosisLabel label() const { return label_; }
  std::int64_t width_40x() const { return width_40x_; }
  std::int64_t height_40x() const { return height_40x_; }
  const std::vector<Polygon>& annotations() const { return annotations_; }
  const std::map<Magnification, RgbImage>& levels() const { return levels_; }

  bool has_level(Magnification m) const { return levels_.contains(m); }

  const RgbImage& level(Magnification m) const {
    const auto it = levels_.find(m);
    if (it == levels_.end())
      throw ValidationError("level not available: " + magnification_label(m) + "x");
    return it->second;
  }

  PixelSize level_size(Magnification m) const {
    return {level_dimension(width_40x_, m), level_dimension(height_40x_, m)};
  }

  friend bool operator==(const SlidePyramid&, const SlidePyramid&) = default;

 private:
  std::string slide_id_;
  PrognosisLabel label_ = PrognosisLabel::good;
  std::int64_t width_40x_ = 0;
  std::int64_t height_40x_ = 0;
  std::map<Magnification, RgbImage> levels_;
  std::vector<Polygon> annotations_;
};

/// Read a w x h window from one level; pixels outside the slide are white.
inline RgbImage read_region(const SlidePyramid& pyramid, Magnification m, PixelPoint top_left,
                            PixelSize size) {
  if (size.w <= 0 || size.h <= 0) throw ValidationError("read_region: empty size");
  const RgbImage& level = pyramid.level(m);
  RgbImage out(size.w, size.h);
  const std::int64_t x_begin = std::max<std::int64_t>(0, -top_left.x);
  const std::int64_t x_end = std::min(size.w, level.width() - top_left.x);
  if (x_end <= x_begin) return out;
  const auto src = level.bytes();
  auto dst = out.bytes();
  for (std::int64_t y = 0; y < size.h; ++y) {
    const std::int64_t sy = top_left.y + y;
    if (sy < 0 || sy >= level.height()) continue;
    const std::size_t from = static_cast<std::size_t>((sy * level.width() + top_left.x + x_begin) * 3);
    const std::size_t to = static_cast<std::size_t>((y * size.w + x_begin) * 3);
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(from), (x_end - x_begin) * 3,
                dst.begin() + static_cast<std::ptrdiff_t>(to));
  }
  return out;
}

inline RgbImage read_region(const SlidePyramid& pyramid, double magnification,
                            PixelPoint top_left, PixelSize size) {
  return read_region(pyramid, magnification_from(magnification), top_left, size);
}

}  // namespace slideprog
