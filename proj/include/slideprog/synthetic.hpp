#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "slideprog/core.hpp"
#include "slideprog/image.hpp"
#include "slideprog/masking.hpp"
#include "slideprog/pyramid.hpp"

namespace slideprog {

/// Lobed ellipse. Center and radius are fractions of the slide size.
struct LesionShape {
  double center_x = 0.5;
  double center_y = 0.5;
  double radius = 0.3;  // x radius as a fraction of min(width, height)
  double aspect = 1.0;  // y radius / x radius
  double rotation = 0.0;
  int lobes = 5;
  double lobe_amplitude = 0.1;
  double lobe_phase = 0.0;
};

struct SyntheticSpec {
  std::uint64_t seed = 0;
  PrognosisLabel label = PrognosisLabel::good;
  PixelSize size_40x{3072, 3072};
  LesionShape lesion_shape;
  double signal_strength = 0.8;
  std::string slide_id = "synthetic";

  void validate() const {
    if (size_40x.w < 1024 || size_40x.h < 1024)
      throw ValidationError("synthetic slide must be at least 1024x1024 at 40x");
    if (!(signal_strength >= 0.0 && signal_strength <= 1.0))
      throw ValidationError("signal_strength must lie in [0, 1]");
    const LesionShape& s = lesion_shape;
    if (!(s.radius > 0.0 && s.aspect > 0.0 && s.lobe_amplitude >= 0.0 && s.lobe_amplitude < 1.0 &&
          s.lobes >= 0))
      throw ValidationError("degenerate lesion shape");
  }
};

/// Randomized but plausible lesion geometry for cohort generation.
inline LesionShape random_lesion_shape(std::uint64_t seed) {
  Rng rng(derive_seed(seed, "lesion-shape"));
  LesionShape s;
  s.center_x = rng.uniform(0.42, 0.58);
  s.center_y = rng.uniform(0.42, 0.58);
  s.radius = rng.uniform(0.27, 0.33);
  s.aspect = rng.uniform(0.8, 1.15);
  s.rotation = rng.uniform(0.0, std::numbers::pi);
  s.lobes = 3 + static_cast<int>(rng.below(4));
  s.lobe_amplitude = rng.uniform(0.04, 0.12);
  s.lobe_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  return s;
}

namespace detail {

class BlobGeometry {
 public:
  BlobGeometry(const LesionShape& s, PixelSize size)
      : s_(s),
        cx_(s.center_x * static_cast<double>(size.w)),
        cy_(s.center_y * static_cast<double>(size.h)),
        rx_(s.radius * static_cast<double>(std::min(size.w, size.h))),
        ry_(rx_ * s.aspect),
        cos_(std::cos(s.rotation)),
        sin_(std::sin(s.rotation)) {}

  /// Boundary level: < 1 inside the blob.
  double level(double x, double y) const {
    const double dx = x - cx_, dy = y - cy_;
    const double u = (cos_ * dx + sin_ * dy) / rx_;
    const double v = (-sin_ * dx + cos_ * dy) / ry_;
    const double rho = std::sqrt(u * u + v * v);
    const double theta = std::atan2(v, u);
    return rho / boundary(theta);
  }
  bool inside(double x, double y) const { return level(x, y) <= 1.0; }

  double boundary(double theta) const {
    return 1.0 + s_.lobe_amplitude * std::sin(s_.lobes * theta + s_.lobe_phase);
  }

  /// Point on the (scaled) boundary at blob angle theta.
  Point at(double theta, double scale) const {
    const double rho = boundary(theta) * scale;
    const double u = rho * std::cos(theta) * rx_;
    const double v = rho * std::sin(theta) * ry_;
    return {cx_ + cos_ * u - sin_ * v, cy_ + sin_ * u + cos_ * v};
  }

  double max_extent() const { return std::max(rx_, ry_) * (1.0 + s_.lobe_amplitude); }
  double cx() const { return cx_; }
  double cy() const { return cy_; }
  double rx() const { return rx_; }

 private:
  LesionShape s_;
  double cx_, cy_, rx_, ry_, cos_, sin_;
};

// Triangular noise in [-amp, amp] from two random bytes.
inline double byte_noise(std::uint64_t bits, int shift, double amp) {
  const double a = static_cast<double>((bits >> shift) & 0xff);
  const double b = static_cast<double>((bits >> (shift + 8)) & 0xff);
  return (a + b - 255.0) / 255.0 * amp;
}

inline std::uint8_t clamp_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

struct TextureParams {
  double nuclei_density;  // nuclei per 40x pixel
  double nucleus_radius;  // 40x pixels
  double darkness;        // multiplier on nucleus color (smaller = darker)
  std::array<double, 3> stroma;
  std::array<double, 3> nucleus;
};

inline TextureParams texture_for(const SyntheticSpec& spec, Rng& rng) {
  const double sign = spec.label == PrognosisLabel::bad ? 1.0 : -1.0;
  const double s = spec.signal_strength * sign;
  // Slide-level nuisance variation, identical in distribution for both labels.
  const double density_jitter = std::clamp(rng.normal(1.0, 0.08), 0.75, 1.25);
  const double stain_jitter = rng.normal(0.0, 5.0);
  const double hue_jitter = rng.normal(0.0, 5.0);
  TextureParams t;
  t.nuclei_density = 0.0026 * density_jitter * (1.0 + 0.35 * s);
  t.nucleus_radius = 5.0 * (1.0 + 0.12 * s);
  t.darkness = 1.0 - 0.12 * s;
  t.stroma = {228.0 + stain_jitter + hue_jitter, 148.0 + stain_jitter, 204.0 + stain_jitter - hue_jitter};
  t.nucleus = {82.0 + hue_jitter, 58.0, 158.0 - hue_jitter};
  return t;
}

}  // namespace detail

/// Outline used for the lesion annotation: a jittered polygon outside the blob.
inline Polygon synthetic_annotation(const SyntheticSpec& spec) {
  const detail::BlobGeometry blob(spec.lesion_shape, spec.size_40x);
  Rng rng(derive_seed(spec.seed, "annotation"));
  Polygon polygon;
  polygon.kind = PolygonKind::lesion;
  constexpr int kVertices = 40;
  for (int i = 0; i < kVertices; ++i) {
    const double theta = 2.0 * std::numbers::pi * i / kVertices;
    polygon.vertices.push_back(blob.at(theta, 1.10 + rng.uniform(0.0, 0.06)));
  }
  return polygon;
}

/// Ground-truth blob membership on the grid of magnification m (pixel centers).
inline BinaryMask synthetic_blob_truth(const SyntheticSpec& spec, Magnification m) {
  const detail::BlobGeometry blob(spec.lesion_shape, spec.size_40x);
  const std::int64_t w = level_dimension(spec.size_40x.w, m);
  const std::int64_t h = level_dimension(spec.size_40x.h, m);
  const Ratio r = ratio_of(m);
  const double to40 = static_cast<double>(40 * r.den) / static_cast<double>(r.num);
  BinaryMask mask(w, h, spec.slide_id);
  mask.working_magnification = m;
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x)
      mask.set(x, y, blob.inside((static_cast<double>(x) + 0.5) * to40, (static_cast<double>(y) + 0.5) * to40));
  return mask;
}

/// Deterministic synthetic H&E slide: white background, one textured lesion blob
/// whose nuclear density, size and stain depend on the label (scaled by
/// signal_strength), a small unannotated tissue fragment, and a rough lesion outline.
inline SlidePyramid generate_synthetic_slide(const SyntheticSpec& spec) {
  spec.validate();
  const std::int64_t w = spec.size_40x.w;
  const std::int64_t h = spec.size_40x.h;
  const detail::BlobGeometry blob(spec.lesion_shape, spec.size_40x);
  Rng texture_rng(derive_seed(spec.seed, "texture"));
  const detail::TextureParams tex = detail::texture_for(spec, texture_rng);

  RgbImage base(w, h);
  Rng noise_rng(derive_seed(spec.seed, "noise"));
  auto bytes = base.bytes();

  // Small stray fragment in the corner farthest from the lesion.
  const double frag_x = blob.cx() < static_cast<double>(w) / 2 ? 0.88 * static_cast<double>(w) : 0.12 * static_cast<double>(w);
  const double frag_y = blob.cy() < static_cast<double>(h) / 2 ? 0.88 * static_cast<double>(h) : 0.12 * static_cast<double>(h);
  const double frag_r = 0.05 * static_cast<double>(std::min(w, h));

  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      const std::uint64_t bits = noise_rng.bits();
      const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
      std::array<double, 3> c;
      const double fdx = px - frag_x, fdy = py - frag_y;
      if (blob.inside(px, py)) {
        const double n = detail::byte_noise(bits, 0, 14.0);
        c = {tex.stroma[0] + n + detail::byte_noise(bits, 16, 6.0), tex.stroma[1] + n,
             tex.stroma[2] + n + detail::byte_noise(bits, 32, 6.0)};
      } else if (fdx * fdx + fdy * fdy <= frag_r * frag_r) {
        const double n = detail::byte_noise(bits, 0, 10.0);
        c = {214.0 + n, 132.0 + n, 186.0 + n};
      } else {
        const double n = detail::byte_noise(bits, 0, 4.0);
        c = {244.0 + n + detail::byte_noise(bits, 16, 2.0), 243.0 + n, 245.0 + n + detail::byte_noise(bits, 32, 2.0)};
      }
      const std::size_t i = static_cast<std::size_t>((y * w + x) * 3);
      bytes[i] = detail::clamp_byte(c[0]);
      bytes[i + 1] = detail::clamp_byte(c[1]);
      bytes[i + 2] = detail::clamp_byte(c[2]);
    }
  }

  // Nuclei: disks placed by thinning a uniform process with a smooth density field.
  Rng nuclei_rng(derive_seed(spec.seed, "nuclei"));
  const double fx1 = nuclei_rng.uniform(2.0, 5.0), fy1 = nuclei_rng.uniform(2.0, 5.0);
  const double ph1 = nuclei_rng.uniform(0.0, 6.283), ph2 = nuclei_rng.uniform(0.0, 6.283);
  const double extent = blob.max_extent();
  const double bx0 = std::max(0.0, blob.cx() - extent), bx1 = std::min(static_cast<double>(w), blob.cx() + extent);
  const double by0 = std::max(0.0, blob.cy() - extent), by1 = std::min(static_cast<double>(h), blob.cy() + extent);
  const double box_area = (bx1 - bx0) * (by1 - by0);
  constexpr double kFieldAmplitude = 0.3;
  const auto proposals = static_cast<std::int64_t>(box_area * tex.nuclei_density * (1.0 + kFieldAmplitude));
  for (std::int64_t k = 0; k < proposals; ++k) {
    const double nx = nuclei_rng.uniform(bx0, bx1);
    const double ny = nuclei_rng.uniform(by0, by1);
    const double field = 1.0 + kFieldAmplitude * std::sin(fx1 * nx / static_cast<double>(w) * 6.283 + ph1) *
                                   std::sin(fy1 * ny / static_cast<double>(h) * 6.283 + ph2);
    const double accept = nuclei_rng.uniform() * (1.0 + kFieldAmplitude);
    const double radius = std::max(1.5, nuclei_rng.normal(tex.nucleus_radius, 0.2 * tex.nucleus_radius));
    const double shade = tex.darkness * nuclei_rng.uniform(0.85, 1.15);
    if (accept > field || !blob.inside(nx, ny)) continue;
    const auto x0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(nx - radius));
    const auto x1 = std::min<std::int64_t>(w - 1, static_cast<std::int64_t>(nx + radius) + 1);
    const auto y0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(ny - radius));
    const auto y1 = std::min<std::int64_t>(h - 1, static_cast<std::int64_t>(ny + radius) + 1);
    for (std::int64_t y = y0; y <= y1; ++y)
      for (std::int64_t x = x0; x <= x1; ++x) {
        const double dx = static_cast<double>(x) + 0.5 - nx, dy = static_cast<double>(y) + 0.5 - ny;
        if (dx * dx + dy * dy > radius * radius) continue;
        if (!blob.inside(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5)) continue;
        const std::size_t i = static_cast<std::size_t>((y * w + x) * 3);
        for (int c = 0; c < 3; ++c) bytes[i + c] = detail::clamp_byte(tex.nucleus[c] * shade);
      }
  }

  std::vector<Polygon> annotations{synthetic_annotation(spec)};
  return SlidePyramid::from_base(spec.slide_id, spec.label, std::move(base), std::move(annotations));
}

/// Cohort member i of a balanced synthetic cohort. Slides are listed good first.
struct CohortSpec {
  std::size_t n_good = 26;
  std::size_t n_bad = 26;
  std::uint64_t seed = 7;
  PixelSize size_40x{3072, 3072};
  double signal_strength = 0.8;

  std::size_t size() const { return n_good + n_bad; }

  SyntheticSpec member(std::size_t i) const {
    if (i >= size()) throw ValidationError("cohort index out of range");
    SyntheticSpec s;
    s.label = i < n_good ? PrognosisLabel::good : PrognosisLabel::bad;
    s.seed = derive_seed(seed, static_cast<std::uint64_t>(i));
    s.size_40x = size_40x;
    s.signal_strength = signal_strength;
    s.lesion_shape = random_lesion_shape(s.seed);
    char id[32];
    std::snprintf(id, sizeof id, "slide_%03zu", i);
    s.slide_id = id;
    return s;
  }
};

}  // namespace slideprog
