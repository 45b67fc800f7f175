#pragma once

#include <cmath>

#include "slideprog/core.hpp"
#include "slideprog/image.hpp"

namespace slideprog {

struct AugmentSettings {
  double min_area = 0.8;  // random resized crop keeps this fraction of the area or more
  double max_area = 1.0;
  double flip_probability = 0.5;
};

/// Random resized crop (square, area fraction in [min_area, max_area]) back to the
/// original size, then a horizontal flip with the configured probability.
inline RgbImage augment_patch(const RgbImage& patch, Rng& rng, const AugmentSettings& s = {}) {
  const double area = rng.uniform(s.min_area, s.max_area);
  const bool flip = rng.bernoulli(s.flip_probability);
  const double side_w = static_cast<double>(patch.width()) * std::sqrt(area);
  const double side_h = static_cast<double>(patch.height()) * std::sqrt(area);
  const double x0 = rng.uniform(0.0, static_cast<double>(patch.width()) - side_w);
  const double y0 = rng.uniform(0.0, static_cast<double>(patch.height()) - side_h);
  RgbImage out = resize_crop_bilinear(patch, x0, y0, side_w, side_h, patch.width(), patch.height());
  return flip ? flip_horizontal(out) : out;
}

}  // namespace slideprog
