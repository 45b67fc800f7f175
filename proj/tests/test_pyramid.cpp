#include <catch2/catch_amalgamated.hpp>

#include <unistd.h>

#include "slideprog/pyramid.hpp"
#include "slideprog/pyramid_io.hpp"
#include "slideprog/synthetic.hpp"
#include "test_support.hpp"

using namespace slideprog;
using slideprog::testing::TempDir;
using slideprog::testing::small_spec;

namespace {

SlidePyramid uniform_slide(Rgb color, std::int64_t size = 256) {
  return SlidePyramid::from_base("uniform", PrognosisLabel::good, RgbImage(size, size, color), {});
}

double mean_abs_error(const RgbImage& a, const RgbImage& b) {
  REQUIRE(a.width() == b.width());
  REQUIRE(a.height() == b.height());
  double total = 0;
  const auto x = a.bytes(), y = b.bytes();
  for (std::size_t i = 0; i < x.size(); ++i) total += std::abs(int(x[i]) - int(y[i]));
  return total / static_cast<double>(x.size());
}

}  // namespace

TEST_CASE("read_region on a constant level") {
  const Rgb blue{0, 0, 255};
  const auto slide = uniform_slide(blue);
  const RgbImage r = read_region(slide, 20.0, {0, 0}, {4, 4});
  REQUIRE(r.width() == 4);
  for (std::int64_t y = 0; y < 4; ++y)
    for (std::int64_t x = 0; x < 4; ++x) CHECK(r.at(x, y) == blue);
}

TEST_CASE("read_region pads outside pixels white") {
  const Rgb blue{0, 0, 255};
  const auto slide = uniform_slide(blue);
  const RgbImage r = read_region(slide, 20.0, {-2, 0}, {4, 4});
  for (std::int64_t y = 0; y < 4; ++y) {
    CHECK(r.at(0, y) == kWhite);
    CHECK(r.at(1, y) == kWhite);
    CHECK(r.at(2, y) == blue);
    CHECK(r.at(3, y) == blue);
  }
  const std::int64_t w20 = slide.level_size(Magnification::x20).w;
  const RgbImage beyond = read_region(slide, Magnification::x20, {w20 + 5, 3}, {3, 3});
  for (std::int64_t y = 0; y < 3; ++y)
    for (std::int64_t x = 0; x < 3; ++x) CHECK(beyond.at(x, y) == kWhite);
  const RgbImage corner = read_region(slide, Magnification::x20, {-1, -1}, {2, 2});
  CHECK(corner.at(0, 0) == kWhite);
  CHECK(corner.at(1, 0) == kWhite);
  CHECK(corner.at(0, 1) == kWhite);
  CHECK(corner.at(1, 1) == blue);
}

TEST_CASE("read_region errors") {
  const auto slide = uniform_slide({1, 2, 3});
  CHECK_THROWS_WITH(read_region(slide, 5.0, {0, 0}, {4, 4}), Catch::Matchers::ContainsSubstring("level not available"));
  CHECK_THROWS_AS(read_region(slide, 20.0, {0, 0}, {0, 4}), ValidationError);
  std::map<Magnification, RgbImage> only40{{Magnification::x40, RgbImage(64, 64)}};
  const SlidePyramid partial("p", PrognosisLabel::good, 64, 64, only40, {});
  CHECK_THROWS_WITH(read_region(partial, 20.0, {0, 0}, {4, 4}),
                    Catch::Matchers::ContainsSubstring("level not available"));
}

TEST_CASE("level dimension rule") {
  const auto slide = SlidePyramid::from_base("odd", PrognosisLabel::bad, RgbImage(1000, 1001), {});
  CHECK(slide.level(Magnification::x20).width() == 500);
  CHECK(slide.level(Magnification::x20).height() == 501);
  CHECK(slide.level(Magnification::x10).width() == 250);
  CHECK(slide.level(Magnification::x10).height() == 250);  // 250.25
  CHECK(slide.level(Magnification::x2_5).width() == 63);   // 62.5 rounds up
  CHECK(slide.level(Magnification::x2_5).height() == 63);  // 62.5625
  std::map<Magnification, RgbImage> bad{{Magnification::x40, RgbImage(100, 100)},
                                        {Magnification::x20, RgbImage(49, 50)}};
  CHECK_THROWS_AS(SlidePyramid("x", PrognosisLabel::good, 100, 100, bad, {}), ValidationError);
  CHECK_THROWS_AS(SlidePyramid("x", PrognosisLabel::good, 100, 100, {},
                               {Polygon{{{0, 0}, {1, 1}}, PolygonKind::lesion}}),
                  ValidationError);
}

TEST_CASE("40x and 20x reads share a physical midpoint") {
  const auto slide = generate_synthetic_slide(small_spec(PrognosisLabel::bad, 3));
  Rng rng(17);
  for (int i = 0; i < 20; ++i) {
    const auto cx = 112 + static_cast<std::int64_t>(rng.below(512 - 224));
    const auto cy = 112 + static_cast<std::int64_t>(rng.below(512 - 224));
    const PixelPoint tl20{cx - 112, cy - 112};
    const PixelPoint tl40{2 * cx - 112, 2 * cy - 112};
    // Midpoints in 40x pixel space.
    CHECK(2 * (tl20.x + 112) == tl40.x + 112);
    CHECK(2 * (tl20.y + 112) == tl40.y + 112);
    // Content check: a 448-wide 40x window centered on the same point box-filters to the 20x window.
    const RgbImage wide40 = read_region(slide, 40.0, {2 * cx - 224, 2 * cy - 224}, {448, 448});
    const RgbImage r20 = read_region(slide, 20.0, tl20, {224, 224});
    CHECK(box_downsample(wide40, 2, 224, 224) == r20);
    // The 224 window at 40x is the central half of that wider window.
    const RgbImage r40 = read_region(slide, 40.0, tl40, {224, 224});
    CHECK(r40 == read_region(slide, 40.0, {2 * cx - 224 + 112, 2 * cy - 224 + 112}, {224, 224}));
  }
}

TEST_CASE("read_region is pure") {
  const auto slide = generate_synthetic_slide(small_spec(PrognosisLabel::good, 4));
  const auto a = read_region(slide, 10.0, {-7, 30}, {50, 40});
  const auto b = read_region(slide, 10.0, {-7, 30}, {50, 40});
  CHECK(a == b);
}

TEST_CASE("stored levels agree under box downsampling") {
  for (std::uint64_t seed : {1u, 2u}) {
    for (PrognosisLabel label : {PrognosisLabel::good, PrognosisLabel::bad}) {
      const auto slide = generate_synthetic_slide(small_spec(label, seed, 1536));
      const Magnification order[] = {Magnification::x40, Magnification::x20, Magnification::x10, Magnification::x2_5};
      for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = i + 1; j < 4; ++j) {
          const Ratio hi = ratio_of(order[i]), lo = ratio_of(order[j]);
          const std::int64_t factor = (hi.num * lo.den) / (hi.den * lo.num);
          const auto size = slide.level_size(order[j]);
          const RgbImage down = box_downsample(slide.level(order[i]), factor, size.w, size.h);
          INFO("levels " << magnification_label(order[i]) << " -> " << magnification_label(order[j]));
          CHECK(mean_abs_error(down, slide.level(order[j])) <= 2.0);
        }
    }
  }
}

TEST_CASE("synthetic slides are deterministic") {
  const auto spec = small_spec(PrognosisLabel::bad, 12);
  CHECK(generate_synthetic_slide(spec) == generate_synthetic_slide(spec));
  auto other = spec;
  other.seed = 13;
  CHECK_FALSE(generate_synthetic_slide(spec) == generate_synthetic_slide(other));
}

TEST_CASE("zero signal gives label-independent texture") {
  auto good = small_spec(PrognosisLabel::good, 21);
  auto bad = good;
  bad.label = PrognosisLabel::bad;
  good.signal_strength = bad.signal_strength = 0.0;
  const auto g = generate_synthetic_slide(good);
  const auto b = generate_synthetic_slide(bad);
  CHECK(g.levels() == b.levels());
  CHECK(g.label() != b.label());
  good.signal_strength = bad.signal_strength = 0.8;
  CHECK_FALSE(generate_synthetic_slide(good).levels() == generate_synthetic_slide(bad).levels());
}

TEST_CASE("synthetic slide structure") {
  const auto spec = small_spec(PrognosisLabel::good, 5);
  const auto slide = generate_synthetic_slide(spec);
  CHECK(slide.levels().size() == 4);
  REQUIRE(slide.annotations().size() == 1);
  CHECK(slide.annotations()[0].kind == PolygonKind::lesion);
  CHECK(slide.annotations()[0].vertices.size() >= 3);
  CHECK(slide.level(Magnification::x40).at(0, 0).r > 200);  // white-ish background corner
  SyntheticSpec bad = spec;
  bad.size_40x = {512, 2048};
  CHECK_THROWS_AS(generate_synthetic_slide(bad), ValidationError);
  bad = spec;
  bad.signal_strength = 1.5;
  CHECK_THROWS_AS(generate_synthetic_slide(bad), ValidationError);
}

TEST_CASE("pyramid directory round trip is bit exact") {
  TempDir dir("pyr");
  auto spec = small_spec(PrognosisLabel::bad, 8);
  const auto slide = generate_synthetic_slide(spec);
  write_pyramid(slide, dir.path() / "s");
  CHECK(std::filesystem::exists(dir.path() / "s" / "manifest.json"));
  CHECK(std::filesystem::exists(dir.path() / "s" / "level_2.5.png"));
  const auto back = read_pyramid(dir.path() / "s");
  CHECK(back == slide);
  const auto header = read_pyramid_header(dir.path() / "s");
  CHECK(header.slide_id == slide.slide_id());
  CHECK(header.annotations == slide.annotations());
  const auto partial = read_pyramid(dir.path() / "s", {Magnification::x2_5});
  CHECK(partial.has_level(Magnification::x2_5));
  CHECK_FALSE(partial.has_level(Magnification::x40));
  CHECK_THROWS_AS(read_pyramid(dir.path() / "missing"), StageError);
}

TEST_CASE("png round trip of arbitrary bytes") {
  TempDir dir("png");
  RgbImage img(37, 23);
  Rng rng(2);
  for (auto& b : img.bytes()) b = static_cast<std::uint8_t>(rng.below(256));
  png::write_rgb(dir / "x.png", img);
  CHECK(png::read_rgb(dir / "x.png") == img);
  std::vector<std::uint8_t> bits(37 * 23);
  for (auto& b : bits) b = rng.bernoulli(0.3) ? 1 : 0;
  png::write_bilevel(dir / "m.png", 37, 23, bits);
  std::int64_t w = 0, h = 0;
  CHECK(png::read_bilevel(dir / "m.png", w, h) == bits);
  CHECK(w == 37);
  CHECK(h == 23);
}
