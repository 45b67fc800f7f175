#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "slideprog/core.hpp"

using namespace slideprog;

TEST_CASE("magnification values and ratios") {
  CHECK(value_of(Magnification::x40) == 40.0);
  CHECK(value_of(Magnification::x2_5) == 2.5);
  CHECK(magnification_from(2.5) == Magnification::x2_5);
  CHECK(magnification_from(10) == Magnification::x10);
  CHECK(magnification_label(Magnification::x2_5) == "2.5");
  CHECK_THROWS_WITH(magnification_from(5.0), Catch::Matchers::ContainsSubstring("level not available"));
  for (Magnification m : kAllLevels) {
    const Ratio r = ratio_of(m);
    CHECK(static_cast<double>(r.num) / static_cast<double>(r.den) == value_of(m));
  }
}

TEST_CASE("round-half-up scaling") {
  CHECK(scale_round(1001, 1, 2) == 501);  // 500.5
  CHECK(scale_round(999, 1, 2) == 500);   // 499.5
  CHECK(scale_round(-1, 1, 2) == 0);      // -0.5 rounds up
  CHECK(scale_round(-3, 1, 2) == -1);     // -1.5 rounds up
  CHECK(rescale(1000, Magnification::x20, Magnification::x40) == 2000);
  CHECK(rescale(1001, Magnification::x20, Magnification::x10) == 501);
  CHECK(level_dimension(3072, Magnification::x2_5) == 192);
  CHECK(level_dimension(1000, Magnification::x2_5) == 63);  // 62.5
  CHECK(level_dimension(1001, Magnification::x20) == 501);  // 500.5

  // Oracle: exact rational rounding via long double floor(x + 0.5).
  Rng rng(11);
  for (int i = 0; i < 20000; ++i) {
    const auto v = static_cast<std::int64_t>(rng.below(2000001)) - 1000000;
    const std::int64_t num = 1 + static_cast<std::int64_t>(rng.below(8));
    const std::int64_t den = 1 + static_cast<std::int64_t>(rng.below(32));
    const long double exact = static_cast<long double>(v) * num / den;
    REQUIRE(scale_round(v, num, den) == static_cast<std::int64_t>(std::floor(exact + 0.5L)));
  }
}

TEST_CASE("floor division") {
  CHECK(floor_div(7, 2) == 3);
  CHECK(floor_div(-7, 2) == -4);
  CHECK(floor_div(-8, 2) == -4);
  CHECK(floor_div(0, 5) == 0);
}

TEST_CASE("labels") {
  CHECK(parse_label("good") == PrognosisLabel::good);
  CHECK(parse_label("bad") == PrognosisLabel::bad);
  CHECK(as_int(PrognosisLabel::bad) == 1);
  CHECK(to_string(PrognosisLabel::good) == "good");
  CHECK_THROWS_AS(parse_label("ugly"), ValidationError);
}

TEST_CASE("seed derivation") {
  CHECK(derive_seed(7, "split") == derive_seed(7, "split"));
  CHECK(derive_seed(7, "split") != derive_seed(7, "sampling"));
  CHECK(derive_seed(7, 1) != derive_seed(8, 1));
  std::set<std::uint64_t> seen;
  for (std::uint64_t i = 0; i < 1000; ++i) seen.insert(derive_seed(42, i));
  CHECK(seen.size() == 1000);
}

TEST_CASE("rng determinism and ranges") {
  Rng a(5), b(5);
  for (int i = 0; i < 100; ++i) REQUIRE(a.bits() == b.bits());
  Rng r(9);
  double sum = 0, sq = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    const double z = r.normal();
    sum += z;
    sq += z * z;
  }
  CHECK(std::abs(sum / n) < 0.01);
  CHECK(std::abs(sq / n - 1.0) < 0.02);
}

TEST_CASE("rng below is uniform") {
  Rng r(3);
  std::vector<int> counts(7, 0);
  const int n = 70000;
  for (int i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(r.below(7))];
  for (int c : counts) CHECK(std::abs(c - n / 7) < 5 * std::sqrt(n / 7.0));
}

TEST_CASE("shuffle is a permutation") {
  Rng r(1);
  std::vector<int> v(100);
  std::iota(v.begin(), v.end(), 0);
  auto w = v;
  r.shuffle(w.begin(), w.end());
  CHECK(w != v);
  std::sort(w.begin(), w.end());
  CHECK(w == v);
}
