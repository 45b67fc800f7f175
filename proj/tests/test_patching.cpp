#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <set>

#include "slideprog/patching.hpp"
#include "test_support.hpp"

using namespace slideprog;
using slideprog::testing::TempDir;

namespace {

/// Brute force: upsample the 2.5x mask to 20x pixels and count covered footprint pixels.
double coverage_oracle(const BinaryMask& mask, std::int64_t x0, std::int64_t y0, std::int64_t p) {
  std::int64_t covered = 0;
  for (std::int64_t y = y0; y < y0 + p; ++y)
    for (std::int64_t x = x0; x < x0 + p; ++x) {
      const std::int64_t mx = x / 8, my = y / 8;
      if (x >= 0 && y >= 0 && mx < mask.width && my < mask.height && mask.at(mx, my)) ++covered;
    }
  return static_cast<double>(covered) / static_cast<double>(p * p);
}

std::vector<PatchCoordinate> numbered(std::size_t n) {
  std::vector<PatchCoordinate> v;
  for (std::size_t i = 0; i < n; ++i) v.push_back({"s", {static_cast<std::int64_t>(i), 0}, PrognosisLabel::good});
  return v;
}

std::vector<PatientRecord> cohort(int good, int bad) {
  std::vector<PatientRecord> v;
  for (int i = 0; i < good + bad; ++i)
    v.push_back({"p" + std::to_string(i), i < good ? PrognosisLabel::good : PrognosisLabel::bad});
  return v;
}

SlideRegion region(const std::string& id, PrognosisLabel label, std::int64_t w, std::int64_t h, bool fill) {
  return {id, label, BinaryMask(w, h, id, fill)};
}

}  // namespace

TEST_CASE("full coverage grid count") {
  const BinaryMask all(224, 224, "s", true);
  const auto coords = extract_valid_coordinates(all, 224, 0.7);
  REQUIRE(coords.size() == 64);
  CHECK(coords.front().center_20x == PixelPoint{112, 112});
  CHECK(coords[1].center_20x == PixelPoint{336, 112});  // row-major
  CHECK(coords.back().center_20x == PixelPoint{7 * 224 + 112, 7 * 224 + 112});
  CHECK(extract_valid_coordinates(BinaryMask(224, 224), 224, 0.7).empty());
}

TEST_CASE("extraction preconditions") {
  const BinaryMask m(16, 16, "s", true);
  CHECK_THROWS_AS(extract_valid_coordinates(m, 0, 0.7), ValidationError);
  CHECK_THROWS_AS(extract_valid_coordinates(m, 224, 0.0), ValidationError);
  CHECK_THROWS_AS(extract_valid_coordinates(m, 224, 1.5), ValidationError);
  BinaryMask at10 = m;
  at10.working_magnification = Magnification::x10;
  CHECK_THROWS_AS(extract_valid_coordinates(at10, 224, 0.7), ValidationError);
}

TEST_CASE("half-plane mask matches brute-force coverage") {
  for (std::int64_t edge : {100, 105, 112, 119, 130}) {
    BinaryMask m(224, 224, "h");
    for (std::int64_t y = 0; y < 224; ++y)
      for (std::int64_t x = 0; x < edge; ++x) m.set(x, y, true);
    const auto coords = extract_valid_coordinates(m, 224, 0.7);
    std::size_t expected = 0;
    for (std::int64_t gy = 0; gy < 8; ++gy)
      for (std::int64_t gx = 0; gx < 8; ++gx)
        if (coverage_oracle(m, gx * 224, gy * 224, 224) >= 0.7) ++expected;
    INFO("edge " << edge);
    CHECK(coords.size() == expected);
    for (const auto& c : coords) CHECK((c.center_20x.x + 112) <= edge * 8 + 0.3 * 224);
  }
}

TEST_CASE("footprint coverage equals brute force on random masks") {
  Rng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    BinaryMask m(20 + static_cast<std::int64_t>(rng.below(20)), 20 + static_cast<std::int64_t>(rng.below(20)));
    for (auto& v : m.grid) v = rng.bernoulli(0.5);
    const auto x0 = static_cast<std::int64_t>(rng.below(200)) - 40;
    const auto y0 = static_cast<std::int64_t>(rng.below(200)) - 40;
    const std::int64_t p = 2 + 2 * static_cast<std::int64_t>(rng.below(60));
    REQUIRE(footprint_coverage(m, x0, y0, p) == Catch::Approx(coverage_oracle(m, x0, y0, p)).margin(1e-12));
  }
}

TEST_CASE("projection to other magnifications") {
  CHECK(project_patch({1000, 1000}, Magnification::x20, 224) == PixelPoint{888, 888});
  CHECK(project_patch({1000, 1000}, Magnification::x40, 224) == PixelPoint{1888, 1888});
  CHECK(project_patch({1001, 999}, Magnification::x10, 224) == PixelPoint{389, 388});
  CHECK_THROWS_AS(project_patch({0, 0}, Magnification::x20, 223), ValidationError);
  // Oracle table of odd coordinates at 10x: exact half-up rounding of c/2.
  const std::pair<std::int64_t, std::int64_t> table[] = {{1, 1}, {3, 2}, {5, 3}, {-1, 0}, {-3, -1}, {999, 500}};
  for (auto [c, scaled] : table) CHECK(project_patch({c, c}, Magnification::x10, 2).x == scaled - 1);
}

TEST_CASE("projected midpoint maps back to the 20x center") {
  Rng rng(4);
  for (int i = 0; i < 5000; ++i) {
    const PixelPoint c{static_cast<std::int64_t>(rng.below(100000)) - 1000,
                       static_cast<std::int64_t>(rng.below(100000)) - 1000};
    for (Magnification m : {Magnification::x10, Magnification::x20, Magnification::x40}) {
      const PixelPoint tl = project_patch(c, m, 224);
      const double back_x = static_cast<double>(tl.x + 112) * 20.0 / value_of(m);
      const double back_y = static_cast<double>(tl.y + 112) * 20.0 / value_of(m);
      REQUIRE(std::abs(back_x - static_cast<double>(c.x)) <= 1.0);
      REQUIRE(std::abs(back_y - static_cast<double>(c.y)) <= 1.0);
    }
  }
}

TEST_CASE("sampling below and above the cap") {
  const auto hundred = numbered(100);
  CHECK(sample_coordinates(hundred, 250, 1) == hundred);
  const auto thousand = numbered(1000);
  const auto a = sample_coordinates(thousand, 250, 9);
  CHECK(a.size() == 250);
  CHECK(a == sample_coordinates(thousand, 250, 9));
  CHECK_FALSE(a == sample_coordinates(thousand, 250, 10));
  for (std::size_t i = 1; i < a.size(); ++i) CHECK(a[i - 1].center_20x.x < a[i].center_20x.x);
  std::set<std::int64_t> unique;
  for (const auto& c : a) unique.insert(c.center_20x.x);
  CHECK(unique.size() == 250);
  CHECK_THROWS_AS(sample_coordinates(thousand, 0, 1), ValidationError);
}

TEST_CASE("sampling is uniform over coordinates") {
  std::vector<int> index(1000);
  for (int i = 0; i < 1000; ++i) index[static_cast<std::size_t>(i)] = i;
  std::vector<int> hits(1000, 0);
  const int seeds = 10000;
  for (int s = 0; s < seeds; ++s)
    for (int i : sample_coordinates(index, 250, static_cast<std::uint64_t>(s))) ++hits[static_cast<std::size_t>(i)];
  for (int h : hits) REQUIRE(std::abs(static_cast<double>(h) / seeds - 0.25) <= 0.02);
}

TEST_CASE("stratified folds for the reference cohort") {
  const auto patients = cohort(26, 26);
  const auto folds = stratified_kfold(patients, 5, 42);
  REQUIRE(folds.size() == 5);
  std::multiset<std::size_t> sizes;
  std::map<std::string, PrognosisLabel> label;
  for (const auto& p : patients) label[p.slide_id] = p.label;
  for (const auto& f : folds) {
    sizes.insert(f.val_ids.size());
    int good = 0, bad = 0;
    for (const auto& id : f.val_ids) (label[id] == PrognosisLabel::good ? good : bad)++;
    CHECK(std::abs(good - bad) <= 1);
    CHECK(f.train_ids.size() + f.val_ids.size() == 52);
  }
  CHECK(sizes == std::multiset<std::size_t>{10, 10, 10, 11, 11});
  CHECK(stratified_kfold(patients, 5, 42).front().val_ids == folds.front().val_ids);
}

TEST_CASE("two folds of a four-patient cohort") {
  const auto patients = cohort(2, 2);
  const auto folds = stratified_kfold(patients, 2, 3);
  for (const auto& f : folds) {
    REQUIRE(f.val_ids.size() == 2);
    std::set<std::string> ids(f.val_ids.begin(), f.val_ids.end());
    const bool one_good = ids.contains("p0") != ids.contains("p1");
    const bool one_bad = ids.contains("p2") != ids.contains("p3");
    CHECK(one_good);
    CHECK(one_bad);
  }
}

TEST_CASE("fold errors") {
  CHECK_THROWS_AS(stratified_kfold(cohort(4, 10), 5, 1), ValidationError);
  CHECK_THROWS_AS(stratified_kfold(cohort(10, 10), 1, 1), ValidationError);
}

TEST_CASE("folds partition random cohorts") {
  Rng rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    const int k = 2 + static_cast<int>(rng.below(9));
    const int good = k + static_cast<int>(rng.below(static_cast<std::uint64_t>(100 - k)));
    const int bad = k + static_cast<int>(rng.below(static_cast<std::uint64_t>(100 - k)));
    const auto patients = cohort(good, bad);
    const auto folds = stratified_kfold(patients, k, rng.bits());
    std::multiset<std::string> val;
    for (const auto& f : folds) {
      val.insert(f.val_ids.begin(), f.val_ids.end());
      std::set<std::string> tr(f.train_ids.begin(), f.train_ids.end());
      for (const auto& id : f.val_ids) REQUIRE_FALSE(tr.contains(id));
      REQUIRE(tr.size() + f.val_ids.size() == patients.size());
      int g = 0;
      for (const auto& id : f.val_ids) g += std::stoi(id.substr(1)) < good ? 1 : 0;
      REQUIRE(std::abs(g * k - good) <= k);
      REQUIRE(std::abs((static_cast<int>(f.val_ids.size()) - g) * k - bad) <= k);
    }
    REQUIRE(val.size() == patients.size());
    REQUIRE(std::set<std::string>(val.begin(), val.end()).size() == patients.size());
  }
}

TEST_CASE("datasets partition slides and cap patches") {
  // 8x8 footprints (64 patches) for the small slides; 32x32 footprints (1024) for the big one.
  const std::vector<SlideRegion> slides{region("a", PrognosisLabel::good, 224, 224, true),
                                        region("b", PrognosisLabel::bad, 224, 224, true),
                                        region("c", PrognosisLabel::good, 224, 224, true),
                                        region("big", PrognosisLabel::bad, 896, 896, true),
                                        region("empty", PrognosisLabel::bad, 224, 224, false)};
  const FoldSplit split{{"a", "big", "empty"}, {"b", "c"}};
  DatasetOptions opt;
  opt.seed = 77;
  const auto [train, val] = build_dataset(slides, split, 1, opt);
  std::map<std::string, int> count;
  for (const auto& e : train.entries) ++count[e.slide_id];
  for (const auto& e : val.entries) {
    CHECK_FALSE(count.contains(e.slide_id));
  }
  CHECK(count["a"] == 64);
  CHECK(count["big"] == 250);
  CHECK(val.entries.size() == 128);
  REQUIRE(train.warnings.size() == 1);
  CHECK(train.warnings[0].find("empty") != std::string::npos);
  CHECK(val.warnings.empty());
  for (const auto& e : train.entries) CHECK(e.label == (e.slide_id == "a" ? PrognosisLabel::good : PrognosisLabel::bad));
  CHECK(manifest_filename(train) == "D_m20_t1.csv");
  CHECK(manifest_filename(val) == "D_m20_v1.csv");
  CHECK_THROWS_AS(build_dataset(slides, FoldSplit{{"a", "b"}, {"b", "c", "big", "empty"}}, 1, opt), ValidationError);
  CHECK_THROWS_AS(build_dataset(slides, FoldSplit{{"a"}, {"b", "c", "big"}}, 1, opt), ValidationError);
}

TEST_CASE("manifest text round trip and deterministic rebuild") {
  TempDir dir("manifest");
  const std::vector<SlideRegion> slides{region("x", PrognosisLabel::good, 896, 896, true),
                                        region("y", PrognosisLabel::bad, 448, 448, true)};
  DatasetOptions opt;
  opt.magnifications = {Magnification::x10, Magnification::x20, Magnification::x40};
  opt.seed = 5;
  const auto [train, val] = build_dataset(slides, FoldSplit{{"x"}, {"y"}}, 3, opt);
  CHECK(manifest_filename(train) == "D_m10-20-40_t3.csv");
  const auto path = write_manifest(dir.path(), train);
  CHECK(read_manifest(path) == train);
  CHECK(parse_manifest(to_text(val)) == val);
  const auto first = slideprog::testing::slurp(path);
  const auto [again, unused] = build_dataset(slides, FoldSplit{{"x"}, {"y"}}, 3, opt);
  write_manifest(dir.path(), again);
  CHECK(slideprog::testing::slurp(path) == first);
  CHECK(first.rfind("# {", 0) == 0);
  CHECK_THROWS_AS(parse_manifest("slide_id,label\n"), StageError);
  CHECK_THROWS_AS(read_manifest(dir / "missing.csv"), StageError);
}
