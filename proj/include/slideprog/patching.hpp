#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "slideprog/core.hpp"
#include "slideprog/masking.hpp"
#include "slideprog/pyramid.hpp"

namespace slideprog {

/// One patch: its center at 20x and the label inherited from the patient.
struct PatchCoordinate {
  std::string slide_id;
  PixelPoint center_20x;
  PrognosisLabel label = PrognosisLabel::good;
  friend bool operator==(const PatchCoordinate&, const PatchCoordinate&) = default;
};

/// Identifies a patch independent of label.
struct PatchRef {
  std::string slide_id;
  PixelPoint center_20x;
  friend bool operator==(const PatchRef&, const PatchRef&) = default;
  friend auto operator<=>(const PatchRef&, const PatchRef&) = default;
};

inline PatchRef ref_of(const PatchCoordinate& c) { return {c.slide_id, c.center_20x}; }

inline std::string describe(const PatchRef& ref) {
  return ref.slide_id + "@(" + std::to_string(ref.center_20x.x) + "," + std::to_string(ref.center_20x.y) + ")";
}

/// Fraction of the 20x footprint [x0, x0+P) x [y0, y0+P) covered by the 2.5x mask,
/// weighting each mask pixel by its overlap area.
inline double footprint_coverage(const BinaryMask& mask, std::int64_t x0_20, std::int64_t y0_20,
                                 std::int64_t patch_size) {
  constexpr std::int64_t kScale = 8;  // 20x pixels per 2.5x pixel
  const std::int64_t x1_20 = x0_20 + patch_size, y1_20 = y0_20 + patch_size;
  std::int64_t covered = 0;  // in 20x pixel units
  for (std::int64_t my = floor_div(y0_20, kScale); my * kScale < y1_20; ++my) {
    if (my < 0 || my >= mask.height) continue;
    const std::int64_t oy = std::min(y1_20, (my + 1) * kScale) - std::max(y0_20, my * kScale);
    for (std::int64_t mx = floor_div(x0_20, kScale); mx * kScale < x1_20; ++mx) {
      if (mx < 0 || mx >= mask.width || !mask.at(mx, my)) continue;
      const std::int64_t ox = std::min(x1_20, (mx + 1) * kScale) - std::max(x0_20, mx * kScale);
      covered += ox * oy;
    }
  }
  return static_cast<double>(covered) / static_cast<double>(patch_size * patch_size);
}

/// Valid patch centers on the non-overlapping 20x grid (stride = patch size) whose
/// footprint coverage by the lesion mask is at least coverage_min. Row-major order.
inline std::vector<PatchCoordinate> extract_valid_coordinates(const BinaryMask& lesion, std::int64_t patch_size,
                                                              double coverage_min,
                                                              PrognosisLabel label = PrognosisLabel::good) {
  if (patch_size <= 0) throw ValidationError("patch_size must be positive");
  if (!(coverage_min > 0.0 && coverage_min <= 1.0)) throw ValidationError("coverage_min must lie in (0, 1]");
  if (lesion.working_magnification != kMaskLevel) throw ValidationError("lesion mask must be at 2.5x");
  std::vector<PatchCoordinate> out;
  const std::int64_t cols = lesion.width * 8 / patch_size;
  const std::int64_t rows = lesion.height * 8 / patch_size;
  for (std::int64_t gy = 0; gy < rows; ++gy)
    for (std::int64_t gx = 0; gx < cols; ++gx) {
      const std::int64_t x0 = gx * patch_size, y0 = gy * patch_size;
      if (footprint_coverage(lesion, x0, y0, patch_size) >= coverage_min)
        out.push_back({lesion.slide_id, {x0 + patch_size / 2, y0 + patch_size / 2}, label});
    }
  return out;
}

/// Top-left corner at magnification m of a P x P patch centered on the 20x center.
inline PixelPoint project_patch(PixelPoint center_20x, Magnification target, std::int64_t patch_size) {
  if (patch_size % 2 != 0) throw ValidationError("patch size must be even");
  const std::int64_t cx = rescale(center_20x.x, Magnification::x20, target);
  const std::int64_t cy = rescale(center_20x.y, Magnification::x20, target);
  return {cx - patch_size / 2, cy - patch_size / 2};
}

/// At most `cap` coordinates, uniformly without replacement, in original order.
template <typename T>
std::vector<T> sample_coordinates(const std::vector<T>& coords, std::size_t cap, std::uint64_t seed) {
  if (cap == 0) throw ValidationError("cap must be positive");
  if (coords.size() <= cap) return coords;
  std::vector<std::size_t> index(coords.size());
  for (std::size_t i = 0; i < index.size(); ++i) index[i] = i;
  Rng rng(seed);
  // Partial Fisher-Yates: the first `cap` slots become a uniform sample.
  for (std::size_t i = 0; i < cap; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(index.size() - i));
    std::swap(index[i], index[j]);
  }
  index.resize(cap);
  std::sort(index.begin(), index.end());
  std::vector<T> out;
  out.reserve(cap);
  for (std::size_t i : index) out.push_back(coords[i]);
  return out;
}

struct PatientRecord {
  std::string slide_id;
  PrognosisLabel label = PrognosisLabel::good;
};

struct FoldSplit {
  std::vector<std::string> train_ids;
  std::vector<std::string> val_ids;
};

/// Patient-level stratified k-fold. Each class is shuffled, classes are concatenated
/// (good, then bad) and dealt round-robin, so every fold's class counts are within
/// one of perfect stratification. Ids within each split keep cohort order.
inline std::vector<FoldSplit> stratified_kfold(const std::vector<PatientRecord>& patients, int k,
                                               std::uint64_t seed) {
  if (k < 2) throw ValidationError("stratified_kfold needs k >= 2");
  std::vector<std::size_t> by_class[2];
  for (std::size_t i = 0; i < patients.size(); ++i) by_class[as_int(patients[i].label)].push_back(i);
  for (int c = 0; c < 2; ++c)
    if (by_class[c].size() < static_cast<std::size_t>(k))
      throw ValidationError("class '" + std::string(to_string(static_cast<PrognosisLabel>(c))) + "' has " +
                            std::to_string(by_class[c].size()) + " patients, fewer than k=" + std::to_string(k));
  Rng rng(seed);
  std::vector<int> fold_of(patients.size(), -1);
  std::size_t deal = 0;
  for (int c = 0; c < 2; ++c) {
    rng.shuffle(by_class[c].begin(), by_class[c].end());
    for (std::size_t i : by_class[c]) fold_of[i] = static_cast<int>(deal++ % static_cast<std::size_t>(k));
  }
  std::vector<FoldSplit> folds(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < patients.size(); ++i)
    for (int f = 0; f < k; ++f)
      (fold_of[i] == f ? folds[f].val_ids : folds[f].train_ids).push_back(patients[i].slide_id);
  return folds;
}

enum class Split : std::uint8_t { train, validation };

/// D^m_{t/v k}: patch start coordinates for one split of one fold.
struct DatasetManifest {
  std::vector<Magnification> magnifications{Magnification::x20};
  Split split = Split::train;
  int fold = 1;
  std::uint64_t seed = 0;
  std::int64_t patch_size = 224;
  std::size_t cap = 250;
  std::vector<std::string> warnings;
  std::vector<PatchCoordinate> entries;

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

struct DatasetOptions {
  std::vector<Magnification> magnifications{Magnification::x20};
  std::int64_t patch_size = 224;
  double coverage_min = 0.7;
  std::size_t cap = 250;
  std::uint64_t seed = 0;
};

/// A slide's lesion region ready for extraction.
struct SlideRegion {
  std::string slide_id;
  PrognosisLabel label = PrognosisLabel::good;
  BinaryMask lesion;
};

/// Extraction + capped sampling for one slide. The sampling stream depends only on
/// the dataset seed and the slide id, so a slide's patches are the same in every fold.
inline std::vector<PatchCoordinate> select_slide_patches(const SlideRegion& region, const DatasetOptions& opt) {
  const auto coords = extract_valid_coordinates(region.lesion, opt.patch_size, opt.coverage_min, region.label);
  std::vector<PatchCoordinate> labeled = coords;
  for (auto& c : labeled) c.slide_id = region.slide_id;
  return sample_coordinates(labeled, opt.cap, derive_seed(opt.seed, region.slide_id));
}

inline std::pair<DatasetManifest, DatasetManifest> build_dataset(const std::vector<SlideRegion>& slides,
                                                                 const FoldSplit& split, int fold,
                                                                 const DatasetOptions& opt) {
  DatasetManifest train, val;
  for (DatasetManifest* d : {&train, &val}) {
    d->magnifications = opt.magnifications;
    d->fold = fold;
    d->seed = opt.seed;
    d->patch_size = opt.patch_size;
    d->cap = opt.cap;
  }
  train.split = Split::train;
  val.split = Split::validation;
  const std::set<std::string> train_ids(split.train_ids.begin(), split.train_ids.end());
  const std::set<std::string> val_ids(split.val_ids.begin(), split.val_ids.end());
  for (const SlideRegion& region : slides) {
    const bool in_train = train_ids.contains(region.slide_id);
    const bool in_val = val_ids.contains(region.slide_id);
    if (in_train == in_val)
      throw ValidationError("slide " + region.slide_id + " must be in exactly one split of fold " + std::to_string(fold));
    DatasetManifest& target = in_train ? train : val;
    auto patches = select_slide_patches(region, opt);
    if (patches.empty()) {
      target.warnings.push_back("slide " + region.slide_id + ": no valid patches, skipped");
      continue;
    }
    target.entries.insert(target.entries.end(), patches.begin(), patches.end());
  }
  return {std::move(train), std::move(val)};
}

// D_m<10-20-40>_<t|v><k>.csv : a '#'-prefixed JSON header line, then CSV.

inline std::string magnification_tag(const std::vector<Magnification>& mags) {
  std::string tag;
  for (Magnification m : mags) tag += (tag.empty() ? "" : "-") + magnification_label(m);
  return tag;
}

inline std::string manifest_filename(const DatasetManifest& d) {
  return "D_m" + magnification_tag(d.magnifications) + "_" + (d.split == Split::train ? "t" : "v") +
         std::to_string(d.fold) + ".csv";
}

inline std::string to_text(const DatasetManifest& d) {
  nlohmann::ordered_json header;
  nlohmann::ordered_json mags = nlohmann::ordered_json::array();
  for (Magnification m : d.magnifications) mags.push_back(value_of(m));
  header["m"] = mags;
  header["split"] = d.split == Split::train ? "t" : "v";
  header["k"] = d.fold;
  header["seed"] = d.seed;
  header["patch_size"] = d.patch_size;
  header["cap"] = d.cap;
  header["warnings"] = d.warnings;
  std::ostringstream out;
  out << "# " << header.dump() << '\n' << "slide_id,label,center_x_20,center_y_20\n";
  for (const auto& e : d.entries)
    out << e.slide_id << ',' << to_string(e.label) << ',' << e.center_20x.x << ',' << e.center_20x.y << '\n';
  return out.str();
}

inline DatasetManifest parse_manifest(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("# ", 0) != 0) throw StageError("manifest: missing JSON header line");
  const auto header = nlohmann::json::parse(line.substr(2));
  DatasetManifest d;
  d.magnifications.clear();
  for (const auto& m : header.at("m")) d.magnifications.push_back(magnification_from(m.get<double>()));
  d.split = header.at("split").get<std::string>() == "t" ? Split::train : Split::validation;
  d.fold = header.at("k").get<int>();
  d.seed = header.at("seed").get<std::uint64_t>();
  d.patch_size = header.at("patch_size").get<std::int64_t>();
  d.cap = header.at("cap").get<std::size_t>();
  d.warnings = header.at("warnings").get<std::vector<std::string>>();
  if (!std::getline(in, line) || line != "slide_id,label,center_x_20,center_y_20")
    throw StageError("manifest: unexpected CSV header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string id, label, x, y;
    if (!std::getline(row, id, ',') || !std::getline(row, label, ',') || !std::getline(row, x, ',') ||
        !std::getline(row, y))
      throw StageError("manifest: malformed row '" + line + "'");
    d.entries.push_back({id, {std::stoll(x), std::stoll(y)}, parse_label(label)});
  }
  return d;
}

inline std::filesystem::path write_manifest(const std::filesystem::path& dir, const DatasetManifest& d) {
  std::filesystem::create_directories(dir);
  const auto path = dir / manifest_filename(d);
  std::ofstream out(path, std::ios::binary);
  out << to_text(d);
  if (!out) throw StageError("cannot write " + path.string());
  return path;
}

inline DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StageError("cannot read manifest " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_manifest(buffer.str());
}

}  // namespace slideprog
