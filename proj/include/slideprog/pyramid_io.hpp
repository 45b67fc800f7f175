#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "slideprog/png_io.hpp"
#include "slideprog/pyramid.hpp"

namespace slideprog {

// Open pyramid format: one directory per slide with manifest.json and one lossless
// level_<m>.png per stored level.

inline std::string level_filename(Magnification m) { return "level_" + magnification_label(m) + ".png"; }

inline nlohmann::ordered_json manifest_json(const SlidePyramid& slide) {
  nlohmann::ordered_json levels = nlohmann::ordered_json::array();
  for (Magnification m : kAllLevels) {
    if (!slide.has_level(m)) continue;
    const PixelSize size = slide.level_size(m);
    levels.push_back({{"magnification", value_of(m)},
                      {"width", size.w},
                      {"height", size.h},
                      {"file", level_filename(m)}});
  }
  nlohmann::ordered_json annotations = nlohmann::ordered_json::array();
  for (const Polygon& p : slide.annotations()) {
    nlohmann::ordered_json vertices = nlohmann::ordered_json::array();
    for (const Point& v : p.vertices) vertices.push_back({v.x, v.y});
    annotations.push_back({{"kind", to_string(p.kind)}, {"vertices", vertices}});
  }
  return {{"format", "slideprog-pyramid"},
          {"version", 1},
          {"slide_id", slide.slide_id()},
          {"label", to_string(slide.label())},
          {"width_40x", slide.width_40x()},
          {"height_40x", slide.height_40x()},
          {"levels", levels},
          {"annotations", annotations}};
}

inline void write_pyramid(const SlidePyramid& slide, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& [m, image] : slide.levels()) png::write_rgb(dir / level_filename(m), image);
  std::ofstream out(dir / "manifest.json");
  out << manifest_json(slide).dump(2) << '\n';
  if (!out) throw StageError("cannot write manifest in " + dir.string());
}

/// Slide metadata without pixel data.
struct SlideHeader {
  std::string slide_id;
  PrognosisLabel label = PrognosisLabel::good;
  std::int64_t width_40x = 0;
  std::int64_t height_40x = 0;
  std::vector<Magnification> levels;
  std::vector<Polygon> annotations;
};

inline SlideHeader read_pyramid_header(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw StageError("no manifest.json in " + dir.string());
  const auto j = nlohmann::json::parse(in);
  if (j.value("format", "") != "slideprog-pyramid")
    throw StageError(dir.string() + ": not a slideprog pyramid");
  SlideHeader header;
  header.slide_id = j.at("slide_id").get<std::string>();
  header.label = parse_label(j.at("label").get<std::string>());
  header.width_40x = j.at("width_40x").get<std::int64_t>();
  header.height_40x = j.at("height_40x").get<std::int64_t>();
  for (const auto& level : j.at("levels"))
    header.levels.push_back(magnification_from(level.at("magnification").get<double>()));
  for (const auto& a : j.at("annotations")) {
    Polygon p;
    p.kind = a.at("kind").get<std::string>() == "lesion" ? PolygonKind::lesion : PolygonKind::other;
    for (const auto& v : a.at("vertices")) p.vertices.push_back({v.at(0).get<double>(), v.at(1).get<double>()});
    header.annotations.push_back(std::move(p));
  }
  return header;
}

/// Load a pyramid; `only` restricts which levels are decoded (empty = all).
inline SlidePyramid read_pyramid(const std::filesystem::path& dir, const std::vector<Magnification>& only = {}) {
  SlideHeader header = read_pyramid_header(dir);
  std::map<Magnification, RgbImage> levels;
  for (Magnification m : header.levels) {
    if (!only.empty() && std::find(only.begin(), only.end(), m) == only.end()) continue;
    levels[m] = png::read_rgb(dir / level_filename(m));
  }
  return SlidePyramid(header.slide_id, header.label, header.width_40x, header.height_40x,
                      std::move(levels), std::move(header.annotations));
}

}  // namespace slideprog
