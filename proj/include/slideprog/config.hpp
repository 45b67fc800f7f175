#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "slideprog/classifier.hpp"
#include "slideprog/masking.hpp"
#include "slideprog/patching.hpp"

namespace slideprog {

struct Seeds {
  std::uint64_t split = 1;     // stratified folds
  std::uint64_t sampling = 2;  // per-slide patch cap
  std::uint64_t embedder = 3;  // reference embedder projections
  std::uint64_t training = 4;  // init, batch order, dropout, augmentation
  friend bool operator==(const Seeds&, const Seeds&) = default;
};

/// Derive all stage seeds from one master seed.
inline Seeds seeds_from(std::uint64_t master) {
  return {derive_seed(master, "split"), derive_seed(master, "sampling"), derive_seed(master, "embedder"),
          derive_seed(master, "training")};
}

struct PipelineConfig {
  std::vector<Magnification> magnifications{Magnification::x20};
  std::int64_t patch_size = 224;
  double coverage_min = 0.7;
  std::size_t cap = 250;
  MaskSettings mask;
  int folds = 5;
  Seeds seeds = seeds_from(7);
  TrainConfig train;
  std::int64_t hidden_width = kDefaultHiddenWidth;
  int workers = 1;

  int scale_count() const { return static_cast<int>(magnifications.size()); }

  DatasetOptions dataset_options() const {
    return {magnifications, patch_size, coverage_min, cap, seeds.sampling};
  }

  void validate() const {
    if (magnifications.empty()) throw ValidationError("magnifications must be a non-empty subset of {10,20,40}");
    for (std::size_t i = 0; i < magnifications.size(); ++i) {
      if (magnifications[i] == Magnification::x2_5)
        throw ValidationError("patch magnifications must be drawn from {10, 20, 40}");
      for (std::size_t j = 0; j < i; ++j)
        if (magnifications[i] == magnifications[j]) throw ValidationError("duplicate magnification");
    }
    if (patch_size <= 0 || patch_size % 2 != 0) throw ValidationError("patch_size must be positive and even");
    if (!(coverage_min > 0.0 && coverage_min <= 1.0)) throw ValidationError("coverage_min must lie in (0, 1]");
    if (cap == 0) throw ValidationError("cap must be positive");
    if (mask.radius < 0) throw ValidationError("morphology radius must be >= 0");
    mask.thresholds.validate();
    if (folds < 2) throw ValidationError("k must be >= 2");
    if (hidden_width < 1) throw ValidationError("hidden_width must be positive");
    if (workers < 1) throw ValidationError("workers must be >= 1");
    train.validate();
  }
};

/// Pipeline defaults for a magnification set, including the scale-dependent learning rate.
inline PipelineConfig default_config(std::vector<Magnification> mags) {
  PipelineConfig cfg;
  cfg.magnifications = std::move(mags);
  cfg.train.learning_rate = TrainConfig::default_learning_rate(cfg.scale_count());
  return cfg;
}

inline std::vector<Magnification> parse_magnifications(const std::string& text) {
  std::vector<Magnification> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t end = text.find_first_of(",-", start);
    const std::string token = text.substr(start, end == std::string::npos ? std::string::npos : end - start);
    if (token.empty()) throw ValidationError("bad magnification list '" + text + "'");
    double value;
    try {
      value = std::stod(token);
    } catch (const std::exception&) {
      throw ValidationError("bad magnification '" + token + "'");
    }
    out.push_back(magnification_from(value));
    if (end == std::string::npos) break;
    start = end + 1;
  }
  return out;
}

inline nlohmann::ordered_json to_json(const TrainConfig& t) {
  return {{"learning_rate", t.learning_rate}, {"momentum", t.momentum},
          {"dropout_rate", t.dropout_rate},   {"max_epochs", t.max_epochs},
          {"patience", t.patience},           {"min_delta", t.min_delta},
          {"batch_size", t.batch_size},       {"seed", t.seed},
          {"augmentation_enabled", t.augmentation_enabled}, {"convergence_loss", t.convergence_loss}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& t) {
  t.learning_rate = j.value("learning_rate", t.learning_rate);
  t.momentum = j.value("momentum", t.momentum);
  t.dropout_rate = j.value("dropout_rate", t.dropout_rate);
  t.max_epochs = j.value("max_epochs", t.max_epochs);
  t.patience = j.value("patience", t.patience);
  t.min_delta = j.value("min_delta", t.min_delta);
  t.batch_size = j.value("batch_size", t.batch_size);
  t.seed = j.value("seed", t.seed);
  t.augmentation_enabled = j.value("augmentation_enabled", t.augmentation_enabled);
  t.convergence_loss = j.value("convergence_loss", t.convergence_loss);
}

inline nlohmann::ordered_json to_json(const PipelineConfig& c) {
  nlohmann::ordered_json mags = nlohmann::ordered_json::array();
  for (Magnification m : c.magnifications) mags.push_back(value_of(m));
  return {{"magnifications", mags},
          {"patch_size", c.patch_size},
          {"coverage_min", c.coverage_min},
          {"cap", c.cap},
          {"morphology_radius", c.mask.radius},
          {"hsv",
           {{"hue_min", c.mask.thresholds.hue_min},
            {"hue_max", c.mask.thresholds.hue_max},
            {"sat_min", c.mask.thresholds.sat_min}}},
          {"k", c.folds},
          {"seeds",
           {{"split", c.seeds.split},
            {"sampling", c.seeds.sampling},
            {"embedder", c.seeds.embedder},
            {"training", c.seeds.training}}},
          {"hidden_width", c.hidden_width},
          {"train", to_json(c.train)}};
}

/// Overlay a JSON document onto `c`; absent keys keep their current values.
inline void apply_json(const nlohmann::json& j, PipelineConfig& c) {
  if (j.contains("magnifications")) {
    c.magnifications.clear();
    for (const auto& m : j.at("magnifications")) c.magnifications.push_back(magnification_from(m.get<double>()));
    if (!j.contains("train") || !j.at("train").contains("learning_rate"))
      c.train.learning_rate = TrainConfig::default_learning_rate(c.scale_count());
  }
  c.patch_size = j.value("patch_size", c.patch_size);
  c.coverage_min = j.value("coverage_min", c.coverage_min);
  c.cap = j.value("cap", c.cap);
  c.mask.radius = j.value("morphology_radius", c.mask.radius);
  if (j.contains("hsv")) {
    const auto& h = j.at("hsv");
    c.mask.thresholds.hue_min = h.value("hue_min", c.mask.thresholds.hue_min);
    c.mask.thresholds.hue_max = h.value("hue_max", c.mask.thresholds.hue_max);
    c.mask.thresholds.sat_min = h.value("sat_min", c.mask.thresholds.sat_min);
  }
  c.folds = j.value("k", c.folds);
  if (j.contains("seed")) c.seeds = seeds_from(j.at("seed").get<std::uint64_t>());
  if (j.contains("seeds")) {
    const auto& s = j.at("seeds");
    c.seeds.split = s.value("split", c.seeds.split);
    c.seeds.sampling = s.value("sampling", c.seeds.sampling);
    c.seeds.embedder = s.value("embedder", c.seeds.embedder);
    c.seeds.training = s.value("training", c.seeds.training);
  }
  c.hidden_width = j.value("hidden_width", c.hidden_width);
  if (j.contains("train")) from_json(j.at("train"), c.train);
}

}  // namespace slideprog
