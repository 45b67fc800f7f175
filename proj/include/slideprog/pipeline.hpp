#pragma once

#include <atomic>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "slideprog/augment.hpp"
#include "slideprog/classifier.hpp"
#include "slideprog/config.hpp"
#include "slideprog/embedding.hpp"
#include "slideprog/evaluation.hpp"
#include "slideprog/masking.hpp"
#include "slideprog/patching.hpp"
#include "slideprog/pyramid.hpp"
#include "slideprog/pyramid_io.hpp"
#include "slideprog/synthetic.hpp"

namespace slideprog {

// ---------------------------------------------------------------------------
// Cohort sources

class SlideSource {
 public:
  virtual ~SlideSource() = default;
  virtual std::size_t size() const = 0;
  virtual PatientRecord record(std::size_t i) const = 0;
  virtual SlidePyramid load(std::size_t i) const = 0;

  std::vector<PatientRecord> records() const {
    std::vector<PatientRecord> out;
    for (std::size_t i = 0; i < size(); ++i) out.push_back(record(i));
    return out;
  }
};

/// Generates slides on demand so the whole cohort never sits in memory.
class SyntheticSource final : public SlideSource {
 public:
  explicit SyntheticSource(CohortSpec spec) : spec_(spec) {}
  std::size_t size() const override { return spec_.size(); }
  PatientRecord record(std::size_t i) const override {
    const auto s = spec_.member(i);
    return {s.slide_id, s.label};
  }
  SlidePyramid load(std::size_t i) const override { return generate_synthetic_slide(spec_.member(i)); }
  const CohortSpec& spec() const { return spec_; }

 private:
  CohortSpec spec_;
};

inline constexpr const char* kCohortIndex = "cohort.json";

/// Cohort directory written by `synth`: cohort.json plus one pyramid directory per slide.
class DirectorySource final : public SlideSource {
 public:
  explicit DirectorySource(std::filesystem::path root) : root_(std::move(root)) {
    std::ifstream in(root_ / kCohortIndex);
    if (!in) throw StageError("no " + std::string(kCohortIndex) + " in " + root_.string() + "; run synth first");
    const auto index = nlohmann::json::parse(in);
    for (const auto& s : index.at("slides")) {
      records_.push_back({s.at("slide_id").get<std::string>(), parse_label(s.at("label").get<std::string>())});
      dirs_.push_back(s.at("dir").get<std::string>());
    }
  }
  std::size_t size() const override { return records_.size(); }
  PatientRecord record(std::size_t i) const override { return records_.at(i); }
  SlidePyramid load(std::size_t i) const override { return read_pyramid(slide_path(i)); }
  std::filesystem::path slide_path(std::size_t i) const { return root_ / dirs_.at(i); }

 private:
  std::filesystem::path root_;
  std::vector<PatientRecord> records_;
  std::vector<std::string> dirs_;
};

/// Same slides, labels permuted across patients (class balance preserved).
class RelabeledSource final : public SlideSource {
 public:
  RelabeledSource(const SlideSource& inner, std::uint64_t seed) : inner_(inner) {
    std::vector<PrognosisLabel> labels;
    for (std::size_t i = 0; i < inner.size(); ++i) labels.push_back(inner.record(i).label);
    Rng rng(derive_seed(seed, "label-shuffle"));
    rng.shuffle(labels.begin(), labels.end());
    labels_ = std::move(labels);
  }
  std::size_t size() const override { return inner_.size(); }
  PatientRecord record(std::size_t i) const override { return {inner_.record(i).slide_id, labels_.at(i)}; }
  SlidePyramid load(std::size_t i) const override { return inner_.load(i); }

 private:
  const SlideSource& inner_;
  std::vector<PrognosisLabel> labels_;
};

// ---------------------------------------------------------------------------
// Features

/// Concatenated features (and optionally the patch pixels) keyed by patch.
struct FeatureStore {
  std::vector<Magnification> magnifications;
  std::map<PatchRef, std::vector<float>> features;
  std::map<PatchRef, std::vector<RgbImage>> pixels;  // one raster per magnification
  std::string source = "inline reference embedder";

  bool has_pixels() const { return !pixels.empty(); }
  std::int64_t dim() const { return static_cast<std::int64_t>(magnifications.size() * kFeatureDim); }

  EmbeddingTable to_table() const {
    EmbeddingTable table;
    table.magnifications = magnifications;
    for (const auto& [ref, values] : features) {
      std::vector<FeatureVector> parts;
      for (std::size_t k = 0; k < magnifications.size(); ++k)
        parts.push_back({std::vector<float>(values.begin() + static_cast<std::ptrdiff_t>(k * kFeatureDim),
                                            values.begin() + static_cast<std::ptrdiff_t>((k + 1) * kFeatureDim)),
                         magnifications[k], ref});
      table.records.emplace(ref, std::move(parts));
    }
    return table;
  }

  static FeatureStore from_table(const EmbeddingTable& table) {
    FeatureStore store;
    store.magnifications = table.magnifications;
    store.source = "precomputed embeddings";
    for (const auto& [ref, parts] : table.records) store.features.emplace(ref, concat_features(parts).values);
    return store;
  }
};

/// Patch rasters for one coordinate at every configured magnification.
inline std::vector<RgbImage> read_patch_views(const SlidePyramid& slide, const PatchCoordinate& c,
                                              const std::vector<Magnification>& mags, std::int64_t patch_size) {
  std::vector<RgbImage> views;
  for (Magnification m : mags)
    views.push_back(read_region(slide, m, project_patch(c.center_20x, m, patch_size), {patch_size, patch_size}));
  return views;
}

inline std::vector<float> embed_views(const std::vector<std::shared_ptr<const Embedder>>& embedders,
                                      const std::vector<RgbImage>& views, const PatchRef& ref) {
  std::vector<FeatureVector> parts;
  for (std::size_t k = 0; k < embedders.size(); ++k) parts.push_back(embed_patch(*embedders[k], views[k], ref));
  return concat_features(parts).values;
}

/// Run `task(i)` for i in [0, n) on `workers` threads. Results must be written to
/// per-index slots so assembly order stays deterministic.
template <typename F>
void parallel_for(std::size_t n, int workers, F&& task) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) task(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          task(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

struct PreparedCohort {
  std::vector<PatientRecord> patients;
  std::vector<SlideRegion> regions;
  FeatureStore store;
};

/// Masking, extraction + capped sampling, patch reads and embedding for every slide.
/// Pixels are retained only when `keep_pixels` is set (needed for augmentation).
inline PreparedCohort prepare_cohort(const SlideSource& source, const PipelineConfig& cfg, bool keep_pixels) {
  cfg.validate();
  PreparedCohort out;
  out.patients = source.records();
  out.regions.resize(source.size());
  out.store.magnifications = cfg.magnifications;
  const auto embedders = make_reference_embedders(cfg.seeds.embedder, cfg.magnifications, cfg.patch_size);
  const DatasetOptions opt = cfg.dataset_options();
  struct SlideFeatures {
    std::vector<std::pair<PatchRef, std::vector<float>>> features;
    std::vector<std::pair<PatchRef, std::vector<RgbImage>>> pixels;
  };
  std::vector<SlideFeatures> per_slide(source.size());
  parallel_for(source.size(), cfg.workers, [&](std::size_t i) {
    const SlidePyramid slide = source.load(i);
    const PatientRecord rec = out.patients[i];
    SlideMasks masks = compute_slide_masks(slide, cfg.mask);
    out.regions[i] = {rec.slide_id, rec.label, std::move(masks.lesion)};
    for (const auto& c : select_slide_patches(out.regions[i], opt)) {
      auto views = read_patch_views(slide, c, cfg.magnifications, cfg.patch_size);
      per_slide[i].features.emplace_back(ref_of(c), embed_views(embedders, views, ref_of(c)));
      if (keep_pixels) per_slide[i].pixels.emplace_back(ref_of(c), std::move(views));
    }
  });
  for (auto& s : per_slide) {
    for (auto& [ref, f] : s.features) out.store.features.emplace(ref, std::move(f));
    for (auto& [ref, p] : s.pixels) out.store.pixels.emplace(ref, std::move(p));
  }
  return out;
}

/// Re-read the rasters of every patch in `store` from the cohort slides.
inline void load_patch_pixels(FeatureStore& store, const SlideSource& source, const PipelineConfig& cfg) {
  std::map<std::string, std::vector<PatchRef>> by_slide;
  for (const auto& [ref, f] : store.features) by_slide[ref.slide_id].push_back(ref);
  std::vector<std::vector<std::pair<PatchRef, std::vector<RgbImage>>>> per_slide(source.size());
  parallel_for(source.size(), cfg.workers, [&](std::size_t i) {
    const auto it = by_slide.find(source.record(i).slide_id);
    if (it == by_slide.end()) return;
    const SlidePyramid slide = source.load(i);
    for (const PatchRef& ref : it->second)
      per_slide[i].emplace_back(ref, read_patch_views(slide, {ref.slide_id, ref.center_20x, PrognosisLabel::good},
                                                      store.magnifications, cfg.patch_size));
  });
  for (auto& s : per_slide)
    for (auto& [ref, views] : s) store.pixels.emplace(ref, std::move(views));
}

using FoldDatasets = std::pair<DatasetManifest, DatasetManifest>;  // (train, validation)

inline std::vector<FoldDatasets> make_fold_datasets(const std::vector<PatientRecord>& patients,
                                                    const std::vector<SlideRegion>& regions,
                                                    const PipelineConfig& cfg) {
  const auto splits = stratified_kfold(patients, cfg.folds, cfg.seeds.split);
  std::vector<FoldDatasets> out;
  for (std::size_t f = 0; f < splits.size(); ++f)
    out.push_back(build_dataset(regions, splits[f], static_cast<int>(f + 1), cfg.dataset_options()));
  return out;
}

// ---------------------------------------------------------------------------
// Per-fold training and evaluation

inline LabeledFeatures<float> gather(const DatasetManifest& d, const FeatureStore& store) {
  LabeledFeatures<float> out;
  out.features.resize(store.dim(), static_cast<Eigen::Index>(d.entries.size()));
  for (std::size_t j = 0; j < d.entries.size(); ++j) {
    const auto it = store.features.find(ref_of(d.entries[j]));
    if (it == store.features.end())
      throw StageError("no embedding for patch " + describe(ref_of(d.entries[j])) + "; run extract first");
    if (static_cast<std::int64_t>(it->second.size()) != store.dim())
      throw StageError("embedding for " + describe(ref_of(d.entries[j])) + " has the wrong length");
    out.features.col(static_cast<Eigen::Index>(j)) = Eigen::Map<const Eigen::VectorXf>(it->second.data(), store.dim());
    out.labels.push_back(as_int(d.entries[j].label));
  }
  return out;
}

inline TrainConfig fold_train_config(const PipelineConfig& cfg, int fold, bool pixels_available) {
  TrainConfig t = cfg.train;
  t.seed = derive_seed(cfg.seeds.training, static_cast<std::uint64_t>(fold));
  t.augmentation_enabled = cfg.train.augmentation_enabled && pixels_available;
  return t;
}

inline TrainResult<float> train_fold(int fold, const FoldDatasets& data, const FeatureStore& store,
                                     const PipelineConfig& cfg) {
  const auto train_set = gather(data.first, store);
  const auto val_set = gather(data.second, store);
  if (train_set.size() == 0 || val_set.size() == 0)
    throw StageError("fold " + std::to_string(fold) + " has an empty train or validation set");
  const TrainConfig tcfg = fold_train_config(cfg, fold, store.has_pixels());
  Augmenter<float> augmenter;
  if (tcfg.augmentation_enabled) {
    const auto embedders = make_reference_embedders(cfg.seeds.embedder, store.magnifications, cfg.patch_size);
    augmenter = [&data, &store, embedders, seed = tcfg.seed](int epoch) {
      Matrix<float> out(store.dim(), static_cast<Eigen::Index>(data.first.entries.size()));
      for (std::size_t j = 0; j < data.first.entries.size(); ++j) {
        const PatchRef ref = ref_of(data.first.entries[j]);
        const auto it = store.pixels.find(ref);
        if (it == store.pixels.end()) throw StageError("no pixels for patch " + describe(ref));
        Rng rng(derive_seed(derive_seed(seed, static_cast<std::uint64_t>(epoch)), describe(ref)));
        std::vector<RgbImage> views;
        for (const RgbImage& view : it->second) views.push_back(augment_patch(view, rng));
        const auto f = embed_views(embedders, views, ref);
        out.col(static_cast<Eigen::Index>(j)) = Eigen::Map<const Eigen::VectorXf>(f.data(), store.dim());
      }
      return out;
    };
  }
  auto params = init_classifier<float>(static_cast<int>(store.magnifications.size()),
                                       derive_seed(tcfg.seed, "init"), cfg.hidden_width);
  return train<float>(std::move(params), train_set, val_set, tcfg, augmenter);
}

/// Per-patient scores from eval-mode patch predictions, in manifest slide order.
inline std::vector<PatientScore> patient_scores(const ClassifierParams<float>& params, const DatasetManifest& d,
                                                const FeatureStore& store) {
  const auto data = gather(d, store);
  const auto eval = evaluate(params, data);
  std::vector<PatientScore> out;
  std::size_t j = 0;
  while (j < d.entries.size()) {
    const std::string& id = d.entries[j].slide_id;
    std::vector<int> ys;
    const PrognosisLabel label = d.entries[j].label;
    for (; j < d.entries.size() && d.entries[j].slide_id == id; ++j) ys.push_back(eval.predictions[j]);
    out.push_back(aggregate_patient(ys, id, label));
  }
  return out;
}

inline std::vector<ScoredLabel> scored(const std::vector<PatientScore>& scores) {
  std::vector<ScoredLabel> out;
  for (const auto& s : scores) out.push_back({s.Y, s.label});
  return out;
}

struct FoldOutcome {
  FoldReport report;
  std::int64_t input_dim = 0;
  TrainHistory history;
  std::vector<PatientScore> train_scores;
  std::vector<PatientScore> val_scores;
  RocCurve train_roc;
  RocCurve val_roc;
  std::size_t train_patches = 0;
  std::size_t val_patches = 0;
  std::vector<std::string> warnings;
};

/// Threshold from the training-set ROC, applied to validation patients.
inline FoldOutcome evaluate_fold(int fold, const ClassifierParams<float>& params, const FoldDatasets& data,
                                 const FeatureStore& store) {
  FoldOutcome out;
  out.input_dim = params.input_dim();
  out.train_scores = patient_scores(params, data.first, store);
  out.val_scores = patient_scores(params, data.second, store);
  out.train_roc = roc_curve(scored(out.train_scores));
  out.val_roc = roc_curve(scored(out.val_scores));
  const ThresholdChoice t = select_threshold(out.train_roc);
  out.report = make_fold_report(fold, t.threshold, out.val_scores);
  out.train_patches = data.first.entries.size();
  out.val_patches = data.second.entries.size();
  out.warnings = data.first.warnings;
  out.warnings.insert(out.warnings.end(), data.second.warnings.begin(), data.second.warnings.end());
  return out;
}

struct CvResult {
  PipelineConfig config;
  std::vector<FoldOutcome> folds;
  MeanReport mean;
  std::string feature_source;
  bool augmentation = false;
};

inline CvResult run_cross_validation(const std::vector<FoldDatasets>& datasets, const FeatureStore& store,
                                     const PipelineConfig& cfg) {
  cfg.validate();
  if (store.magnifications != cfg.magnifications)
    throw ValidationError("feature store magnifications do not match the configuration");
  CvResult result;
  result.config = cfg;
  result.feature_source = store.source;
  result.augmentation = cfg.train.augmentation_enabled && store.has_pixels();
  std::vector<FoldReport> reports;
  for (std::size_t f = 0; f < datasets.size(); ++f) {
    const int fold = static_cast<int>(f + 1);
    try {
      auto trained = train_fold(fold, datasets[f], store, cfg);
      FoldOutcome outcome = evaluate_fold(fold, trained.params, datasets[f], store);
      outcome.history = std::move(trained.history);
      reports.push_back(outcome.report);
      result.folds.push_back(std::move(outcome));
    } catch (const std::exception& e) {
      throw StageError("fold " + std::to_string(fold) + " failed: " + e.what());
    }
  }
  result.mean = mean_report(reports);
  return result;
}

/// Full pipeline from slides: prepare, split, train and evaluate every fold.
inline CvResult run_cross_validation(const SlideSource& source, const PipelineConfig& cfg) {
  const PreparedCohort prepared = prepare_cohort(source, cfg, cfg.train.augmentation_enabled);
  const auto datasets = make_fold_datasets(prepared.patients, prepared.regions, cfg);
  return run_cross_validation(datasets, prepared.store, cfg);
}

}  // namespace slideprog
