// slideprog: stage-per-command front end.
//
//   synth    cohort directory of synthetic slides
//   mask     tissue / annotation / lesion masks per slide
//   extract  fold manifests and patch embeddings
//   train    one checkpoint per fold
//   eval     per-fold patient scores and thresholds
//   report   JSON, CSV and SVG summary
//
// Exit codes: 0 success, 2 validation error, 3 stage failure.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "slideprog/slideprog.hpp"

namespace fs = std::filesystem;
using namespace slideprog;
using json = nlohmann::ordered_json;

namespace {

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  int workers = 1;
  bool force = false;
  std::string magnifications;
  int fold = 0;
  std::string cohort;
  std::string work = "work";
};

// Work directory layout.
fs::path config_file(const fs::path& w) { return w / "config.json"; }
fs::path masks_dir(const fs::path& w) { return w / "masks"; }
fs::path datasets_dir(const fs::path& w) { return w / "datasets"; }
fs::path embeddings_file(const fs::path& w) { return w / "embeddings.bin"; }
fs::path extract_info(const fs::path& w) { return w / "extract.json"; }
fs::path models_dir(const fs::path& w) { return w / "models"; }
fs::path eval_dir(const fs::path& w) { return w / "eval"; }
fs::path logs_dir(const fs::path& w) { return w / "logs"; }

fs::path checkpoint_file(const fs::path& w, int k) { return models_dir(w) / ("fold" + std::to_string(k) + ".ckpt"); }
fs::path history_file(const fs::path& w, int k) { return models_dir(w) / ("fold" + std::to_string(k) + "_history.json"); }
fs::path eval_file(const fs::path& w, int k) { return eval_dir(w) / ("fold" + std::to_string(k) + ".json"); }

json read_json(const fs::path& path, const std::string& missing_hint) {
  std::ifstream in(path);
  if (!in) throw StageError("missing " + path.string() + "; " + missing_hint);
  return json::parse(in);
}

void write_json(const fs::path& path, const json& j) {
  fs::create_directories(path.parent_path());
  write_text(path, j.dump(2) + "\n");
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

class StageLog {
 public:
  StageLog(std::string stage, fs::path work) : stage_(std::move(stage)), work_(std::move(work)) {}

  void lap(const std::string& name) {
    const auto now = std::chrono::steady_clock::now();
    timings_[name] = std::chrono::duration<double>(now - last_).count();
    last_ = now;
  }

  json& extra() { return extra_; }

  void write(const PipelineConfig* cfg) const {
    json log = {{"stage", stage_},
                {"slideprog_version", kVersion},
                {"eigen_version", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                                      "." + std::to_string(EIGEN_MINOR_VERSION)},
                {"libpng_version", PNG_LIBPNG_VER_STRING},
                {"started_utc", started_},
                {"seconds_total", std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count()},
                {"timings", timings_}};
    if (cfg) {
      log["seeds"] = to_json(*cfg)["seeds"];
      log["config"] = to_json(*cfg);
    }
    if (!extra_.empty()) log["details"] = extra_;
    write_json(logs_dir(work_) / (stage_ + ".json"), log);
  }

 private:
  std::string stage_;
  fs::path work_;
  std::string started_ = utc_now();
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
  std::chrono::steady_clock::time_point last_ = start_;
  json timings_ = json::object();
  json extra_ = json::object();
};

/// Defaults, then the work directory's saved config, then --config, then flags.
PipelineConfig resolve_config(const Options& o, const fs::path& work, bool use_saved) {
  PipelineConfig cfg = default_config({Magnification::x20});
  if (use_saved && fs::exists(config_file(work))) apply_json(read_json(config_file(work), ""), cfg);
  if (!o.config_path.empty()) {
    std::ifstream in(o.config_path);
    if (!in) throw ValidationError("cannot read config " + o.config_path);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("config " + o.config_path + ": " + e.what());
    }
    apply_json(j, cfg);
  }
  if (!o.magnifications.empty()) {
    cfg.magnifications = parse_magnifications(o.magnifications);
    cfg.train.learning_rate = TrainConfig::default_learning_rate(cfg.scale_count());
    if (!o.config_path.empty()) {
      std::ifstream in(o.config_path);
      const auto j = nlohmann::json::parse(in);
      if (j.contains("train") && j.at("train").contains("learning_rate"))
        cfg.train.learning_rate = j.at("train").at("learning_rate").get<double>();
    }
  }
  if (o.seed) cfg.seeds = seeds_from(*o.seed);
  cfg.workers = o.workers;
  cfg.validate();
  return cfg;
}

std::vector<int> folds_to_run(const Options& o, const PipelineConfig& cfg) {
  if (o.fold != 0) {
    if (o.fold < 1 || o.fold > cfg.folds)
      throw ValidationError("--fold must lie in [1, " + std::to_string(cfg.folds) + "]");
    return {o.fold};
  }
  std::vector<int> all;
  for (int k = 1; k <= cfg.folds; ++k) all.push_back(k);
  return all;
}

void require_cohort(const Options& o) {
  if (o.cohort.empty()) throw ValidationError("--cohort is required");
}

// --------------------------------------------------------------------------

struct SynthOptions {
  std::size_t n = 52;
  std::string balance;
  std::uint64_t seed = 7;
  std::int64_t size = 3072;
  double signal = 0.8;
  std::string out = "cohort";
};

void cmd_synth(const SynthOptions& s, const Options& o) {
  CohortSpec spec;
  if (!s.balance.empty()) {
    const auto colon = s.balance.find(':');
    if (colon == std::string::npos) throw ValidationError("--balance must look like good:bad");
    try {
      spec.n_good = std::stoul(s.balance.substr(0, colon));
      spec.n_bad = std::stoul(s.balance.substr(colon + 1));
    } catch (const std::exception&) {
      throw ValidationError("--balance must look like good:bad");
    }
    if (spec.n_good + spec.n_bad != s.n)
      throw ValidationError("--balance " + s.balance + " does not add up to --n " + std::to_string(s.n));
  } else {
    spec.n_good = s.n / 2;
    spec.n_bad = s.n - spec.n_good;
  }
  if (s.n == 0) throw ValidationError("--n must be positive");
  spec.seed = o.seed.value_or(s.seed);
  spec.size_40x = {s.size, s.size};
  spec.signal_strength = s.signal;
  spec.member(0).validate();

  const fs::path out = s.out;
  if (fs::exists(out) && !fs::is_empty(out) && !o.force)
    throw ValidationError("output " + out.string() + " exists and is not empty; pass --force to overwrite");
  fs::create_directories(out);
  StageLog log("synth", out);

  parallel_for(spec.size(), o.workers, [&](std::size_t i) {
    const SyntheticSpec member = spec.member(i);
    write_pyramid(generate_synthetic_slide(member), out / member.slide_id);
  });
  log.lap("generate");

  json slides = json::array();
  for (std::size_t i = 0; i < spec.size(); ++i) {
    const SyntheticSpec member = spec.member(i);
    slides.push_back({{"slide_id", member.slide_id}, {"label", to_string(member.label)}, {"dir", member.slide_id}});
  }
  write_json(out / kCohortIndex, {{"format", "slideprog-cohort"},
                                  {"version", 1},
                                  {"synthetic",
                                   {{"n_good", spec.n_good},
                                    {"n_bad", spec.n_bad},
                                    {"seed", spec.seed},
                                    {"size_40x", s.size},
                                    {"signal_strength", spec.signal_strength}}},
                                  {"slides", slides}});
  log.extra() = {{"slides", spec.size()}, {"n_good", spec.n_good}, {"n_bad", spec.n_bad}, {"seed", spec.seed}};
  log.write(nullptr);
  std::cout << "wrote " << spec.size() << " slides (" << spec.n_good << " good, " << spec.n_bad << " bad) to "
            << out.string() << "\n";
}

void cmd_mask(const Options& o) {
  require_cohort(o);
  const fs::path work = o.work;
  const PipelineConfig cfg = resolve_config(o, work, true);
  const DirectorySource source(o.cohort);
  StageLog log("mask", work);
  json counts = json::array();
  std::vector<json> per_slide(source.size());
  parallel_for(source.size(), cfg.workers, [&](std::size_t i) {
    const SlidePyramid slide = read_pyramid(source.slide_path(i), {kMaskLevel});
    const SlideMasks m = compute_slide_masks(slide, cfg.mask);
    write_mask(masks_dir(work), slide.slide_id() + "_tissue", m.tissue, cfg.mask);
    write_mask(masks_dir(work), slide.slide_id() + "_annotation", m.annotation, cfg.mask);
    write_mask(masks_dir(work), slide.slide_id() + "_lesion", m.lesion, cfg.mask);
    per_slide[i] = {{"slide_id", slide.slide_id()},
                    {"tissue_pixels", m.tissue.count()},
                    {"annotation_pixels", m.annotation.count()},
                    {"lesion_pixels", m.lesion.count()}};
  });
  for (auto& j : per_slide) counts.push_back(std::move(j));
  log.lap("mask");
  write_json(config_file(work), to_json(cfg));
  write_json(work / "source.json", {{"cohort", fs::absolute(o.cohort).string()}});
  log.extra() = {{"cohort", o.cohort}, {"slides", counts}};
  log.write(&cfg);
  std::cout << "masked " << source.size() << " slides into " << masks_dir(work).string() << "\n";
}

fs::path cohort_of(const fs::path& work, const Options& o) {
  if (!o.cohort.empty()) return o.cohort;
  return read_json(work / "source.json", "run mask first").at("cohort").get<std::string>();
}

void cmd_extract(const Options& o, const std::string& import_path) {
  const fs::path work = o.work;
  if (!fs::exists(masks_dir(work))) throw StageError("no masks in " + work.string() + "; run mask first");
  const PipelineConfig cfg = resolve_config(o, work, true);
  const fs::path cohort = cohort_of(work, o);
  const DirectorySource source(cohort);
  StageLog log("extract", work);

  std::vector<SlideRegion> regions;
  const auto patients = source.records();
  for (const auto& p : patients) {
    const fs::path png = masks_dir(work) / (p.slide_id + "_lesion.png");
    if (!fs::exists(png)) throw StageError("no lesion mask for " + p.slide_id + "; run mask first");
    regions.push_back({p.slide_id, p.label, read_mask(masks_dir(work), p.slide_id + "_lesion")});
  }
  const auto datasets = make_fold_datasets(patients, regions, cfg);
  fs::remove_all(datasets_dir(work));
  for (const auto& [train, val] : datasets) {
    write_manifest(datasets_dir(work), train);
    write_manifest(datasets_dir(work), val);
  }
  log.lap("manifests");

  std::set<PatchRef> needed;
  for (const auto& [train, val] : datasets)
    for (const DatasetManifest* d : {&train, &val})
      for (const auto& e : d->entries) needed.insert(ref_of(e));

  EmbeddingTable table;
  std::string feature_source;
  if (!import_path.empty()) {
    table = import_embeddings(import_path);
    if (table.magnifications != cfg.magnifications)
      throw ValidationError("imported embeddings cover magnifications " + magnification_tag(table.magnifications) +
                            ", config asks for " + magnification_tag(cfg.magnifications));
    for (const auto& [train, val] : datasets)
      for (const DatasetManifest* d : {&train, &val}) {
        const auto r = table.resolve(*d);
        if (!r.missing.empty())
          throw StageError("imported embeddings lack patch " + describe(r.missing.front()) + " (" +
                           std::to_string(r.missing.size()) + " missing in " + manifest_filename(*d) + ")");
      }
    feature_source = "precomputed embeddings";
  } else {
    const auto embedders = make_reference_embedders(cfg.seeds.embedder, cfg.magnifications, cfg.patch_size);
    std::vector<std::vector<std::pair<PatchRef, std::vector<FeatureVector>>>> per_slide(source.size());
    parallel_for(source.size(), cfg.workers, [&](std::size_t i) {
      const std::string& id = patients[i].slide_id;
      auto first = needed.lower_bound(PatchRef{id, {std::numeric_limits<std::int64_t>::min(), 0}});
      if (first == needed.end() || first->slide_id != id) return;
      const SlidePyramid slide = read_pyramid(source.slide_path(i), cfg.magnifications);
      for (auto it = first; it != needed.end() && it->slide_id == id; ++it) {
        const auto views = read_patch_views(slide, {id, it->center_20x, patients[i].label}, cfg.magnifications,
                                            cfg.patch_size);
        std::vector<FeatureVector> parts;
        for (std::size_t k = 0; k < embedders.size(); ++k) parts.push_back(embed_patch(*embedders[k], views[k], *it));
        per_slide[i].emplace_back(*it, std::move(parts));
      }
    });
    table.magnifications = cfg.magnifications;
    for (auto& s : per_slide)
      for (auto& [ref, parts] : s) table.records.emplace(ref, std::move(parts));
    feature_source = "inline reference embedder";
  }
  write_embeddings(embeddings_file(work), table);
  log.lap("embeddings");

  write_json(config_file(work), to_json(cfg));
  write_json(extract_info(work), {{"magnifications", to_json(cfg)["magnifications"]},
                                  {"feature_source", feature_source},
                                  {"patches", table.records.size()},
                                  {"folds", cfg.folds}});
  json per_fold = json::array();
  for (const auto& [train, val] : datasets)
    per_fold.push_back({{"fold", train.fold},
                        {"train_patches", train.entries.size()},
                        {"val_patches", val.entries.size()},
                        {"warnings", train.warnings}});
  log.extra() = {{"feature_source", feature_source}, {"patches", table.records.size()}, {"folds", per_fold}};
  log.write(&cfg);
  std::cout << "extracted " << table.records.size() << " patches at " << magnification_tag(cfg.magnifications)
            << "x for " << cfg.folds << " folds\n";
}

struct ExtractState {
  PipelineConfig cfg;
  std::vector<FoldDatasets> datasets;
  FeatureStore store;
};

/// Manifests and embeddings written by extract, checked against the config.
ExtractState load_extract(const Options& o, const fs::path& work, bool use_saved_config) {
  const json info = read_json(extract_info(work), "run extract first");
  ExtractState s;
  s.cfg = resolve_config(o, work, use_saved_config);
  std::vector<Magnification> mags;
  for (const auto& m : info.at("magnifications")) mags.push_back(magnification_from(m.get<double>()));
  if (mags != s.cfg.magnifications)
    throw ValidationError("magnifications " + magnification_tag(s.cfg.magnifications) +
                          " differ from the extracted " + magnification_tag(mags) + "; rerun extract");
  for (int k = 1; k <= s.cfg.folds; ++k) {
    DatasetManifest probe;
    probe.magnifications = mags;
    probe.fold = k;
    probe.split = Split::train;
    const fs::path t = datasets_dir(work) / manifest_filename(probe);
    probe.split = Split::validation;
    const fs::path v = datasets_dir(work) / manifest_filename(probe);
    if (!fs::exists(t) || !fs::exists(v)) throw StageError("missing manifests for fold " + std::to_string(k) + "; run extract first");
    s.datasets.emplace_back(read_manifest(t), read_manifest(v));
  }
  if (!fs::exists(embeddings_file(work))) throw StageError("missing embeddings; run extract first");
  s.store = FeatureStore::from_table(import_embeddings(embeddings_file(work)));
  s.store.source = info.at("feature_source").get<std::string>();
  return s;
}

void cmd_train(const Options& o) {
  const fs::path work = o.work;
  ExtractState s = load_extract(o, work, true);
  StageLog log("train", work);
  const bool augment = s.cfg.train.augmentation_enabled && s.store.source != "precomputed embeddings";
  if (augment) {
    load_patch_pixels(s.store, DirectorySource(cohort_of(work, o)), s.cfg);
    log.lap("load_pixels");
  }
  fs::create_directories(models_dir(work));
  json per_fold = json::array();
  for (int k : folds_to_run(o, s.cfg)) {
    TrainResult<float> r;
    try {
      r = train_fold(k, s.datasets[static_cast<std::size_t>(k - 1)], s.store, s.cfg);
    } catch (const std::exception& e) {
      throw StageError("fold " + std::to_string(k) + " failed: " + e.what());
    }
    write_checkpoint(checkpoint_file(work, k), r.params, fold_train_config(s.cfg, k, s.store.has_pixels()));
    write_json(history_file(work, k), {{"fold", k},
                                       {"input_dim", r.params.input_dim()},
                                       {"augmentation", augment},
                                       {"history", to_json(r.history)}});
    log.lap("fold" + std::to_string(k));
    per_fold.push_back({{"fold", k},
                        {"input_dim", r.params.input_dim()},
                        {"epochs_run", r.history.stopped_epoch + 1},
                        {"best_epoch", r.history.best_epoch},
                        {"stop_reason", to_string(r.history.stop_reason)}});
    std::cout << "fold " << k << ": input_dim " << r.params.input_dim() << ", " << r.history.stopped_epoch + 1
              << " epochs (" << to_string(r.history.stop_reason) << ")\n";
  }
  write_json(config_file(work), to_json(s.cfg));
  log.extra() = {{"augmentation", augment}, {"feature_source", s.store.source}, {"folds", per_fold}};
  log.write(&s.cfg);
}

void cmd_eval(const Options& o) {
  const fs::path work = o.work;
  ExtractState s = load_extract(o, work, true);
  StageLog log("eval", work);
  json per_fold = json::array();
  for (int k : folds_to_run(o, s.cfg)) {
    if (!fs::exists(checkpoint_file(work, k)))
      throw StageError("no checkpoint for fold " + std::to_string(k) + "; run train first");
    const auto ck = read_checkpoint<float>(checkpoint_file(work, k));
    const json history = read_json(history_file(work, k), "run train first");
    FoldOutcome outcome = evaluate_fold(k, ck.params, s.datasets[static_cast<std::size_t>(k - 1)], s.store);
    outcome.history = history_from_json(history.at("history"));
    write_json(eval_file(work, k), {{"feature_source", s.store.source},
                                    {"augmentation", history.at("augmentation").get<bool>()},
                                    {"outcome", outcome_json(outcome)}});
    per_fold.push_back(to_json(outcome.report));
    std::cout << "fold " << k << ": T " << format_number(outcome.report.threshold) << ", AUC "
              << format_number(outcome.report.auc) << ", sensitivity " << format_number(outcome.report.sensitivity)
              << ", specificity " << format_number(outcome.report.specificity) << "\n";
  }
  log.lap("evaluate");
  log.extra() = {{"folds", per_fold}};
  log.write(&s.cfg);
}

void cmd_report(const Options& o, const std::string& out_dir, const std::string& title) {
  const fs::path work = o.work;
  const PipelineConfig cfg = resolve_config(o, work, true);
  StageLog log("report", work);
  CvResult r;
  r.config = cfg;
  std::vector<FoldReport> reports;
  for (int k = 1; k <= cfg.folds; ++k) {
    const json j = read_json(eval_file(work, k), "run eval first");
    r.feature_source = j.at("feature_source").get<std::string>();
    r.augmentation = j.at("augmentation").get<bool>();
    r.folds.push_back(outcome_from_json(j.at("outcome")));
    reports.push_back(r.folds.back().report);
  }
  r.mean = mean_report(reports);
  const fs::path dir = out_dir.empty() ? work / "report" : fs::path(out_dir);
  write_report(dir, r, title);
  log.lap("report");
  log.extra() = {{"output", dir.string()}, {"mean", to_json(r.mean)}};
  log.write(&cfg);
  std::cout << "mean AUC " << format_number(r.mean.auc) << ", sensitivity " << format_number(r.mean.sensitivity)
            << ", specificity " << format_number(r.mean.specificity) << "; report in " << dir.string() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"slideprog: slide-to-prognosis pipeline"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  Options o;
  const auto common = [&o](CLI::App* sub, bool with_work) {
    sub->add_option("--config", o.config_path, "JSON config overlay")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "master seed");
    sub->add_option("--workers", o.workers, "slide-level worker threads")->check(CLI::PositiveNumber);
    sub->add_flag("--force", o.force, "overwrite existing output");
    if (with_work) {
      sub->add_option("--work", o.work, "work directory")->capture_default_str();
      sub->add_option("--magnifications", o.magnifications, "e.g. 20 or 10,20,40");
      sub->add_option("--fold", o.fold, "run a single fold (1-based)");
      sub->add_option("--cohort", o.cohort, "cohort directory written by synth");
    }
  };

  SynthOptions so;
  auto* synth = app.add_subcommand("synth", "generate a synthetic cohort");
  common(synth, false);
  synth->add_option("--n", so.n, "number of slides")->capture_default_str();
  synth->add_option("--balance", so.balance, "good:bad counts, must sum to --n");
  synth->add_option("--size", so.size, "40x edge length in pixels")->capture_default_str();
  synth->add_option("--signal", so.signal, "signal strength in [0, 1]")->capture_default_str();
  synth->add_option("--out", so.out, "output directory")->capture_default_str();

  auto* mask = app.add_subcommand("mask", "compute lesion masks");
  common(mask, true);

  std::string import_path;
  auto* extract = app.add_subcommand("extract", "build fold manifests and embeddings");
  common(extract, true);
  extract->add_option("--embeddings", import_path, "import precomputed embeddings instead of embedding")
      ->check(CLI::ExistingFile);

  auto* train = app.add_subcommand("train", "train one classifier per fold");
  common(train, true);
  auto* eval = app.add_subcommand("eval", "score validation patients");
  common(eval, true);

  std::string report_out, title = "Validation ROC";
  auto* report = app.add_subcommand("report", "write JSON/CSV/SVG report");
  common(report, true);
  report->add_option("--out", report_out, "report directory (default <work>/report)");
  report->add_option("--title", title, "plot title");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*synth) cmd_synth(so, o);
    if (*mask) cmd_mask(o);
    if (*extract) cmd_extract(o, import_path);
    if (*train) cmd_train(o);
    if (*eval) cmd_eval(o);
    if (*report) cmd_report(o, report_out, title);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const StageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: malformed JSON: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
