#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "slideprog/pipeline.hpp"

namespace slideprog {

inline nlohmann::ordered_json to_json(const FoldReport& r) {
  return {{"fold", r.fold},
          {"threshold", r.threshold},
          {"sensitivity", r.sensitivity},
          {"specificity", r.specificity},
          {"f1", r.f1},
          {"accuracy", r.accuracy},
          {"auc", r.auc},
          {"tp", r.counts.tp},
          {"fn", r.counts.fn},
          {"tn", r.counts.tn},
          {"fp", r.counts.fp}};
}

inline nlohmann::ordered_json to_json(const MeanReport& m) {
  return {{"threshold", m.threshold}, {"sensitivity", m.sensitivity}, {"specificity", m.specificity},
          {"f1", m.f1},               {"accuracy", m.accuracy},       {"auc", m.auc}};
}

inline nlohmann::ordered_json to_json(const TrainHistory& h) {
  return {{"train_loss", h.train_loss},
          {"val_loss", h.val_loss},
          {"val_accuracy", h.val_accuracy},
          {"stopped_epoch", h.stopped_epoch},
          {"best_epoch", h.best_epoch},
          {"stop_reason", to_string(h.stop_reason)}};
}

inline nlohmann::ordered_json to_json(const PatientScore& s) {
  return {{"slide_id", s.slide_id},
          {"label", to_string(s.label)},
          {"Y", s.Y},
          {"n_patches", s.n_patches},
          {"n_bad", s.n_bad}};
}

inline PatientScore patient_score_from_json(const nlohmann::json& j) {
  return {j.at("slide_id").get<std::string>(), j.at("Y").get<double>(), j.at("n_patches").get<std::int64_t>(),
          j.at("n_bad").get<std::int64_t>(), parse_label(j.at("label").get<std::string>())};
}

inline StopReason parse_stop_reason(const std::string& text) {
  for (StopReason r : {StopReason::converged, StopReason::early_stopped, StopReason::max_epochs})
    if (to_string(r) == text) return r;
  throw StageError("unknown stop reason '" + text + "'");
}

inline TrainHistory history_from_json(const nlohmann::json& j) {
  TrainHistory h;
  h.train_loss = j.at("train_loss").get<std::vector<double>>();
  h.val_loss = j.at("val_loss").get<std::vector<double>>();
  h.val_accuracy = j.at("val_accuracy").get<std::vector<double>>();
  h.stopped_epoch = j.at("stopped_epoch").get<int>();
  h.best_epoch = j.at("best_epoch").get<int>();
  h.stop_reason = parse_stop_reason(j.at("stop_reason").get<std::string>());
  return h;
}

/// Everything needed to rebuild a FoldOutcome; ROC curves and metrics are recomputed.
inline nlohmann::ordered_json outcome_json(const FoldOutcome& f) {
  nlohmann::ordered_json train = nlohmann::ordered_json::array(), val = nlohmann::ordered_json::array();
  for (const auto& s : f.train_scores) train.push_back(to_json(s));
  for (const auto& s : f.val_scores) val.push_back(to_json(s));
  return {{"fold", f.report.fold},
          {"threshold", f.report.threshold},
          {"input_dim", f.input_dim},
          {"train_patches", f.train_patches},
          {"val_patches", f.val_patches},
          {"warnings", f.warnings},
          {"history", to_json(f.history)},
          {"train_patients", train},
          {"validation_patients", val}};
}

inline FoldOutcome outcome_from_json(const nlohmann::json& j) {
  FoldOutcome f;
  f.input_dim = j.at("input_dim").get<std::int64_t>();
  f.train_patches = j.at("train_patches").get<std::size_t>();
  f.val_patches = j.at("val_patches").get<std::size_t>();
  f.warnings = j.at("warnings").get<std::vector<std::string>>();
  f.history = history_from_json(j.at("history"));
  for (const auto& s : j.at("train_patients")) f.train_scores.push_back(patient_score_from_json(s));
  for (const auto& s : j.at("validation_patients")) f.val_scores.push_back(patient_score_from_json(s));
  f.train_roc = roc_curve(scored(f.train_scores));
  f.val_roc = roc_curve(scored(f.val_scores));
  f.report = make_fold_report(j.at("fold").get<int>(), j.at("threshold").get<double>(), f.val_scores);
  return f;
}

inline nlohmann::ordered_json report_json(const CvResult& r) {
  nlohmann::ordered_json folds = nlohmann::ordered_json::array();
  for (const auto& f : r.folds) {
    auto j = to_json(f.report);
    j["input_dim"] = f.input_dim;
    j["train_patches"] = f.train_patches;
    j["val_patches"] = f.val_patches;
    j["history"] = to_json(f.history);
    nlohmann::ordered_json val = nlohmann::ordered_json::array();
    for (const auto& s : f.val_scores) val.push_back(to_json(s));
    j["validation_patients"] = val;
    j["warnings"] = f.warnings;
    folds.push_back(j);
  }
  return {{"report", "slideprog cross-validation"},
          {"version", 1},
          {"feature_source", r.feature_source},
          {"augmentation", r.augmentation ? "enabled"
                                          : (r.feature_source == "precomputed embeddings"
                                                 ? "disabled (precomputed embeddings have no pixel access)"
                                                 : "disabled")},
          {"config", to_json(r.config)},
          {"folds", folds},
          {"mean", to_json(r.mean)}};
}

inline std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline std::string report_csv(const CvResult& r) {
  std::ostringstream out;
  out << "fold,threshold,sensitivity,specificity,f1,accuracy,auc,tp,fn,tn,fp\n";
  for (const auto& f : r.folds) {
    const auto& x = f.report;
    out << x.fold << ',' << format_number(x.threshold) << ',' << format_number(x.sensitivity) << ','
        << format_number(x.specificity) << ',' << format_number(x.f1) << ',' << format_number(x.accuracy) << ','
        << format_number(x.auc) << ',' << x.counts.tp << ',' << x.counts.fn << ',' << x.counts.tn << ','
        << x.counts.fp << '\n';
  }
  const auto& m = r.mean;
  out << "mean," << format_number(m.threshold) << ',' << format_number(m.sensitivity) << ','
      << format_number(m.specificity) << ',' << format_number(m.f1) << ',' << format_number(m.accuracy) << ','
      << format_number(m.auc) << ",,,,\n";
  return out.str();
}

inline std::string roc_csv(const RocCurve& curve) {
  std::ostringstream out;
  out << "threshold,fpr,tpr,tp,fp\n";
  for (const auto& p : curve.points)
    out << format_number(p.threshold) << ',' << format_number(p.fpr) << ',' << format_number(p.tpr) << ','
        << p.tp << ',' << p.fp << '\n';
  return out.str();
}

/// Validation ROC curves of every fold on one plot.
inline std::string roc_svg(const CvResult& r, const std::string& title) {
  constexpr int kSize = 360, kMargin = 40;
  static const char* kColors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"};
  std::ostringstream out;
  const auto px = [](double v) { return kMargin + v * kSize; };
  const auto py = [](double v) { return kMargin + (1.0 - v) * kSize; };
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kSize + 2 * kMargin + 140 << "\" height=\""
      << kSize + 2 * kMargin << "\">\n";
  out << "<rect x=\"" << kMargin << "\" y=\"" << kMargin << "\" width=\"" << kSize << "\" height=\"" << kSize
      << "\" fill=\"none\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << px(0) << "\" y1=\"" << py(0) << "\" x2=\"" << px(1) << "\" y2=\"" << py(1)
      << "\" stroke=\"gray\" stroke-dasharray=\"4 4\"/>\n";
  out << "<text x=\"" << kMargin << "\" y=\"" << kMargin - 12 << "\" font-size=\"14\">" << title << "</text>\n";
  out << "<text x=\"" << kMargin + kSize / 2 - 60 << "\" y=\"" << kSize + 2 * kMargin - 8
      << "\" font-size=\"12\">False positive rate</text>\n";
  out << "<text x=\"12\" y=\"" << kMargin + kSize / 2 + 50 << "\" font-size=\"12\" transform=\"rotate(-90 12 "
      << kMargin + kSize / 2 + 50 << ")\">True positive rate</text>\n";
  for (std::size_t f = 0; f < r.folds.size(); ++f) {
    const auto& curve = r.folds[f].val_roc;
    const char* color = kColors[f % std::size(kColors)];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (const auto& p : curve.points) out << format_number(px(p.fpr)) << ',' << format_number(py(p.tpr)) << ' ';
    out << "\"/>\n";
    out << "<text x=\"" << kSize + 2 * kMargin << "\" y=\"" << kMargin + 16 * (f + 1) << "\" font-size=\"12\" fill=\""
        << color << "\">fold " << r.folds[f].report.fold << " AUC " << format_number(r.folds[f].report.auc).substr(0, 5)
        << "</text>\n";
  }
  out << "<text x=\"" << kSize + 2 * kMargin << "\" y=\"" << kMargin + 16 * (r.folds.size() + 2)
      << "\" font-size=\"12\">mean AUC " << format_number(r.mean.auc).substr(0, 5) << "</text>\n";
  out << "</svg>\n";
  return out.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw StageError("cannot write " + path.string());
}

/// report.json, report.csv, roc_fold<k>.csv and roc.svg.
inline void write_report(const std::filesystem::path& dir, const CvResult& r, const std::string& title) {
  std::filesystem::create_directories(dir);
  write_text(dir / "report.json", report_json(r).dump(2) + "\n");
  write_text(dir / "report.csv", report_csv(r));
  for (const auto& f : r.folds) write_text(dir / ("roc_fold" + std::to_string(f.report.fold) + ".csv"), roc_csv(f.val_roc));
  write_text(dir / "roc.svg", roc_svg(r, title));
}

}  // namespace slideprog
