#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "slideprog/core.hpp"

namespace slideprog {

/// Patient score Y: fraction of the patient's patches predicted bad.
struct PatientScore {
  std::string slide_id;
  double Y = 0.0;
  std::int64_t n_patches = 0;  // N_R
  std::int64_t n_bad = 0;
  PrognosisLabel label = PrognosisLabel::good;
};

inline PatientScore aggregate_patient(std::span<const int> patch_predictions, std::string slide_id = {},
                                      PrognosisLabel label = PrognosisLabel::good) {
  if (patch_predictions.empty()) throw ValidationError("no patches for slide " + slide_id);
  std::int64_t bad = 0;
  for (int y : patch_predictions) {
    if (y != 0 && y != 1) throw ValidationError("patch predictions must be 0 or 1");
    bad += y;
  }
  const auto n = static_cast<std::int64_t>(patch_predictions.size());
  return {std::move(slide_id), static_cast<double>(bad) / static_cast<double>(n), n, bad, label};
}

/// Y > T is bad prognosis; Y == T is good.
inline PrognosisLabel classify(double Y, double threshold) {
  return Y > threshold ? PrognosisLabel::bad : PrognosisLabel::good;
}

struct ScoredLabel {
  double score = 0.0;
  PrognosisLabel label = PrognosisLabel::good;
};

/// One operating point. Counts are kept so that derived quantities are exact.
struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  friend bool operator==(const RocPoint&, const RocPoint&) = default;
};

/// Points sorted by threshold descending; positive class is bad prognosis.
struct RocCurve {
  std::vector<RocPoint> points;
  std::int64_t positives = 0;
  std::int64_t negatives = 0;
};

/// Candidate thresholds: one above the maximum score, midpoints of consecutive
/// distinct scores, one below the minimum. Rule: score > T is positive.
inline std::vector<double> candidate_thresholds(std::vector<double> scores) {
  std::sort(scores.begin(), scores.end(), std::greater<>());
  scores.erase(std::unique(scores.begin(), scores.end()), scores.end());
  std::vector<double> out;
  if (scores.empty()) return out;
  out.push_back(scores.front() + 1.0);
  for (std::size_t i = 0; i + 1 < scores.size(); ++i) {
    const double hi = scores[i], lo = scores[i + 1];
    double mid = lo + (hi - lo) / 2.0;
    if (!(mid < hi)) mid = lo;  // adjacent doubles: lo still separates them under '>'
    out.push_back(mid);
  }
  out.push_back(scores.back() - 1.0);
  return out;
}

inline RocCurve roc_curve(std::span<const ScoredLabel> scored) {
  RocCurve curve;
  for (const auto& s : scored) (s.label == PrognosisLabel::bad ? curve.positives : curve.negatives) += 1;
  if (curve.positives == 0 || curve.negatives == 0)
    throw ValidationError("roc_curve needs both good and bad patients");
  std::vector<ScoredLabel> sorted(scored.begin(), scored.end());
  std::sort(sorted.begin(), sorted.end(), [](const ScoredLabel& a, const ScoredLabel& b) { return a.score > b.score; });
  std::vector<double> scores;
  for (const auto& s : sorted) scores.push_back(s.score);
  const auto thresholds = candidate_thresholds(scores);
  std::size_t next = 0;
  std::int64_t tp = 0, fp = 0;
  for (double t : thresholds) {
    while (next < sorted.size() && sorted[next].score > t) {
      (sorted[next].label == PrognosisLabel::bad ? tp : fp) += 1;
      ++next;
    }
    curve.points.push_back({static_cast<double>(fp) / static_cast<double>(curve.negatives),
                            static_cast<double>(tp) / static_cast<double>(curve.positives), t, tp, fp});
  }
  return curve;
}

/// Trapezoidal area under the curve, accumulated in integer counts.
inline double auc(const RocCurve& curve) {
  std::int64_t twice_area = 0;  // in units of 1 / (P * N)
  for (std::size_t i = 1; i < curve.points.size(); ++i) {
    const RocPoint& a = curve.points[i - 1];
    const RocPoint& b = curve.points[i];
    twice_area += (b.fp - a.fp) * (b.tp + a.tp);
  }
  return static_cast<double>(twice_area) / (2.0 * static_cast<double>(curve.positives * curve.negatives));
}

struct ThresholdChoice {
  double threshold = 0.0;
  std::size_t point_index = 0;
  double sensitivity = 0.0;
  double specificity = 0.0;
};

/// Youden's J maximizer; among ties the smallest threshold wins.
inline ThresholdChoice select_threshold(const RocCurve& curve) {
  if (curve.points.empty()) throw ValidationError("select_threshold: empty curve");
  // sens + spec compared exactly as tp * N + tn * P.
  std::int64_t best_score = -1;
  std::size_t best = 0;
  for (std::size_t i = 0; i < curve.points.size(); ++i) {
    const RocPoint& p = curve.points[i];
    const std::int64_t score = p.tp * curve.negatives + (curve.negatives - p.fp) * curve.positives;
    if (score > best_score || (score == best_score && p.threshold < curve.points[best].threshold)) {
      best_score = score;
      best = i;
    }
  }
  const RocPoint& p = curve.points[best];
  return {p.threshold, best, p.tpr, 1.0 - p.fpr};
}

struct ConfusionCounts {
  std::int64_t tp = 0, fn = 0, tn = 0, fp = 0;
  std::int64_t total() const { return tp + fn + tn + fp; }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

struct Metrics {
  double sensitivity = 0.0;
  double specificity = 0.0;
  double f1 = 0.0;
  double accuracy = 0.0;
};

inline double safe_ratio(std::int64_t num, std::int64_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

inline Metrics metrics_from(const ConfusionCounts& c) {
  return {safe_ratio(c.tp, c.tp + c.fn), safe_ratio(c.tn, c.tn + c.fp), safe_ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn),
          safe_ratio(c.tp + c.tn, c.total())};
}

inline ConfusionCounts confusion_counts(std::span<const PrognosisLabel> predictions,
                                        std::span<const PrognosisLabel> labels) {
  if (predictions.size() != labels.size())
    throw ValidationError("confusion_metrics: " + std::to_string(predictions.size()) + " predictions vs " +
                          std::to_string(labels.size()) + " labels");
  ConfusionCounts c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool truth_bad = labels[i] == PrognosisLabel::bad;
    const bool pred_bad = predictions[i] == PrognosisLabel::bad;
    if (truth_bad)
      (pred_bad ? c.tp : c.fn) += 1;
    else
      (pred_bad ? c.fp : c.tn) += 1;
  }
  if (c.tp + c.fn == 0 || c.tn + c.fp == 0) throw ValidationError("confusion_metrics: labels must contain both classes");
  return c;
}

inline Metrics confusion_metrics(std::span<const PrognosisLabel> predictions, std::span<const PrognosisLabel> labels) {
  return metrics_from(confusion_counts(predictions, labels));
}

/// Patient-level result of one cross-validation fold.
struct FoldReport {
  int fold = 1;
  double threshold = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
  double f1 = 0.0;
  double accuracy = 0.0;
  double auc = 0.0;
  ConfusionCounts counts;
};

/// Apply T to validation scores and summarize; AUC comes from the validation ROC.
inline FoldReport make_fold_report(int fold, double threshold, std::span<const PatientScore> validation) {
  std::vector<PrognosisLabel> predicted, truth;
  std::vector<ScoredLabel> scored;
  for (const auto& s : validation) {
    predicted.push_back(classify(s.Y, threshold));
    truth.push_back(s.label);
    scored.push_back({s.Y, s.label});
  }
  FoldReport r;
  r.fold = fold;
  r.threshold = threshold;
  r.counts = confusion_counts(predicted, truth);
  const Metrics m = metrics_from(r.counts);
  r.sensitivity = m.sensitivity;
  r.specificity = m.specificity;
  r.f1 = m.f1;
  r.accuracy = m.accuracy;
  r.auc = auc(roc_curve(scored));
  return r;
}

/// Per-fold metrics averaged (not pooled).
struct MeanReport {
  double threshold = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
  double f1 = 0.0;
  double accuracy = 0.0;
  double auc = 0.0;
};

inline MeanReport mean_report(std::span<const FoldReport> folds) {
  MeanReport m;
  if (folds.empty()) return m;
  for (const auto& f : folds) {
    m.threshold += f.threshold;
    m.sensitivity += f.sensitivity;
    m.specificity += f.specificity;
    m.f1 += f.f1;
    m.accuracy += f.accuracy;
    m.auc += f.auc;
  }
  const auto n = static_cast<double>(folds.size());
  m.threshold /= n;
  m.sensitivity /= n;
  m.specificity /= n;
  m.f1 /= n;
  m.accuracy /= n;
  m.auc /= n;
  return m;
}

}  // namespace slideprog
