#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "eggloc/dataset.hpp"
#include "eggloc/errors.hpp"
#include "eggloc/geometry.hpp"
#include "eggloc/predictions.hpp"

namespace eggloc {

// One row per ground-truth annotation: its IoU against the matched prediction,
// or 0 when missed. status is matched or missed_gt, never false_positive.
struct EvalRecord {
  std::string image_id;
  CategoryLabel category;
  double iou = 0.0;
  MatchStatus status = MatchStatus::missed_gt;

  bool operator==(const EvalRecord&) const = default;
};

struct IoUDistribution {
  std::vector<double> bin_edges;  // ascending, first 0, last 1
  std::vector<long long> counts;  // one per bin

  bool operator==(const IoUDistribution&) const = default;
};

struct EvalReport {
  std::string detector_name;
  double mean_iou = 0.0;
  long long n_ground_truth = 0;
  long long n_missed = 0;
  long long n_false_positive = 0;
  IoUDistribution distribution;
  std::vector<EvalRecord> records;

  bool operator==(const EvalReport&) const = default;
};

struct SpreadStats {
  double std_dev = 0.0;            // population standard deviation of the IoUs
  double fraction_080_095 = 0.0;   // records with iou in [0.80, 0.95]
  double fraction_zero_bin = 0.0;  // mass in the bin containing iou = 0

  bool operator==(const SpreadStats&) const = default;
};

struct ComparisonReport {
  EvalReport report_a;
  EvalReport report_b;
  double delta_mean = 0.0;  // a.mean_iou - b.mean_iou
  SpreadStats spread_a;
  SpreadStats spread_b;
  std::string better_localized;  // detector with the higher mean, or "tie"

  bool operator==(const ComparisonReport&) const = default;
};

// Uniform bins over [0,1], last bin right-closed, so iou = 0 lands in bin 0
// and iou = 1 in the last bin.
inline IoUDistribution build_histogram(const std::vector<EvalRecord>& records,
                                       int n_bins = 20) {
  if (n_bins < 2) throw ValidationError("build_histogram: need at least 2 bins");
  if (records.empty()) throw ValidationError("build_histogram: no records");
  IoUDistribution dist;
  dist.bin_edges.reserve(static_cast<std::size_t>(n_bins) + 1);
  for (int i = 0; i <= n_bins; ++i) {
    dist.bin_edges.push_back(static_cast<double>(i) / n_bins);
  }
  dist.counts.assign(static_cast<std::size_t>(n_bins), 0);
  for (const auto& rec : records) {
    const int bin = std::min(static_cast<int>(std::floor(rec.iou * n_bins)), n_bins - 1);
    ++dist.counts[static_cast<std::size_t>(std::max(bin, 0))];
  }
  return dist;
}

struct EvalOptions {
  std::string detector_name = "detector";
  bool category_aware = false;
  int histogram_bins = 20;
};

// The IoU-distribution analysis: per image, predictions are paired with
// ground truth one-to-one by descending IoU; every ground-truth box yields a
// record (0 when missed). The mean is over ground-truth boxes only; false
// positives are counted separately and never enter the mean.
inline EvalReport evaluate(const std::vector<PredictionRecord>& predictions,
                           const Dataset& ground_truth, const EvalOptions& options = {}) {
  if (ground_truth.annotations.empty()) {
    throw ValidationError("evaluate: ground truth has no annotations");
  }
  std::unordered_map<std::string, bool> known_image;
  for (const auto& img : ground_truth.images) known_image[img.image_id] = true;
  for (const auto& pred : predictions) {
    if (!known_image.count(pred.image_id)) {
      throw SchemaError("prediction references unknown image_id \"" + pred.image_id +
                        "\"");
    }
    validate_box(pred.box, "prediction box");
  }

  std::unordered_map<std::string, std::vector<const GroundTruthAnnotation*>> gt_by_image;
  for (const auto& ann : ground_truth.annotations) {
    gt_by_image[ann.image_id].push_back(&ann);
  }
  std::unordered_map<std::string, std::vector<const PredictionRecord*>> pred_by_image;
  for (const auto& pred : predictions) {
    pred_by_image[pred.image_id].push_back(&pred);
  }

  EvalReport report;
  report.detector_name = options.detector_name;

  // Category key used when matching is category-aware; unmappable prediction
  // labels get a key of -1 and can never match a ground truth.
  const auto category_key = [&](const std::string& label) {
    const auto cat = resolve_category(label);
    return cat ? cat->id : -1;
  };

  const auto match_group = [&](const std::vector<const GroundTruthAnnotation*>& gts,
                               const std::vector<const PredictionRecord*>& preds) {
    std::vector<BoundingBox> gt_boxes;
    std::vector<BoundingBox> pred_boxes;
    for (const auto* g : gts) gt_boxes.push_back(g->box);
    for (const auto* p : preds) pred_boxes.push_back(p->box);
    for (const auto& rec : match_boxes(pred_boxes, gt_boxes)) {
      if (rec.status == MatchStatus::false_positive) {
        ++report.n_false_positive;
        continue;
      }
      const auto* gt = gts[*rec.gt_index];
      report.records.push_back(
          EvalRecord{gt->image_id, gt->category, rec.iou, rec.status});
      if (rec.status == MatchStatus::missed_gt) ++report.n_missed;
    }
  };

  // Iterate images in ground-truth order so record order is reproducible.
  for (const auto& img : ground_truth.images) {
    const auto gt_it = gt_by_image.find(img.image_id);
    const auto pred_it = pred_by_image.find(img.image_id);
    static const std::vector<const GroundTruthAnnotation*> kNoGt;
    static const std::vector<const PredictionRecord*> kNoPred;
    const auto& gts = gt_it == gt_by_image.end() ? kNoGt : gt_it->second;
    const auto& preds = pred_it == pred_by_image.end() ? kNoPred : pred_it->second;
    if (gts.empty() && preds.empty()) continue;

    if (!options.category_aware) {
      match_group(gts, preds);
      continue;
    }
    std::map<int, std::vector<const GroundTruthAnnotation*>> gts_by_cat;
    std::map<int, std::vector<const PredictionRecord*>> preds_by_cat;
    for (const auto* g : gts) gts_by_cat[g->category.id].push_back(g);
    for (const auto* p : preds) preds_by_cat[category_key(p->label)].push_back(p);
    for (const auto& [cat, cat_gts] : gts_by_cat) {
      const auto it = preds_by_cat.find(cat);
      match_group(cat_gts, it == preds_by_cat.end() ? kNoPred : it->second);
    }
    for (const auto& [cat, cat_preds] : preds_by_cat) {
      if (!gts_by_cat.count(cat)) {
        report.n_false_positive += static_cast<long long>(cat_preds.size());
      }
    }
  }

  report.n_ground_truth = static_cast<long long>(report.records.size());
  double sum = 0.0;
  for (const auto& rec : report.records) sum += rec.iou;
  report.mean_iou = sum / static_cast<double>(report.records.size());
  report.distribution = build_histogram(report.records, options.histogram_bins);
  return report;
}

inline SpreadStats spread_stats(const EvalReport& report) {
  SpreadStats stats;
  const auto n = static_cast<double>(report.records.size());
  double var = 0.0;
  long long in_band = 0;
  for (const auto& rec : report.records) {
    const double d = rec.iou - report.mean_iou;
    var += d * d;
    if (rec.iou >= 0.80 && rec.iou <= 0.95) ++in_band;
  }
  stats.std_dev = std::sqrt(var / n);
  stats.fraction_080_095 = in_band / n;
  long long total = 0;
  for (long long c : report.distribution.counts) total += c;
  stats.fraction_zero_bin =
      total > 0 ? report.distribution.counts.front() / static_cast<double>(total) : 0.0;
  return stats;
}

// Two-detector comparison over the same ground truth.
inline ComparisonReport compare(const EvalReport& a, const EvalReport& b) {
  if (a.n_ground_truth != b.n_ground_truth) {
    throw ValidationError("compare: reports cover different ground truth (" +
                          std::to_string(a.n_ground_truth) + " vs " +
                          std::to_string(b.n_ground_truth) + " boxes)");
  }
  ComparisonReport cmp;
  cmp.report_a = a;
  cmp.report_b = b;
  cmp.delta_mean = a.mean_iou - b.mean_iou;
  cmp.spread_a = spread_stats(a);
  cmp.spread_b = spread_stats(b);
  if (cmp.delta_mean > 0.0) cmp.better_localized = a.detector_name;
  else if (cmp.delta_mean < 0.0) cmp.better_localized = b.detector_name;
  else cmp.better_localized = "tie";
  return cmp;
}

}  // namespace eggloc
