#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "eggloc/errors.hpp"

namespace eggloc {

// Axis-aligned box in pixel coordinates, origin at the top-left corner.
// Valid boxes have strictly positive area and non-negative coordinates.
struct BoundingBox {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  bool valid() const {
    return x_min >= 0.0 && y_min >= 0.0 && x_min < x_max && y_min < y_max;
  }
  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }

  bool operator==(const BoundingBox&) const = default;
};

inline void validate_box(const BoundingBox& box, const char* what = "box") {
  if (!box.valid()) {
    std::ostringstream msg;
    msg << "invalid " << what << " (" << box.x_min << ", " << box.y_min << ", "
        << box.x_max << ", " << box.y_max
        << "): requires x_min < x_max, y_min < y_max and coordinates >= 0";
    throw ValidationError(msg.str());
  }
}

inline double area(const BoundingBox& box) {
  validate_box(box);
  return box.width() * box.height();
}

// Intersection over union of two valid boxes; 0 when disjoint, symmetric.
inline double iou(const BoundingBox& a, const BoundingBox& b) {
  validate_box(a);
  validate_box(b);
  const double ix = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double iy = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  const double inter = ix * iy;
  const double uni = a.width() * a.height() + b.width() * b.height() - inter;
  return inter / uni;
}

enum class MatchStatus { matched, missed_gt, false_positive };

inline const char* to_string(MatchStatus s) {
  switch (s) {
    case MatchStatus::matched: return "matched";
    case MatchStatus::missed_gt: return "missed_gt";
    case MatchStatus::false_positive: return "false_positive";
  }
  return "unknown";
}

// One row of the prediction/ground-truth pairing produced by match_boxes.
struct MatchRecord {
  std::optional<std::size_t> gt_index;
  std::optional<std::size_t> pred_index;
  double iou = 0.0;
  MatchStatus status = MatchStatus::missed_gt;
};

// Greedy one-to-one matching by descending IoU. Pairs with zero overlap are
// never matched. Ties break on lower prediction index, then lower ground-truth
// index, so the result is deterministic. The output holds one record per
// ground truth (in ground-truth order) followed by one false_positive record
// per unmatched prediction (in prediction order).
inline std::vector<MatchRecord> match_boxes(
    const std::vector<BoundingBox>& preds,
    const std::vector<BoundingBox>& gts) {
  for (const auto& p : preds) validate_box(p, "prediction box");
  for (const auto& g : gts) validate_box(g, "ground-truth box");

  struct Pair {
    double iou;
    std::size_t pred;
    std::size_t gt;
  };
  std::vector<Pair> pairs;
  pairs.reserve(preds.size() * gts.size());
  for (std::size_t p = 0; p < preds.size(); ++p) {
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double score = iou(preds[p], gts[g]);
      if (score > 0.0) pairs.push_back({score, p, g});
    }
  }
  std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
    if (a.iou != b.iou) return a.iou > b.iou;
    if (a.pred != b.pred) return a.pred < b.pred;
    return a.gt < b.gt;
  });

  std::vector<bool> pred_used(preds.size(), false);
  std::vector<bool> gt_used(gts.size(), false);
  std::vector<MatchRecord> per_gt(gts.size());
  for (std::size_t g = 0; g < gts.size(); ++g) {
    per_gt[g] = MatchRecord{g, std::nullopt, 0.0, MatchStatus::missed_gt};
  }
  for (const auto& pair : pairs) {
    if (pred_used[pair.pred] || gt_used[pair.gt]) continue;
    pred_used[pair.pred] = true;
    gt_used[pair.gt] = true;
    per_gt[pair.gt] = MatchRecord{pair.gt, pair.pred, pair.iou, MatchStatus::matched};
  }

  std::vector<MatchRecord> records = std::move(per_gt);
  for (std::size_t p = 0; p < preds.size(); ++p) {
    if (!pred_used[p]) {
      records.push_back(MatchRecord{std::nullopt, p, 0.0, MatchStatus::false_positive});
    }
  }
  return records;
}

// Clamp a box into [0,width] x [0,height]. Throws DegenerateBoxError when the
// clamped box has no area (box entirely outside the image).
inline BoundingBox clamp_to_image(const BoundingBox& box, int width, int height) {
  if (width <= 0 || height <= 0) {
    throw ValidationError("image dimensions must be positive");
  }
  BoundingBox out;
  out.x_min = std::clamp(box.x_min, 0.0, static_cast<double>(width));
  out.y_min = std::clamp(box.y_min, 0.0, static_cast<double>(height));
  out.x_max = std::clamp(box.x_max, 0.0, static_cast<double>(width));
  out.y_max = std::clamp(box.y_max, 0.0, static_cast<double>(height));
  if (!(out.x_min < out.x_max && out.y_min < out.y_max)) {
    std::ostringstream msg;
    msg << "box (" << box.x_min << ", " << box.y_min << ", " << box.x_max
        << ", " << box.y_max << ") collapses to zero area when clamped to "
        << width << "x" << height;
    throw DegenerateBoxError(msg.str());
  }
  return out;
}

}  // namespace eggloc
