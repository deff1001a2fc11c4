#pragma once

#include <optional>
#include <string>
#include <vector>

#include "boxrl/box.hpp"
#include "boxrl/error.hpp"
#include "boxrl/parsing.hpp"
#include "boxrl/policy.hpp"
#include "boxrl/types.hpp"

namespace boxrl {

// Grounding metrics: Acc = fraction with IoU strictly above 0.5, mIoU = mean
// IoU. Absent predictions count as IoU 0 rather than being excluded.
struct EvalReport {
  struct PerSample {
    std::string id;
    double iou = 0.0;
    bool hit = false;

    bool operator==(const PerSample&) const = default;
  };

  int n = 0;
  double acc = 0.0;
  double miou = 0.0;
  std::vector<PerSample> per_sample;

  bool operator==(const EvalReport&) const = default;
};

inline EvalReport evaluate(const std::vector<std::optional<BBox>>& preds,
                           const std::vector<BBox>& gts,
                           const std::vector<std::string>& ids) {
  if (preds.size() != gts.size() || preds.size() != ids.size())
    throw DataError("evaluate: predictions, ground truths, and ids must have equal length");
  if (preds.empty()) throw DataError("evaluate: empty input");

  EvalReport report;
  report.n = static_cast<int>(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double iou = preds[i] ? box_iou(*preds[i], gts[i]) : 0.0;
    const bool hit = iou > 0.5;
    report.per_sample.push_back({ids[i], iou, hit});
    report.miou += iou;
    if (hit) report.acc += 1.0;
  }
  report.acc /= report.n;
  report.miou /= report.n;
  return report;
}

// Greedy-decode every sample and score the extracted answer boxes.
inline EvalReport evaluate_policy(const PolicyParams& params, const SlotSpec& spec,
                                  const std::vector<GroundingSample>& dataset) {
  std::vector<std::optional<BBox>> preds;
  std::vector<BBox> gts;
  std::vector<std::string> ids;
  for (const auto& sample : dataset) {
    const Completion c = greedy_decode(params, spec, sample);
    preds.push_back(extract_answer_box(c.text));
    gts.push_back(sample.gt_box);
    ids.push_back(sample.id);
  }
  return evaluate(preds, gts, ids);
}

// Tight bounding box over the true cells of a row-major boolean mask; absent
// for an all-false mask. mask[row][col], box in (col, row) pixel coordinates.
inline std::optional<BBox> mask_to_box(const std::vector<std::vector<bool>>& mask) {
  int min_col = -1, min_row = -1, max_col = -1, max_row = -1;
  const std::size_t cols = mask.empty() ? 0 : mask[0].size();
  for (std::size_t r = 0; r < mask.size(); ++r) {
    if (mask[r].size() != cols) throw DataError("mask_to_box: ragged grid");
    for (std::size_t c = 0; c < cols; ++c) {
      if (!mask[r][c]) continue;
      if (min_col < 0) {
        min_col = max_col = static_cast<int>(c);
        min_row = max_row = static_cast<int>(r);
      } else {
        min_col = std::min(min_col, static_cast<int>(c));
        max_col = std::max(max_col, static_cast<int>(c));
        min_row = std::min(min_row, static_cast<int>(r));
        max_row = std::max(max_row, static_cast<int>(r));
      }
    }
  }
  if (min_col < 0) return std::nullopt;
  return BBox{min_col, min_row, max_col + 1, max_row + 1};
}

}  // namespace boxrl
