#pragma once

#include <algorithm>
#include <optional>
#include <string>

#include "boxrl/box.hpp"
#include "boxrl/parsing.hpp"
#include "boxrl/similarity.hpp"
#include "boxrl/types.hpp"

namespace boxrl {

// Per-completion grading. total is always format + spatial + semantic; any
// ablation weighting happens in the optimizer, never here.
struct RewardBreakdown {
  double format = 0.0;    // {0,1}
  double spatial = 0.0;   // {0,1}
  double semantic = 0.0;  // [0,1]
  double total = 0.0;     // [0,3]

  bool operator==(const RewardBreakdown&) const = default;
};

inline double format_reward(const std::string& text) {
  return check_format(text) ? 1.0 : 0.0;
}

// 1 iff a box was extracted and its IoU with ground truth strictly exceeds
// the threshold; exact ties score 0.
inline double spatial_reward(const std::optional<BBox>& pred, const BBox& gt,
                             double iou_threshold = 0.5) {
  if (!pred) return 0.0;
  return box_iou(*pred, gt) > iou_threshold ? 1.0 : 0.0;
}

// Clamped-at-zero cosine between the predicted ROI and the phrase. Requires a
// parseable positive-area box; there is no ROI to embed otherwise. Provider
// failures propagate, they are never scored as 0.
inline double semantic_reward(const ImageRef& image, const std::optional<BBox>& pred,
                              const std::string& phrase, SimilarityProvider& provider) {
  if (!pred || box_area(*pred) <= 0) return 0.0;
  const double cosine = provider.similarity(image, *pred, phrase);
  return std::max(0.0, cosine);
}

// Parses once, grades all three rewards on the same parse.
inline RewardBreakdown total_reward(const std::string& completion_text,
                                    const GroundingSample& sample,
                                    SimilarityProvider& provider,
                                    double iou_threshold = 0.5) {
  RewardBreakdown r;
  r.format = format_reward(completion_text);
  const std::optional<BBox> pred = extract_answer_box(completion_text);
  r.spatial = spatial_reward(pred, sample.gt_box, iou_threshold);
  r.semantic = semantic_reward(sample.image, pred, sample.phrase, provider);
  r.total = r.format + r.spatial + r.semantic;
  return r;
}

}  // namespace boxrl
