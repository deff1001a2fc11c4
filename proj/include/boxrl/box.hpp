#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>

namespace boxrl {

// Axis-aligned pixel rectangle [x1,y1,x2,y2], origin top-left, x1<=x2, y1<=y2.
// Area follows the continuous convention (x2-x1)*(y2-y1): no +1 pixel term, so
// degenerate (line/point) boxes have area 0 but remain representable.
struct BBox {
  int x1 = 0;
  int y1 = 0;
  int x2 = 0;
  int y2 = 0;

  bool operator==(const BBox&) const = default;
};

// True when coordinates are ordered and non-negative.
inline bool box_valid(const BBox& b) {
  return b.x1 >= 0 && b.y1 >= 0 && b.x1 <= b.x2 && b.y1 <= b.y2;
}

inline std::int64_t box_area(const BBox& b) {
  return static_cast<std::int64_t>(b.x2 - b.x1) * static_cast<std::int64_t>(b.y2 - b.y1);
}

inline std::optional<BBox> box_intersection(const BBox& a, const BBox& b) {
  const int x1 = std::max(a.x1, b.x1);
  const int y1 = std::max(a.y1, b.y1);
  const int x2 = std::min(a.x2, b.x2);
  const int y2 = std::min(a.y2, b.y2);
  if (x1 >= x2 || y1 >= y2) return std::nullopt;
  return BBox{x1, y1, x2, y2};
}

// Intersection over union. Two degenerate boxes give 0 even when coincident,
// so zero-area predictions never score.
inline double box_iou(const BBox& a, const BBox& b) {
  const auto inter = box_intersection(a, b);
  const std::int64_t inter_area = inter ? box_area(*inter) : 0;
  const std::int64_t union_area = box_area(a) + box_area(b) - inter_area;
  if (union_area <= 0) return 0.0;
  return static_cast<double>(inter_area) / static_cast<double>(union_area);
}

}  // namespace boxrl
