#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "boxrl/box.hpp"
#include "boxrl/error.hpp"
#include "boxrl/types.hpp"

namespace boxrl {

// ROI-vs-phrase semantic scorer. Implementations must be deterministic for
// fixed inputs and return a cosine in [-1, 1].
class SimilarityProvider {
 public:
  virtual ~SimilarityProvider() = default;
  virtual double similarity(const ImageRef& image, const BBox& box,
                            const std::string& phrase) = 0;
};

namespace detail {

// Area of box ∩ (r_1 ∪ ... ∪ r_k), exact in int64: clip every rect to the
// box, then sweep x-strips and merge y-intervals per strip.
inline std::int64_t overlap_with_union(const BBox& box, const std::vector<BBox>& rects) {
  std::vector<BBox> clipped;
  std::vector<int> xs;
  for (const auto& r : rects) {
    if (const auto inter = box_intersection(box, r)) {
      clipped.push_back(*inter);
      xs.push_back(inter->x1);
      xs.push_back(inter->x2);
    }
  }
  if (clipped.empty()) return 0;
  std::sort(xs.begin(), xs.end());
  xs.erase(std::unique(xs.begin(), xs.end()), xs.end());

  std::int64_t total = 0;
  std::vector<std::pair<int, int>> spans;
  for (std::size_t i = 0; i + 1 < xs.size(); ++i) {
    const int x1 = xs[i], x2 = xs[i + 1];
    spans.clear();
    for (const auto& r : clipped)
      if (r.x1 <= x1 && r.x2 >= x2) spans.emplace_back(r.y1, r.y2);
    std::sort(spans.begin(), spans.end());
    std::int64_t covered = 0;
    int reach = std::numeric_limits<int>::min();
    for (const auto& [y1, y2] : spans) {
      if (y2 <= reach) continue;
      covered += y2 - std::max(y1, reach);
      reach = y2;
    }
    total += covered * static_cast<std::int64_t>(x2 - x1);
  }
  return total;
}

inline std::optional<std::string> phrase_class(const Scene& scene, const std::string& phrase) {
  const std::string cls = parse_phrase(phrase).class_name;
  for (const auto& c : scene.classes)
    if (c == cls) return cls;
  return std::nullopt;
}

}  // namespace detail

// Exactly computable stand-in for a frozen ROI/text scorer. The ROI vector is
// a class-weighted sum of orthonormal one-hot prototypes, with weights
//   w_c = area(box ∩ union of class-c rects) / area(box),
// and the returned value is the cosine against the phrase class prototype:
//   w_phrase / ||w||, or 0 when the box overlaps no object (or has no area).
// A phrase whose class part is not in the scene vocabulary scores 0.
inline double synthetic_similarity(const Scene& scene, const BBox& box,
                                   const std::string& phrase) {
  const std::int64_t area = box_area(box);
  if (area <= 0) return 0.0;
  const auto cls = detail::phrase_class(scene, phrase);

  std::map<std::string, std::vector<BBox>> by_class;
  for (const auto& obj : scene.objects) by_class[obj.class_name].push_back(obj.rect);

  double norm_sq = 0.0;
  double w_phrase = 0.0;
  for (const auto& [name, rects] : by_class) {
    const double w = static_cast<double>(detail::overlap_with_union(box, rects)) /
                     static_cast<double>(area);
    norm_sq += w * w;
    if (cls && name == *cls) w_phrase = w;
  }
  if (norm_sq == 0.0) return 0.0;  // background-only ROI
  if (!cls) return 0.0;
  return w_phrase / std::sqrt(norm_sq);
}

class SyntheticSimilarity final : public SimilarityProvider {
 public:
  double similarity(const ImageRef& image, const BBox& box,
                    const std::string& phrase) override {
    if (image.kind != ImageKind::SyntheticScene || !image.scene)
      throw ProviderError("synthetic similarity requires a scene-backed image");
    return synthetic_similarity(*image.scene, box, phrase);
  }
};

// One-line JSON wire format for attaching a real scorer.
// Request:  {"id":"...","image":"path","box":[x1,y1,x2,y2],"phrase":"..."}
// Response: {"id":"...","similarity":0.42} or {"id":"...","error":"..."}
struct SimilarityRequest {
  std::string id;
  std::string image_path;
  BBox box;
  std::string phrase;

  bool operator==(const SimilarityRequest&) const = default;
};

struct SimilarityResponse {
  std::string id;
  std::optional<double> similarity;
  std::optional<std::string> error;

  bool operator==(const SimilarityResponse&) const = default;
};

inline std::string serialize_request(const SimilarityRequest& req) {
  nlohmann::ordered_json j;
  j["id"] = req.id;
  j["image"] = req.image_path;
  j["box"] = {req.box.x1, req.box.y1, req.box.x2, req.box.y2};
  j["phrase"] = req.phrase;
  return j.dump();
}

inline SimilarityRequest parse_request(const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
    SimilarityRequest req;
    req.id = j.at("id").get<std::string>();
    req.image_path = j.at("image").get<std::string>();
    const auto& b = j.at("box");
    if (!b.is_array() || b.size() != 4) throw ProtocolError("request box must be [x1,y1,x2,y2]");
    req.box = BBox{b[0].get<int>(), b[1].get<int>(), b[2].get<int>(), b[3].get<int>()};
    req.phrase = j.at("phrase").get<std::string>();
    return req;
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(std::string("malformed request line: ") + e.what());
  }
}

inline std::string serialize_response(const SimilarityResponse& resp) {
  nlohmann::ordered_json j;
  j["id"] = resp.id;
  if (resp.error)
    j["error"] = *resp.error;
  else
    j["similarity"] = resp.similarity.value();
  return j.dump();
}

inline SimilarityResponse parse_response(const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
    SimilarityResponse resp;
    resp.id = j.at("id").get<std::string>();
    if (j.contains("error"))
      resp.error = j.at("error").get<std::string>();
    else
      resp.similarity = j.at("similarity").get<double>();
    return resp;
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(std::string("malformed response line: ") + e.what());
  }
}

}  // namespace boxrl
