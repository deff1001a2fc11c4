#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "boxrl/box.hpp"
#include "boxrl/error.hpp"
#include "boxrl/rng.hpp"
#include "boxrl/types.hpp"

namespace boxrl {

struct SynthConfig {
  int num_samples = 16;
  int width = 64;
  int height = 64;
  std::vector<std::string> classes = {"mass",      "nodule",      "opacity",
                                      "effusion",  "atelectasis", "consolidation"};
  int min_objects = 2;
  int max_objects = 4;
  int min_object_size = 20;
  int max_object_size = 32;
  // Object geometry is snapped to this pixel lattice; coarse coordinates keep
  // every derived quantity short to write down and give the discretized
  // policy an exactly expressible ground truth.
  int grid = 4;
  // Probability that a later object is placed flush against the first one
  // (hard negatives in the same neighborhood) instead of anywhere.
  double neighbor_bias = 0.8;
  double distractor_rate = 0.3;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_samples <= 0) throw ConfigError("num_samples must be positive");
    if (width <= 0 || height <= 0) throw ConfigError("width/height must be positive");
    if (classes.empty()) throw ConfigError("classes must be non-empty");
    for (const auto& c : classes)
      if (c.empty()) throw ConfigError("classes must be non-empty strings");
    if (min_objects < 1 || max_objects < min_objects)
      throw ConfigError("need 1 <= min_objects <= max_objects");
    if (static_cast<std::size_t>(max_objects) > classes.size())
      throw ConfigError("max_objects exceeds class vocabulary size");
    if (min_object_size < 1 || max_object_size < min_object_size)
      throw ConfigError("need 1 <= min_object_size <= max_object_size");
    if (min_object_size > width || min_object_size > height)
      throw ConfigError("min_object_size exceeds scene extent");
    if (grid < 1 || grid > min_object_size)
      throw ConfigError("grid must be in [1, min_object_size]");
    if (neighbor_bias < 0.0 || neighbor_bias > 1.0)
      throw ConfigError("neighbor_bias must be in [0,1]");
    if (distractor_rate < 0.0 || distractor_rate > 1.0)
      throw ConfigError("distractor_rate must be in [0,1]");
  }
};

namespace detail {

// Disjoint placement keeps every ground-truth ROI fully dominated by its own
// class; same-class pairs additionally need strictly different center-x so
// left/right phrases stay unambiguous.
inline bool placement_ok(const std::vector<SceneObject>& placed, const std::string& cls,
                         const BBox& cand) {
  for (const auto& obj : placed) {
    if (box_intersection(cand, obj.rect)) return false;
    if (obj.class_name == cls && obj.rect.x1 + obj.rect.x2 == cand.x1 + cand.x2) return false;
  }
  return true;
}

// One rect per requested class, in order. The first object anchors the scene;
// later ones are drawn flush against it with probability neighbor_bias.
// Objects beyond required_count are dropped when the retry budget runs out.
inline std::vector<SceneObject> place_objects(const SynthConfig& cfg,
                                              const std::vector<std::string>& class_list,
                                              std::size_t required_count, Rng& rng) {
  constexpr int kRetries = 300;
  const auto snap = [&](int v) { return (v / cfg.grid) * cfg.grid; };
  std::vector<SceneObject> placed;
  for (std::size_t i = 0; i < class_list.size(); ++i) {
    bool ok = false;
    for (int attempt = 0; attempt < kRetries && !ok; ++attempt) {
      const int max_w = std::min(cfg.max_object_size, cfg.width);
      const int max_h = std::min(cfg.max_object_size, cfg.height);
      int w = snap(cfg.min_object_size +
                   static_cast<int>(rng.next_below(max_w - cfg.min_object_size + 1)));
      int h = snap(cfg.min_object_size +
                   static_cast<int>(rng.next_below(max_h - cfg.min_object_size + 1)));
      w = std::max(w, cfg.grid);
      h = std::max(h, cfg.grid);

      int x, y;
      const bool near_anchor = !placed.empty() && rng.next_double() < cfg.neighbor_bias;
      if (near_anchor) {
        const BBox& anchor = placed.front().rect;
        const int gap = cfg.grid * static_cast<int>(rng.next_below(2));  // 0 or one cell
        switch (rng.next_below(4)) {
          case 0: x = anchor.x1 - gap - w; y = anchor.y1; break;
          case 1: x = anchor.x2 + gap; y = anchor.y1; break;
          case 2: x = anchor.x1; y = anchor.y1 - gap - h; break;
          default: x = anchor.x1; y = anchor.y2 + gap; break;
        }
        if (x < 0 || y < 0 || x + w > cfg.width || y + h > cfg.height) continue;
      } else {
        x = snap(static_cast<int>(rng.next_below(cfg.width - w + 1)));
        y = snap(static_cast<int>(rng.next_below(cfg.height - h + 1)));
      }
      const BBox cand{x, y, x + w, y + h};
      if (placement_ok(placed, class_list[i], cand)) {
        placed.push_back({class_list[i], cand});
        ok = true;
      }
    }
    if (!ok && i < required_count)
      throw GenerationExhausted("could not place required object " + std::to_string(i) +
                                " (" + class_list[i] + ") within retry budget");
    if (!ok) break;
  }
  return placed;
}

inline std::vector<std::string> pick_distinct_classes(const SynthConfig& cfg, int count,
                                                      Rng& rng,
                                                      const std::string& exclude = "") {
  std::vector<std::string> pool;
  for (const auto& c : cfg.classes)
    if (c != exclude) pool.push_back(c);
  // Fisher-Yates prefix shuffle driven by the run generator.
  for (std::size_t i = 0; i + 1 < pool.size(); ++i) {
    const std::size_t j = i + rng.next_below(pool.size() - i);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(std::min<std::size_t>(count, pool.size()));
  return pool;
}

inline std::string sample_name(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "s%04d", index);
  return buf;
}

}  // namespace detail

// A generic scene with distinct classes; deterministic per generator state.
inline Scene generate_scene(const SynthConfig& cfg, Rng& rng) {
  cfg.validate();
  const int n = cfg.min_objects +
                static_cast<int>(rng.next_below(cfg.max_objects - cfg.min_objects + 1));
  const auto class_list = detail::pick_distinct_classes(cfg, n, rng);
  Scene scene;
  scene.width = cfg.width;
  scene.height = cfg.height;
  scene.classes = cfg.classes;
  scene.objects = detail::place_objects(cfg, class_list, cfg.min_objects, rng);
  return scene;
}

// Phrase for an object: the bare class name, or "left/right <class>" when the
// scene holds a same-class pair, decided by strict center-x order.
inline std::string phrase_for_target(const Scene& scene, std::size_t target_index) {
  const auto& target = scene.objects.at(target_index);
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    if (i == target_index) continue;
    const auto& other = scene.objects[i];
    if (other.class_name != target.class_name) continue;
    const int t = target.rect.x1 + target.rect.x2;
    const int o = other.rect.x1 + other.rect.x2;
    if (t == o) throw GenerationExhausted("same-class pair with equal center-x");
    return (t < o ? "left " : "right ") + target.class_name;
  }
  return target.class_name;
}

// Reference resolver used to re-check the uniqueness guarantee: which object
// does a phrase denote? nullopt when not exactly one.
inline std::optional<std::size_t> resolve_phrase(const Scene& scene, const std::string& phrase) {
  const PhraseParts parts = parse_phrase(phrase);
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < scene.objects.size(); ++i)
    if (scene.objects[i].class_name == parts.class_name) candidates.push_back(i);
  if (parts.qualifier.empty())
    return candidates.size() == 1 ? std::optional(candidates[0]) : std::nullopt;
  if (candidates.size() != 2) return std::nullopt;
  const auto& a = scene.objects[candidates[0]].rect;
  const auto& b = scene.objects[candidates[1]].rect;
  if (a.x1 + a.x2 == b.x1 + b.x2) return std::nullopt;
  const bool first_is_left = a.x1 + a.x2 < b.x1 + b.x2;
  if (parts.qualifier == "left") return first_is_left ? candidates[0] : candidates[1];
  if (parts.qualifier == "right") return first_is_left ? candidates[1] : candidates[0];
  return std::nullopt;
}

// One sample per scene. The target object is placed first; with probability
// distractor_rate a same-class distractor follows, exercising completions
// that are spatially wrong yet semantically right.
inline std::vector<GroundingSample> generate_dataset(const SynthConfig& cfg) {
  cfg.validate();
  const Rng root(cfg.seed);
  std::vector<GroundingSample> samples;
  samples.reserve(cfg.num_samples);

  for (int i = 0; i < cfg.num_samples; ++i) {
    Rng rng = root.derive(static_cast<std::uint64_t>(i));

    const std::string target_class = cfg.classes[rng.next_below(cfg.classes.size())];
    const bool distractor = rng.next_double() < cfg.distractor_rate;
    int n = cfg.min_objects +
            static_cast<int>(rng.next_below(cfg.max_objects - cfg.min_objects + 1));
    if (distractor) n = std::max(n, 2);

    std::vector<std::string> class_list = {target_class};
    if (distractor) class_list.push_back(target_class);
    const int fillers = n - static_cast<int>(class_list.size());
    for (auto& c : detail::pick_distinct_classes(cfg, fillers, rng, target_class))
      class_list.push_back(std::move(c));

    const std::size_t required =
        std::max<std::size_t>(cfg.min_objects, distractor ? 2 : 1);

    Scene scene;
    scene.width = cfg.width;
    scene.height = cfg.height;
    scene.classes = cfg.classes;
    scene.objects = detail::place_objects(cfg, class_list, required, rng);

    GroundingSample s;
    s.id = detail::sample_name(i);
    s.phrase = phrase_for_target(scene, 0);
    s.gt_box = scene.objects[0].rect;
    s.width = cfg.width;
    s.height = cfg.height;
    s.image = ImageRef::from_scene(std::move(scene));
    s.validate();
    samples.push_back(std::move(s));
  }
  return samples;
}

}  // namespace boxrl
