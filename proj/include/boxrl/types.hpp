#pragma once

#include <optional>
#include <string>
#include <vector>

#include "boxrl/box.hpp"
#include "boxrl/error.hpp"

namespace boxrl {

// Symbolic labeled-rectangle image: all geometry, no raster. Every similarity
// and reward value over a Scene is exactly computable by hand.
struct SceneObject {
  std::string class_name;
  BBox rect;

  bool operator==(const SceneObject&) const = default;
};

struct Scene {
  int width = 0;
  int height = 0;
  std::vector<SceneObject> objects;
  std::vector<std::string> classes;  // ordered vocabulary

  bool operator==(const Scene&) const = default;
};

enum class ImageKind { SyntheticScene, FilePath };

struct ImageRef {
  ImageKind kind = ImageKind::SyntheticScene;
  std::optional<Scene> scene;      // present iff kind == SyntheticScene
  std::optional<std::string> path; // present iff kind == FilePath

  static ImageRef from_scene(Scene s) {
    ImageRef r;
    r.kind = ImageKind::SyntheticScene;
    r.scene = std::move(s);
    return r;
  }
  static ImageRef from_path(std::string p) {
    ImageRef r;
    r.kind = ImageKind::FilePath;
    r.path = std::move(p);
    return r;
  }

  bool operator==(const ImageRef&) const = default;
};

// One image-phrase-box triple: the query and its ground truth.
struct GroundingSample {
  std::string id;
  ImageRef image;
  std::string phrase;
  BBox gt_box;
  int width = 0;
  int height = 0;

  bool operator==(const GroundingSample&) const = default;

  void validate() const {
    if (id.empty()) throw DataError("sample id must be non-empty");
    if (phrase.empty()) throw DataError("sample " + id + ": phrase must be non-empty");
    if (width <= 0 || height <= 0) throw DataError("sample " + id + ": non-positive extent");
    if (!box_valid(gt_box) || gt_box.x2 > width || gt_box.y2 > height)
      throw DataError("sample " + id + ": gt_box outside [0,width]x[0,height]");
  }
};

// "left mass" -> {qualifier="left", class_name="mass"}; "mass" -> {"", "mass"}.
struct PhraseParts {
  std::string qualifier;  // "left", "right", or empty
  std::string class_name;
};

inline PhraseParts parse_phrase(const std::string& phrase) {
  for (const char* q : {"left ", "right "}) {
    const std::string prefix(q);
    if (phrase.size() > prefix.size() && phrase.compare(0, prefix.size(), prefix) == 0)
      return {prefix.substr(0, prefix.size() - 1), phrase.substr(prefix.size())};
  }
  return {"", phrase};
}

}  // namespace boxrl
