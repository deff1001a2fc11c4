#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "boxrl/error.hpp"
#include "boxrl/eval.hpp"
#include "boxrl/grpo.hpp"
#include "boxrl/policy.hpp"
#include "boxrl/synth.hpp"
#include "boxrl/types.hpp"

namespace boxrl {

// All files are UTF-8 JSON / JSONL with explicit format versions. Insertion
// order is preserved on write so emitted bytes match the documented schemas
// and stay stable across runs.
using ojson = nlohmann::ordered_json;

inline constexpr int kCheckpointFormatVersion = 1;
inline constexpr int kLogFormatVersion = 1;

namespace io_detail {

inline ojson parse_json(const std::string& text, const std::string& what) {
  try {
    return ojson::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("failed to parse " + what + ": " + e.what());
  }
}

inline ojson load_json_file(const std::filesystem::path& path, const std::string& what) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + what + ": " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_json(buf.str(), what + " " + path.string());
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

// Rejects unknown keys so config typos fail loudly with the field name.
inline void check_known_keys(const ojson& j, const std::set<std::string>& known,
                             const std::string& what) {
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw ConfigError(what + ": unknown field \"" + key + "\"");
}

template <typename T>
void read_field(const ojson& j, const char* key, T& into, const std::string& what) {
  if (!j.contains(key)) return;
  try {
    into = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(what + ": field \"" + std::string(key) + "\" has the wrong type");
  }
}

}  // namespace io_detail

// ---- geometry / sample schemas ----

inline ojson box_to_json(const BBox& b) { return ojson::array({b.x1, b.y1, b.x2, b.y2}); }

inline BBox box_from_json(const ojson& j, const std::string& what) {
  if (!j.is_array() || j.size() != 4)
    throw DataError(what + ": box must be a 4-element array");
  return BBox{j[0].get<int>(), j[1].get<int>(), j[2].get<int>(), j[3].get<int>()};
}

inline ojson scene_to_json(const Scene& s) {
  ojson j;
  j["width"] = s.width;
  j["height"] = s.height;
  j["classes"] = s.classes;
  j["objects"] = ojson::array();
  for (const auto& obj : s.objects) {
    ojson o;
    o["class"] = obj.class_name;
    o["rect"] = box_to_json(obj.rect);
    j["objects"].push_back(std::move(o));
  }
  return j;
}

inline Scene scene_from_json(const ojson& j) {
  Scene s;
  s.width = j.at("width").get<int>();
  s.height = j.at("height").get<int>();
  s.classes = j.at("classes").get<std::vector<std::string>>();
  for (const auto& o : j.at("objects"))
    s.objects.push_back({o.at("class").get<std::string>(), box_from_json(o.at("rect"), "scene object")});
  return s;
}

inline ojson image_to_json(const ImageRef& img) {
  ojson j;
  if (img.kind == ImageKind::SyntheticScene) {
    j["kind"] = "synthetic-scene";
    j["scene"] = scene_to_json(img.scene.value());
  } else {
    j["kind"] = "file-path";
    j["path"] = img.path.value();
  }
  return j;
}

inline ImageRef image_from_json(const ojson& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "synthetic-scene") return ImageRef::from_scene(scene_from_json(j.at("scene")));
  if (kind == "file-path") return ImageRef::from_path(j.at("path").get<std::string>());
  throw DataError("image kind must be synthetic-scene or file-path, got \"" + kind + "\"");
}

inline ojson sample_to_json(const GroundingSample& s) {
  ojson j;
  j["id"] = s.id;
  j["image"] = image_to_json(s.image);
  j["phrase"] = s.phrase;
  j["box"] = box_to_json(s.gt_box);
  j["width"] = s.width;
  j["height"] = s.height;
  return j;
}

inline GroundingSample sample_from_json(const ojson& j) {
  GroundingSample s;
  try {
    s.id = j.at("id").get<std::string>();
    s.image = image_from_json(j.at("image"));
    s.phrase = j.at("phrase").get<std::string>();
    s.gt_box = box_from_json(j.at("box"), "sample");
    s.width = j.at("width").get<int>();
    s.height = j.at("height").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed sample: ") + e.what());
  }
  s.validate();
  return s;
}

inline std::string dataset_to_jsonl(const std::vector<GroundingSample>& samples) {
  std::string out;
  for (const auto& s : samples) {
    out += sample_to_json(s).dump();
    out += '\n';
  }
  return out;
}

inline std::vector<GroundingSample> dataset_from_jsonl(std::istream& in) {
  std::vector<GroundingSample> samples;
  std::set<std::string> seen;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const ojson j = io_detail::parse_json(line, "dataset line " + std::to_string(line_no));
    samples.push_back(sample_from_json(j));
    if (!seen.insert(samples.back().id).second)
      throw DataError("duplicate sample id: " + samples.back().id);
  }
  if (samples.empty()) throw DataError("dataset is empty");
  return samples;
}

inline std::vector<GroundingSample> load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset: " + path.string());
  return dataset_from_jsonl(in);
}

inline void save_dataset(const std::filesystem::path& path,
                         const std::vector<GroundingSample>& samples) {
  io_detail::write_text_file(path, dataset_to_jsonl(samples));
}

// ---- configuration ----

inline ojson train_config_to_json(const TrainConfig& cfg) {
  ojson j;
  j["group_size"] = cfg.group_size;
  j["beta"] = cfg.beta;
  j["eps"] = cfg.eps;
  j["refresh_interval"] = cfg.refresh_interval;
  j["learning_rate"] = cfg.learning_rate;
  j["steps"] = cfg.steps;
  j["seed"] = cfg.seed;
  j["advantage_epsilon"] = cfg.advantage_epsilon;
  j["iou_threshold"] = cfg.iou_threshold;
  j["weight_format"] = cfg.weight_format;
  j["weight_spatial"] = cfg.weight_spatial;
  j["weight_semantic"] = cfg.weight_semantic;
  j["bins"] = cfg.bins;
  return j;
}

// Applies fields present in j on top of cfg; absent fields keep their values.
inline void apply_train_config_json(const ojson& j, TrainConfig& cfg) {
  io_detail::check_known_keys(
      j,
      {"group_size", "beta", "eps", "refresh_interval", "learning_rate", "steps", "seed",
       "advantage_epsilon", "iou_threshold", "weight_format", "weight_spatial",
       "weight_semantic", "bins", "provider"},
      "train config");
  io_detail::read_field(j, "group_size", cfg.group_size, "train config");
  io_detail::read_field(j, "beta", cfg.beta, "train config");
  io_detail::read_field(j, "eps", cfg.eps, "train config");
  io_detail::read_field(j, "refresh_interval", cfg.refresh_interval, "train config");
  io_detail::read_field(j, "learning_rate", cfg.learning_rate, "train config");
  io_detail::read_field(j, "steps", cfg.steps, "train config");
  io_detail::read_field(j, "seed", cfg.seed, "train config");
  io_detail::read_field(j, "advantage_epsilon", cfg.advantage_epsilon, "train config");
  io_detail::read_field(j, "iou_threshold", cfg.iou_threshold, "train config");
  io_detail::read_field(j, "weight_format", cfg.weight_format, "train config");
  io_detail::read_field(j, "weight_spatial", cfg.weight_spatial, "train config");
  io_detail::read_field(j, "weight_semantic", cfg.weight_semantic, "train config");
  io_detail::read_field(j, "bins", cfg.bins, "train config");
}

inline ojson synth_config_to_json(const SynthConfig& cfg) {
  ojson j;
  j["num_samples"] = cfg.num_samples;
  j["width"] = cfg.width;
  j["height"] = cfg.height;
  j["classes"] = cfg.classes;
  j["min_objects"] = cfg.min_objects;
  j["max_objects"] = cfg.max_objects;
  j["min_object_size"] = cfg.min_object_size;
  j["max_object_size"] = cfg.max_object_size;
  j["grid"] = cfg.grid;
  j["neighbor_bias"] = cfg.neighbor_bias;
  j["distractor_rate"] = cfg.distractor_rate;
  j["seed"] = cfg.seed;
  return j;
}

inline void apply_synth_config_json(const ojson& j, SynthConfig& cfg) {
  io_detail::check_known_keys(j,
                              {"num_samples", "width", "height", "classes", "min_objects",
                               "max_objects", "min_object_size", "max_object_size", "grid",
                               "neighbor_bias", "distractor_rate", "seed"},
                              "synth config");
  io_detail::read_field(j, "num_samples", cfg.num_samples, "synth config");
  io_detail::read_field(j, "width", cfg.width, "synth config");
  io_detail::read_field(j, "height", cfg.height, "synth config");
  io_detail::read_field(j, "classes", cfg.classes, "synth config");
  io_detail::read_field(j, "min_objects", cfg.min_objects, "synth config");
  io_detail::read_field(j, "max_objects", cfg.max_objects, "synth config");
  io_detail::read_field(j, "min_object_size", cfg.min_object_size, "synth config");
  io_detail::read_field(j, "max_object_size", cfg.max_object_size, "synth config");
  io_detail::read_field(j, "grid", cfg.grid, "synth config");
  io_detail::read_field(j, "neighbor_bias", cfg.neighbor_bias, "synth config");
  io_detail::read_field(j, "distractor_rate", cfg.distractor_rate, "synth config");
  io_detail::read_field(j, "seed", cfg.seed, "synth config");
}

// Hash over the dynamics-relevant configuration (everything except the step
// budget), used to refuse resuming under a different setup.
inline std::uint64_t fnv1a64(const std::string& data) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (const unsigned char c : data) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

inline std::string config_hash(const TrainConfig& cfg) {
  ojson j = train_config_to_json(cfg);
  j.erase("steps");
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(j.dump())));
  return buf;
}

// ---- step records / logs ----

inline ojson step_record_to_json(const StepRecord& r) {
  for (const double v : {static_cast<double>(r.step), r.mean_reward, r.mean_format,
                         r.mean_spatial, r.mean_semantic, r.objective, r.mean_kl,
                         r.clipped_fraction, r.batch_acc})
    if (!std::isfinite(v)) throw NumericError("step record has a non-finite field");
  ojson j;
  j["step"] = r.step;
  j["mean_reward"] = r.mean_reward;
  j["mean_format"] = r.mean_format;
  j["mean_spatial"] = r.mean_spatial;
  j["mean_semantic"] = r.mean_semantic;
  j["objective"] = r.objective;
  j["mean_kl"] = r.mean_kl;
  j["clipped_fraction"] = r.clipped_fraction;
  j["batch_acc"] = r.batch_acc;
  return j;
}

inline StepRecord step_record_from_json(const ojson& j) {
  StepRecord r;
  try {
    r.step = j.at("step").get<std::int64_t>();
    r.mean_reward = j.at("mean_reward").get<double>();
    r.mean_format = j.at("mean_format").get<double>();
    r.mean_spatial = j.at("mean_spatial").get<double>();
    r.mean_semantic = j.at("mean_semantic").get<double>();
    r.objective = j.at("objective").get<double>();
    r.mean_kl = j.at("mean_kl").get<double>();
    r.clipped_fraction = j.at("clipped_fraction").get<double>();
    r.batch_acc = j.at("batch_acc").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed step record: ") + e.what());
  }
  for (const double v : {r.mean_reward, r.mean_format, r.mean_spatial, r.mean_semantic,
                         r.objective, r.mean_kl, r.clipped_fraction, r.batch_acc})
    if (!std::isfinite(v)) throw DataError("step record has a non-finite field");
  return r;
}

// ---- evaluation reports ----

inline ojson report_to_json(const EvalReport& r) {
  ojson j;
  j["n"] = r.n;
  j["acc"] = r.acc;
  j["miou"] = r.miou;
  j["per_sample"] = ojson::array();
  for (const auto& p : r.per_sample) {
    ojson e;
    e["id"] = p.id;
    e["iou"] = p.iou;
    e["hit"] = p.hit;
    j["per_sample"].push_back(std::move(e));
  }
  return j;
}

// ---- checkpoints ----

inline ojson params_to_json(const PolicyParams& params) {
  ojson j = ojson::object();
  for (const auto& [id, block] : params.blocks()) j[id] = block;
  return j;
}

inline PolicyParams params_from_json(const ojson& j, int expected_block) {
  PolicyParams p;
  for (const auto& [id, arr] : j.items()) {
    auto block = arr.get<std::vector<double>>();
    if (static_cast<int>(block.size()) != expected_block)
      throw DataError("checkpoint: params block for \"" + id + "\" has wrong size");
    for (const double v : block)
      if (!std::isfinite(v))
        throw DataError("checkpoint: params block for \"" + id + "\" has a non-finite value");
    p.blocks()[id] = std::move(block);
  }
  return p;
}

inline ojson checkpoint_to_json(const TrainState& state, const TrainConfig& cfg,
                                const SlotSpec& spec) {
  ojson j;
  j["format_version"] = kCheckpointFormatVersion;
  j["step"] = state.step;
  j["cfg_hash"] = config_hash(cfg);
  j["policy"] = {{"template_count", spec.templates.size()}, {"bins", spec.bins}};
  j["params_current"] = params_to_json(state.current);
  j["params_old"] = params_to_json(state.old);
  j["params_ref"] = params_to_json(state.ref);
  j["rng_state"] = state.rng.state();
  return j;
}

struct LoadedCheckpoint {
  TrainState state;
  int bins = 0;
  int template_count = 0;
  std::string cfg_hash;
};

inline LoadedCheckpoint checkpoint_from_json(const ojson& j) {
  if (!j.contains("format_version") ||
      j.at("format_version").get<int>() != kCheckpointFormatVersion) {
    const std::string got = j.contains("format_version")
                                ? j.at("format_version").dump()
                                : std::string("<missing>");
    throw DataError("checkpoint format_version mismatch: got " + got + ", expected " +
                    std::to_string(kCheckpointFormatVersion));
  }
  LoadedCheckpoint loaded;
  try {
    loaded.bins = j.at("policy").at("bins").get<int>();
    loaded.template_count = j.at("policy").at("template_count").get<int>();
    const int block = loaded.template_count + 4 * loaded.bins;
    loaded.state.step = j.at("step").get<std::int64_t>();
    loaded.state.current = params_from_json(j.at("params_current"), block);
    loaded.state.old = params_from_json(j.at("params_old"), block);
    loaded.state.ref = params_from_json(j.at("params_ref"), block);
    loaded.state.rng.set_state(j.at("rng_state").get<std::uint64_t>());
    loaded.cfg_hash = j.at("cfg_hash").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed checkpoint: ") + e.what());
  }
  return loaded;
}

inline void save_checkpoint(const std::filesystem::path& path, const TrainState& state,
                            const TrainConfig& cfg, const SlotSpec& spec) {
  io_detail::write_text_file(path, checkpoint_to_json(state, cfg, spec).dump() + "\n");
}

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  return checkpoint_from_json(io_detail::load_json_file(path, "checkpoint"));
}

}  // namespace boxrl
