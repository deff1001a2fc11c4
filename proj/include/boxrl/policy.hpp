#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "boxrl/error.hpp"
#include "boxrl/parsing.hpp"
#include "boxrl/rng.hpp"
#include "boxrl/types.hpp"

namespace boxrl {

// A completion surface: fixed text with the four coordinate placeholders
// {x1},{y1},{x2},{y2}. Which skeletons are format-valid is decided by the
// parser at audit time, not asserted by hand.
struct CompletionSkeleton {
  std::string text;

  bool operator==(const CompletionSkeleton&) const = default;
};

inline constexpr int kMaxCompletionLength = 256;

// Discretization of the completion space: M surface templates and B bins per
// coordinate axis. Slot order is {template, x1, y1, x2, y2}.
struct SlotSpec {
  int bins = 16;
  std::vector<CompletionSkeleton> templates;
  std::vector<bool> template_valid;  // filled by validate()

  static SlotSpec defaults(int bins = 16) {
    SlotSpec spec;
    spec.bins = bins;
    spec.templates = {
        // Chain-of-box reasoning that mentions the predicted region, then a
        // braced answer payload.
        {"<think>The region described is located at [{x1}, {y1}, {x2}, {y2}], which "
         "matches the query.</think> <answer>{\"box\": [{x1}, {y1}, {x2}, {y2}]}</answer>"},
        // Degenerate surface: reasoning and a bare statement, no answer span.
        {"<think>Possibly near [{x1}, {y1}, {x2}, {y2}], hard to tell.</think> The "
         "region is at [{x1}, {y1}, {x2}, {y2}]."},
    };
    spec.validate();
    return spec;
  }

  int slot_count() const { return 5; }
  int slot_size(int slot) const { return slot == 0 ? static_cast<int>(templates.size()) : bins; }
  int block_size() const { return static_cast<int>(templates.size()) + 4 * bins; }
  int slot_offset(int slot) const {
    return slot == 0 ? 0 : static_cast<int>(templates.size()) + (slot - 1) * bins;
  }

  // Startup audit: shape constraints, the 256-character cap under worst-case
  // coordinates, and at least one valid plus one invalid surface.
  void validate();
};

namespace detail {

inline std::string instantiate_skeleton(const std::string& skeleton,
                                        const std::array<int, 4>& px) {
  static constexpr std::array<const char*, 4> markers = {"{x1}", "{y1}", "{x2}", "{y2}"};
  std::string out = skeleton;
  for (int i = 0; i < 4; ++i) {
    const std::string marker = markers[i];
    const std::string value = std::to_string(px[i]);
    std::size_t pos = 0;
    bool found = false;
    while ((pos = out.find(marker, pos)) != std::string::npos) {
      out.replace(pos, marker.size(), value);
      pos += value.size();
      found = true;
    }
    if (!found) throw ConfigError("skeleton lacks coordinate placeholder " + marker);
  }
  return out;
}

inline void softmax_into(std::span<const double> logits, std::vector<double>& probs) {
  probs.resize(logits.size());
  const double m = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    probs[i] = std::exp(logits[i] - m);
    sum += probs[i];
  }
  for (auto& p : probs) p /= sum;
}

inline double log_softmax_at(std::span<const double> logits, int choice) {
  const double m = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (const double v : logits) sum += std::exp(v - m);
  return logits[choice] - m - std::log(sum);
}

}  // namespace detail

inline void SlotSpec::validate() {
  if (bins < 2) throw ConfigError("slot spec: bins_per_coordinate must be >= 2");
  if (templates.size() < 2) throw ConfigError("slot spec: need at least two templates");
  template_valid.clear();
  bool any_valid = false, any_invalid = false;
  for (const auto& t : templates) {
    const std::string worst = detail::instantiate_skeleton(t.text, {99999, 99999, 99999, 99999});
    if (worst.size() > kMaxCompletionLength)
      throw ConfigError("skeleton renders beyond " + std::to_string(kMaxCompletionLength) +
                        " characters");
    const bool valid = check_format(worst);
    template_valid.push_back(valid);
    (valid ? any_valid : any_invalid) = true;
  }
  if (!any_valid || !any_invalid)
    throw ConfigError("slot spec: need at least one format-valid and one format-invalid template");
}

// Bin b of B covers [b*extent/B, (b+1)*extent/B); its center pixel is
// round((b + 0.5) * extent / B).
inline int bin_center(int bin, int bins, int extent) {
  return static_cast<int>(std::lround((bin + 0.5) * static_cast<double>(extent) / bins));
}

// Nearest bin to a pixel coordinate; ties break toward the lower bin.
inline int nearest_bin(int coord, int bins, int extent) {
  int best = 0;
  long best_d = std::labs(static_cast<long>(bin_center(0, bins, extent)) - coord);
  for (int b = 1; b < bins; ++b) {
    const long d = std::labs(static_cast<long>(bin_center(b, bins, extent)) - coord);
    if (d < best_d) {
      best = b;
      best_d = d;
    }
  }
  return best;
}

// Per-sample logits over the product of the five categorical slots. Values
// live in one flat block per sample id: [template | x1 | y1 | x2 | y2].
class PolicyParams {
 public:
  PolicyParams() = default;

  static PolicyParams uniform(const SlotSpec& spec, const std::vector<std::string>& ids) {
    PolicyParams p;
    for (const auto& id : ids) p.logits_[id] = std::vector<double>(spec.block_size(), 0.0);
    return p;
  }

  std::span<const double> block(const std::string& id) const {
    const auto it = logits_.find(id);
    if (it == logits_.end()) throw UnknownSampleError(id);
    return it->second;
  }

  std::span<double> block_mut(const std::string& id) {
    const auto it = logits_.find(id);
    if (it == logits_.end()) throw UnknownSampleError(id);
    return it->second;
  }

  void add_scaled(const std::string& id, std::span<const double> grad, double scale) {
    auto b = block_mut(id);
    if (grad.size() != b.size()) throw NumericError("gradient/block size mismatch");
    for (std::size_t i = 0; i < b.size(); ++i) b[i] += scale * grad[i];
  }

  bool has(const std::string& id) const { return logits_.count(id) != 0; }
  const std::map<std::string, std::vector<double>>& blocks() const { return logits_; }
  std::map<std::string, std::vector<double>>& blocks() { return logits_; }

  bool operator==(const PolicyParams&) const = default;

 private:
  std::map<std::string, std::vector<double>> logits_;  // ordered for determinism
};

// One sampled solution: the raw slot draws, the rendered text, and the
// sampling-time log-probability (the ratio denominator for the optimizer).
struct Completion {
  int template_index = 0;
  std::array<int, 4> coord_bins{};  // x1, y1, x2, y2 slot draws, unsorted
  std::string text;
  double logprob_old = 0.0;

  bool operator==(const Completion&) const = default;
};

// Deterministic render: bins map to centers, then x and y pairs are sorted so
// the emitted quadruple is always geometrically ordered.
inline std::string render_completion(int template_index, const std::array<int, 4>& coord_bins,
                                     const GroundingSample& sample, const SlotSpec& spec) {
  std::array<int, 4> px = {
      bin_center(coord_bins[0], spec.bins, sample.width),
      bin_center(coord_bins[1], spec.bins, sample.height),
      bin_center(coord_bins[2], spec.bins, sample.width),
      bin_center(coord_bins[3], spec.bins, sample.height),
  };
  if (px[0] > px[2]) std::swap(px[0], px[2]);
  if (px[1] > px[3]) std::swap(px[1], px[3]);
  return detail::instantiate_skeleton(spec.templates.at(template_index).text, px);
}

namespace detail {

inline int sample_categorical(std::span<const double> logits, Rng& rng,
                              std::vector<double>& scratch) {
  softmax_into(logits, scratch);
  const double u = rng.next_double();
  double acc = 0.0;
  for (std::size_t i = 0; i < scratch.size(); ++i) {
    acc += scratch[i];
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(scratch.size()) - 1;  // guard against rounding
}

inline void check_choices(const SlotSpec& spec, const Completion& c) {
  if (c.template_index < 0 || c.template_index >= spec.slot_size(0))
    throw DataError("template choice out of range");
  for (const int b : c.coord_bins)
    if (b < 0 || b >= spec.bins) throw DataError("coordinate bin out of range");
}

}  // namespace detail

inline Completion sample_completion(const PolicyParams& params, const SlotSpec& spec,
                                    const GroundingSample& sample, Rng& rng) {
  const auto block = params.block(sample.id);
  std::vector<double> scratch;
  Completion c;
  double logprob = 0.0;
  for (int slot = 0; slot < spec.slot_count(); ++slot) {
    const auto slice = block.subspan(spec.slot_offset(slot), spec.slot_size(slot));
    const int choice = detail::sample_categorical(slice, rng, scratch);
    logprob += detail::log_softmax_at(slice, choice);
    if (slot == 0)
      c.template_index = choice;
    else
      c.coord_bins[slot - 1] = choice;
  }
  c.logprob_old = logprob;
  c.text = render_completion(c.template_index, c.coord_bins, sample, spec);
  return c;
}

// Exact joint log-probability of a slot tuple; no sampling involved.
inline double log_prob(const PolicyParams& params, const SlotSpec& spec,
                       const GroundingSample& sample, const Completion& c) {
  detail::check_choices(spec, c);
  const auto block = params.block(sample.id);
  double lp = detail::log_softmax_at(block.subspan(spec.slot_offset(0), spec.slot_size(0)),
                                     c.template_index);
  for (int i = 0; i < 4; ++i)
    lp += detail::log_softmax_at(block.subspan(spec.slot_offset(i + 1), spec.bins),
                                 c.coord_bins[i]);
  return lp;
}

// d log pi / d logits: per slot, indicator(choice) - softmax. Returned as one
// flat block for this sample; all other samples' blocks are untouched zeros.
inline std::vector<double> log_prob_grad(const PolicyParams& params, const SlotSpec& spec,
                                         const GroundingSample& sample, const Completion& c) {
  detail::check_choices(spec, c);
  const auto block = params.block(sample.id);
  std::vector<double> grad(block.size(), 0.0);
  std::vector<double> probs;
  for (int slot = 0; slot < spec.slot_count(); ++slot) {
    const int off = spec.slot_offset(slot);
    const int size = spec.slot_size(slot);
    detail::softmax_into(block.subspan(off, size), probs);
    const int choice = slot == 0 ? c.template_index : c.coord_bins[slot - 1];
    for (int i = 0; i < size; ++i) grad[off + i] = (i == choice ? 1.0 : 0.0) - probs[i];
  }
  return grad;
}

// Argmax per slot, ties toward the lowest index.
inline Completion greedy_decode(const PolicyParams& params, const SlotSpec& spec,
                                const GroundingSample& sample) {
  const auto block = params.block(sample.id);
  Completion c;
  for (int slot = 0; slot < spec.slot_count(); ++slot) {
    const auto slice = block.subspan(spec.slot_offset(slot), spec.slot_size(slot));
    const int choice = static_cast<int>(
        std::max_element(slice.begin(), slice.end()) - slice.begin());
    if (slot == 0)
      c.template_index = choice;
    else
      c.coord_bins[slot - 1] = choice;
  }
  c.text = render_completion(c.template_index, c.coord_bins, sample, spec);
  c.logprob_old = log_prob(params, spec, sample, c);
  return c;
}

}  // namespace boxrl
