#pragma once

#include <boost/regex.hpp>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "boxrl/box.hpp"
#include "boxrl/types.hpp"

namespace boxrl {

// The two completion-grading patterns, stored byte-for-byte so conformance
// fixtures can assert equality against the canonical strings. The structure
// pattern is evaluated with dot-matches-newline semantics (multi-line think
// spans must pass) and unanchored search semantics.
inline constexpr std::string_view kStructurePattern =
    R"(<think>.*?</think>\s*<answer>.*?\{.*\[\d+,\s*\d+,\s*\d+,\s*\d+\].*\}.*?</answer>)";
inline constexpr std::string_view kQuadruplePattern =
    R"(\[(\d+),\s*(\d+),\s*(\d+),\s*(\d+)\])";

namespace detail {

// Compiled once, shared read-only. boost::regex::perl gives dot-matches-
// newline by default, matching Python re.DOTALL behaviour on these patterns.
inline const boost::regex& structure_regex() {
  static const boost::regex re{std::string(kStructurePattern), boost::regex::perl};
  return re;
}

inline const boost::regex& quadruple_regex() {
  static const boost::regex re{std::string(kQuadruplePattern), boost::regex::perl};
  return re;
}

// First <tag>...</tag> span's inner text, or nullopt.
inline std::optional<std::string_view> first_span(std::string_view text,
                                                  std::string_view open,
                                                  std::string_view close) {
  const auto b = text.find(open);
  if (b == std::string_view::npos) return std::nullopt;
  const auto start = b + open.size();
  const auto e = text.find(close, start);
  if (e == std::string_view::npos) return std::nullopt;
  return text.substr(start, e - start);
}

inline std::optional<BBox> quadruple_to_box(const boost::cmatch& m) {
  long v[4];
  for (int i = 0; i < 4; ++i) {
    try {
      v[i] = std::stol(m[i + 1].str());
    } catch (const std::out_of_range&) {
      return std::nullopt;  // absurd digit runs are unparseable, not fatal
    }
    if (v[i] > 1'000'000'000L) return std::nullopt;
  }
  BBox box{static_cast<int>(v[0]), static_cast<int>(v[1]), static_cast<int>(v[2]),
           static_cast<int>(v[3])};
  if (box.x1 > box.x2 || box.y1 > box.y2) return std::nullopt;
  return box;
}

}  // namespace detail

// True iff the completion matches BOTH patterns; this boolean is exactly the
// format reward. Total on any input string.
inline bool check_format(const std::string& text) {
  return boost::regex_search(text, detail::structure_regex()) &&
         boost::regex_search(text, detail::quadruple_regex());
}

// First quadruple inside the FIRST <answer>...</answer> span, validated to
// x1<=x2, y1<=y2. Absent on no span, no match, or ordering violation.
inline std::optional<BBox> extract_answer_box(const std::string& text) {
  const auto span = detail::first_span(text, "<answer>", "</answer>");
  if (!span) return std::nullopt;
  boost::cmatch m;
  if (!boost::regex_search(span->data(), span->data() + span->size(), m,
                           detail::quadruple_regex()))
    return std::nullopt;
  return detail::quadruple_to_box(m);
}

// All valid quadruples inside the first think span, in order. Diagnostic
// only; never enters a reward.
inline std::vector<BBox> extract_think_boxes(const std::string& text) {
  std::vector<BBox> boxes;
  const auto span = detail::first_span(text, "<think>", "</think>");
  if (!span) return boxes;
  const char* begin = span->data();
  const char* end = span->data() + span->size();
  boost::cmatch m;
  while (begin < end && boost::regex_search(begin, end, m, detail::quadruple_regex())) {
    if (auto box = detail::quadruple_to_box(m)) boxes.push_back(*box);
    begin = m[0].second;
  }
  return boxes;
}

struct ParsedCompletion {
  bool format_ok = false;
  std::optional<BBox> answer_box;
  std::vector<BBox> think_boxes;
};

inline ParsedCompletion parse_completion(const std::string& text) {
  return {check_format(text), extract_answer_box(text), extract_think_boxes(text)};
}

// Prompt assembly. The instruction wording is canonical for this project; the
// phrase is substituted at the single question-slot marker.
struct PromptTemplate {
  std::string system_text =
      "You are an assistant for grounding regions in medical images. First reason "
      "inside <think> and </think> tags, then give the final region inside <answer> "
      "and </answer> tags as {\"box\": [x1, y1, x2, y2]}.\n";
  std::string question_slot = "{phrase}";
  std::string chain_of_box_instruction =
      "Whenever your reasoning mentions a region, append its bounding box "
      "coordinates [x1, y1, x2, y2] directly after the region text.\n"
      "Question: where is \"{phrase}\"?";
};

inline std::string render_prompt(const GroundingSample& sample, const PromptTemplate& tpl) {
  std::string out = tpl.system_text + tpl.chain_of_box_instruction;
  const auto at = out.find(tpl.question_slot);
  if (at == std::string::npos || out.find(tpl.question_slot, at + 1) != std::string::npos)
    throw ConfigError("prompt template must contain the question slot exactly once");
  out.replace(at, tpl.question_slot.size(), sample.phrase);
  return out;
}

}  // namespace boxrl
