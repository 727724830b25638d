#include <algorithm>
#include <utility>

#include "llmscale/rater_gateway.hpp"

namespace llmscale {

namespace {

struct Surface {
  std::string text;   // normalized
  std::size_t label;  // index into scale labels
};

}  // namespace

ParseResult parse_response(std::string_view raw, const ResponseScale& scale) {
  ParseResult result;
  const std::string norm = normalize_label(raw);
  const auto& labels = scale.labels();

  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (normalize_label(labels[i]) == norm) {
      result.code = scale.codes()[i];
      return result;
    }
  }
  for (const auto& [alias, target] : scale.aliases()) {
    if (normalize_label(alias) == norm) {
      result.code = scale.code_of(target);
      if (result.code) return result;
    }
  }

  std::vector<Surface> surfaces;
  for (std::size_t i = 0; i < labels.size(); ++i) surfaces.push_back({normalize_label(labels[i]), i});
  for (const auto& [alias, target] : scale.aliases()) {
    const auto it = std::find(labels.begin(), labels.end(), target);
    if (it != labels.end()) surfaces.push_back({normalize_label(alias), static_cast<std::size_t>(it - labels.begin())});
  }

  // Every occurrence span of every surface form.
  struct Span {
    std::size_t begin, end, label;
  };
  std::vector<Span> spans;
  for (const auto& s : surfaces) {
    if (s.text.empty()) continue;
    for (auto pos = norm.find(s.text); pos != std::string::npos; pos = norm.find(s.text, pos + 1)) {
      spans.push_back({pos, pos + s.text.size(), s.label});
    }
  }
  std::vector<bool> matched(labels.size(), false);
  for (const auto& a : spans) {
    const bool covered = std::any_of(spans.begin(), spans.end(), [&](const Span& b) {
      return b.label != a.label && b.begin <= a.begin && a.end <= b.end && (b.end - b.begin) > (a.end - a.begin);
    });
    if (!covered) matched[a.label] = true;
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (matched[i]) result.candidates.push_back(labels[i]);
  }
  if (result.candidates.size() == 1) {
    result.code = scale.code_of(result.candidates.front());
  } else {
    result.failure = result.candidates.empty() ? ParseFailure::no_match : ParseFailure::ambiguous;
  }
  return result;
}

}  // namespace llmscale
