#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace llmscale {

enum class Sign { positive, negative };

std::string to_string(Sign sign);
/// Accepts "+", "-", "−", "positive", "negative".
std::optional<Sign> parse_sign(std::string_view text);

struct ExpectedCorrelate {
  std::string criterion;
  Sign sign = Sign::positive;
};

/// The latent variable an instrument sets out to measure, together with its
/// nomological net (the criteria it is expected to correlate with).
struct Construct {
  std::string id;
  std::string name;
  std::string definition;
  std::vector<ExpectedCorrelate> expected_correlates;
};

/// One rating statement. `statement` is the third-person wording that is put
/// into the prompt; `original_wording` keeps the self-report source item.
struct ScaleItem {
  std::string id;
  std::string construct_id;
  std::string statement;
  bool reverse_keyed = false;
  std::optional<std::string> original_wording;
};

/// Ordered response options coded 1..m in printed order.
class ResponseScale {
 public:
  ResponseScale() = default;
  ResponseScale(std::vector<std::string> labels, std::map<std::string, std::string> aliases = {});

  /// strongly disagree, disagree, agree, strongly agree -> 1..4
  static ResponseScale agreement4();

  const std::vector<std::string>& labels() const { return labels_; }
  const std::vector<int>& codes() const { return codes_; }
  /// alias surface string -> canonical label
  const std::map<std::string, std::string>& aliases() const { return aliases_; }
  int max_code() const { return static_cast<int>(labels_.size()); }
  /// Code of a canonical label, or nullopt.
  std::optional<int> code_of(std::string_view label) const;
  /// "label1, label2, ..." in scale order.
  std::string options_text() const;

  /// Only used by loaders that need to carry a user-declared code list
  /// through validation.
  void set_codes(std::vector<int> codes) { codes_ = std::move(codes); }

 private:
  std::vector<std::string> labels_;
  std::vector<int> codes_;
  std::map<std::string, std::string> aliases_;
};

inline constexpr std::string_view kTextPlaceholder = "{TEXT}";
inline constexpr std::string_view kItemPlaceholder = "{RATING_ITEM}";
inline constexpr std::string_view kOptionsPlaceholder = "{RESPONSE_OPTIONS}";

struct PromptTemplate {
  std::string instruction_text;

  /// Task instructions, text between "Start of text"/"End of text" lines,
  /// the rating statement and the explicit option list.
  static PromptTemplate standard();
};

struct Violation {
  std::string location;
  std::string message;
};

std::string describe(const std::vector<Violation>& violations);

/// A validated measurement instrument. Immutable after loading, so it may be
/// shared freely between scoring workers.
struct Instrument {
  std::string name;
  std::vector<Construct> constructs;
  std::vector<ScaleItem> items;
  ResponseScale scale;
  PromptTemplate prompt;

  const ScaleItem* find_item(std::string_view id) const;
  const Construct* find_construct(std::string_view id) const;
  /// Items of one construct in declaration order.
  std::vector<const ScaleItem*> items_of(std::string_view construct_id) const;
};

/// Lowercase, collapse internal whitespace, strip surrounding whitespace and
/// punctuation. Used for label matching and duplicate detection.
std::string normalize_label(std::string_view text);

/// Every invariant violation of the instrument; empty iff usable.
std::vector<Violation> validate_instrument(const std::vector<Construct>& constructs,
                                           const std::vector<ScaleItem>& items,
                                           const ResponseScale& scale,
                                           const PromptTemplate& prompt);
std::vector<Violation> validate_instrument(const Instrument& instrument);

/// Parses a YAML scale-spec document. Throws ValidationError listing every
/// problem with its line number.
Instrument parse_scale_spec(std::string_view document, std::string_view source_name = "<scale-spec>");
Instrument load_scale_spec(const std::filesystem::path& path);
/// Inverse of parse_scale_spec (used when writing simulated bundles).
std::string emit_scale_spec(const Instrument& instrument);

std::string render_prompt(const PromptTemplate& prompt, const ScaleItem& item, std::string_view text,
                          const ResponseScale& scale);

}  // namespace llmscale
