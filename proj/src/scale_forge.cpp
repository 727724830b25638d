#include "llmscale/scale_forge.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>

#include "llmscale/error.hpp"
#include "llmscale/text_io.hpp"

namespace llmscale {

std::string to_string(Sign sign) { return sign == Sign::positive ? "+" : "-"; }

std::optional<Sign> parse_sign(std::string_view text) {
  const std::string t = trim(text);
  if (t == "+" || t == "positive" || t == "pos") return Sign::positive;
  if (t == "-" || t == "−" || t == "negative" || t == "neg") return Sign::negative;
  return std::nullopt;
}

ResponseScale::ResponseScale(std::vector<std::string> labels, std::map<std::string, std::string> aliases)
    : labels_(std::move(labels)), aliases_(std::move(aliases)) {
  codes_.resize(labels_.size());
  for (std::size_t i = 0; i < labels_.size(); ++i) codes_[i] = static_cast<int>(i) + 1;
}

ResponseScale ResponseScale::agreement4() {
  return ResponseScale({"strongly disagree", "disagree", "agree", "strongly agree"},
                       {{"strongly_disagree", "strongly disagree"},
                        {"strongly-disagree", "strongly disagree"},
                        {"disagree strongly", "strongly disagree"},
                        {"strongly_agree", "strongly agree"},
                        {"strongly-agree", "strongly agree"},
                        {"agree strongly", "strongly agree"}});
}

std::optional<int> ResponseScale::code_of(std::string_view label) const {
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (labels_[i] == label) return codes_[i];
  }
  return std::nullopt;
}

std::string ResponseScale::options_text() const {
  std::string out;
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (i) out += ", ";
    out += labels_[i];
  }
  return out;
}

PromptTemplate PromptTemplate::standard() {
  return {
      "Read the following text, then respond to the statement below it:\n"
      "Start of text\n"
      "{TEXT}\n"
      "End of text\n"
      "Based on this text, how much would you agree with the following statement:\n"
      "{RATING_ITEM}\n"
      "Respond with one of the following items:\n"
      "{RESPONSE_OPTIONS}\n"};
}

std::string describe(const std::vector<Violation>& violations) {
  std::string out;
  for (const auto& v : violations) {
    if (!out.empty()) out += '\n';
    out += v.location.empty() ? v.message : v.location + ": " + v.message;
  }
  return out;
}

const ScaleItem* Instrument::find_item(std::string_view id) const {
  for (const auto& item : items) {
    if (item.id == id) return &item;
  }
  return nullptr;
}

const Construct* Instrument::find_construct(std::string_view id) const {
  for (const auto& c : constructs) {
    if (c.id == id) return &c;
  }
  return nullptr;
}

std::vector<const ScaleItem*> Instrument::items_of(std::string_view construct_id) const {
  std::vector<const ScaleItem*> out;
  for (const auto& item : items) {
    if (item.construct_id == construct_id) out.push_back(&item);
  }
  return out;
}

std::string normalize_label(std::string_view text) {
  auto strip = [](unsigned char c) { return std::isspace(c) || std::ispunct(c); };
  std::size_t first = 0;
  std::size_t last = text.size();
  while (first < last && strip(static_cast<unsigned char>(text[first]))) ++first;
  while (last > first && strip(static_cast<unsigned char>(text[last - 1]))) --last;
  std::string out;
  bool pending_space = false;
  for (std::size_t i = first; i < last; ++i) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c)) {
      pending_space = true;
      continue;
    }
    if (pending_space && !out.empty()) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

namespace {

std::size_t count_occurrences(std::string_view haystack, std::string_view needle) {
  std::size_t count = 0;
  for (auto pos = haystack.find(needle); pos != std::string_view::npos; pos = haystack.find(needle, pos + 1)) {
    ++count;
  }
  return count;
}

}  // namespace

std::vector<Violation> validate_instrument(const std::vector<Construct>& constructs,
                                           const std::vector<ScaleItem>& items,
                                           const ResponseScale& scale,
                                           const PromptTemplate& prompt) {
  std::vector<Violation> out;

  std::set<std::string> construct_ids;
  for (const auto& c : constructs) {
    const std::string where = "construct '" + c.id + "'";
    if (c.id.empty()) out.push_back({"constructs", "construct with empty id"});
    if (!construct_ids.insert(c.id).second) out.push_back({where, "duplicate construct id"});
    if (c.expected_correlates.empty()) {
      out.push_back({where, "no expected correlates declared (nomological net is empty)"});
    }
  }
  if (constructs.empty()) out.push_back({"constructs", "instrument declares no constructs"});

  std::set<std::string> item_ids;
  std::map<std::string, int> per_construct;
  for (const auto& item : items) {
    const std::string where = "item '" + item.id + "'";
    if (item.id.empty()) out.push_back({"items", "item with empty id"});
    if (!item_ids.insert(item.id).second) out.push_back({where, "duplicate item id"});
    if (trim(item.statement).empty()) out.push_back({where, "statement is empty"});
    if (!construct_ids.contains(item.construct_id)) {
      out.push_back({where, "dangling construct id '" + item.construct_id + "'"});
    } else {
      ++per_construct[item.construct_id];
    }
  }
  for (const auto& c : constructs) {
    const int n = per_construct[c.id];
    if (n < 3) {
      out.push_back({"construct '" + c.id + "'",
                     "construct has < 3 items (" + std::to_string(n) + " declared)"});
    }
  }

  const auto& labels = scale.labels();
  if (labels.size() < 2) out.push_back({"response_scale", "scale needs at least 2 labels"});
  if (scale.codes().size() != labels.size()) {
    out.push_back({"response_scale", "label and code lists differ in length"});
  }
  for (std::size_t i = 0; i < scale.codes().size(); ++i) {
    if (scale.codes()[i] != static_cast<int>(i) + 1) {
      out.push_back({"response_scale", "codes must be consecutive integers starting at 1"});
      break;
    }
  }
  std::set<std::string> normalized;
  for (const auto& label : labels) {
    const auto norm = normalize_label(label);
    if (norm.empty()) out.push_back({"response_scale", "empty label"});
    if (!normalized.insert(norm).second) {
      out.push_back({"response_scale", "duplicate label after normalization: '" + label + "'"});
    }
  }
  for (const auto& [alias, target] : scale.aliases()) {
    if (std::find(labels.begin(), labels.end(), target) == labels.end()) {
      out.push_back({"response_scale", "alias '" + alias + "' targets unknown label '" + target + "'"});
    }
    const auto norm = normalize_label(alias);
    for (const auto& label : labels) {
      if (normalize_label(label) == norm && label != target) {
        out.push_back({"response_scale", "alias '" + alias + "' collides with label '" + label + "'"});
      }
    }
  }

  for (const auto placeholder : {kTextPlaceholder, kItemPlaceholder, kOptionsPlaceholder}) {
    const auto n = count_occurrences(prompt.instruction_text, placeholder);
    if (n == 0) {
      out.push_back({"template", "missing placeholder " + std::string(placeholder)});
    } else if (n > 1) {
      out.push_back({"template", "placeholder " + std::string(placeholder) + " appears " + std::to_string(n) +
                                     " times"});
    }
  }
  return out;
}

std::vector<Violation> validate_instrument(const Instrument& instrument) {
  return validate_instrument(instrument.constructs, instrument.items, instrument.scale, instrument.prompt);
}

std::string render_prompt(const PromptTemplate& prompt, const ScaleItem& item, std::string_view text,
                          const ResponseScale& scale) {
  // Single left-to-right pass: substituted content is never re-scanned, so a
  // corpus text that itself contains "{TEXT}" is copied verbatim.
  const std::string_view tpl = prompt.instruction_text;
  const std::string options = scale.options_text();
  std::string out;
  out.reserve(tpl.size() + text.size() + item.statement.size() + options.size());
  std::size_t pos = 0;
  while (pos < tpl.size()) {
    if (tpl[pos] == '{') {
      const auto rest = tpl.substr(pos);
      if (rest.starts_with(kTextPlaceholder)) {
        out += text;
        pos += kTextPlaceholder.size();
        continue;
      }
      if (rest.starts_with(kItemPlaceholder)) {
        out += item.statement;
        pos += kItemPlaceholder.size();
        continue;
      }
      if (rest.starts_with(kOptionsPlaceholder)) {
        out += options;
        pos += kOptionsPlaceholder.size();
        continue;
      }
    }
    out.push_back(tpl[pos++]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// YAML scale-spec

namespace {

std::string at(const YAML::Node& node, std::string_view source) {
  const auto mark = node.Mark();
  if (mark.line < 0) return std::string(source);
  return std::string(source) + ":" + std::to_string(mark.line + 1);
}

std::string scalar(const YAML::Node& parent, const char* key, bool required, std::string_view source,
                   std::vector<Violation>& problems) {
  const auto node = parent[key];
  if (!node) {
    if (required) problems.push_back({at(parent, source), std::string("missing field '") + key + "'"});
    return {};
  }
  if (!node.IsScalar()) {
    problems.push_back({at(node, source), std::string("field '") + key + "' must be a string"});
    return {};
  }
  return node.as<std::string>();
}

}  // namespace

Instrument parse_scale_spec(std::string_view document, std::string_view source_name) {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(document));
  } catch (const YAML::Exception& e) {
    throw ValidationError(std::string(source_name) + ":" + std::to_string(e.mark.line + 1) +
                          ": parse failure: " + e.msg);
  }
  if (!root.IsMap()) throw ValidationError(std::string(source_name) + ": parse failure: top level must be a mapping");

  std::vector<Violation> problems;
  Instrument inst;
  inst.name = root["instrument"] ? root["instrument"].as<std::string>() : std::string();

  // Line numbers of declarations, for locating invariant violations.
  std::map<std::string, std::string> construct_at;
  std::map<std::string, std::string> item_at;

  if (const auto constructs = root["constructs"]; constructs && constructs.IsSequence()) {
    for (const auto& node : constructs) {
      Construct c;
      c.id = scalar(node, "id", true, source_name, problems);
      c.name = scalar(node, "name", false, source_name, problems);
      c.definition = scalar(node, "definition", false, source_name, problems);
      if (c.name.empty()) c.name = c.id;
      if (const auto correlates = node["expected_correlates"]; correlates && correlates.IsSequence()) {
        for (const auto& cn : correlates) {
          ExpectedCorrelate ec;
          ec.criterion = scalar(cn, "criterion", true, source_name, problems);
          const auto sign_text = scalar(cn, "sign", true, source_name, problems);
          if (const auto s = parse_sign(sign_text)) {
            ec.sign = *s;
          } else if (!sign_text.empty()) {
            problems.push_back({at(cn, source_name), "sign must be '+' or '-', got '" + sign_text + "'"});
          }
          c.expected_correlates.push_back(std::move(ec));
        }
      }
      construct_at.emplace(c.id, at(node, source_name));
      inst.constructs.push_back(std::move(c));
    }
  } else {
    problems.push_back({std::string(source_name), "missing 'constructs' list"});
  }

  if (const auto items = root["items"]; items && items.IsSequence()) {
    for (const auto& node : items) {
      ScaleItem item;
      item.id = scalar(node, "id", true, source_name, problems);
      item.construct_id = scalar(node, "construct", true, source_name, problems);
      item.statement = scalar(node, "statement", true, source_name, problems);
      if (const auto rk = node["reverse_keyed"]) {
        try {
          item.reverse_keyed = rk.as<bool>();
        } catch (const YAML::Exception&) {
          problems.push_back({at(rk, source_name), "reverse_keyed must be true or false"});
        }
      }
      if (const auto orig = node["original"]) item.original_wording = orig.as<std::string>();
      item_at.emplace(item.id, at(node, source_name));
      inst.items.push_back(std::move(item));
    }
  } else if (root["items"] && !root["items"].IsNull()) {
    problems.push_back({at(root["items"], source_name), "'items' must be a list"});
  }

  inst.scale = ResponseScale::agreement4();
  if (const auto rs = root["response_scale"]) {
    std::vector<std::string> labels;
    if (const auto ln = rs["labels"]; ln && ln.IsSequence()) {
      for (const auto& l : ln) labels.push_back(l.as<std::string>());
    } else {
      problems.push_back({at(rs, source_name), "response_scale needs a 'labels' list"});
    }
    std::map<std::string, std::string> aliases;
    if (const auto an = rs["aliases"]; an && an.IsMap()) {
      for (const auto& kv : an) aliases.emplace(kv.first.as<std::string>(), kv.second.as<std::string>());
    }
    // The default scale keeps its documented aliases unless the spec lists its own.
    if (!rs["aliases"] && labels == ResponseScale::agreement4().labels()) aliases = ResponseScale::agreement4().aliases();
    inst.scale = ResponseScale(std::move(labels), std::move(aliases));
    if (const auto cn = rs["codes"]; cn && cn.IsSequence()) {
      std::vector<int> codes;
      for (const auto& c : cn) codes.push_back(c.as<int>());
      inst.scale.set_codes(std::move(codes));
    }
  }

  inst.prompt = PromptTemplate::standard();
  if (const auto t = root["template"]) inst.prompt.instruction_text = t.as<std::string>();

  for (auto v : validate_instrument(inst)) {
    // Attach a line number where the violation names a declaration.
    for (const auto& [id, where] : item_at) {
      if (v.location == "item '" + id + "'") v.location = where + ": " + v.location;
    }
    for (const auto& [id, where] : construct_at) {
      if (v.location == "construct '" + id + "'") v.location = where + ": " + v.location;
    }
    if (v.location == "template" && root["template"]) v.location = at(root["template"], source_name) + ": template";
    problems.push_back(std::move(v));
  }
  if (!problems.empty()) throw ValidationError(describe(problems));
  return inst;
}

Instrument load_scale_spec(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const ArtifactError& e) {
    throw ValidationError(e.what());
  }
  return parse_scale_spec(text, path.string());
}

std::string emit_scale_spec(const Instrument& inst) {
  YAML::Emitter out;
  out << YAML::BeginMap;
  out << YAML::Key << "instrument" << YAML::Value << inst.name;
  out << YAML::Key << "constructs" << YAML::Value << YAML::BeginSeq;
  for (const auto& c : inst.constructs) {
    out << YAML::BeginMap;
    out << YAML::Key << "id" << YAML::Value << c.id;
    out << YAML::Key << "name" << YAML::Value << c.name;
    out << YAML::Key << "definition" << YAML::Value << c.definition;
    out << YAML::Key << "expected_correlates" << YAML::Value << YAML::BeginSeq;
    for (const auto& ec : c.expected_correlates) {
      out << YAML::BeginMap << YAML::Key << "criterion" << YAML::Value << ec.criterion << YAML::Key << "sign"
          << YAML::Value << YAML::DoubleQuoted << to_string(ec.sign) << YAML::EndMap;
    }
    out << YAML::EndSeq << YAML::EndMap;
  }
  out << YAML::EndSeq;
  out << YAML::Key << "items" << YAML::Value << YAML::BeginSeq;
  for (const auto& item : inst.items) {
    out << YAML::BeginMap;
    out << YAML::Key << "id" << YAML::Value << item.id;
    out << YAML::Key << "construct" << YAML::Value << item.construct_id;
    out << YAML::Key << "statement" << YAML::Value << item.statement;
    out << YAML::Key << "reverse_keyed" << YAML::Value << item.reverse_keyed;
    if (item.original_wording) out << YAML::Key << "original" << YAML::Value << *item.original_wording;
    out << YAML::EndMap;
  }
  out << YAML::EndSeq;
  out << YAML::Key << "response_scale" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "labels" << YAML::Value << YAML::Flow << inst.scale.labels();
  if (!inst.scale.aliases().empty()) {
    out << YAML::Key << "aliases" << YAML::Value << YAML::BeginMap;
    for (const auto& [alias, label] : inst.scale.aliases()) out << YAML::Key << alias << YAML::Value << label;
    out << YAML::EndMap;
  }
  out << YAML::EndMap;
  out << YAML::Key << "template" << YAML::Value << YAML::Literal << inst.prompt.instruction_text;
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

}  // namespace llmscale
