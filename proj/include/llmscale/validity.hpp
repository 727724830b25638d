#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "llmscale/factor_model.hpp"
#include "llmscale/rating_store.hpp"
#include "llmscale/scale_forge.hpp"

namespace llmscale {

using ScoreMap = std::map<std::string, double>;  // text id -> score

enum class Aggregation { unit_weighted_mean, factor_scores };
std::string to_string(Aggregation a);
Aggregation parse_aggregation(const std::string& text);

/// Mean of the factor's present keyed codes per text. Texts with no present
/// item are left out. The factor is an instrument construct id.
ScoreMap aggregate_scores(const RatingMatrix& keyed, const Instrument& instrument, std::string_view factor_id);

/// Regression (Thurstone) scores Phi L' Sigma^-1 (x - mean) for one factor of
/// `model`, using only the items present for each text. Column means come
/// from `keyed`.
ScoreMap factor_scores(const RatingMatrix& keyed, const FactorModel& model, std::string_view factor_id);

struct CriterionSeries {
  std::string name;
  std::map<std::string, double> values;
  std::optional<double> reliability;
  /// Expected sign per factor id; overrides the instrument's declaration.
  std::map<std::string, Sign> expected;
};

/// CSV with a text_id column and one column per criterion. Empty and "NA"
/// cells are missing.
std::vector<CriterionSeries> parse_criteria_csv(std::string_view document, std::string_view source_name = "<criteria>");
/// Sidecar YAML:
///   criteria:
///     - name: engagement
///       reliability: 0.9
///       expected: {clarity: "+"}
void apply_criteria_sidecar(std::vector<CriterionSeries>& criteria, std::string_view document,
                            std::string_view source_name = "<sidecar>");
std::vector<CriterionSeries> load_criteria(const std::filesystem::path& csv,
                                           const std::optional<std::filesystem::path>& sidecar = std::nullopt);

struct ValidityEntry {
  std::string factor_id;
  std::string criterion;
  std::size_t n_overlap = 0;
  double r_raw = 0.0;
  std::optional<double> score_reliability;
  std::optional<double> criterion_reliability;
  std::optional<double> r_disattenuated;
  bool out_of_range = false;  // |r_disattenuated| > 1
  std::optional<Sign> expected_sign;
  std::optional<bool> sign_consistent;
};

struct ValidityReport {
  std::vector<ValidityEntry> entries;
  std::vector<std::string> warnings;  // skipped criteria

  const ValidityEntry* find(std::string_view factor_id, std::string_view criterion) const;
};

double pearson(const std::vector<double>& x, const std::vector<double>& y);

struct Disattenuated {
  double value = 0.0;
  bool out_of_range = false;
};

/// r / sqrt(r_xx * r_yy); reliabilities must lie in (0, 1].
Disattenuated disattenuate(double r_raw, double r_xx, double r_yy);

/// Pearson r of `scores` against each criterion over shared text ids.
/// Criteria with fewer than 3 shared ids, or with no variance in either
/// series, are skipped with a warning. `expected` gives the declared sign per
/// criterion name; a criterion's own `expected` entry for `factor_id` wins.
ValidityReport validity_correlations(std::string_view factor_id, const ScoreMap& scores,
                                     const std::vector<CriterionSeries>& criteria,
                                     std::optional<double> score_reliability = std::nullopt,
                                     const std::map<std::string, Sign>& expected = {});

/// Expected signs declared by a construct, keyed by criterion name.
std::map<std::string, Sign> expected_signs(const Construct& construct);

nlohmann::json to_json(const ValidityEntry& entry);
nlohmann::json to_json(const ValidityReport& report);
ValidityReport validity_report_from_json(const nlohmann::json& j);

}  // namespace llmscale
