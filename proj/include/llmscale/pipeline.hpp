#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "llmscale/providers.hpp"
#include "llmscale/run_config.hpp"
#include "llmscale/scale_forge.hpp"

namespace llmscale {

// Stage directories and artifact names under RunConfig::output_dir.
namespace artifacts {
inline constexpr const char* kRatingsLong = "score/ratings_long.jsonl";
inline constexpr const char* kRatingsWide = "score/ratings_wide.csv";
inline constexpr const char* kRatingsKeyed = "score/ratings_keyed.csv";
inline constexpr const char* kSplit = "score/split.json";
inline constexpr const char* kScoreSummary = "score/score_summary.json";
inline constexpr const char* kRetention = "reliability/retention.json";
inline constexpr const char* kEfaModel = "reliability/efa_model.json";
inline constexpr const char* kCfaFit = "reliability/cfa_fit.json";
inline constexpr const char* kReliabilityReport = "reliability/reliability_report.json";
inline constexpr const char* kReliabilityDecisions = "reliability/decisions.json";
inline constexpr const char* kValidityReport = "validity/validity_report.json";
inline constexpr const char* kScores = "validity/scores.csv";
inline constexpr const char* kValidityDecisions = "validity/decisions.json";
inline constexpr const char* kReportMd = "report/report.md";
inline constexpr const char* kReportJson = "report/report.json";
inline constexpr const char* kScree = "report/scree.csv";
inline constexpr const char* kLoadings = "report/loadings.csv";
inline constexpr const char* kValidityCsv = "report/validity.csv";
}  // namespace artifacts

/// Outcome of a stage: human-readable lines for stdout, warnings for stderr.
struct StageOutput {
  std::vector<std::string> lines;
  std::vector<std::string> warnings;
  std::size_t provider_calls = 0;  // score stage only
};

/// Loads and checks instrument, corpus, criteria and provider inputs.
/// Problems are returned, not thrown; an empty list means clean.
std::vector<Violation> cmd_validate(const RunConfig& config);

/// Builds the provider named by the config.
std::unique_ptr<RatingProvider> make_provider(const RunConfig& config);

StageOutput cmd_score(const RunConfig& config);
StageOutput cmd_score(const RunConfig& config, RatingProvider& provider);
StageOutput cmd_reliability(const RunConfig& config);
StageOutput cmd_validity(const RunConfig& config);
StageOutput cmd_report(const RunConfig& config);
/// Writes a synthetic study bundle to config.simulation->bundle_dir.
StageOutput cmd_simulate(const RunConfig& config);

/// CSV "text_id,<factor ids>" of generating latent scores.
LatentScores parse_latent_csv(std::string_view document, const std::vector<std::string>& factor_ids,
                              std::string_view source_name = "<latent>");

}  // namespace llmscale
