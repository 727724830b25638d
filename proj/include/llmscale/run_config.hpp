#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "llmscale/efa.hpp"
#include "llmscale/providers.hpp"
#include "llmscale/rating_store.hpp"
#include "llmscale/validity.hpp"

namespace llmscale {

enum class RetentionRule { parallel, kaiser };

struct ProviderConfig {
  std::string kind = "simulated";  // simulated | chat
  ChatProviderSettings chat;
  std::size_t concurrency = 4;
  int retry_cap = 2;
  int sample_count = 1;
  std::filesystem::path simulated_spec;  // rater JSON
  std::filesystem::path latent_scores;   // CSV text_id,<factor ids>
};

struct AnalysisConfig {
  RetentionRule retention = RetentionRule::parallel;
  int parallel_reps = tolerance::kParallelReps;
  EfaOptions efa;
  double loading_cutoff = tolerance::kLoadingCutoff;
  MissingPolicy missing = MissingPolicy::listwise;
  bool drop_flagged_items = false;
  Aggregation aggregation = Aggregation::unit_weighted_mean;
};

/// Parameters for `simulate`: a synthetic study with simple structure.
struct SimulationConfig {
  std::filesystem::path bundle_dir;
  int n_texts = 500;
  int factors = 2;
  int items_per_factor = 4;
  double loading = 0.8;
  std::optional<double> residual;  // default 1 - loading^2
  double factor_correlation = 0.3;
  double criterion_correlation = 0.6;
  int zero_loading_items = 0;  // extra first-factor items with loading 0
};

/// Paths are resolved against the directory holding the config file. Empty
/// paths mean "not configured".
struct RunConfig {
  std::filesystem::path base_dir;
  std::uint64_t seed = 0;
  std::filesystem::path instrument;
  std::filesystem::path corpus;
  std::filesystem::path criteria;
  std::filesystem::path criteria_sidecar;
  std::filesystem::path output_dir;
  std::filesystem::path cache;
  ProviderConfig provider;
  double holdout_fraction = 0.5;
  std::optional<std::uint64_t> split_seed;
  AnalysisConfig analysis;
  std::optional<SimulationConfig> simulation;
};

RunConfig parse_run_config(std::string_view document, const std::filesystem::path& base_dir,
                           std::string_view source_name = "<config>");
RunConfig load_run_config(const std::filesystem::path& path);

/// Settings echo for reports; paths relative to the config directory.
nlohmann::json to_json(const RunConfig& config);

std::string to_string(RetentionRule rule);

}  // namespace llmscale
