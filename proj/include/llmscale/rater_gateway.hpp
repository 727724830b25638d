#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "llmscale/scale_forge.hpp"

namespace llmscale {

class ResponseCache;

// ---------------------------------------------------------------------------
// Corpus

struct CorpusText {
  std::string id;
  std::string text;
  nlohmann::json meta;  // null when absent
};

using Corpus = std::vector<CorpusText>;

/// JSON-lines corpus: {"id": "...", "text": "...", "meta": {...}} per line.
/// Duplicate ids and malformed lines are reported with their line number.
Corpus parse_corpus(std::string_view document, std::string_view source_name = "<corpus>");
Corpus load_corpus(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Response parsing

enum class ParseFailure { none, no_match, ambiguous };

struct ParseResult {
  std::optional<int> code;
  ParseFailure failure = ParseFailure::none;
  /// Labels that matched during the substring stage (for diagnostics).
  std::vector<std::string> candidates;

  bool ok() const { return code.has_value(); }
};

/// Maps a free-text model response to a scale code. Stages, first hit wins:
/// normalized exact label, normalized alias, then substring search. In the
/// substring stage a label only counts if it occurs somewhere outside the
/// span of a longer matching label ("strongly agree" does not also vote for
/// "agree"); two or more surviving labels is an ambiguity failure.
ParseResult parse_response(std::string_view raw, const ResponseScale& scale);

// ---------------------------------------------------------------------------
// Records

enum class RecordStatus { ok, parse_failed, provider_error };

std::string to_string(RecordStatus status);
RecordStatus parse_status(std::string_view text);

struct RatingRecord {
  std::string text_id;
  std::string item_id;
  std::string model_id;
  std::string prompt_hash;
  std::string raw_response;
  std::optional<int> parsed_code;
  RecordStatus status = RecordStatus::provider_error;
  int attempt_count = 1;
  /// Parsed code of every sample when more than one sample is drawn per
  /// prompt; the matrix cell is then their mean.
  std::vector<int> sample_codes;

  /// Numeric cell value: mean of sample codes when present, else the code.
  std::optional<double> value() const;
};

nlohmann::json to_json(const RatingRecord& record);
RatingRecord record_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// Providers

struct RatingRequest {
  std::string text_id;
  std::string item_id;
  std::string prompt;
  int attempt = 1;
  int sample = 0;
};

struct ProviderReply {
  bool ok = false;
  std::string content;
  std::string error;
};

/// A source of ratings. Implementations must be safe to call concurrently.
class RatingProvider {
 public:
  virtual ~RatingProvider() = default;
  virtual std::string model_id() const = 0;
  virtual ProviderReply complete(const RatingRequest& request) = 0;
};

struct RetryPolicy {
  /// Total provider calls per sample, across parse and transport failures.
  int max_attempts = 2;
  /// Sleep before a retry that follows a transport failure; doubled each time.
  std::chrono::milliseconds backoff{250};
  /// Independent samples per prompt; > 1 only makes sense with temperature > 0.
  int sample_count = 1;
};

/// Digest of (model id, rendered prompt); the cache key.
std::string prompt_digest(std::string_view model_id, std::string_view prompt, int sample = 0);

/// Rates one rendered prompt, retrying parse and transport failures up to the
/// policy cap. Never throws on provider failure.
RatingRecord score_one(const RatingRequest& request, RatingProvider& provider, const ResponseScale& scale,
                       const RetryPolicy& policy);

struct BatchOptions {
  std::size_t concurrency_limit = 4;
  RetryPolicy retry;
};

struct BatchStats {
  std::size_t provider_calls = 0;
  std::size_t cache_hits = 0;
  std::size_t cache_appends = 0;
};

/// One record per (text, item), sorted by text id then item id. The cache is
/// consulted before any provider call and fresh responses are appended to it
/// once the batch completes.
std::vector<RatingRecord> batch_score(const Instrument& instrument, const Corpus& corpus, RatingProvider& provider,
                                      ResponseCache* cache, const BatchOptions& options,
                                      BatchStats* stats = nullptr);

}  // namespace llmscale
