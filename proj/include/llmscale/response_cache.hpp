#pragma once

#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

namespace llmscale {

struct CacheEntry {
  std::string prompt_hash;
  std::string model_id;
  std::string raw_response;
  std::string timestamp;  // ISO-8601 UTC, informational only
  int attempt_count = 1;
};

/// Append-only JSON-lines store of provider responses keyed by prompt hash.
/// Lookups may run concurrently; staged entries are appended by flush() in
/// hash order, so the file grows deterministically for a given batch.
class ResponseCache {
 public:
  /// In-memory cache that is never persisted.
  ResponseCache() = default;
  /// Loads `path` if it exists. A truncated trailing line (interrupted
  /// append) is skipped and counted in skipped_lines().
  explicit ResponseCache(std::filesystem::path path);

  std::optional<CacheEntry> lookup(const std::string& prompt_hash, const std::string& model_id) const;
  void stage(CacheEntry entry);
  /// Appends staged entries to the file; returns how many were written.
  std::size_t flush();

  std::size_t size() const;
  std::size_t skipped_lines() const { return skipped_; }

 private:
  std::filesystem::path path_;
  mutable std::shared_mutex mutex_;
  std::map<std::string, CacheEntry> entries_;  // key: model_id + '\n' + prompt_hash
  std::map<std::string, CacheEntry> staged_;
  std::size_t skipped_ = 0;
};

}  // namespace llmscale
