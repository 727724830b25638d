#include "llmscale/response_cache.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <sstream>

#include "llmscale/error.hpp"

namespace llmscale {

namespace {

std::string key_of(const std::string& model_id, const std::string& hash) { return model_id + '\n' + hash; }

}  // namespace

ResponseCache::ResponseCache(std::filesystem::path path) : path_(std::move(path)) {
  std::ifstream in(path_);
  if (!in) return;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      CacheEntry e;
      e.prompt_hash = j.at("prompt_hash").get<std::string>();
      e.model_id = j.at("model_id").get<std::string>();
      e.raw_response = j.at("raw_response").get<std::string>();
      e.timestamp = j.value("timestamp", std::string());
      e.attempt_count = j.value("attempt_count", 1);
      entries_.insert_or_assign(key_of(e.model_id, e.prompt_hash), std::move(e));
    } catch (const nlohmann::json::exception&) {
      ++skipped_;
    }
  }
}

std::optional<CacheEntry> ResponseCache::lookup(const std::string& prompt_hash, const std::string& model_id) const {
  std::shared_lock lock(mutex_);
  const auto it = entries_.find(key_of(model_id, prompt_hash));
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void ResponseCache::stage(CacheEntry entry) {
  std::unique_lock lock(mutex_);
  const auto key = key_of(entry.model_id, entry.prompt_hash);
  staged_.insert_or_assign(key, entry);
  entries_.insert_or_assign(key, std::move(entry));
}

std::size_t ResponseCache::flush() {
  std::unique_lock lock(mutex_);
  if (staged_.empty()) return 0;
  const auto written = staged_.size();
  if (!path_.empty()) {
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    std::ostringstream buf;
    // std::map iteration is ordered by (model, hash).
    for (const auto& [key, e] : staged_) {
      buf << nlohmann::json{{"prompt_hash", e.prompt_hash},
                            {"model_id", e.model_id},
                            {"raw_response", e.raw_response},
                            {"attempt_count", e.attempt_count},
                            {"timestamp", e.timestamp}}
                 .dump()
          << '\n';
    }
    std::ofstream out(path_, std::ios::app | std::ios::binary);
    if (!out) throw Error("cannot append to cache " + path_.string());
    out << buf.str();
  }
  staged_.clear();
  return written;
}

std::size_t ResponseCache::size() const {
  std::shared_lock lock(mutex_);
  return entries_.size();
}

}  // namespace llmscale
