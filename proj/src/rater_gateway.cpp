#include "llmscale/rater_gateway.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <ctime>
#include <mutex>
#include <set>
#include <thread>

#include "llmscale/digest.hpp"
#include "llmscale/error.hpp"
#include "llmscale/response_cache.hpp"
#include "llmscale/text_io.hpp"

namespace llmscale {

Corpus parse_corpus(std::string_view document, std::string_view source_name) {
  Corpus corpus;
  std::set<std::string> seen;
  std::vector<Violation> problems;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= document.size()) {
    auto eol = document.find('\n', pos);
    if (eol == std::string_view::npos) eol = document.size();
    const auto line = document.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (trim(line).empty()) continue;
    const std::string where = std::string(source_name) + ":" + std::to_string(line_no);
    try {
      const auto j = nlohmann::json::parse(line);
      CorpusText t;
      t.id = j.at("id").get<std::string>();
      t.text = j.at("text").get<std::string>();
      if (j.contains("meta")) t.meta = j.at("meta");
      if (t.id.empty()) {
        problems.push_back({where, "empty text id"});
      } else if (!seen.insert(t.id).second) {
        problems.push_back({where, "duplicate text id '" + t.id + "'"});
      } else {
        corpus.push_back(std::move(t));
      }
    } catch (const nlohmann::json::exception& e) {
      problems.push_back({where, std::string("malformed corpus line: ") + e.what()});
    }
  }
  if (!problems.empty()) throw ValidationError(describe(problems));
  if (corpus.empty()) throw ValidationError(std::string(source_name) + ": corpus is empty");
  return corpus;
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const ArtifactError& e) {
    throw ValidationError(e.what());
  }
  return parse_corpus(text, path.string());
}

std::string to_string(RecordStatus status) {
  switch (status) {
    case RecordStatus::ok: return "ok";
    case RecordStatus::parse_failed: return "parse_failed";
    case RecordStatus::provider_error: return "provider_error";
  }
  return "provider_error";
}

RecordStatus parse_status(std::string_view text) {
  if (text == "ok") return RecordStatus::ok;
  if (text == "parse_failed") return RecordStatus::parse_failed;
  if (text == "provider_error") return RecordStatus::provider_error;
  throw ValidationError("unknown record status '" + std::string(text) + "'");
}

std::optional<double> RatingRecord::value() const {
  if (status != RecordStatus::ok || !parsed_code) return std::nullopt;
  if (sample_codes.size() > 1) {
    double sum = 0.0;
    for (int c : sample_codes) sum += c;
    return sum / static_cast<double>(sample_codes.size());
  }
  return static_cast<double>(*parsed_code);
}

nlohmann::json to_json(const RatingRecord& r) {
  nlohmann::json j = {{"text_id", r.text_id},
                      {"item_id", r.item_id},
                      {"model_id", r.model_id},
                      {"prompt_hash", r.prompt_hash},
                      {"raw_response", r.raw_response},
                      {"parsed_code", r.parsed_code ? nlohmann::json(*r.parsed_code) : nlohmann::json(nullptr)},
                      {"status", to_string(r.status)},
                      {"attempt_count", r.attempt_count}};
  if (!r.sample_codes.empty()) j["sample_codes"] = r.sample_codes;
  return j;
}

RatingRecord record_from_json(const nlohmann::json& j) {
  RatingRecord r;
  r.text_id = j.at("text_id").get<std::string>();
  r.item_id = j.at("item_id").get<std::string>();
  r.model_id = j.at("model_id").get<std::string>();
  r.prompt_hash = j.at("prompt_hash").get<std::string>();
  r.raw_response = j.at("raw_response").get<std::string>();
  if (!j.at("parsed_code").is_null()) r.parsed_code = j.at("parsed_code").get<int>();
  r.status = parse_status(j.at("status").get<std::string>());
  r.attempt_count = j.at("attempt_count").get<int>();
  if (j.contains("sample_codes")) r.sample_codes = j.at("sample_codes").get<std::vector<int>>();
  return r;
}

std::string prompt_digest(std::string_view model_id, std::string_view prompt, int sample) {
  std::string material(model_id);
  material.push_back('\0');
  material += prompt;
  if (sample > 0) {
    material.push_back('\0');
    material += "#sample=" + std::to_string(sample);
  }
  return sha256_hex(material);
}

namespace {

struct SampleOutcome {
  std::string raw;
  std::optional<int> code;
  RecordStatus status = RecordStatus::provider_error;
  int attempts = 0;
};

SampleOutcome rate_sample(RatingRequest request, RatingProvider& provider, const ResponseScale& scale,
                          const RetryPolicy& policy) {
  SampleOutcome out;
  const int cap = std::max(1, policy.max_attempts);
  auto backoff = policy.backoff;
  for (int attempt = 1; attempt <= cap; ++attempt) {
    request.attempt = attempt;
    ++out.attempts;
    ProviderReply reply;
    try {
      reply = provider.complete(request);
    } catch (const std::exception& e) {
      reply = {false, {}, e.what()};
    }
    if (!reply.ok) {
      out.status = RecordStatus::provider_error;
      out.raw = reply.error;
      if (attempt < cap && backoff.count() > 0) {
        std::this_thread::sleep_for(backoff);
        backoff *= 2;
      }
      continue;
    }
    out.raw = reply.content;
    const auto parsed = parse_response(reply.content, scale);
    if (parsed.ok()) {
      out.code = parsed.code;
      out.status = RecordStatus::ok;
      return out;
    }
    out.status = RecordStatus::parse_failed;
  }
  return out;
}

SampleOutcome replay(const CacheEntry& entry, const ResponseScale& scale) {
  SampleOutcome out;
  out.raw = entry.raw_response;
  out.attempts = entry.attempt_count;
  const auto parsed = parse_response(entry.raw_response, scale);
  out.code = parsed.code;
  out.status = parsed.ok() ? RecordStatus::ok : RecordStatus::parse_failed;
  return out;
}

RatingRecord combine(const RatingRequest& request, const std::string& model_id, const std::string& hash,
                     const std::vector<SampleOutcome>& samples) {
  RatingRecord rec;
  rec.text_id = request.text_id;
  rec.item_id = request.item_id;
  rec.model_id = model_id;
  rec.prompt_hash = hash;
  rec.attempt_count = 0;
  std::vector<int> codes;
  for (const auto& s : samples) {
    rec.attempt_count += s.attempts;
    if (s.code) codes.push_back(*s.code);
  }
  rec.raw_response = samples.back().raw;
  if (codes.empty()) {
    rec.status = samples.back().status;
    return rec;
  }
  rec.status = RecordStatus::ok;
  if (samples.size() == 1) {
    rec.parsed_code = codes.front();
  } else {
    double sum = 0.0;
    for (int c : codes) sum += c;
    rec.parsed_code = static_cast<int>(std::floor(sum / static_cast<double>(codes.size()) + 0.5));
    rec.sample_codes = std::move(codes);
  }
  return rec;
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

RatingRecord score_one(const RatingRequest& request, RatingProvider& provider, const ResponseScale& scale,
                       const RetryPolicy& policy) {
  const auto model = provider.model_id();
  std::vector<SampleOutcome> samples;
  for (int s = 0; s < std::max(1, policy.sample_count); ++s) {
    RatingRequest r = request;
    r.sample = s;
    samples.push_back(rate_sample(r, provider, scale, policy));
  }
  return combine(request, model, prompt_digest(model, request.prompt), samples);
}

std::vector<RatingRecord> batch_score(const Instrument& instrument, const Corpus& corpus, RatingProvider& provider,
                                      ResponseCache* cache, const BatchOptions& options, BatchStats* stats) {
  std::vector<const CorpusText*> texts;
  for (const auto& t : corpus) texts.push_back(&t);
  std::sort(texts.begin(), texts.end(), [](auto* a, auto* b) { return a->id < b->id; });
  std::vector<const ScaleItem*> items;
  for (const auto& i : instrument.items) items.push_back(&i);
  std::sort(items.begin(), items.end(), [](auto* a, auto* b) { return a->id < b->id; });

  const std::size_t jobs = texts.size() * items.size();
  const std::string model = provider.model_id();
  const int sample_count = std::max(1, options.retry.sample_count);
  const std::string stamp = utc_timestamp();

  std::vector<RatingRecord> records(jobs);
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> calls{0};
  std::atomic<std::size_t> hits{0};

  auto worker = [&] {
    for (std::size_t job = next.fetch_add(1); job < jobs; job = next.fetch_add(1)) {
      const auto& text = *texts[job / items.size()];
      const auto& item = *items[job % items.size()];
      RatingRequest request{text.id, item.id, render_prompt(instrument.prompt, item, text.text, instrument.scale), 1, 0};
      std::vector<SampleOutcome> samples;
      for (int s = 0; s < sample_count; ++s) {
        const auto key = prompt_digest(model, request.prompt, s);
        if (cache) {
          if (const auto hit = cache->lookup(key, model)) {
            hits.fetch_add(1);
            samples.push_back(replay(*hit, instrument.scale));
            continue;
          }
        }
        RatingRequest r = request;
        r.sample = s;
        auto outcome = rate_sample(r, provider, instrument.scale, options.retry);
        calls.fetch_add(static_cast<std::size_t>(outcome.attempts));
        if (cache && outcome.status != RecordStatus::provider_error) {
          cache->stage({key, model, outcome.raw, stamp, outcome.attempts});
        }
        samples.push_back(std::move(outcome));
      }
      records[job] = combine(request, model, prompt_digest(model, request.prompt), samples);
    }
  };

  const std::size_t workers = std::max<std::size_t>(1, std::min(options.concurrency_limit, jobs));
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
    worker();
  }

  std::size_t appended = 0;
  if (cache) appended = cache->flush();
  if (stats) {
    stats->provider_calls += calls.load();
    stats->cache_hits += hits.load();
    stats->cache_appends += appended;
  }
  return records;
}

}  // namespace llmscale
