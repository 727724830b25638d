#include <chrono>
#include <cmath>
#include <fstream>
#include <thread>

#include <doctest.h>

#include "llmscale/error.hpp"
#include "llmscale/rater_gateway.hpp"
#include "llmscale/response_cache.hpp"
#include "llmscale/text_io.hpp"
#include "unit/support.hpp"

using namespace llmscale;
using testing::reply;

namespace {

RetryPolicy no_wait(int attempts = 2) {
  RetryPolicy p;
  p.max_attempts = attempts;
  p.backoff = std::chrono::milliseconds(0);
  return p;
}

double corr(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) mx += x[i] / n, my += y[i] / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace

TEST_SUITE("rater_gateway") {

TEST_CASE("canonical labels parse to their codes") {
  const auto scale = ResponseScale::agreement4();
  for (std::size_t i = 0; i < scale.labels().size(); ++i) {
    const auto r = parse_response(scale.labels()[i], scale);
    CHECK(r.ok());
    CHECK(*r.code == static_cast<int>(i) + 1);
  }
  CHECK(*parse_response("Strongly agree", scale).code == 4);
  CHECK(*parse_response("  disagree.", scale).code == 2);
}

TEST_CASE("normalization and alias variants") {
  const auto scale = ResponseScale::agreement4();
  const std::vector<std::pair<std::string, int>> cases{
      {"STRONGLY DISAGREE", 1}, {"Disagree!", 2},           {"\"agree\"", 3},          {"strongly   agree", 4},
      {"\nAgree.\n", 3},       {"strongly_agree", 4},       {"strongly-disagree", 1},  {"Agree strongly", 4},
      {"disagree strongly", 1}, {"I strongly agree.", 4},   {"I disagree", 2},         {"Answer: agree", 3}};
  for (const auto& [raw, code] : cases) {
    CAPTURE(raw);
    const auto r = parse_response(raw, scale);
    REQUIRE(r.ok());
    CHECK(*r.code == code);
  }
}

TEST_CASE("two distinct labels in one answer are ambiguous") {
  const auto r = parse_response("I would say the author agrees, even strongly agrees", ResponseScale::agreement4());
  CHECK_FALSE(r.ok());
  CHECK(r.failure == ParseFailure::ambiguous);
  CHECK(r.candidates == std::vector<std::string>{"agree", "strongly agree"});
}

TEST_CASE("unrelated text does not parse") {
  const auto r = parse_response("I cannot answer that.", ResponseScale::agreement4());
  CHECK(r.failure == ParseFailure::no_match);
  CHECK(parse_response("", ResponseScale::agreement4()).failure == ParseFailure::no_match);
}

TEST_CASE("every label of a custom scale round-trips") {
  const ResponseScale scale({"never", "rarely", "sometimes", "often", "always"});
  for (std::size_t i = 0; i < 5; ++i) CHECK(*parse_response(scale.labels()[i], scale).code == static_cast<int>(i) + 1);
}

TEST_CASE("score_one outcomes") {
  const auto scale = ResponseScale::agreement4();
  const RatingRequest req{"t1", "i1", "prompt", 1, 0};

  SUBCASE("clean answer") {
    testing::ScriptedProvider p([](auto&) { return reply("strongly disagree"); });
    const auto rec = score_one(req, p, scale, no_wait());
    CHECK(rec.status == RecordStatus::ok);
    CHECK(*rec.parsed_code == 1);
    CHECK(rec.attempt_count == 1);
  }
  SUBCASE("garbage on every attempt") {
    testing::ScriptedProvider p([](auto&) { return reply("purple"); });
    const auto rec = score_one(req, p, scale, no_wait(2));
    CHECK(rec.status == RecordStatus::parse_failed);
    CHECK_FALSE(rec.parsed_code);
    CHECK(rec.attempt_count == 2);
    CHECK(p.calls() == 2);
  }
  SUBCASE("garbage then a label") {
    testing::ScriptedProvider p([](const RatingRequest& r) { return reply(r.attempt == 1 ? "hmm" : "agree"); });
    const auto rec = score_one(req, p, scale, no_wait(2));
    CHECK(rec.status == RecordStatus::ok);
    CHECK(*rec.parsed_code == 3);
    CHECK(rec.attempt_count == 2);
  }
  SUBCASE("transport failure") {
    testing::ScriptedProvider p([](auto&) { return ProviderReply{false, {}, "HTTP 503"}; });
    const auto rec = score_one(req, p, scale, no_wait(3));
    CHECK(rec.status == RecordStatus::provider_error);
    CHECK(rec.attempt_count == 3);
  }
  SUBCASE("provider that throws") {
    testing::ScriptedProvider p([](auto&) -> ProviderReply { throw std::runtime_error("socket closed"); });
    const auto rec = score_one(req, p, scale, no_wait(1));
    CHECK(rec.status == RecordStatus::provider_error);
    CHECK(rec.raw_response == "socket closed");
  }
  SUBCASE("several samples are averaged") {
    testing::ScriptedProvider p([](const RatingRequest& r) { return reply(r.sample == 0 ? "agree" : "strongly agree"); });
    auto policy = no_wait();
    policy.sample_count = 3;
    const auto rec = score_one(req, p, scale, policy);
    CHECK(rec.sample_codes == std::vector<int>{3, 4, 4});
    CHECK(*rec.value() == doctest::Approx(11.0 / 3.0));
    CHECK(*rec.parsed_code == 4);
  }
}

TEST_CASE("simulated rater with no noise and a high latent score gives the top code") {
  auto spec = testing::one_factor_spec({"i1"}, 1.0, 0.0);
  SimulatedRater rater(spec, {{"t1", {3.0}}});
  // 3 exceeds the top quartile cut 0.674.
  const auto rec = score_one({"t1", "i1", "p", 1, 0}, rater, ResponseScale::agreement4(), no_wait());
  CHECK(*rec.parsed_code == 4);
}

TEST_CASE("simulated rater with no noise and theta 0 is constant") {
  auto spec = testing::one_factor_spec({"i1"}, 1.0, 0.0);
  SimulatedRater rater(spec, {{"t1", {0.0}}});
  // y = 0 is not above the middle cut 0, so the code is 2.
  for (int attempt = 1; attempt <= 5; ++attempt) CHECK(rater.complete({"t1", "i1", "p", attempt, 0}).content == "disagree");
}

TEST_CASE("zero loadings leave codes unrelated to theta") {
  auto spec = testing::one_factor_spec({"i1"}, 0.0, 1.0, 99);
  LatentScores latent;
  std::mt19937_64 gen(5);
  std::normal_distribution<double> z;
  const auto corpus = testing::make_corpus(500);
  for (const auto& t : corpus) latent[t.id] = {z(gen)};
  SimulatedRater rater(spec, latent);
  std::vector<double> codes, theta;
  for (const auto& t : corpus) {
    codes.push_back(*parse_response(rater.complete({t.id, "i1", "p", 1, 0}).content, ResponseScale::agreement4()).code);
    theta.push_back(latent[t.id][0]);
  }
  CHECK(std::abs(corr(codes, theta)) < 0.1);
}

TEST_CASE("opposite latent scores are ordered in at least 95 of 100 seeds") {
  int ordered = 0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    SimulatedRater rater(testing::one_factor_spec({"i1"}, 0.9, 0.19, seed), {{"hi", {2.0}}, {"lo", {-2.0}}});
    const auto hi = rater.category(rater.latent_response("hi", "i1", 1, 0));
    const auto lo = rater.category(rater.latent_response("lo", "i1", 1, 0));
    ordered += hi > lo;
  }
  CHECK(ordered >= 95);
}

TEST_CASE("batch scoring cardinality and cache replay") {
  const auto inst = testing::small_instrument(7);
  const auto corpus = testing::make_corpus(2);
  testing::TempDir dir("batch");
  const auto cache_path = dir / "cache.jsonl";
  testing::ScriptedProvider p([](const RatingRequest& r) { return reply(r.item_id == "i3" ? "agree" : "disagree"); });
  BatchOptions options;
  options.retry = no_wait();

  std::vector<RatingRecord> first;
  {
    ResponseCache cache(cache_path);
    BatchStats stats;
    first = batch_score(inst, corpus, p, &cache, options, &stats);
    CHECK(first.size() == 14);
    CHECK(stats.provider_calls == 14);
    CHECK(stats.cache_appends == 14);
  }
  const auto calls_before = p.calls();
  ResponseCache warm(cache_path);
  BatchStats stats;
  const auto second = batch_score(inst, corpus, p, &warm, options, &stats);
  CHECK(p.calls() == calls_before);
  CHECK(stats.provider_calls == 0);
  CHECK(stats.cache_hits == 14);
  REQUIRE(second.size() == 14);
  for (std::size_t i = 0; i < 14; ++i) CHECK(to_json(first[i]).dump() == to_json(second[i]).dump());

  // Cache lines carry the documented fields.
  std::ifstream in(cache_path);
  std::string line;
  std::getline(in, line);
  const auto j = nlohmann::json::parse(line);
  for (const char* key : {"prompt_hash", "model_id", "raw_response", "timestamp"}) CHECK(j.contains(key));
}

TEST_CASE("cache is keyed by model id") {
  const auto inst = testing::small_instrument(3);
  const auto corpus = testing::make_corpus(1);
  ResponseCache cache;
  testing::ScriptedProvider a([](auto&) { return reply("agree"); }, "model-a");
  testing::ScriptedProvider b([](auto&) { return reply("disagree"); }, "model-b");
  BatchOptions options;
  options.retry = no_wait();
  batch_score(inst, corpus, a, &cache, options);
  const auto recs = batch_score(inst, corpus, b, &cache, options);
  CHECK(b.calls() == 3);
  CHECK(*recs[0].parsed_code == 2);
}

TEST_CASE("malformed cache lines are skipped") {
  testing::TempDir dir("cache");
  write_file(dir / "c.jsonl", "{\"prompt_hash\":\"h\",\"model_id\":\"m\",\"raw_response\":\"agree\",\"timestamp\":\"x\"}\nnot json\n");
  ResponseCache cache(dir / "c.jsonl");
  CHECK(cache.size() == 1);
  CHECK(cache.skipped_lines() == 1);
  CHECK(cache.lookup("h", "m")->raw_response == "agree");
  CHECK(cache.lookup("h", "other") == std::nullopt);
}

TEST_CASE("permanently failing provider yields provider_error records") {
  const auto inst = testing::small_instrument(7);
  testing::ScriptedProvider p([](auto&) { return ProviderReply{false, {}, "down"}; });
  BatchOptions options;
  options.retry = no_wait();
  ResponseCache cache;
  const auto recs = batch_score(inst, testing::make_corpus(1), p, &cache, options);
  REQUIRE(recs.size() == 7);
  for (const auto& r : recs) CHECK(r.status == RecordStatus::provider_error);
  CHECK(cache.size() == 0);
}

TEST_CASE("in-flight calls never exceed the concurrency limit") {
  std::atomic<int> in_flight{0}, peak{0};
  testing::ScriptedProvider p([&](auto&) {
    const int now = ++in_flight;
    int seen = peak.load();
    while (now > seen && !peak.compare_exchange_weak(seen, now)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
    --in_flight;
    return reply("agree");
  });
  BatchOptions options;
  options.concurrency_limit = 3;
  options.retry = no_wait();
  const auto recs = batch_score(testing::small_instrument(4), testing::make_corpus(10), p, nullptr, options);
  CHECK(recs.size() == 40);
  CHECK(peak.load() <= 3);
  // Records come back sorted by (text, item) regardless of completion order.
  for (std::size_t i = 1; i < recs.size(); ++i) {
    CHECK(std::make_pair(recs[i - 1].text_id, recs[i - 1].item_id) < std::make_pair(recs[i].text_id, recs[i].item_id));
  }
}

TEST_CASE("prompt digest separates model, prompt and sample") {
  CHECK(prompt_digest("m", "p") != prompt_digest("m2", "p"));
  CHECK(prompt_digest("m", "p") != prompt_digest("m", "p", 1));
  CHECK(prompt_digest("ab", "c") != prompt_digest("a", "bc"));
  CHECK(prompt_digest("m", "p").size() == 64);
}

TEST_CASE("corpus with a duplicate id names the line") {
  try {
    parse_corpus("{\"id\":\"a\",\"text\":\"x\"}\n{\"id\":\"b\",\"text\":\"y\"}\n{\"id\":\"a\",\"text\":\"z\"}\n", "c.jsonl");
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("c.jsonl:3") != std::string::npos);
    CHECK(std::string(e.what()).find("duplicate text id 'a'") != std::string::npos);
  }
}

TEST_CASE("rating record json round trip") {
  RatingRecord r{"t", "i", "m", "h", "agree", 3, RecordStatus::ok, 2, {3, 3}};
  const auto back = record_from_json(to_json(r));
  CHECK(to_json(back).dump() == to_json(r).dump());
}

}
