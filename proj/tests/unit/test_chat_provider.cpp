// The chat-completion provider against a local HTTP server that mimics the
// wire format.
#include <cstdlib>
#include <thread>

#include <doctest.h>

#include "llmscale/providers.hpp"
#include "llmscale/rater_gateway.hpp"
#include "unit/support.hpp"

// After Eigen: the resolver headers pulled in by httplib define `_res`, which Eigen uses as a name.
#include <httplib.h>

using namespace llmscale;

namespace {

class FakeServer {
 public:
  FakeServer() {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      {
        std::lock_guard lock(mutex_);
        last_body_ = req.body;
        last_auth_ = req.get_header_value("Authorization");
        ++hits_;
      }
      if (fail_) {
        res.status = 503;
        return;
      }
      const auto body = nlohmann::json::parse(req.body);
      const auto prompt = body["messages"][0]["content"].get<std::string>();
      const std::string answer = prompt.find("Statement 2.") != std::string::npos ? "Strongly agree." : "disagree";
      res.set_content(nlohmann::json{{"choices", {{{"message", {{"role", "assistant"}, {"content", answer}}}}}}}.dump(),
                      "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeServer() {
    server_.stop();
    thread_.join();
  }
  std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }
  void fail(bool f) { fail_ = f; }
  nlohmann::json last_body() {
    std::lock_guard lock(mutex_);
    return nlohmann::json::parse(last_body_);
  }
  std::string last_auth() {
    std::lock_guard lock(mutex_);
    return last_auth_;
  }
  int hits() {
    std::lock_guard lock(mutex_);
    return hits_;
  }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::atomic<bool> fail_{false};
  std::mutex mutex_;
  std::string last_body_, last_auth_;
  int hits_ = 0;
};

}  // namespace

TEST_SUITE("chat_provider") {

TEST_CASE("request carries model, single user message and temperature; key comes from the environment") {
  FakeServer server;
  ::setenv("LLMSCALE_TEST_KEY", "sk-test-123", 1);
  ChatProviderSettings settings;
  settings.base_url = server.base_url();
  settings.model = "test-model";
  settings.api_key_env = "LLMSCALE_TEST_KEY";
  settings.timeout_seconds = 5;
  ChatCompletionProvider provider(settings);

  const auto reply = provider.complete({"t1", "i1", "the prompt", 1, 0});
  REQUIRE(reply.ok);
  CHECK(reply.content == "disagree");
  const auto body = server.last_body();
  CHECK(body["model"] == "test-model");
  CHECK(body["temperature"] == 0.0);
  REQUIRE(body["messages"].size() == 1);
  CHECK(body["messages"][0]["role"] == "user");
  CHECK(body["messages"][0]["content"] == "the prompt");
  CHECK(server.last_auth() == "Bearer sk-test-123");
  ::unsetenv("LLMSCALE_TEST_KEY");
}

TEST_CASE("batch scoring through HTTP parses the first message content") {
  FakeServer server;
  ChatProviderSettings settings;
  settings.base_url = server.base_url();
  settings.model = "test-model";
  settings.timeout_seconds = 5;
  ChatCompletionProvider provider(settings);
  BatchOptions options;
  options.concurrency_limit = 2;
  options.retry.backoff = std::chrono::milliseconds(0);
  const auto recs = batch_score(testing::small_instrument(3), testing::make_corpus(2), provider, nullptr, options);
  REQUIRE(recs.size() == 6);
  for (const auto& r : recs) {
    CHECK(r.status == RecordStatus::ok);
    CHECK(*r.parsed_code == (r.item_id == "i2" ? 4 : 2));
  }
}

TEST_CASE("HTTP errors become provider errors after the retry cap") {
  FakeServer server;
  server.fail(true);
  ChatProviderSettings settings;
  settings.base_url = server.base_url();
  settings.model = "m";
  settings.timeout_seconds = 5;
  ChatCompletionProvider provider(settings);
  RetryPolicy policy;
  policy.max_attempts = 2;
  policy.backoff = std::chrono::milliseconds(1);
  const auto rec = score_one({"t", "i", "p", 1, 0}, provider, ResponseScale::agreement4(), policy);
  CHECK(rec.status == RecordStatus::provider_error);
  CHECK(rec.attempt_count == 2);
  CHECK(server.hits() == 2);
  CHECK(rec.raw_response == "HTTP 503");
}

TEST_CASE("unreachable endpoint is a provider error, not a crash") {
  ChatProviderSettings settings;
  settings.base_url = "http://127.0.0.1:1/v1";
  settings.model = "m";
  settings.timeout_seconds = 1;
  ChatCompletionProvider provider(settings);
  const auto reply = provider.complete({"t", "i", "p", 1, 0});
  CHECK_FALSE(reply.ok);
  CHECK(reply.error.find("transport error") == 0);
}

}
