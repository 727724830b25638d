#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "llmscale/rater_gateway.hpp"

namespace llmscale {

/// Settings for an OpenAI-style chat-completion endpoint.
struct ChatProviderSettings {
  std::string base_url;  // e.g. https://api.example.com/v1
  std::string model;
  double temperature = 0.0;
  std::string api_key_env = "LLMSCALE_API_KEY";
  int timeout_seconds = 60;
};

/// POSTs {base_url}/chat/completions with a single user message and reads
/// choices[0].message.content. The API key comes from the environment only.
class ChatCompletionProvider final : public RatingProvider {
 public:
  explicit ChatCompletionProvider(ChatProviderSettings settings);

  std::string model_id() const override { return settings_.model; }
  ProviderReply complete(const RatingRequest& request) override;

  /// Request body sent for a prompt (exposed for wire-format tests).
  nlohmann::json request_body(const std::string& prompt) const;

 private:
  ChatProviderSettings settings_;
  std::string scheme_host_port_;
  std::string path_prefix_;
  std::string api_key_;
};

// ---------------------------------------------------------------------------
// Simulated rater

/// Latent-variable generator used as a test oracle. Item i on factor f(i)
/// answers text t with the category of
///   y = loading_i * theta[t][f(i)] + sqrt(residual_i) * eps
/// cut at `thresholds`, where eps is a standard normal seeded from
/// (seed, text id, item id, attempt, sample).
struct SimulatedRaterSpec {
  std::vector<std::string> factor_ids;
  std::vector<std::string> item_ids;
  std::vector<int> item_factor;  // index into factor_ids
  std::vector<double> loadings;
  std::vector<double> residual_variances;
  Eigen::MatrixXd factor_correlations;
  std::vector<double> thresholds;  // m - 1, strictly increasing
  std::vector<std::string> labels; // m response labels emitted verbatim
  std::uint64_t seed = 0;
  std::string model_id = "simulated-rater";
};

/// Cut points giving each of m categories probability 1/m under N(0, 1).
std::vector<double> equal_probability_thresholds(int m);

/// Hard violations (throws ValidationError) are checked by simulate_rater;
/// this returns the soft warnings, e.g. loading^2 + residual far from 1.
std::vector<std::string> simulated_spec_warnings(const SimulatedRaterSpec& spec);
std::vector<std::string> simulated_spec_violations(const SimulatedRaterSpec& spec);

nlohmann::json to_json(const SimulatedRaterSpec& spec);
SimulatedRaterSpec simulated_spec_from_json(const nlohmann::json& j);

using LatentScores = std::map<std::string, std::vector<double>>;

class SimulatedRater final : public RatingProvider {
 public:
  SimulatedRater(SimulatedRaterSpec spec, LatentScores latent);

  std::string model_id() const override { return spec_.model_id; }
  ProviderReply complete(const RatingRequest& request) override;

  /// Latent response before discretization (exposed for tests).
  double latent_response(const std::string& text_id, const std::string& item_id, int attempt, int sample) const;
  int category(double latent) const;

 private:
  SimulatedRaterSpec spec_;
  LatentScores latent_;
  std::map<std::string, std::size_t> item_index_;
};

std::unique_ptr<RatingProvider> simulate_rater(SimulatedRaterSpec spec, LatentScores latent);

/// Wraps a provider and counts calls; used for the cache contract.
class CountingProvider final : public RatingProvider {
 public:
  explicit CountingProvider(RatingProvider& inner) : inner_(inner) {}
  std::string model_id() const override { return inner_.model_id(); }
  ProviderReply complete(const RatingRequest& request) override {
    calls_.fetch_add(1, std::memory_order_relaxed);
    return inner_.complete(request);
  }
  std::size_t calls() const { return calls_.load(); }

 private:
  RatingProvider& inner_;
  std::atomic<std::size_t> calls_{0};
};

}  // namespace llmscale
