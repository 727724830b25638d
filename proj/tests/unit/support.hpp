#pragma once

#include <atomic>
#include <filesystem>
#include <functional>
#include <mutex>
#include <random>
#include <string>

#include <unistd.h>

#include "llmscale/providers.hpp"
#include "llmscale/scale_forge.hpp"

namespace testing {

inline const std::string kSource = LLMSCALE_SOURCE_DIR;

/// Fresh directory under the system temp dir, removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("llmscale_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// Answers every request with the result of a callback.
class ScriptedProvider final : public llmscale::RatingProvider {
 public:
  using Script = std::function<llmscale::ProviderReply(const llmscale::RatingRequest&)>;
  explicit ScriptedProvider(Script script, std::string model = "scripted") : script_(std::move(script)), model_(std::move(model)) {}
  std::string model_id() const override { return model_; }
  llmscale::ProviderReply complete(const llmscale::RatingRequest& request) override {
    calls_.fetch_add(1);
    return script_(request);
  }
  std::size_t calls() const { return calls_.load(); }

 private:
  Script script_;
  std::string model_;
  std::atomic<std::size_t> calls_{0};
};

inline llmscale::ProviderReply reply(std::string content) { return {true, std::move(content), {}}; }

/// One-factor generating model over the given items on the 4-point scale.
inline llmscale::SimulatedRaterSpec one_factor_spec(const std::vector<std::string>& items, double loading,
                                                    double residual, std::uint64_t seed = 1) {
  llmscale::SimulatedRaterSpec spec;
  spec.factor_ids = {"f"};
  spec.item_ids = items;
  spec.item_factor.assign(items.size(), 0);
  spec.loadings.assign(items.size(), loading);
  spec.residual_variances.assign(items.size(), residual);
  spec.factor_correlations = Eigen::MatrixXd::Identity(1, 1);
  spec.thresholds = {-0.6744897501960817, 0.0, 0.6744897501960817};
  spec.labels = llmscale::ResponseScale::agreement4().labels();
  spec.seed = seed;
  return spec;
}

/// Instrument with one construct "f" and the given number of items.
inline llmscale::Instrument small_instrument(int n_items, const std::string& construct = "f") {
  llmscale::Instrument inst;
  inst.name = "small";
  inst.constructs.push_back({construct, construct, "", {{"crit", llmscale::Sign::positive}}});
  for (int i = 1; i <= n_items; ++i) {
    inst.items.push_back({"i" + std::to_string(i), construct, "Statement " + std::to_string(i) + ".", false, std::nullopt});
  }
  inst.scale = llmscale::ResponseScale::agreement4();
  inst.prompt = llmscale::PromptTemplate::standard();
  return inst;
}

inline llmscale::Corpus make_corpus(int n, const std::string& prefix = "t") {
  llmscale::Corpus c;
  for (int i = 0; i < n; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "%s%04d", prefix.c_str(), i + 1);
    c.push_back({id, "Text number " + std::to_string(i + 1) + ".", nullptr});
  }
  return c;
}

}  // namespace testing
