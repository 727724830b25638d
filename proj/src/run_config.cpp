#include "llmscale/run_config.hpp"

#include <yaml-cpp/yaml.h>

#include "llmscale/error.hpp"
#include "llmscale/text_io.hpp"

namespace llmscale {

std::string to_string(RetentionRule rule) { return rule == RetentionRule::kaiser ? "kaiser" : "parallel"; }

namespace {

class Reader {
 public:
  Reader(std::string source, std::filesystem::path base) : source_(std::move(source)), base_(std::move(base)) {}

  std::string where(const YAML::Node& node) const {
    const auto mark = node.Mark();
    return mark.line < 0 ? source_ : source_ + ":" + std::to_string(mark.line + 1);
  }

  template <class T>
  void get(const YAML::Node& parent, const char* key, T& out) const {
    const auto node = parent[key];
    if (!node || node.IsNull()) return;
    try {
      out = node.template as<T>();
    } catch (const YAML::Exception&) {
      throw ValidationError(where(node) + ": invalid value for '" + key + "'");
    }
  }

  void path(const YAML::Node& parent, const char* key, std::filesystem::path& out) const {
    std::string text;
    get(parent, key, text);
    if (text.empty()) return;
    const std::filesystem::path p(text);
    out = p.is_absolute() ? p : (base_ / p).lexically_normal();
  }

  void check_keys(const YAML::Node& node, std::initializer_list<std::string_view> known) const {
    if (!node.IsMap()) throw ValidationError(where(node) + ": expected a mapping");
    for (const auto& kv : node) {
      const auto key = kv.first.as<std::string>();
      bool ok = false;
      for (auto k : known) ok = ok || k == key;
      if (!ok) throw ValidationError(where(kv.first) + ": unknown key '" + key + "'");
    }
  }

 private:
  std::string source_;
  std::filesystem::path base_;
};

}  // namespace

RunConfig parse_run_config(std::string_view document, const std::filesystem::path& base_dir,
                           std::string_view source_name) {
  const std::string src(source_name);
  YAML::Node root;
  try {
    root = YAML::Load(std::string(document));
  } catch (const YAML::Exception& e) {
    throw ValidationError(src + ":" + std::to_string(e.mark.line + 1) + ": parse failure: " + e.msg);
  }
  if (!root.IsMap()) throw ValidationError(src + ": top level must be a mapping");
  const Reader rd(src, base_dir);
  rd.check_keys(root, {"seed", "instrument", "corpus", "criteria", "criteria_sidecar", "output_dir", "cache",
                       "provider", "split", "analysis", "simulation"});

  RunConfig cfg;
  cfg.base_dir = base_dir;
  rd.get(root, "seed", cfg.seed);
  rd.path(root, "instrument", cfg.instrument);
  rd.path(root, "corpus", cfg.corpus);
  rd.path(root, "criteria", cfg.criteria);
  rd.path(root, "criteria_sidecar", cfg.criteria_sidecar);
  rd.path(root, "output_dir", cfg.output_dir);
  rd.path(root, "cache", cfg.cache);

  if (const auto p = root["provider"]) {
    rd.check_keys(p, {"kind", "base_url", "model", "api_key_env", "temperature", "concurrency", "retry_cap",
                      "sample_count", "timeout_seconds", "simulated_spec", "latent_scores"});
    auto& pc = cfg.provider;
    rd.get(p, "kind", pc.kind);
    if (pc.kind != "simulated" && pc.kind != "chat") {
      throw ValidationError(rd.where(p) + ": provider kind must be 'simulated' or 'chat'");
    }
    rd.get(p, "base_url", pc.chat.base_url);
    rd.get(p, "model", pc.chat.model);
    rd.get(p, "api_key_env", pc.chat.api_key_env);
    rd.get(p, "temperature", pc.chat.temperature);
    rd.get(p, "timeout_seconds", pc.chat.timeout_seconds);
    rd.get(p, "concurrency", pc.concurrency);
    rd.get(p, "retry_cap", pc.retry_cap);
    rd.get(p, "sample_count", pc.sample_count);
    rd.path(p, "simulated_spec", pc.simulated_spec);
    rd.path(p, "latent_scores", pc.latent_scores);
    if (pc.concurrency < 1) throw ValidationError(rd.where(p) + ": concurrency must be >= 1");
    if (pc.retry_cap < 1) throw ValidationError(rd.where(p) + ": retry_cap must be >= 1");
    if (pc.sample_count < 1) throw ValidationError(rd.where(p) + ": sample_count must be >= 1");
  }

  if (const auto s = root["split"]) {
    rd.check_keys(s, {"holdout_fraction", "seed"});
    rd.get(s, "holdout_fraction", cfg.holdout_fraction);
    if (s["seed"]) {
      std::uint64_t seed = 0;
      rd.get(s, "seed", seed);
      cfg.split_seed = seed;
    }
    if (!(cfg.holdout_fraction > 0.0 && cfg.holdout_fraction < 1.0)) {
      throw ValidationError(rd.where(s) + ": holdout_fraction must lie in (0, 1)");
    }
  }

  if (const auto a = root["analysis"]) {
    rd.check_keys(a, {"retention", "parallel_reps", "extraction", "rotation", "loading_cutoff", "missing",
                      "drop_flagged_items", "aggregation"});
    auto& ac = cfg.analysis;
    std::string text;
    try {
      text.clear();
      rd.get(a, "retention", text);
      if (text == "kaiser") ac.retention = RetentionRule::kaiser;
      else if (!text.empty() && text != "parallel") throw ValidationError("unknown retention rule '" + text + "'");
      text.clear();
      rd.get(a, "extraction", text);
      if (!text.empty()) ac.efa.extraction = parse_extraction(text);
      text.clear();
      rd.get(a, "rotation", text);
      if (!text.empty()) ac.efa.rotation = parse_rotation(text);
      text.clear();
      rd.get(a, "missing", text);
      if (text == "pairwise") ac.missing = MissingPolicy::pairwise;
      else if (!text.empty() && text != "listwise") throw ValidationError("unknown missing-data policy '" + text + "'");
      text.clear();
      rd.get(a, "aggregation", text);
      if (!text.empty()) ac.aggregation = parse_aggregation(text);
    } catch (const ValidationError& e) {
      throw ValidationError(rd.where(a) + ": " + e.what());
    }
    rd.get(a, "parallel_reps", ac.parallel_reps);
    rd.get(a, "loading_cutoff", ac.loading_cutoff);
    rd.get(a, "drop_flagged_items", ac.drop_flagged_items);
    if (ac.parallel_reps < 1) throw ValidationError(rd.where(a) + ": parallel_reps must be >= 1");
  }

  if (const auto s = root["simulation"]) {
    rd.check_keys(s, {"bundle_dir", "n_texts", "factors", "items_per_factor", "loading", "residual",
                      "factor_correlation", "criterion_correlation", "zero_loading_items"});
    SimulationConfig sc;
    rd.path(s, "bundle_dir", sc.bundle_dir);
    rd.get(s, "n_texts", sc.n_texts);
    rd.get(s, "factors", sc.factors);
    rd.get(s, "items_per_factor", sc.items_per_factor);
    rd.get(s, "loading", sc.loading);
    if (s["residual"]) {
      double r = 0.0;
      rd.get(s, "residual", r);
      sc.residual = r;
    }
    rd.get(s, "factor_correlation", sc.factor_correlation);
    rd.get(s, "criterion_correlation", sc.criterion_correlation);
    rd.get(s, "zero_loading_items", sc.zero_loading_items);
    cfg.simulation = sc;
  }
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  const auto dir = path.parent_path();
  return parse_run_config(read_file(path), dir.empty() ? std::filesystem::path(".") : dir, path.string());
}

nlohmann::json to_json(const RunConfig& c) {
  auto rel = [&](const std::filesystem::path& p) -> nlohmann::json {
    if (p.empty()) return nullptr;
    return p.lexically_relative(c.base_dir).generic_string();
  };
  nlohmann::json provider = {{"kind", c.provider.kind},
                             {"concurrency", c.provider.concurrency},
                             {"retry_cap", c.provider.retry_cap},
                             {"sample_count", c.provider.sample_count}};
  if (c.provider.kind == "chat") {
    provider["base_url"] = c.provider.chat.base_url;
    provider["model"] = c.provider.chat.model;
    provider["temperature"] = c.provider.chat.temperature;
    provider["api_key_env"] = c.provider.chat.api_key_env;
  } else {
    provider["simulated_spec"] = rel(c.provider.simulated_spec);
    provider["latent_scores"] = rel(c.provider.latent_scores);
  }
  return {{"seed", c.seed},
          {"instrument", rel(c.instrument)},
          {"corpus", rel(c.corpus)},
          {"criteria", rel(c.criteria)},
          {"criteria_sidecar", rel(c.criteria_sidecar)},
          {"output_dir", rel(c.output_dir)},
          {"cache", rel(c.cache)},
          {"provider", provider},
          {"split",
           {{"holdout_fraction", c.holdout_fraction},
            {"seed", c.split_seed ? nlohmann::json(*c.split_seed) : nlohmann::json(nullptr)}}},
          {"analysis",
           {{"retention", to_string(c.analysis.retention)},
            {"parallel_reps", c.analysis.parallel_reps},
            {"extraction", to_string(c.analysis.efa.extraction)},
            {"rotation", to_string(c.analysis.efa.rotation)},
            {"loading_cutoff", c.analysis.loading_cutoff},
            {"missing", c.analysis.missing == MissingPolicy::pairwise ? "pairwise" : "listwise"},
            {"drop_flagged_items", c.analysis.drop_flagged_items},
            {"aggregation", to_string(c.analysis.aggregation)}}}};
}

}  // namespace llmscale
