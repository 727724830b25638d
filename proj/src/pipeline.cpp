#include "llmscale/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "llmscale/cfa.hpp"
#include "llmscale/efa.hpp"
#include "llmscale/error.hpp"
#include "llmscale/random.hpp"
#include "llmscale/rating_store.hpp"
#include "llmscale/reliability.hpp"
#include "llmscale/response_cache.hpp"
#include "llmscale/retention.hpp"
#include "llmscale/text_io.hpp"
#include "llmscale/validity.hpp"

namespace llmscale {

namespace fs = std::filesystem;

namespace {

void require(const fs::path& path, const char* key) {
  if (path.empty()) throw ValidationError(std::string("config: '") + key + "' is not set");
}

fs::path artifact_path(const RunConfig& config, const char* name) {
  require(config.output_dir, "output_dir");
  return config.output_dir / name;
}

std::string read_artifact(const RunConfig& config, const char* name) {
  const auto path = artifact_path(config, name);
  if (!fs::exists(path)) throw ArtifactError("missing artifact: " + path.string());
  return read_file(path);
}

nlohmann::json read_json_artifact(const RunConfig& config, const char* name) {
  const auto text = read_artifact(config, name);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ArtifactError("corrupt artifact " + artifact_path(config, name).string() + ": " + e.what());
  }
}

void write_json(const RunConfig& config, const char* name, const nlohmann::json& j) {
  write_file(artifact_path(config, name), j.dump(2) + "\n");
}

nlohmann::json decision(std::string stage, std::string kind, std::string subject, std::string detail) {
  return {{"stage", std::move(stage)}, {"kind", std::move(kind)}, {"subject", std::move(subject)},
          {"detail", std::move(detail)}};
}

std::string fixed(double v, int digits = 3) { return format_fixed(v, digits); }

std::vector<Eigen::Index> rows_for(const RatingMatrix& m, const std::vector<std::string>& ids, const char* what) {
  std::map<std::string, Eigen::Index> index;
  for (std::size_t r = 0; r < m.text_ids().size(); ++r) index.emplace(m.text_ids()[r], static_cast<Eigen::Index>(r));
  std::vector<Eigen::Index> rows;
  for (const auto& id : ids) {
    const auto it = index.find(id);
    if (it == index.end()) throw ArtifactError(std::string("split manifest lists unknown ") + what + " text '" + id + "'");
    rows.push_back(it->second);
  }
  std::sort(rows.begin(), rows.end());
  return rows;
}

Eigen::MatrixXd submatrix(const Eigen::MatrixXd& m, const std::vector<Eigen::Index>& idx) {
  const auto p = static_cast<Eigen::Index>(idx.size());
  Eigen::MatrixXd out(p, p);
  for (Eigen::Index a = 0; a < p; ++a) {
    for (Eigen::Index b = 0; b < p; ++b) out(a, b) = m(idx[a], idx[b]);
  }
  return out;
}

std::vector<Eigen::Index> indices_of(const std::vector<std::string>& all, const std::vector<std::string>& wanted) {
  std::vector<Eigen::Index> out;
  for (const auto& w : wanted) {
    const auto it = std::find(all.begin(), all.end(), w);
    if (it != all.end()) out.push_back(it - all.begin());
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// validate

std::vector<Violation> cmd_validate(const RunConfig& config) {
  std::vector<Violation> problems;
  auto guard = [&](const std::string& where, auto&& body) {
    try {
      body();
    } catch (const Error& e) {
      problems.push_back({where, e.what()});
    }
  };

  if (config.instrument.empty()) problems.push_back({"config", "'instrument' is not set"});
  if (config.corpus.empty()) problems.push_back({"config", "'corpus' is not set"});
  if (config.output_dir.empty()) problems.push_back({"config", "'output_dir' is not set"});

  std::optional<Instrument> instrument;
  if (!config.instrument.empty()) {
    guard(config.instrument.string(), [&] {
      instrument = load_scale_spec(config.instrument);
      for (auto& v : validate_instrument(*instrument)) {
        v.location = config.instrument.string() + (v.location.empty() ? "" : ": " + v.location);
        problems.push_back(std::move(v));
      }
    });
  }
  std::optional<Corpus> corpus;
  if (!config.corpus.empty()) {
    guard(config.corpus.string(), [&] {
      corpus = load_corpus(config.corpus);
      if (corpus->empty()) throw ValidationError("corpus has no texts");
    });
  }
  if (!config.criteria.empty()) {
    guard(config.criteria.string(), [&] {
      if (!fs::exists(config.criteria)) throw ValidationError("criteria file not found");
      std::optional<fs::path> sidecar;
      if (!config.criteria_sidecar.empty()) sidecar = config.criteria_sidecar;
      const auto criteria = load_criteria(config.criteria, sidecar);
      if (corpus) {
        std::set<std::string> ids;
        for (const auto& t : *corpus) ids.insert(t.id);
        for (const auto& c : criteria) {
          std::size_t overlap = 0;
          for (const auto& kv : c.values) overlap += ids.count(kv.first);
          if (overlap < 3) {
            throw ValidationError("criterion '" + c.name + "' shares only " + std::to_string(overlap) +
                                  " text ids with the corpus");
          }
        }
      }
    });
  }

  if (config.provider.kind == "chat") {
    if (config.provider.chat.base_url.empty()) problems.push_back({"config: provider", "'base_url' is not set"});
    if (config.provider.chat.model.empty()) problems.push_back({"config: provider", "'model' is not set"});
    if (!std::getenv(config.provider.chat.api_key_env.c_str())) {
      problems.push_back({"config: provider", "environment variable " + config.provider.chat.api_key_env + " is not set"});
    }
  } else {
    guard("config: provider", [&] {
      require(config.provider.simulated_spec, "provider.simulated_spec");
      require(config.provider.latent_scores, "provider.latent_scores");
      const auto spec = simulated_spec_from_json(nlohmann::json::parse(read_file(config.provider.simulated_spec)));
      for (const auto& v : simulated_spec_violations(spec)) problems.push_back({config.provider.simulated_spec.string(), v});
      const auto latent = parse_latent_csv(read_file(config.provider.latent_scores), spec.factor_ids,
                                           config.provider.latent_scores.string());
      if (instrument) {
        for (const auto& item : instrument->items) {
          if (std::find(spec.item_ids.begin(), spec.item_ids.end(), item.id) == spec.item_ids.end()) {
            problems.push_back({config.provider.simulated_spec.string(), "no generating model for item " + item.id});
          }
        }
      }
      if (corpus) {
        for (const auto& t : *corpus) {
          if (!latent.contains(t.id)) {
            problems.push_back({config.provider.latent_scores.string(), "no latent score for text " + t.id});
            break;
          }
        }
      }
    });
  }
  return problems;
}

// ---------------------------------------------------------------------------
// score

std::unique_ptr<RatingProvider> make_provider(const RunConfig& config) {
  if (config.provider.kind == "chat") return std::make_unique<ChatCompletionProvider>(config.provider.chat);
  require(config.provider.simulated_spec, "provider.simulated_spec");
  require(config.provider.latent_scores, "provider.latent_scores");
  nlohmann::json spec_json;
  try {
    spec_json = nlohmann::json::parse(read_file(config.provider.simulated_spec));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(config.provider.simulated_spec.string() + ": " + e.what());
  }
  auto spec = simulated_spec_from_json(spec_json);
  auto latent = parse_latent_csv(read_file(config.provider.latent_scores), spec.factor_ids,
                                 config.provider.latent_scores.string());
  return simulate_rater(std::move(spec), std::move(latent));
}

StageOutput cmd_score(const RunConfig& config) {
  auto provider = make_provider(config);
  return cmd_score(config, *provider);
}

StageOutput cmd_score(const RunConfig& config, RatingProvider& provider) {
  require(config.instrument, "instrument");
  require(config.corpus, "corpus");
  const auto instrument = load_scale_spec(config.instrument);
  if (const auto v = validate_instrument(instrument); !v.empty()) {
    throw ValidationError(config.instrument.string() + ": invalid instrument\n" + describe(v));
  }
  const auto corpus = load_corpus(config.corpus);

  std::optional<ResponseCache> cache;
  if (!config.cache.empty()) cache.emplace(config.cache);

  BatchOptions options;
  options.concurrency_limit = config.provider.concurrency;
  options.retry.max_attempts = config.provider.retry_cap;
  options.retry.sample_count = config.provider.sample_count;
  if (config.provider.kind == "simulated") options.retry.backoff = std::chrono::milliseconds(0);
  BatchStats stats;
  const auto records = batch_score(instrument, corpus, provider, cache ? &*cache : nullptr, options, &stats);

  const auto raw = assemble_matrix(records, instrument);
  const auto keyed = apply_keying(raw, instrument);
  SplitSpec split_spec{config.holdout_fraction, config.split_seed.value_or(derive_seed(config.seed, "split"))};
  const auto split = split_holdout(keyed, split_spec);

  std::map<std::string, std::size_t> counts{{"ok", 0}, {"parse_failed", 0}, {"provider_error", 0}};
  for (const auto& r : records) ++counts[to_string(r.status)];

  write_file(artifact_path(config, artifacts::kRatingsLong), long_jsonl(records));
  write_file(artifact_path(config, artifacts::kRatingsWide), wide_csv(raw));
  write_file(artifact_path(config, artifacts::kRatingsKeyed), wide_csv(keyed));
  write_json(config, artifacts::kSplit,
             {{"seed", split_spec.seed},
              {"holdout_fraction", split_spec.holdout_fraction},
              {"development", split.development.text_ids()},
              {"holdout", split.holdout.text_ids()}});
  write_json(config, artifacts::kScoreSummary,
             {{"model_id", provider.model_id()},
              {"n_texts", raw.rows()},
              {"n_items", raw.cols()},
              {"records", records.size()},
              {"status_counts", counts},
              {"missing_cells", keyed.missing_count()},
              {"sample_count", config.provider.sample_count},
              {"n_development", split.development.rows()},
              {"n_holdout", split.holdout.rows()}});

  StageOutput out;
  out.provider_calls = stats.provider_calls;
  out.lines.push_back("scored " + std::to_string(raw.rows()) + " texts x " + std::to_string(raw.cols()) + " items");
  out.lines.push_back("ok=" + std::to_string(counts["ok"]) + " parse_failed=" + std::to_string(counts["parse_failed"]) +
                      " provider_error=" + std::to_string(counts["provider_error"]));
  out.lines.push_back("provider calls=" + std::to_string(stats.provider_calls) +
                      " cache hits=" + std::to_string(stats.cache_hits) +
                      " cache appends=" + std::to_string(stats.cache_appends));
  out.lines.push_back("split: development=" + std::to_string(split.development.rows()) +
                      " holdout=" + std::to_string(split.holdout.rows()));
  if (cache && cache->skipped_lines() > 0) {
    out.warnings.push_back("cache: skipped " + std::to_string(cache->skipped_lines()) + " malformed lines");
  }
  return out;
}

// ---------------------------------------------------------------------------
// reliability

namespace {

struct LoadedSplit {
  RatingMatrix keyed;
  RatingMatrix development;
  RatingMatrix holdout;
};

LoadedSplit load_split(const RunConfig& config, const Instrument& instrument) {
  LoadedSplit s;
  s.keyed = parse_wide_csv(read_artifact(config, artifacts::kRatingsKeyed), instrument.scale.max_code(),
                           artifact_path(config, artifacts::kRatingsKeyed).string());
  const auto split = read_json_artifact(config, artifacts::kSplit);
  s.development = s.keyed.select_rows(
      rows_for(s.keyed, split.at("development").get<std::vector<std::string>>(), "development"));
  s.holdout = s.keyed.select_rows(rows_for(s.keyed, split.at("holdout").get<std::vector<std::string>>(), "holdout"));
  return s;
}

struct HoldoutAnalysis {
  CFAFit fit;
  ReliabilityReport report;
};

HoldoutAnalysis analyse_holdout(const RatingMatrix& holdout, const Instrument& instrument, const AnalysisConfig& ac,
                                int retained) {
  const auto cov = covariance(holdout, ac.missing);
  const auto idx = indices_of(cov.item_ids, cov.correlation_item_ids);
  const Eigen::MatrixXd s = submatrix(cov.covariance, idx);
  const auto spec = CfaSpec::from_instrument(instrument, cov.correlation_item_ids, true);

  HoldoutAnalysis h;
  h.fit = cfa_fit(s, spec, cov.effective_n);
  h.report.retained_factor_count = retained;

  std::map<std::string, std::string> item_factor;
  for (const auto& id : spec.item_ids) item_factor[id] = instrument.find_item(id)->construct_id;
  const auto diagnostics =
      item_diagnostics(s, spec.item_ids, item_factor, h.fit.model.standardized(), ac.loading_cutoff);

  for (std::size_t f = 0; f < spec.factor_ids.size(); ++f) {
    FactorReliability fr;
    fr.factor_id = spec.factor_ids[f];
    std::vector<Eigen::Index> members;
    for (std::size_t i = 0; i < spec.item_ids.size(); ++i) {
      if (spec.item_factor[i] == static_cast<int>(f)) members.push_back(static_cast<Eigen::Index>(i));
    }
    if (members.size() >= 2) {
      try {
        fr.alpha = cronbach_alpha(s, members);
      } catch (const DataError&) {
      }
    }
    fr.omega = mcdonald_omega(h.fit.model, fr.factor_id);
    for (const auto& d : diagnostics) {
      if (d.factor_id == fr.factor_id) fr.items.push_back(d);
    }
    h.report.factors.push_back(std::move(fr));
  }
  return h;
}

}  // namespace

StageOutput cmd_reliability(const RunConfig& config) {
  require(config.instrument, "instrument");
  const auto instrument = load_scale_spec(config.instrument);
  const auto& ac = config.analysis;
  auto data = load_split(config, instrument);

  StageOutput out;
  nlohmann::json decisions = nlohmann::json::array();

  // Items with no variance in either half cannot enter a correlation matrix.
  std::vector<std::string> excluded;
  for (const auto* half : {&data.development, &data.holdout}) {
    const auto cov = covariance(*half, ac.missing);
    for (const auto& id : cov.zero_variance_items) {
      if (std::find(excluded.begin(), excluded.end(), id) == excluded.end()) {
        excluded.push_back(id);
        decisions.push_back(decision("reliability", "excluded_item", id, "zero variance; excluded from analysis"));
        out.warnings.push_back("item " + id + " has zero variance and was excluded");
      }
    }
  }
  std::sort(excluded.begin(), excluded.end());
  const auto dev = data.development.without_items(excluded);
  auto hold = data.holdout.without_items(excluded);

  // Development half: retention and exploratory structure.
  const auto dev_cov = covariance(dev, ac.missing);
  for (const auto& w : dev_cov.warnings) decisions.push_back(decision("reliability", "warning", "development", w));
  const auto pa = parallel_analysis(dev, ac.parallel_reps, derive_seed(config.seed, "retention"));
  const int kaiser = kaiser_count(descending_eigenvalues(dev_cov.correlation));
  int retained = ac.retention == RetentionRule::kaiser ? kaiser : pa.retained;
  const int k = static_cast<int>(dev_cov.correlation_item_ids.size());
  if (retained >= k) {
    decisions.push_back(decision("reliability", "retention_capped", "development",
                                 "retained " + std::to_string(retained) + " capped at " + std::to_string(k - 1)));
    retained = k - 1;
  }
  write_json(config, artifacts::kRetention,
             {{"rule", to_string(ac.retention)},
              {"retained", retained},
              {"kaiser_count", kaiser},
              {"parallel", to_json(pa)},
              {"item_ids", dev_cov.correlation_item_ids}});

  nlohmann::json efa_json = {{"n_factors", retained},
                             {"extraction", to_string(ac.efa.extraction)},
                             {"rotation", to_string(ac.efa.rotation)},
                             {"n", dev_cov.effective_n},
                             {"model", nullptr},
                             {"heywood_items", nlohmann::json::array()},
                             {"iterations", 0}};
  if (retained < 1) {
    decisions.push_back(decision("reliability", "no_factors_retained", "development",
                                 "retention rule kept no factor; exploratory solution skipped"));
    out.warnings.push_back("no factor retained on the development half");
  } else {
    try {
      const auto sol = efa(dev_cov.correlation, retained, ac.efa, dev_cov.correlation_item_ids);
      efa_json["model"] = to_json(sol.model);
      efa_json["heywood_items"] = sol.heywood_items;
      efa_json["iterations"] = sol.iterations;
      for (const auto& id : sol.heywood_items) {
        decisions.push_back(decision("reliability", "heywood_bound", id, "exploratory communality reached the bound"));
      }
    } catch (const DataError& e) {
      decisions.push_back(decision("reliability", "efa_failed", "development", e.what()));
      out.warnings.push_back(std::string("exploratory analysis failed: ") + e.what());
    }
  }
  write_json(config, artifacts::kEfaModel, efa_json);

  // Holdout half: confirmatory fit of the declared structure.
  auto h = analyse_holdout(hold, instrument, ac, retained);
  std::vector<std::string> dropped;
  if (ac.drop_flagged_items) {
    for (const auto& f : h.report.factors) {
      for (const auto& d : f.items) {
        if (d.flagged) dropped.push_back(d.item_id);
      }
    }
    if (!dropped.empty()) {
      for (const auto& id : dropped) {
        decisions.push_back(decision("reliability", "dropped_item", id, "loading below cutoff; refit without it"));
      }
      hold = hold.without_items(dropped);
      h = analyse_holdout(hold, instrument, ac, retained);
    }
  }
  if (!h.fit.converged) {
    decisions.push_back(decision("reliability", "cfa_not_converged", "holdout",
                                 "iteration cap reached; gradient norm " + fixed(h.fit.gradient_norm, 8)));
    out.warnings.push_back("confirmatory fit did not converge");
  }
  for (const auto& id : h.fit.bounded_residuals) {
    decisions.push_back(decision("reliability", "heywood_bound", id, "residual variance held at the lower bound"));
  }
  for (const auto& f : h.report.factors) {
    for (const auto& d : f.items) {
      if (d.flagged && std::find(dropped.begin(), dropped.end(), d.item_id) == dropped.end()) {
        decisions.push_back(decision("reliability", "flagged_item", d.item_id,
                                     "standardized loading " + fixed(d.loading) + " below cutoff " +
                                         fixed(ac.loading_cutoff, 2)));
      }
    }
    if (f.omega && *f.omega < 0.5) {
      out.warnings.push_back("factor " + f.factor_id + " has omega " + fixed(*f.omega) + " < 0.5");
    }
  }
  write_json(config, artifacts::kCfaFit, to_json(h.fit));
  auto report_json = to_json(h.report);
  report_json["excluded_items"] = excluded;
  report_json["dropped_items"] = dropped;
  write_json(config, artifacts::kReliabilityReport, report_json);
  write_json(config, artifacts::kReliabilityDecisions, decisions);

  out.lines.push_back("retained factors: " + std::to_string(retained) + " (" + to_string(ac.retention) + ")");
  out.lines.push_back("CFA chi2=" + fixed(h.fit.chi_square) + " df=" + fixed(h.fit.df, 0) +
                      (h.fit.indices.rmsea ? " RMSEA=" + fixed(*h.fit.indices.rmsea) : std::string(" RMSEA=NA")));
  for (const auto& f : h.report.factors) {
    out.lines.push_back("factor " + f.factor_id + ": alpha=" + (f.alpha ? fixed(*f.alpha) : "NA") +
                        " omega=" + (f.omega ? fixed(*f.omega) : "NA"));
  }
  return out;
}

// ---------------------------------------------------------------------------
// validity

StageOutput cmd_validity(const RunConfig& config) {
  require(config.instrument, "instrument");
  if (config.criteria.empty()) throw ValidationError("config: 'criteria' is not set; validity stage has no criteria");
  if (!fs::exists(config.criteria)) throw ValidationError("criteria file not found: " + config.criteria.string());
  const auto instrument = load_scale_spec(config.instrument);

  for (const char* name : {artifacts::kReliabilityReport, artifacts::kCfaFit}) {
    if (!fs::exists(artifact_path(config, name))) {
      throw ArtifactError("reliability artifacts are missing (" + artifact_path(config, name).string() +
                          "); run the reliability stage first");
    }
  }
  const auto reliability = reliability_report_from_json(read_json_artifact(config, artifacts::kReliabilityReport));
  const auto fit = cfa_fit_from_json(read_json_artifact(config, artifacts::kCfaFit));
  const auto keyed = parse_wide_csv(read_artifact(config, artifacts::kRatingsKeyed), instrument.scale.max_code(),
                                    artifact_path(config, artifacts::kRatingsKeyed).string());
  std::optional<fs::path> sidecar;
  if (!config.criteria_sidecar.empty()) sidecar = config.criteria_sidecar;
  const auto criteria = load_criteria(config.criteria, sidecar);

  StageOutput out;
  nlohmann::json decisions = nlohmann::json::array();
  for (const auto& f : reliability.factors) {
    if (f.omega && *f.omega < 0.5) {
      const std::string msg = "WARNING: factor " + f.factor_id + " has omega " + fixed(*f.omega) +
                              " < 0.5; correlations below describe a weakly measured factor";
      out.warnings.push_back(msg);
      decisions.push_back(decision("validity", "low_reliability", f.factor_id, msg));
    }
  }

  ValidityReport report;
  std::map<std::string, ScoreMap> all_scores;
  for (const auto& f : reliability.factors) {
    std::vector<std::string> used;
    for (const auto& d : f.items) used.push_back(d.item_id);
    const auto subset = keyed.select_columns(indices_of(keyed.item_ids(), used));
    const auto scores = config.analysis.aggregation == Aggregation::factor_scores
                            ? factor_scores(subset, fit.model, f.factor_id)
                            : aggregate_scores(subset, instrument, f.factor_id);
    const auto* construct = instrument.find_construct(f.factor_id);
    const auto part = validity_correlations(f.factor_id, scores, criteria, f.omega,
                                            construct ? expected_signs(*construct) : std::map<std::string, Sign>{});
    for (const auto& e : part.entries) {
      if (e.out_of_range) {
        decisions.push_back(decision("validity", "out_of_range", e.factor_id + "/" + e.criterion,
                                     "disattenuated r " + fixed(*e.r_disattenuated) + " exceeds 1 in magnitude"));
      }
      report.entries.push_back(e);
    }
    for (const auto& w : part.warnings) {
      decisions.push_back(decision("validity", "skipped_criterion", f.factor_id, w));
      out.warnings.push_back(w);
      report.warnings.push_back(w);
    }
    all_scores.emplace(f.factor_id, scores);
  }

  std::string csv = "text_id";
  for (const auto& [fid, _] : all_scores) csv += "," + csv_escape(fid);
  csv += "\n";
  for (const auto& id : keyed.text_ids()) {
    csv += csv_escape(id);
    for (const auto& [fid, scores] : all_scores) {
      const auto it = scores.find(id);
      csv += "," + (it == scores.end() ? std::string() : format_fixed(it->second, 6));
    }
    csv += "\n";
  }
  write_file(artifact_path(config, artifacts::kScores), csv);
  write_json(config, artifacts::kValidityReport, to_json(report));
  write_json(config, artifacts::kValidityDecisions, decisions);

  for (const auto& e : report.entries) {
    out.lines.push_back(e.factor_id + " x " + e.criterion + ": r=" + fixed(e.r_raw) + " n=" +
                        std::to_string(e.n_overlap) +
                        (e.r_disattenuated ? " r_dis=" + fixed(*e.r_disattenuated) : std::string()) +
                        (e.sign_consistent ? (*e.sign_consistent ? " sign ok" : " sign MISMATCH") : std::string()));
  }
  return out;
}

}  // namespace llmscale
