#include <sstream>

#include "llmscale/cfa.hpp"
#include "llmscale/error.hpp"
#include "llmscale/pipeline.hpp"
#include "llmscale/reliability.hpp"
#include "llmscale/text_io.hpp"
#include "llmscale/validity.hpp"

namespace llmscale {

namespace fs = std::filesystem;

namespace {

nlohmann::json load(const RunConfig& config, const char* name) {
  const auto path = config.output_dir / name;
  if (!fs::exists(path)) throw ArtifactError("missing artifact: " + path.string());
  try {
    return nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ArtifactError("corrupt artifact " + path.string() + ": " + e.what());
  }
}

std::string num(const nlohmann::json& v, int digits = 3) {
  if (v.is_null()) return "NA";
  return format_fixed(v.get<double>(), digits);
}

std::string cell(std::string s) {
  for (auto& c : s) {
    if (c == '|') c = '/';
    if (c == '\n') c = ' ';
  }
  return s;
}

void table_header(std::ostream& md, const std::vector<std::string>& cols) {
  md << "|";
  for (const auto& c : cols) md << " " << c << " |";
  md << "\n|";
  for (std::size_t i = 0; i < cols.size(); ++i) md << "---|";
  md << "\n";
}

void table_row(std::ostream& md, const std::vector<std::string>& cells) {
  md << "|";
  for (const auto& c : cells) md << " " << cell(c) << " |";
  md << "\n";
}

}  // namespace

StageOutput cmd_report(const RunConfig& config) {
  if (config.output_dir.empty()) throw ValidationError("config: 'output_dir' is not set");
  if (config.instrument.empty()) throw ValidationError("config: 'instrument' is not set");
  const auto instrument = load_scale_spec(config.instrument);

  const auto summary = load(config, artifacts::kScoreSummary);
  const auto split = load(config, artifacts::kSplit);
  const auto retention = load(config, artifacts::kRetention);
  const auto efa_json = load(config, artifacts::kEfaModel);
  const auto cfa_json = load(config, artifacts::kCfaFit);
  const auto reliability_json = load(config, artifacts::kReliabilityReport);
  auto decisions = load(config, artifacts::kReliabilityDecisions);
  const bool with_validity = !config.criteria.empty();
  nlohmann::json validity_json = nullptr;
  if (with_validity) {
    validity_json = load(config, artifacts::kValidityReport);
    for (const auto& d : load(config, artifacts::kValidityDecisions)) decisions.push_back(d);
  }
  const auto fit = cfa_fit_from_json(cfa_json);
  const auto std_model = factor_model_from_json(cfa_json.at("standardized_model"));
  const auto reliability = reliability_report_from_json(reliability_json);

  std::ostringstream md;
  md << "# Run report: " << instrument.name << "\n\n";

  md << "## 1. Target of measurement\n\n";
  table_header(md, {"construct", "name", "definition", "expected correlates"});
  for (const auto& c : instrument.constructs) {
    std::string ec;
    for (const auto& e : c.expected_correlates) ec += (ec.empty() ? "" : ", ") + e.criterion + " (" + to_string(e.sign) + ")";
    table_row(md, {c.id, c.name, c.definition, ec});
  }

  md << "\n## 2. Rating prompt pool\n\n";
  table_header(md, {"item", "construct", "reverse keyed", "statement"});
  for (const auto& i : instrument.items) table_row(md, {i.id, i.construct_id, i.reverse_keyed ? "yes" : "no", i.statement});
  md << "\nResponse options: " << instrument.scale.options_text() << "\n\n";
  md << "Prompt template:\n\n```\n" << instrument.prompt.instruction_text << "\n```\n";

  md << "\n## 3. Scores for a sample\n\n";
  md << "- rater model: " << summary.at("model_id").get<std::string>() << "\n";
  md << "- texts: " << summary.at("n_texts") << ", items: " << summary.at("n_items")
     << ", samples per prompt: " << summary.at("sample_count") << "\n";
  const auto& counts = summary.at("status_counts");
  md << "- records: " << summary.at("records") << " (ok " << counts.at("ok") << ", parse_failed "
     << counts.at("parse_failed") << ", provider_error " << counts.at("provider_error") << ")\n";
  md << "- missing cells: " << summary.at("missing_cells") << "\n";
  md << "- split (seed " << split.at("seed") << "): development " << split.at("development").size() << ", holdout "
     << split.at("holdout").size() << "\n";

  md << "\n## 4. Factor structure\n\n";
  const auto& pa = retention.at("parallel");
  md << "Retention rule: " << retention.at("rule").get<std::string>() << "; retained factors: "
     << retention.at("retained") << " (parallel analysis " << pa.at("retained") << " over " << pa.at("n_reps")
     << " replicates, Kaiser " << retention.at("kaiser_count") << ").\n\n";
  table_header(md, {"rank", "observed eigenvalue", "random mean"});
  std::string scree = "rank,observed,random_mean\n";
  for (std::size_t r = 0; r < pa.at("observed_eigenvalues").size(); ++r) {
    const auto o = num(pa.at("observed_eigenvalues")[r], 6);
    const auto m = num(pa.at("random_mean_eigenvalues")[r], 6);
    table_row(md, {std::to_string(r + 1), num(pa.at("observed_eigenvalues")[r]), num(pa.at("random_mean_eigenvalues")[r])});
    scree += std::to_string(r + 1) + "," + o + "," + m + "\n";
  }

  md << "\nExploratory solution on the development half (" << efa_json.at("extraction").get<std::string>() << ", "
     << efa_json.at("rotation").get<std::string>() << ", n = " << efa_json.at("n") << "):\n\n";
  std::optional<FactorModel> efa_model;
  if (!efa_json.at("model").is_null()) efa_model = factor_model_from_json(efa_json.at("model"));
  if (efa_model) {
    std::vector<std::string> cols{"item"};
    for (const auto& f : efa_model->factor_ids) cols.push_back(f);
    cols.push_back("uniqueness");
    table_header(md, cols);
    for (Eigen::Index i = 0; i < efa_model->item_count(); ++i) {
      std::vector<std::string> row{efa_model->item_ids[static_cast<std::size_t>(i)]};
      for (Eigen::Index f = 0; f < efa_model->factor_count(); ++f) row.push_back(format_fixed(efa_model->loadings(i, f), 3));
      row.push_back(format_fixed(efa_model->residual_variances(i), 3));
      table_row(md, row);
    }
    if (efa_model->factor_count() > 1) {
      md << "\nFactor correlations:\n\n";
      std::vector<std::string> fc{""};
      for (const auto& f : efa_model->factor_ids) fc.push_back(f);
      table_header(md, fc);
      for (Eigen::Index a = 0; a < efa_model->factor_count(); ++a) {
        std::vector<std::string> row{efa_model->factor_ids[static_cast<std::size_t>(a)]};
        for (Eigen::Index b = 0; b < efa_model->factor_count(); ++b) row.push_back(format_fixed(efa_model->factor_correlations(a, b), 3));
        table_row(md, row);
      }
    }
  } else {
    md << "No exploratory solution (see the decisions log).\n";
  }

  md << "\nConfirmatory fit of the declared structure on the holdout half (n = " << fit.n << "):\n\n";
  table_header(md, {"chi-square", "df", "RMSEA", "CFI", "TLI", "SRMR", "converged", "iterations"});
  const auto& fi = cfa_json.at("fit_indices");
  table_row(md, {format_fixed(fit.chi_square, 3), format_fixed(fit.df, 0), num(fi.at("rmsea")), num(fi.at("cfi")),
                 num(fi.at("tli")), num(fi.at("srmr")), fit.converged ? "yes" : "no", std::to_string(fit.iterations)});
  if (fit.df == 0) md << "\nThe model is saturated (df = 0); fit indices are undefined.\n";
  md << "\n";
  table_header(md, {"item", "factor", "loading", "standardized loading", "residual variance"});
  std::string loadings_csv = "item_id";
  if (efa_model) {
    for (const auto& f : efa_model->factor_ids) loadings_csv += ",efa_" + f;
  }
  loadings_csv += ",cfa_factor,cfa_loading,cfa_standardized_loading\n";
  for (Eigen::Index i = 0; i < fit.model.item_count(); ++i) {
    Eigen::Index f = 0;
    fit.model.loadings.row(i).cwiseAbs().maxCoeff(&f);
    const auto& id = fit.model.item_ids[static_cast<std::size_t>(i)];
    const auto& fid = fit.model.factor_ids[static_cast<std::size_t>(f)];
    table_row(md, {id, fid, format_fixed(fit.model.loadings(i, f), 3), format_fixed(std_model.loadings(i, f), 3),
                   format_fixed(fit.model.residual_variances(i), 3)});
    loadings_csv += csv_escape(id);
    if (efa_model) {
      const auto r = efa_model->item_index(id);
      for (Eigen::Index g = 0; g < efa_model->factor_count(); ++g) {
        loadings_csv += "," + (r < 0 ? std::string() : format_fixed(efa_model->loadings(r, g), 6));
      }
    }
    loadings_csv += "," + csv_escape(fid) + "," + format_fixed(fit.model.loadings(i, f), 6) + "," +
                    format_fixed(std_model.loadings(i, f), 6) + "\n";
  }
  if (fit.model.factor_count() > 1) {
    md << "\nFactor correlations:\n\n";
    std::vector<std::string> fc{""};
    for (const auto& f : fit.model.factor_ids) fc.push_back(f);
    table_header(md, fc);
    for (Eigen::Index a = 0; a < fit.model.factor_count(); ++a) {
      std::vector<std::string> row{fit.model.factor_ids[static_cast<std::size_t>(a)]};
      for (Eigen::Index b = 0; b < fit.model.factor_count(); ++b) row.push_back(format_fixed(fit.model.factor_correlations(a, b), 3));
      table_row(md, row);
    }
  }

  md << "\n## 5. Internal consistency\n\n";
  table_header(md, {"factor", "alpha", "omega", "items"});
  for (const auto& f : reliability.factors) {
    table_row(md, {f.factor_id, f.alpha ? format_fixed(*f.alpha, 3) : "NA", f.omega ? format_fixed(*f.omega, 3) : "NA",
                   std::to_string(f.items.size())});
  }
  md << "\n";
  table_header(md, {"item", "factor", "standardized loading", "corrected item-total r", "flagged"});
  for (const auto& f : reliability.factors) {
    for (const auto& d : f.items) {
      table_row(md, {d.item_id, d.factor_id, format_fixed(d.loading, 3), d.item_total ? format_fixed(*d.item_total, 3) : "NA",
                     d.flagged ? "yes" : "no"});
    }
  }
  for (const char* key : {"excluded_items", "dropped_items"}) {
    const auto& list = reliability_json.at(key);
    if (list.empty()) continue;
    md << "\n" << (std::string(key) == "excluded_items" ? "Excluded items" : "Dropped items") << ":";
    for (const auto& id : list) md << " " << id.get<std::string>();
    md << "\n";
  }

  md << "\n## 6. Correlations with external criteria\n\n";
  std::string validity_csv = "factor_id,criterion,n_overlap,r_raw,r_disattenuated,expected_sign,sign_consistent\n";
  ValidityReport validity;
  if (with_validity) {
    validity = validity_report_from_json(validity_json);
    for (const auto& f : reliability.factors) {
      if (f.omega && *f.omega < 0.5) {
        md << "> WARNING: factor " << f.factor_id << " has omega " << format_fixed(*f.omega, 3)
           << " < 0.5; its correlations describe a weakly measured factor.\n\n";
      }
    }
    table_header(md, {"factor", "criterion", "n", "r", "disattenuated r", "expected sign", "sign consistent"});
    for (const auto& e : validity.entries) {
      const std::string dis = e.r_disattenuated ? format_fixed(*e.r_disattenuated, 3) + (e.out_of_range ? " (out of range)" : "") : "NA";
      const std::string exp = e.expected_sign ? to_string(*e.expected_sign) : "none";
      const std::string ok = e.sign_consistent ? (*e.sign_consistent ? "yes" : "no") : "NA";
      table_row(md, {e.factor_id, e.criterion, std::to_string(e.n_overlap), format_fixed(e.r_raw, 3), dis, exp, ok});
      validity_csv += csv_line({e.factor_id, e.criterion, std::to_string(e.n_overlap), format_fixed(e.r_raw, 6),
                                e.r_disattenuated ? format_fixed(*e.r_disattenuated, 6) : "",
                                e.expected_sign ? to_string(*e.expected_sign) : "",
                                e.sign_consistent ? (*e.sign_consistent ? "true" : "false") : ""}) + "\n";
    }
    for (const auto& w : validity.warnings) md << "\n- " << w;
    md << "\nCorrelations are reported with their sample sizes; no validity verdict is drawn from them.\n";
  } else {
    md << "No criteria configured; validity was not assessed.\n";
  }

  md << "\n## 7. Run record\n\n";
  md << "Master seed: " << config.seed << ". Rerun with a new sample or new criteria by pointing a new config at a new output directory.\n\n";
  md << "Decisions log:\n\n";
  if (decisions.empty()) md << "- none\n";
  for (const auto& d : decisions) {
    md << "- [" << d.at("stage").get<std::string>() << "] " << d.at("kind").get<std::string>() << " "
       << d.at("subject").get<std::string>() << ": " << d.at("detail").get<std::string>() << "\n";
  }
  md << "\nConfiguration:\n\n```json\n" << to_json(config).dump(2) << "\n```\n";

  nlohmann::json instrument_json = {{"name", instrument.name}, {"constructs", nlohmann::json::array()}, {"items", nlohmann::json::array()}};
  for (const auto& c : instrument.constructs) instrument_json["constructs"].push_back(c.id);
  for (const auto& i : instrument.items) instrument_json["items"].push_back(i.id);
  const nlohmann::json report = {{"1_target", instrument_json},
                                 {"2_prompt_pool", {{"items", instrument.items.size()}, {"response_options", instrument.scale.labels()}}},
                                 {"3_scores", {{"summary", summary}, {"split", split}}},
                                 {"4_factor_structure", {{"retention", retention}, {"efa", efa_json}, {"cfa", cfa_json}}},
                                 {"5_internal_consistency", reliability_json},
                                 {"6_validity", validity_json},
                                 {"7_run_record", {{"seed", config.seed}, {"config", to_json(config)}, {"decisions", decisions}}}};

  write_file(config.output_dir / artifacts::kReportMd, md.str());
  write_file(config.output_dir / artifacts::kReportJson, report.dump(2) + "\n");
  write_file(config.output_dir / artifacts::kScree, scree);
  write_file(config.output_dir / artifacts::kLoadings, loadings_csv);
  write_file(config.output_dir / artifacts::kValidityCsv, validity_csv);

  StageOutput out;
  out.lines.push_back("wrote " + (config.output_dir / artifacts::kReportMd).string());
  return out;
}

}  // namespace llmscale
