#include "llmscale/validity.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <yaml-cpp/yaml.h>

#include "llmscale/error.hpp"
#include "llmscale/text_io.hpp"

namespace llmscale {

std::string to_string(Aggregation a) {
  return a == Aggregation::factor_scores ? "factor_scores" : "unit_weighted_mean";
}

Aggregation parse_aggregation(const std::string& text) {
  if (text == "unit_weighted_mean" || text == "mean") return Aggregation::unit_weighted_mean;
  if (text == "factor_scores") return Aggregation::factor_scores;
  throw ValidationError("unknown aggregation '" + text + "'");
}

ScoreMap aggregate_scores(const RatingMatrix& keyed, const Instrument& instrument, std::string_view factor_id) {
  if (!instrument.find_construct(factor_id)) throw DataError("unknown factor '" + std::string(factor_id) + "'");
  std::vector<Eigen::Index> cols;
  for (const auto* item : instrument.items_of(factor_id)) {
    const auto c = keyed.column_of(item->id);
    if (c >= 0) cols.push_back(c);
  }
  if (cols.empty()) throw DataError("factor '" + std::string(factor_id) + "' has no items with data");
  ScoreMap scores;
  for (Eigen::Index r = 0; r < keyed.rows(); ++r) {
    double sum = 0.0;
    int present = 0;
    for (auto c : cols) {
      if (keyed.missing(r, c)) continue;
      sum += keyed.values()(r, c);
      ++present;
    }
    if (present > 0) scores.emplace(keyed.text_ids()[static_cast<std::size_t>(r)], sum / present);
  }
  return scores;
}

ScoreMap factor_scores(const RatingMatrix& keyed, const FactorModel& model, std::string_view factor_id) {
  const auto f = model.factor_index(factor_id);
  if (f < 0) throw DataError("unknown factor '" + std::string(factor_id) + "'");
  std::vector<Eigen::Index> model_rows;
  std::vector<Eigen::Index> cols;
  for (std::size_t i = 0; i < model.item_ids.size(); ++i) {
    const auto c = keyed.column_of(model.item_ids[i]);
    if (c < 0) continue;
    model_rows.push_back(static_cast<Eigen::Index>(i));
    cols.push_back(c);
  }
  if (cols.empty()) throw DataError("factor '" + std::string(factor_id) + "' has no items with data");

  Eigen::VectorXd means(static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) {
    double sum = 0.0;
    int count = 0;
    for (Eigen::Index r = 0; r < keyed.rows(); ++r) {
      if (keyed.missing(r, cols[j])) continue;
      sum += keyed.values()(r, cols[j]);
      ++count;
    }
    means(static_cast<Eigen::Index>(j)) = count > 0 ? sum / count : 0.0;
  }

  const Eigen::MatrixXd sigma = model.implied_covariance();
  const Eigen::RowVectorXd phi_row = model.factor_correlations.row(f);
  ScoreMap scores;
  for (Eigen::Index r = 0; r < keyed.rows(); ++r) {
    std::vector<Eigen::Index> present;
    for (std::size_t j = 0; j < cols.size(); ++j) {
      if (!keyed.missing(r, cols[j])) present.push_back(static_cast<Eigen::Index>(j));
    }
    if (present.empty()) continue;
    const auto p = static_cast<Eigen::Index>(present.size());
    Eigen::MatrixXd s(p, p);
    Eigen::MatrixXd lam(p, model.factor_count());
    Eigen::VectorXd x(p);
    for (Eigen::Index a = 0; a < p; ++a) {
      const auto ma = model_rows[static_cast<std::size_t>(present[a])];
      lam.row(a) = model.loadings.row(ma);
      x(a) = keyed.values()(r, cols[static_cast<std::size_t>(present[a])]) - means(present[a]);
      for (Eigen::Index b = 0; b < p; ++b) s(a, b) = sigma(ma, model_rows[static_cast<std::size_t>(present[b])]);
    }
    const Eigen::VectorXd w = s.ldlt().solve(x);
    scores.emplace(keyed.text_ids()[static_cast<std::size_t>(r)], phi_row * lam.transpose() * w);
  }
  return scores;
}

// ---------------------------------------------------------------------------
// Criteria input

std::vector<CriterionSeries> parse_criteria_csv(std::string_view document, std::string_view source_name) {
  const auto rows = parse_csv(document);
  const std::string src(source_name);
  if (rows.empty() || rows.front().empty() || trim(rows.front().front()) != "text_id") {
    throw ValidationError(src + ": criteria file must start with a text_id header");
  }
  const auto& header = rows.front();
  if (header.size() < 2) throw ValidationError(src + ": criteria file declares no criterion column");
  std::vector<CriterionSeries> out(header.size() - 1);
  std::set<std::string> names;
  for (std::size_t c = 1; c < header.size(); ++c) {
    out[c - 1].name = trim(header[c]);
    if (out[c - 1].name.empty()) throw ValidationError(src + ":1: empty criterion name");
    if (!names.insert(out[c - 1].name).second) {
      throw ValidationError(src + ":1: duplicate criterion '" + out[c - 1].name + "'");
    }
  }
  std::set<std::string> ids;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    const std::string where = src + ":" + std::to_string(r + 1);
    if (row.size() == 1 && trim(row[0]).empty()) continue;
    if (row.size() != header.size()) {
      throw ValidationError(where + ": expected " + std::to_string(header.size()) + " fields, got " +
                            std::to_string(row.size()));
    }
    const std::string id = trim(row[0]);
    if (!ids.insert(id).second) throw ValidationError(where + ": duplicate text_id '" + id + "'");
    for (std::size_t c = 1; c < row.size(); ++c) {
      const std::string cell = trim(row[c]);
      if (cell.empty() || cell == "NA") continue;
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(cell, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != cell.size() || !std::isfinite(v)) {
        throw ValidationError(where + ": criterion '" + header[c] + "' value '" + cell + "' is not a number");
      }
      out[c - 1].values.emplace(id, v);
    }
  }
  return out;
}

void apply_criteria_sidecar(std::vector<CriterionSeries>& criteria, std::string_view document,
                            std::string_view source_name) {
  const std::string src(source_name);
  YAML::Node root;
  try {
    root = YAML::Load(std::string(document));
  } catch (const YAML::Exception& e) {
    throw ValidationError(src + ":" + std::to_string(e.mark.line + 1) + ": parse failure: " + e.msg);
  }
  const auto list = root["criteria"];
  if (!list || !list.IsSequence()) throw ValidationError(src + ": expected a 'criteria' list");
  for (const auto& node : list) {
    const std::string where = src + ":" + std::to_string(node.Mark().line + 1);
    if (!node["name"]) throw ValidationError(where + ": criterion entry without a name");
    const auto name = node["name"].as<std::string>();
    CriterionSeries* target = nullptr;
    for (auto& c : criteria) {
      if (c.name == name) target = &c;
    }
    if (!target) throw ValidationError(where + ": sidecar names unknown criterion '" + name + "'");
    if (const auto rel = node["reliability"]) {
      const double v = rel.as<double>();
      if (!(v > 0.0 && v <= 1.0)) throw ValidationError(where + ": reliability must lie in (0, 1]");
      target->reliability = v;
    }
    if (const auto expected = node["expected"]) {
      if (!expected.IsMap()) throw ValidationError(where + ": 'expected' must map factor ids to signs");
      for (const auto& kv : expected) {
        const auto sign = parse_sign(kv.second.as<std::string>());
        if (!sign) throw ValidationError(where + ": sign must be '+' or '-'");
        target->expected[kv.first.as<std::string>()] = *sign;
      }
    }
  }
}

std::vector<CriterionSeries> load_criteria(const std::filesystem::path& csv,
                                           const std::optional<std::filesystem::path>& sidecar) {
  auto criteria = parse_criteria_csv(read_file(csv), csv.string());
  if (sidecar) apply_criteria_sidecar(criteria, read_file(*sidecar), sidecar->string());
  return criteria;
}

// ---------------------------------------------------------------------------
// Correlations

const ValidityEntry* ValidityReport::find(std::string_view factor_id, std::string_view criterion) const {
  for (const auto& e : entries) {
    if (e.factor_id == factor_id && e.criterion == criterion) return &e;
  }
  return nullptr;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw DataError("pearson: need two equal-length series of length >= 2");
  const auto n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) throw DataError("pearson: a series has zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

Disattenuated disattenuate(double r_raw, double r_xx, double r_yy) {
  if (!(r_xx > 0.0 && r_xx <= 1.0) || !(r_yy > 0.0 && r_yy <= 1.0)) {
    throw DataError("disattenuate: reliabilities must lie in (0, 1]");
  }
  const double v = r_raw / std::sqrt(r_xx * r_yy);
  return {v, std::abs(v) > 1.0};
}

ValidityReport validity_correlations(std::string_view factor_id, const ScoreMap& scores,
                                     const std::vector<CriterionSeries>& criteria,
                                     std::optional<double> score_reliability,
                                     const std::map<std::string, Sign>& expected) {
  ValidityReport report;
  const std::string fid(factor_id);
  for (const auto& crit : criteria) {
    std::vector<double> x, y;
    for (const auto& [id, value] : crit.values) {
      const auto it = scores.find(id);
      if (it == scores.end()) continue;
      x.push_back(it->second);
      y.push_back(value);
    }
    if (x.size() < 3) {
      report.warnings.push_back("criterion '" + crit.name + "' skipped for factor '" + fid + "': only " +
                                std::to_string(x.size()) + " overlapping texts");
      continue;
    }
    ValidityEntry e;
    e.factor_id = fid;
    e.criterion = crit.name;
    e.n_overlap = x.size();
    try {
      e.r_raw = pearson(x, y);
    } catch (const DataError&) {
      report.warnings.push_back("criterion '" + crit.name + "' skipped for factor '" + fid +
                                "': zero variance over overlapping texts");
      continue;
    }
    e.score_reliability = score_reliability;
    e.criterion_reliability = crit.reliability;
    if (score_reliability && crit.reliability && *score_reliability > 0.0) {
      const auto d = disattenuate(e.r_raw, *score_reliability, *crit.reliability);
      e.r_disattenuated = d.value;
      e.out_of_range = d.out_of_range;
    }
    if (const auto it = crit.expected.find(fid); it != crit.expected.end()) {
      e.expected_sign = it->second;
    } else if (const auto jt = expected.find(crit.name); jt != expected.end()) {
      e.expected_sign = jt->second;
    }
    if (e.expected_sign) {
      e.sign_consistent = *e.expected_sign == Sign::positive ? e.r_raw > 0.0 : e.r_raw < 0.0;
    }
    report.entries.push_back(std::move(e));
  }
  return report;
}

std::map<std::string, Sign> expected_signs(const Construct& construct) {
  std::map<std::string, Sign> out;
  for (const auto& ec : construct.expected_correlates) out[ec.criterion] = ec.sign;
  return out;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

template <class T>
nlohmann::json opt(const std::optional<T>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

nlohmann::json to_json(const ValidityEntry& e) {
  return {{"factor_id", e.factor_id},
          {"criterion", e.criterion},
          {"n_overlap", e.n_overlap},
          {"r_raw", e.r_raw},
          {"score_reliability", opt(e.score_reliability)},
          {"criterion_reliability", opt(e.criterion_reliability)},
          {"r_disattenuated", opt(e.r_disattenuated)},
          {"out_of_range", e.out_of_range},
          {"expected_sign", e.expected_sign ? nlohmann::json(to_string(*e.expected_sign)) : nlohmann::json(nullptr)},
          {"sign_consistent", opt(e.sign_consistent)}};
}

nlohmann::json to_json(const ValidityReport& report) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : report.entries) entries.push_back(to_json(e));
  return {{"entries", entries}, {"warnings", report.warnings}};
}

ValidityReport validity_report_from_json(const nlohmann::json& j) {
  auto opt_double = [](const nlohmann::json& v) -> std::optional<double> {
    if (v.is_null()) return std::nullopt;
    return v.get<double>();
  };
  ValidityReport r;
  for (const auto& ej : j.at("entries")) {
    ValidityEntry e;
    e.factor_id = ej.at("factor_id").get<std::string>();
    e.criterion = ej.at("criterion").get<std::string>();
    e.n_overlap = ej.at("n_overlap").get<std::size_t>();
    e.r_raw = ej.at("r_raw").get<double>();
    e.score_reliability = opt_double(ej.at("score_reliability"));
    e.criterion_reliability = opt_double(ej.at("criterion_reliability"));
    e.r_disattenuated = opt_double(ej.at("r_disattenuated"));
    e.out_of_range = ej.at("out_of_range").get<bool>();
    if (!ej.at("expected_sign").is_null()) e.expected_sign = parse_sign(ej.at("expected_sign").get<std::string>());
    if (!ej.at("sign_consistent").is_null()) e.sign_consistent = ej.at("sign_consistent").get<bool>();
    r.entries.push_back(std::move(e));
  }
  r.warnings = j.at("warnings").get<std::vector<std::string>>();
  return r;
}

}  // namespace llmscale
