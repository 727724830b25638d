#include "llmscale/reliability.hpp"

#include <cmath>
#include <numeric>

#include "llmscale/error.hpp"

namespace llmscale {

double cronbach_alpha(const Eigen::MatrixXd& cov, const std::vector<Eigen::Index>& items) {
  std::vector<Eigen::Index> idx = items;
  if (idx.empty()) {
    idx.resize(static_cast<std::size_t>(cov.rows()));
    std::iota(idx.begin(), idx.end(), 0);
  }
  const auto k = static_cast<double>(idx.size());
  if (idx.size() < 2) throw DataError("alpha needs at least 2 items");
  double item_var = 0.0;
  double total_var = 0.0;
  for (auto a : idx) {
    item_var += cov(a, a);
    for (auto b : idx) total_var += cov(a, b);
  }
  if (!(total_var > 0.0)) throw DataError("alpha undefined: total score variance is zero");
  return k / (k - 1.0) * (1.0 - item_var / total_var);
}

double mcdonald_omega(const FactorModel& model, std::string_view factor_id) {
  const auto f = model.factor_index(factor_id);
  if (f < 0) throw DataError("omega: unknown factor '" + std::string(factor_id) + "'");
  double loading_sum = 0.0;
  double residual_sum = 0.0;
  bool any = false;
  for (Eigen::Index i = 0; i < model.item_count(); ++i) {
    // An item belongs to the factor it loads on; for simple structure every
    // other entry in its row is exactly zero.
    const double l = model.loadings(i, f);
    Eigen::Index own = 0;
    model.loadings.row(i).cwiseAbs().maxCoeff(&own);
    if (own != f && model.loadings.row(i).cwiseAbs().maxCoeff() > 0.0) continue;
    if (model.factor_count() > 1 && l == 0.0) continue;
    loading_sum += l;
    residual_sum += model.residual_variances(i);
    any = true;
  }
  if (!any) throw DataError("omega: factor '" + std::string(factor_id) + "' has no items");
  const double common = loading_sum * loading_sum;
  if (common + residual_sum <= 0.0) return 0.0;
  return common / (common + residual_sum);
}

std::optional<double> corrected_item_total(const Eigen::MatrixXd& cov, Eigen::Index item,
                                           const std::vector<Eigen::Index>& group) {
  double cross = 0.0;
  double rest_var = 0.0;
  int others = 0;
  for (auto j : group) {
    if (j == item) continue;
    ++others;
    cross += cov(item, j);
    for (auto l : group) {
      if (l != item) rest_var += cov(j, l);
    }
  }
  if (others < 1 || !(rest_var > 0.0) || !(cov(item, item) > 0.0)) return std::nullopt;
  return cross / std::sqrt(cov(item, item) * rest_var);
}

std::vector<ItemDiagnostic> item_diagnostics(const Eigen::MatrixXd& cov, const std::vector<std::string>& cov_item_ids,
                                             const std::map<std::string, std::string>& item_factor,
                                             const FactorModel& model, double loading_cutoff) {
  std::map<std::string, std::vector<Eigen::Index>> groups;
  for (std::size_t i = 0; i < cov_item_ids.size(); ++i) {
    const auto it = item_factor.find(cov_item_ids[i]);
    if (it != item_factor.end()) groups[it->second].push_back(static_cast<Eigen::Index>(i));
  }
  std::vector<ItemDiagnostic> out;
  for (std::size_t i = 0; i < cov_item_ids.size(); ++i) {
    const auto it = item_factor.find(cov_item_ids[i]);
    if (it == item_factor.end()) continue;
    ItemDiagnostic d;
    d.item_id = cov_item_ids[i];
    d.factor_id = it->second;
    const auto row = model.item_index(d.item_id);
    const auto col = model.factor_index(d.factor_id);
    if (row < 0 || col < 0) throw DataError("item diagnostics: model has no loading for item " + d.item_id);
    d.loading = model.loadings(row, col);
    d.flagged = std::abs(d.loading) < loading_cutoff;
    const auto& group = groups[d.factor_id];
    if (group.size() < 2) {
      d.note = "factor has fewer than 2 items; item-total correlation undefined";
    } else {
      d.item_total = corrected_item_total(cov, static_cast<Eigen::Index>(i), group);
      if (!d.item_total) d.note = "item-total correlation undefined (zero variance)";
    }
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<ItemDiagnostic> item_diagnostics(const RatingMatrix& matrix,
                                             const std::map<std::string, std::string>& item_factor,
                                             const FactorModel& model, double loading_cutoff) {
  const auto cov = covariance(matrix, MissingPolicy::listwise);
  return item_diagnostics(cov.covariance, cov.item_ids, item_factor, model, loading_cutoff);
}

const FactorReliability* ReliabilityReport::find(std::string_view factor_id) const {
  for (const auto& f : factors) {
    if (f.factor_id == factor_id) return &f;
  }
  return nullptr;
}

namespace {

nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

std::optional<double> opt_from(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

}  // namespace

nlohmann::json to_json(const ItemDiagnostic& d) {
  return {{"item_id", d.item_id}, {"factor_id", d.factor_id}, {"loading", d.loading},
          {"item_total", opt(d.item_total)}, {"flagged", d.flagged}, {"note", d.note}};
}

nlohmann::json to_json(const ReliabilityReport& report) {
  nlohmann::json factors = nlohmann::json::array();
  for (const auto& f : report.factors) {
    nlohmann::json items = nlohmann::json::array();
    for (const auto& d : f.items) items.push_back(to_json(d));
    factors.push_back({{"factor_id", f.factor_id}, {"alpha", opt(f.alpha)}, {"omega", opt(f.omega)}, {"items", items}});
  }
  return {{"factors", factors}, {"retained_factor_count", report.retained_factor_count}};
}

ReliabilityReport reliability_report_from_json(const nlohmann::json& j) {
  ReliabilityReport r;
  r.retained_factor_count = j.at("retained_factor_count").get<int>();
  for (const auto& fj : j.at("factors")) {
    FactorReliability f;
    f.factor_id = fj.at("factor_id").get<std::string>();
    f.alpha = opt_from(fj.at("alpha"));
    f.omega = opt_from(fj.at("omega"));
    for (const auto& dj : fj.at("items")) {
      ItemDiagnostic d;
      d.item_id = dj.at("item_id").get<std::string>();
      d.factor_id = dj.at("factor_id").get<std::string>();
      d.loading = dj.at("loading").get<double>();
      d.item_total = opt_from(dj.at("item_total"));
      d.flagged = dj.at("flagged").get<bool>();
      d.note = dj.at("note").get<std::string>();
      f.items.push_back(std::move(d));
    }
    r.factors.push_back(std::move(f));
  }
  return r;
}

}  // namespace llmscale
