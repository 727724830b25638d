#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "llmscale/factor_model.hpp"
#include "llmscale/rating_store.hpp"

namespace llmscale {

/// alpha = k/(k-1) * (1 - sum(var_i) / var_total) over `items` (all when
/// empty). Throws DataError for k < 2 or zero total variance.
double cronbach_alpha(const Eigen::MatrixXd& cov, const std::vector<Eigen::Index>& items = {});

/// Omega-total of one factor: (sum lambda)^2 / ((sum lambda)^2 + sum psi)
/// over the items with a non-zero loading on that factor.
double mcdonald_omega(const FactorModel& model, std::string_view factor_id);

/// Correlation of `item` with the sum of the other `group` members.
std::optional<double> corrected_item_total(const Eigen::MatrixXd& cov, Eigen::Index item,
                                           const std::vector<Eigen::Index>& group);

struct ItemDiagnostic {
  std::string item_id;
  std::string factor_id;
  double loading = 0.0;
  std::optional<double> item_total;
  bool flagged = false;  // |loading| < cutoff
  std::string note;
};

/// `item_factor` maps item id -> factor id (normally the item's construct).
/// Loadings are read from `model` on that factor.
std::vector<ItemDiagnostic> item_diagnostics(const Eigen::MatrixXd& cov, const std::vector<std::string>& cov_item_ids,
                                             const std::map<std::string, std::string>& item_factor,
                                             const FactorModel& model,
                                             double loading_cutoff = tolerance::kLoadingCutoff);
std::vector<ItemDiagnostic> item_diagnostics(const RatingMatrix& matrix,
                                             const std::map<std::string, std::string>& item_factor,
                                             const FactorModel& model,
                                             double loading_cutoff = tolerance::kLoadingCutoff);

struct FactorReliability {
  std::string factor_id;
  std::optional<double> alpha;
  std::optional<double> omega;
  std::vector<ItemDiagnostic> items;
};

struct ReliabilityReport {
  std::vector<FactorReliability> factors;
  int retained_factor_count = 0;

  const FactorReliability* find(std::string_view factor_id) const;
};

nlohmann::json to_json(const ItemDiagnostic& d);
nlohmann::json to_json(const ReliabilityReport& report);
ReliabilityReport reliability_report_from_json(const nlohmann::json& j);

}  // namespace llmscale
