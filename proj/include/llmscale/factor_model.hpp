#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace llmscale {

/// Every numerical tolerance of the factor-analysis code lives here.
namespace tolerance {
inline constexpr double kResidualFloor = 1e-4;       // lower bound on residual variances
inline constexpr double kCfaGradient = 1e-6;         // projected-gradient infinity norm
inline constexpr int kCfaMaxIterations = 500;
inline constexpr double kCommunality = 1e-8;         // principal-axis convergence
inline constexpr int kEfaMaxIterations = 1000;
inline constexpr double kRotation = 1e-12;
inline constexpr int kRotationMaxIterations = 1000;
inline constexpr double kLoadingCutoff = 0.40;
inline constexpr int kParallelReps = 100;
}  // namespace tolerance

/// Sigma = L Phi L' + diag(psi) with unit factor variances.
struct FactorModel {
  std::vector<std::string> item_ids;
  std::vector<std::string> factor_ids;
  Eigen::MatrixXd loadings;            // k x q
  Eigen::VectorXd residual_variances;  // k
  Eigen::MatrixXd factor_correlations; // q x q, unit diagonal

  Eigen::Index item_count() const { return loadings.rows(); }
  Eigen::Index factor_count() const { return loadings.cols(); }
  /// -1 when unknown.
  Eigen::Index factor_index(std::string_view factor_id) const;
  Eigen::Index item_index(std::string_view item_id) const;

  Eigen::MatrixXd implied_covariance() const;
  /// Loadings and residuals rescaled so every implied item variance is 1.
  FactorModel standardized() const;
  /// Invariant violations (dimensions, residual floor, Phi diagonal).
  std::vector<std::string> violations() const;
};

/// Flip factors so each column's largest-magnitude loading is positive;
/// Phi rows/columns follow.
void canonicalize_signs(FactorModel& model);

nlohmann::json to_json(const FactorModel& model);
FactorModel factor_model_from_json(const nlohmann::json& j);

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m);
Eigen::MatrixXd matrix_from_json(const nlohmann::json& j);

}  // namespace llmscale
