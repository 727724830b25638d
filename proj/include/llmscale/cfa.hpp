#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "llmscale/factor_model.hpp"
#include "llmscale/scale_forge.hpp"

namespace llmscale {

/// Simple-structure measurement model: every item loads on exactly one factor.
struct CfaSpec {
  std::vector<std::string> item_ids;
  std::vector<std::string> factor_ids;
  std::vector<int> item_factor;  // index into factor_ids, one per item
  bool correlated_factors = true;

  /// Items in `item_ids` order mapped to their instrument constructs.
  /// Constructs with no remaining items are dropped.
  static CfaSpec from_instrument(const Instrument& instrument, const std::vector<std::string>& item_ids,
                                 bool correlated_factors = true);
};

struct FitIndices {
  std::optional<double> rmsea;
  std::optional<double> cfi;
  std::optional<double> tli;
  std::optional<double> srmr;
};

struct CFAFit {
  FactorModel model;
  double discrepancy = 0.0;  // F_ML
  double chi_square = 0.0;
  double df = 0.0;
  double baseline_chi_square = 0.0;
  double baseline_df = 0.0;
  FitIndices indices;
  bool converged = false;
  int iterations = 0;
  double gradient_norm = 0.0;
  std::size_t n = 0;
  /// Items whose residual variance ended on the lower bound (Heywood cases).
  std::vector<std::string> bounded_residuals;
};

struct CfaOptions {
  double gradient_tolerance = tolerance::kCfaGradient;
  int max_iterations = tolerance::kCfaMaxIterations;
  double start_loading = 0.7;
  double start_residual = 0.3;
  double start_factor_correlation = 0.2;
};

/// Maximum-likelihood discrepancy
///   F(theta) = ln|Sigma| + tr(S Sigma^-1) - ln|S| - k
/// over free loadings, residual variances and (optionally) factor
/// correlations, with factor variances fixed to 1.
///
/// Parameter layout: [one loading per item][one residual per item]
/// [factor correlations, upper triangle row by row].
class MlDiscrepancy {
 public:
  MlDiscrepancy(Eigen::MatrixXd sample_cov, CfaSpec spec);

  Eigen::Index parameter_count() const { return n_params_; }
  const CfaSpec& spec() const { return spec_; }

  Eigen::VectorXd start_values(const CfaOptions& options = {}) const;
  Eigen::VectorXd lower_bounds() const;
  Eigen::VectorXd upper_bounds() const;

  /// +infinity when Sigma(theta) or Phi is not positive definite.
  double value(const Eigen::VectorXd& theta) const;
  double value_and_gradient(const Eigen::VectorXd& theta, Eigen::VectorXd* gradient) const;
  /// 0.5 tr(Sigma^-1 dSigma_a Sigma^-1 dSigma_b).
  Eigen::MatrixXd expected_information(const Eigen::VectorXd& theta) const;

  FactorModel unpack(const Eigen::VectorXd& theta) const;

 private:
  std::vector<Eigen::MatrixXd> sigma_derivatives(const FactorModel& model) const;

  Eigen::MatrixXd s_;
  CfaSpec spec_;
  double log_det_s_ = 0.0;
  Eigen::Index k_ = 0, q_ = 0, n_params_ = 0;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> phi_pairs_;
};

/// Fits the model by projected BFGS from fixed start values. Residual
/// variances are bounded below at tolerance::kResidualFloor; items that end
/// on the bound are listed in `bounded_residuals`. A run that hits the
/// iteration cap is returned with converged = false.
CFAFit cfa_fit(const Eigen::MatrixXd& cov, const CfaSpec& spec, std::size_t n, const CfaOptions& options = {});

/// Independence model Sigma = diag(S), solved in closed form.
CFAFit baseline_fit(const Eigen::MatrixXd& cov, std::size_t n);

/// chi^2, RMSEA, CFI, TLI and SRMR for a fit against its baseline. All
/// indices are undefined (nullopt) for a saturated model (df = 0).
FitIndices fit_indices(const CFAFit& fit, const Eigen::MatrixXd& cov, std::size_t n);

nlohmann::json to_json(const FitIndices& indices);
nlohmann::json to_json(const CFAFit& fit);
CFAFit cfa_fit_from_json(const nlohmann::json& j);

}  // namespace llmscale
