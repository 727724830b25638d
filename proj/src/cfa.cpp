#include "llmscale/cfa.hpp"

#include <cmath>
#include <limits>
#include <map>

#include "llmscale/error.hpp"
#include "llmscale/optimizer.hpp"

namespace llmscale {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

std::optional<double> optional_from(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

}  // namespace

CfaSpec CfaSpec::from_instrument(const Instrument& instrument, const std::vector<std::string>& item_ids,
                                 bool correlated_factors) {
  CfaSpec spec;
  spec.correlated_factors = correlated_factors;
  std::map<std::string, int> factor_of;
  for (const auto& c : instrument.constructs) {
    bool used = false;
    for (const auto& id : item_ids) {
      const auto* item = instrument.find_item(id);
      if (item && item->construct_id == c.id) used = true;
    }
    if (!used) continue;
    factor_of.emplace(c.id, static_cast<int>(spec.factor_ids.size()));
    spec.factor_ids.push_back(c.id);
  }
  for (const auto& id : item_ids) {
    const auto* item = instrument.find_item(id);
    if (!item) throw ValidationError("CFA spec: unknown item '" + id + "'");
    spec.item_ids.push_back(id);
    spec.item_factor.push_back(factor_of.at(item->construct_id));
  }
  return spec;
}

MlDiscrepancy::MlDiscrepancy(Eigen::MatrixXd sample_cov, CfaSpec spec) : s_(std::move(sample_cov)), spec_(std::move(spec)) {
  k_ = s_.rows();
  q_ = static_cast<Eigen::Index>(spec_.factor_ids.size());
  if (s_.cols() != k_ || static_cast<Eigen::Index>(spec_.item_ids.size()) != k_ ||
      static_cast<Eigen::Index>(spec_.item_factor.size()) != k_) {
    throw DataError("CFA: covariance and model spec dimensions disagree");
  }
  std::vector<int> per_factor(static_cast<std::size_t>(q_), 0);
  for (int f : spec_.item_factor) {
    if (f < 0 || f >= q_) throw DataError("CFA: item mapped to unknown factor");
    ++per_factor[static_cast<std::size_t>(f)];
  }
  const bool correlated = spec_.correlated_factors && q_ >= 2;
  for (Eigen::Index f = 0; f < q_; ++f) {
    const int n = per_factor[static_cast<std::size_t>(f)];
    if (n >= 3 || (n == 2 && correlated)) continue;
    throw DataError("CFA: factor '" + spec_.factor_ids[static_cast<std::size_t>(f)] + "' has " + std::to_string(n) +
                    " items; need >= 3 (or >= 2 with correlated factors)");
  }
  Eigen::LLT<Eigen::MatrixXd> llt(s_);
  if (llt.info() != Eigen::Success) throw DataError("CFA: sample covariance is singular or not positive definite");
  log_det_s_ = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  if (correlated) {
    for (Eigen::Index f = 0; f < q_; ++f) {
      for (Eigen::Index g = f + 1; g < q_; ++g) phi_pairs_.emplace_back(f, g);
    }
  }
  n_params_ = 2 * k_ + static_cast<Eigen::Index>(phi_pairs_.size());
}

Eigen::VectorXd MlDiscrepancy::start_values(const CfaOptions& options) const {
  Eigen::VectorXd theta(n_params_);
  theta.head(k_).setConstant(options.start_loading);
  theta.segment(k_, k_).setConstant(options.start_residual);
  theta.tail(static_cast<Eigen::Index>(phi_pairs_.size())).setConstant(options.start_factor_correlation);
  return theta;
}

Eigen::VectorXd MlDiscrepancy::lower_bounds() const {
  Eigen::VectorXd lo(n_params_);
  lo.head(k_).setConstant(-kInf);
  lo.segment(k_, k_).setConstant(tolerance::kResidualFloor);
  lo.tail(static_cast<Eigen::Index>(phi_pairs_.size())).setConstant(-1.0 + 1e-8);
  return lo;
}

Eigen::VectorXd MlDiscrepancy::upper_bounds() const {
  Eigen::VectorXd hi(n_params_);
  hi.head(2 * k_).setConstant(kInf);
  hi.tail(static_cast<Eigen::Index>(phi_pairs_.size())).setConstant(1.0 - 1e-8);
  return hi;
}

FactorModel MlDiscrepancy::unpack(const Eigen::VectorXd& theta) const {
  FactorModel m;
  m.item_ids = spec_.item_ids;
  m.factor_ids = spec_.factor_ids;
  m.loadings = Eigen::MatrixXd::Zero(k_, q_);
  for (Eigen::Index i = 0; i < k_; ++i) m.loadings(i, spec_.item_factor[static_cast<std::size_t>(i)]) = theta(i);
  m.residual_variances = theta.segment(k_, k_);
  m.factor_correlations = Eigen::MatrixXd::Identity(q_, q_);
  for (std::size_t p = 0; p < phi_pairs_.size(); ++p) {
    const auto [f, g] = phi_pairs_[p];
    m.factor_correlations(f, g) = m.factor_correlations(g, f) = theta(2 * k_ + static_cast<Eigen::Index>(p));
  }
  return m;
}

double MlDiscrepancy::value(const Eigen::VectorXd& theta) const { return value_and_gradient(theta, nullptr); }

double MlDiscrepancy::value_and_gradient(const Eigen::VectorXd& theta, Eigen::VectorXd* gradient) const {
  const FactorModel m = unpack(theta);
  if (q_ > 1) {
    Eigen::LLT<Eigen::MatrixXd> phi_llt(m.factor_correlations);
    if (phi_llt.info() != Eigen::Success) return kInf;
  }
  const Eigen::MatrixXd sigma = m.implied_covariance();
  Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success) return kInf;
  const auto diag = llt.matrixLLT().diagonal();
  if ((diag.array() <= 0.0).any()) return kInf;
  const double log_det = 2.0 * diag.array().log().sum();
  const Eigen::MatrixXd sigma_inv = llt.solve(Eigen::MatrixXd::Identity(k_, k_));
  const double trace = s_.cwiseProduct(sigma_inv).sum();
  const double f = log_det + trace - log_det_s_ - static_cast<double>(k_);

  if (gradient) {
    const Eigen::MatrixXd weight = sigma_inv * (sigma - s_) * sigma_inv;
    const Eigen::MatrixXd lam_grad = 2.0 * weight * m.loadings * m.factor_correlations;
    gradient->resize(n_params_);
    for (Eigen::Index i = 0; i < k_; ++i) (*gradient)(i) = lam_grad(i, spec_.item_factor[static_cast<std::size_t>(i)]);
    gradient->segment(k_, k_) = weight.diagonal();
    if (!phi_pairs_.empty()) {
      const Eigen::MatrixXd phi_grad = 2.0 * m.loadings.transpose() * weight * m.loadings;
      for (std::size_t p = 0; p < phi_pairs_.size(); ++p) {
        (*gradient)(2 * k_ + static_cast<Eigen::Index>(p)) = phi_grad(phi_pairs_[p].first, phi_pairs_[p].second);
      }
    }
  }
  return f;
}

std::vector<Eigen::MatrixXd> MlDiscrepancy::sigma_derivatives(const FactorModel& m) const {
  std::vector<Eigen::MatrixXd> out;
  out.reserve(static_cast<std::size_t>(n_params_));
  const Eigen::MatrixXd lam_phi = m.loadings * m.factor_correlations;  // k x q
  for (Eigen::Index i = 0; i < k_; ++i) {
    const auto f = spec_.item_factor[static_cast<std::size_t>(i)];
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(k_, k_);
    d.row(i) += lam_phi.col(f).transpose();
    d.col(i) += lam_phi.col(f);
    out.push_back(std::move(d));
  }
  for (Eigen::Index i = 0; i < k_; ++i) {
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(k_, k_);
    d(i, i) = 1.0;
    out.push_back(std::move(d));
  }
  for (const auto& [f, g] : phi_pairs_) {
    out.push_back(m.loadings.col(f) * m.loadings.col(g).transpose() + m.loadings.col(g) * m.loadings.col(f).transpose());
  }
  return out;
}

Eigen::MatrixXd MlDiscrepancy::expected_information(const Eigen::VectorXd& theta) const {
  const FactorModel m = unpack(theta);
  const Eigen::MatrixXd sigma_inv = m.implied_covariance().llt().solve(Eigen::MatrixXd::Identity(k_, k_));
  std::vector<Eigen::MatrixXd> w;
  for (const auto& d : sigma_derivatives(m)) w.push_back(sigma_inv * d);
  Eigen::MatrixXd info(n_params_, n_params_);
  for (Eigen::Index a = 0; a < n_params_; ++a) {
    for (Eigen::Index b = a; b < n_params_; ++b) {
      info(a, b) = info(b, a) = 0.5 * w[static_cast<std::size_t>(a)].cwiseProduct(w[static_cast<std::size_t>(b)].transpose()).sum();
    }
  }
  return info;
}

CFAFit cfa_fit(const Eigen::MatrixXd& cov, const CfaSpec& spec, std::size_t n, const CfaOptions& options) {
  const MlDiscrepancy objective(cov, spec);
  const Eigen::VectorXd start = objective.start_values(options);

  // Seed BFGS with the inverse expected information (the Hessian of F_ML is
  // twice the information at the optimum), regularized for near-singular
  // directions.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(2.0 * objective.expected_information(start));
  const Eigen::VectorXd inv_vals = eig.eigenvalues().cwiseMax(1e-6).cwiseInverse();
  const Eigen::MatrixXd h0 = eig.eigenvectors() * inv_vals.asDiagonal() * eig.eigenvectors().transpose();

  const auto result = minimize_bounded_bfgs(
      [&](const Eigen::VectorXd& x, Eigen::VectorXd* g) { return objective.value_and_gradient(x, g); }, start,
      objective.lower_bounds(), objective.upper_bounds(),
      {options.gradient_tolerance, options.max_iterations}, &h0);

  CFAFit fit;
  fit.model = objective.unpack(result.x);
  // Unit factor variances leave each factor's sign free; report the
  // orientation with a positive loading sum.
  for (Eigen::Index f = 0; f < fit.model.factor_count(); ++f) {
    if (fit.model.loadings.col(f).sum() < 0.0) {
      fit.model.loadings.col(f) *= -1.0;
      fit.model.factor_correlations.row(f) *= -1.0;
      fit.model.factor_correlations.col(f) *= -1.0;
    }
  }
  fit.discrepancy = std::max(0.0, result.value);
  fit.converged = result.converged;
  fit.iterations = result.iterations;
  fit.gradient_norm = result.projected_gradient_norm;
  fit.n = n;
  const auto k = static_cast<double>(cov.rows());
  fit.df = k * (k + 1.0) / 2.0 - static_cast<double>(objective.parameter_count());
  fit.chi_square = static_cast<double>(n - 1) * fit.discrepancy;
  for (const auto idx : result.at_lower_bound) {
    if (idx >= cov.rows() && idx < 2 * cov.rows()) fit.bounded_residuals.push_back(spec.item_ids[static_cast<std::size_t>(idx - cov.rows())]);
  }
  fit.indices = fit_indices(fit, cov, n);
  const auto base = baseline_fit(cov, n);
  fit.baseline_chi_square = base.chi_square;
  fit.baseline_df = base.df;
  return fit;
}

CFAFit baseline_fit(const Eigen::MatrixXd& cov, std::size_t n) {
  const auto k = cov.rows();
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) throw DataError("baseline model: sample covariance is not positive definite");
  const double log_det_s = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  CFAFit fit;
  fit.model.item_ids.resize(static_cast<std::size_t>(k));
  for (Eigen::Index i = 0; i < k; ++i) fit.model.item_ids[static_cast<std::size_t>(i)] = "item" + std::to_string(i + 1);
  fit.model.loadings = Eigen::MatrixXd::Zero(k, 0);
  fit.model.residual_variances = cov.diagonal();
  fit.model.factor_correlations = Eigen::MatrixXd::Identity(0, 0);
  fit.discrepancy = std::max(0.0, cov.diagonal().array().log().sum() - log_det_s);
  fit.df = static_cast<double>(k) * static_cast<double>(k - 1) / 2.0;
  fit.chi_square = static_cast<double>(n - 1) * fit.discrepancy;
  fit.converged = true;
  fit.n = n;
  fit.baseline_chi_square = fit.chi_square;
  fit.baseline_df = fit.df;
  return fit;
}

FitIndices fit_indices(const CFAFit& fit, const Eigen::MatrixXd& cov, std::size_t n) {
  FitIndices out;
  if (fit.df <= 0.0) return out;
  const double chi = static_cast<double>(n - 1) * fit.discrepancy;
  const double df = fit.df;
  const auto k = cov.rows();

  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  const double log_det_s = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  const double chi_b = static_cast<double>(n - 1) * std::max(0.0, cov.diagonal().array().log().sum() - log_det_s);
  const double df_b = static_cast<double>(k) * static_cast<double>(k - 1) / 2.0;

  out.rmsea = std::sqrt(std::max(chi - df, 0.0) / (df * static_cast<double>(n - 1)));
  const double denom = std::max({chi_b - df_b, chi - df, 0.0});
  out.cfi = denom > 0.0 ? 1.0 - std::max(chi - df, 0.0) / denom : 1.0;
  if (df_b > 0.0 && std::abs(chi_b / df_b - 1.0) > 0.0) {
    out.tli = ((chi_b / df_b) - (chi / df)) / ((chi_b / df_b) - 1.0);
  }

  const Eigen::MatrixXd sigma = fit.model.implied_covariance();
  double sum = 0.0;
  for (Eigen::Index i = 0; i < k; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      const double s_std = cov(i, j) / std::sqrt(cov(i, i) * cov(j, j));
      const double m_std = sigma(i, j) / std::sqrt(sigma(i, i) * sigma(j, j));
      sum += (s_std - m_std) * (s_std - m_std);
    }
  }
  out.srmr = std::sqrt(sum / (static_cast<double>(k) * static_cast<double>(k + 1) / 2.0));
  return out;
}

nlohmann::json to_json(const FitIndices& indices) {
  return {{"rmsea", optional_json(indices.rmsea)},
          {"cfi", optional_json(indices.cfi)},
          {"tli", optional_json(indices.tli)},
          {"srmr", optional_json(indices.srmr)}};
}

nlohmann::json to_json(const CFAFit& fit) {
  return {{"model", to_json(fit.model)},
          {"standardized_model", to_json(fit.model.standardized())},
          {"discrepancy", fit.discrepancy},
          {"chi_square", fit.chi_square},
          {"df", fit.df},
          {"baseline_chi_square", fit.baseline_chi_square},
          {"baseline_df", fit.baseline_df},
          {"fit_indices", to_json(fit.indices)},
          {"converged", fit.converged},
          {"iterations", fit.iterations},
          {"gradient_norm", fit.gradient_norm},
          {"n", fit.n},
          {"bounded_residuals", fit.bounded_residuals}};
}

CFAFit cfa_fit_from_json(const nlohmann::json& j) {
  CFAFit fit;
  fit.model = factor_model_from_json(j.at("model"));
  fit.discrepancy = j.at("discrepancy").get<double>();
  fit.chi_square = j.at("chi_square").get<double>();
  fit.df = j.at("df").get<double>();
  fit.baseline_chi_square = j.at("baseline_chi_square").get<double>();
  fit.baseline_df = j.at("baseline_df").get<double>();
  const auto& fi = j.at("fit_indices");
  fit.indices = {optional_from(fi.at("rmsea")), optional_from(fi.at("cfi")), optional_from(fi.at("tli")),
                 optional_from(fi.at("srmr"))};
  fit.converged = j.at("converged").get<bool>();
  fit.iterations = j.at("iterations").get<int>();
  fit.gradient_norm = j.at("gradient_norm").get<double>();
  fit.n = j.at("n").get<std::size_t>();
  fit.bounded_residuals = j.at("bounded_residuals").get<std::vector<std::string>>();
  return fit;
}

}  // namespace llmscale
