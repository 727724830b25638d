#include "llmscale/factor_model.hpp"

#include <cmath>

#include "llmscale/error.hpp"

namespace llmscale {

Eigen::Index FactorModel::factor_index(std::string_view factor_id) const {
  for (std::size_t f = 0; f < factor_ids.size(); ++f) {
    if (factor_ids[f] == factor_id) return static_cast<Eigen::Index>(f);
  }
  return -1;
}

Eigen::Index FactorModel::item_index(std::string_view item_id) const {
  for (std::size_t i = 0; i < item_ids.size(); ++i) {
    if (item_ids[i] == item_id) return static_cast<Eigen::Index>(i);
  }
  return -1;
}

Eigen::MatrixXd FactorModel::implied_covariance() const {
  Eigen::MatrixXd sigma = loadings * factor_correlations * loadings.transpose();
  sigma.diagonal() += residual_variances;
  return sigma;
}

FactorModel FactorModel::standardized() const {
  FactorModel out = *this;
  const Eigen::VectorXd sd = implied_covariance().diagonal().cwiseSqrt();
  for (Eigen::Index i = 0; i < item_count(); ++i) {
    out.loadings.row(i) /= sd(i);
    out.residual_variances(i) /= sd(i) * sd(i);
  }
  return out;
}

std::vector<std::string> FactorModel::violations() const {
  std::vector<std::string> out;
  const auto k = loadings.rows();
  const auto q = loadings.cols();
  if (static_cast<Eigen::Index>(item_ids.size()) != k) out.push_back("item id count does not match loading rows");
  if (static_cast<Eigen::Index>(factor_ids.size()) != q) out.push_back("factor id count does not match loading columns");
  if (residual_variances.size() != k) out.push_back("residual variance count does not match items");
  if (factor_correlations.rows() != q || factor_correlations.cols() != q) {
    out.push_back("factor correlation matrix is not q x q");
  } else {
    for (Eigen::Index f = 0; f < q; ++f) {
      if (std::abs(factor_correlations(f, f) - 1.0) > 1e-10) out.push_back("factor correlation diagonal is not 1");
    }
  }
  for (Eigen::Index i = 0; i < residual_variances.size(); ++i) {
    if (residual_variances(i) < tolerance::kResidualFloor * (1 - 1e-12)) {
      out.push_back("residual variance below floor for item " + (i < static_cast<Eigen::Index>(item_ids.size()) ? item_ids[i] : std::to_string(i)));
    }
  }
  return out;
}

void canonicalize_signs(FactorModel& model) {
  for (Eigen::Index f = 0; f < model.loadings.cols(); ++f) {
    Eigen::Index argmax = 0;
    model.loadings.col(f).cwiseAbs().maxCoeff(&argmax);
    if (model.loadings(argmax, f) < 0.0) {
      model.loadings.col(f) *= -1.0;
      model.factor_correlations.row(f) *= -1.0;
      model.factor_correlations.col(f) *= -1.0;
    }
  }
}

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows ? static_cast<Eigen::Index>(j.at(0).size()) : 0;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (static_cast<Eigen::Index>(j.at(r).size()) != cols) throw ArtifactError("ragged matrix in JSON");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = j.at(r).at(c).get<double>();
  }
  return m;
}

nlohmann::json to_json(const FactorModel& model) {
  std::vector<double> psi(model.residual_variances.data(), model.residual_variances.data() + model.residual_variances.size());
  return {{"item_ids", model.item_ids},
          {"factor_ids", model.factor_ids},
          {"loadings", matrix_to_json(model.loadings)},
          {"residual_variances", psi},
          {"factor_correlations", matrix_to_json(model.factor_correlations)}};
}

FactorModel factor_model_from_json(const nlohmann::json& j) {
  FactorModel m;
  m.item_ids = j.at("item_ids").get<std::vector<std::string>>();
  m.factor_ids = j.at("factor_ids").get<std::vector<std::string>>();
  m.loadings = matrix_from_json(j.at("loadings"));
  if (m.loadings.rows() == 0) m.loadings.resize(static_cast<Eigen::Index>(m.item_ids.size()), static_cast<Eigen::Index>(m.factor_ids.size()));
  const auto psi = j.at("residual_variances").get<std::vector<double>>();
  m.residual_variances = Eigen::Map<const Eigen::VectorXd>(psi.data(), static_cast<Eigen::Index>(psi.size()));
  m.factor_correlations = matrix_from_json(j.at("factor_correlations"));
  return m;
}

}  // namespace llmscale
