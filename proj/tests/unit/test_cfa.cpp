#include <cmath>
#include <random>

#include <doctest.h>

#include "llmscale/cfa.hpp"
#include "llmscale/error.hpp"
#include "llmscale/rating_store.hpp"

using namespace llmscale;

namespace {

CfaSpec spec_of(const std::vector<int>& item_factor, int q) {
  CfaSpec s;
  for (std::size_t i = 0; i < item_factor.size(); ++i) s.item_ids.push_back("i" + std::to_string(i + 1));
  for (int f = 0; f < q; ++f) s.factor_ids.push_back("f" + std::to_string(f + 1));
  s.item_factor = item_factor;
  return s;
}

Eigen::MatrixXd one_factor_sigma(const Eigen::VectorXd& l) {
  Eigen::MatrixXd s = l * l.transpose();
  s.diagonal().setOnes();
  return s;
}

Eigen::MatrixXd block_sigma(double phi) {
  Eigen::MatrixXd s = Eigen::MatrixXd::Constant(6, 6, 0.5 * phi);
  s.topLeftCorner(3, 3).setConstant(0.5);
  s.bottomRightCorner(3, 3).setConstant(0.5);
  s.diagonal().setOnes();
  return s;
}

}  // namespace

TEST_SUITE("cfa") {

TEST_CASE("population recovery of a one-factor model") {
  Eigen::VectorXd l(4);
  l << 0.8, 0.7, 0.6, 0.5;
  const auto fit = cfa_fit(one_factor_sigma(l), spec_of({0, 0, 0, 0}, 1), 500);
  CHECK(fit.converged);
  CHECK(fit.discrepancy < 1e-8);
  CHECK((fit.model.loadings.col(0) - l).cwiseAbs().maxCoeff() < 1e-3);
  CHECK((fit.model.residual_variances.array() - (1.0 - l.array().square())).abs().maxCoeff() < 1e-3);
  CHECK(fit.df == 2.0);
  REQUIRE(fit.indices.rmsea.has_value());
  CHECK(*fit.indices.rmsea == doctest::Approx(0.0));
  CHECK(*fit.indices.cfi == doctest::Approx(1.0));
  CHECK(*fit.indices.srmr < 1e-4);
}

TEST_CASE("identity input gives zero loadings") {
  const auto fit = cfa_fit(Eigen::MatrixXd::Identity(4, 4), spec_of({0, 0, 0, 0}, 1), 500);
  CHECK(fit.discrepancy < 1e-8);
  // F is quartic in lambda near zero, so the gradient test stops a little short.
  CHECK(fit.model.loadings.cwiseAbs().maxCoeff() < 1e-2);
  CHECK((fit.model.residual_variances.array() - 1.0).abs().maxCoeff() < 1e-3);
}

TEST_CASE("two-factor block model recovers the factor correlation") {
  const auto fit = cfa_fit(block_sigma(0.3), spec_of({0, 0, 0, 1, 1, 1}, 2), 500);
  CHECK(fit.converged);
  CHECK(fit.discrepancy < 1e-8);
  CHECK(std::abs(fit.model.factor_correlations(0, 1) - 0.3) < 1e-3);
}

TEST_CASE("analytic gradient matches central differences") {
  const auto spec = spec_of({0, 0, 0, 1, 1, 1}, 2);
  Eigen::MatrixXd s = block_sigma(0.3);
  s(0, 4) = s(4, 0) = 0.25;
  s(1, 2) = s(2, 1) = 0.42;
  const MlDiscrepancy f(s, spec);
  std::mt19937_64 gen(11);
  std::uniform_real_distribution<double> load(0.3, 0.9), resid(0.3, 1.0), phi(-0.3, 0.3);
  for (int point = 0; point < 10; ++point) {
    Eigen::VectorXd theta(f.parameter_count());
    for (int i = 0; i < 6; ++i) theta(i) = load(gen);
    for (int i = 6; i < 12; ++i) theta(i) = resid(gen);
    theta(12) = phi(gen);
    Eigen::VectorXd g;
    f.value_and_gradient(theta, &g);
    Eigen::VectorXd fd(theta.size());
    const double h = 1e-6;
    for (Eigen::Index a = 0; a < theta.size(); ++a) {
      Eigen::VectorXd up = theta, down = theta;
      up(a) += h;
      down(a) -= h;
      fd(a) = (f.value(up) - f.value(down)) / (2 * h);
    }
    const double rel = (g - fd).cwiseAbs().maxCoeff() / std::max(fd.cwiseAbs().maxCoeff(), 1e-8);
    CHECK(rel < 1e-5);
  }
}

TEST_CASE("three items on one factor are saturated") {
  Eigen::VectorXd l(3);
  l << 0.8, 0.7, 0.6;
  const auto fit = cfa_fit(one_factor_sigma(l), spec_of({0, 0, 0}, 1), 200);
  CHECK(fit.df == 0.0);
  CHECK_FALSE(fit.indices.rmsea.has_value());
  CHECK_FALSE(fit.indices.cfi.has_value());
  CHECK_FALSE(fit.indices.tli.has_value());
  CHECK_FALSE(fit.indices.srmr.has_value());
}

TEST_CASE("misspecified one-factor model on two blocks fits badly") {
  const auto fit = cfa_fit(block_sigma(0.0), spec_of({0, 0, 0, 0, 0, 0}, 1), 500);
  REQUIRE(fit.indices.rmsea.has_value());
  CHECK(*fit.indices.rmsea > 0.08);
  // RMSEA from its definition.
  const double chi = 499.0 * fit.discrepancy;
  CHECK(fit.chi_square == doctest::Approx(chi));
  CHECK(*fit.indices.rmsea == doctest::Approx(std::sqrt(std::max(chi - 9.0, 0.0) / (9.0 * 499.0))));
}

TEST_CASE("baseline against itself has CFI 0") {
  const auto s = block_sigma(0.3);
  const auto base = baseline_fit(s, 500);
  const auto idx = fit_indices(base, s, 500);
  REQUIRE(idx.cfi.has_value());
  CHECK(*idx.cfi == doctest::Approx(0.0));
  CHECK(base.df == 15.0);
}

TEST_CASE("weak factor at n = 30 ends on the residual bound without failing") {
  // Seed frozen after a search for a sample with a Heywood case.
  std::mt19937_64 gen(1);
  std::normal_distribution<double> z;
  Eigen::MatrixXd d(30, 3);
  const double lambdas[3] = {0.9, 0.2, 0.2};
  for (int r = 0; r < 30; ++r) {
    const double theta = z(gen);
    for (int c = 0; c < 3; ++c) d(r, c) = lambdas[c] * theta + std::sqrt(1 - lambdas[c] * lambdas[c]) * z(gen);
  }
  CfaSpec spec = spec_of({0, 0, 0}, 1);
  CFAFit fit;
  REQUIRE_NOTHROW(fit = cfa_fit(sample_covariance(d), spec, 30));
  CHECK(fit.converged);
  CHECK(fit.bounded_residuals == std::vector<std::string>{"i1"});
  CHECK(fit.model.residual_variances(0) == doctest::Approx(tolerance::kResidualFloor));
}

TEST_CASE("spec errors") {
  CHECK_THROWS_AS(cfa_fit(Eigen::MatrixXd::Identity(2, 2), spec_of({0, 0}, 1), 100), DataError);
  CHECK_THROWS_AS(cfa_fit(Eigen::MatrixXd::Zero(3, 3), spec_of({0, 0, 0}, 1), 100), DataError);
}

TEST_CASE("fit json round trip") {
  Eigen::VectorXd l(4);
  l << 0.8, 0.7, 0.6, 0.5;
  const auto fit = cfa_fit(one_factor_sigma(l), spec_of({0, 0, 0, 0}, 1), 500);
  const auto j = to_json(fit);
  CHECK(to_json(cfa_fit_from_json(j)) == j);
}

}
