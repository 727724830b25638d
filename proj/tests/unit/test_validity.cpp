#include <cmath>
#include <limits>
#include <random>

#include <doctest.h>

#include "llmscale/error.hpp"
#include "llmscale/validity.hpp"
#include "unit/support.hpp"

using namespace llmscale;

namespace {

constexpr double NA = std::numeric_limits<double>::quiet_NaN();

RatingMatrix keyed(const Eigen::MatrixXd& v, int m = 4) {
  std::vector<std::string> texts, items;
  for (Eigen::Index r = 0; r < v.rows(); ++r) texts.push_back("t" + std::to_string(1000 + r));
  for (Eigen::Index c = 0; c < v.cols(); ++c) items.push_back("i" + std::to_string(c + 1));
  return RatingMatrix(texts, items, v, m);
}

CriterionSeries series(const std::string& name, const ScoreMap& values) {
  CriterionSeries c;
  c.name = name;
  c.values = values;
  return c;
}

}  // namespace

TEST_SUITE("validity") {

TEST_CASE("unit-weighted mean") {
  Eigen::MatrixXd v(3, 3);
  v << 4, 4, 4, 1, NA, 3, NA, NA, NA;
  const auto s = aggregate_scores(keyed(v), testing::small_instrument(3), "f");
  CHECK(s.at("t1000") == 4.0);
  CHECK(s.at("t1001") == 2.0);
  CHECK(s.count("t1002") == 0);
  CHECK_THROWS_AS(aggregate_scores(keyed(v), testing::small_instrument(3), "g"), DataError);
}

TEST_CASE("unit-weighted scores stay on the scale") {
  std::mt19937_64 gen(3);
  std::uniform_int_distribution<int> code(1, 4);
  Eigen::MatrixXd v(50, 4);
  for (Eigen::Index r = 0; r < 50; ++r) {
    for (Eigen::Index c = 0; c < 4; ++c) v(r, c) = code(gen);
  }
  for (const auto& [id, s] : aggregate_scores(keyed(v), testing::small_instrument(4), "f")) {
    CHECK(s >= 1.0);
    CHECK(s <= 4.0);
  }
}

TEST_CASE("regression factor scores track the population determinacy") {
  // Determinacy of Thurstone scores is sqrt(l' Sigma^-1 l) for one factor:
  // sum(l^2/psi) / (1 + sum(l^2/psi)) under the square root.
  const std::vector<double> l{0.8, 0.7, 0.6, 0.5};
  double ratio = 0.0;
  for (double x : l) ratio += x * x / (1 - x * x);
  const double determinacy = std::sqrt(ratio / (1 + ratio));
  CHECK(determinacy == doctest::Approx(0.88554).epsilon(1e-4));

  FactorModel model;
  model.item_ids = {"i1", "i2", "i3", "i4"};
  model.factor_ids = {"f"};
  model.loadings = Eigen::Map<const Eigen::VectorXd>(l.data(), 4);
  model.residual_variances = (1.0 - model.loadings.col(0).array().square()).matrix();
  model.factor_correlations = Eigen::MatrixXd::Identity(1, 1);

  std::mt19937_64 gen(2000);
  std::normal_distribution<double> z;
  const int n = 2000;
  Eigen::MatrixXd v(n, 4);
  ScoreMap theta;
  for (int r = 0; r < n; ++r) {
    const double t = z(gen);
    theta["t" + std::to_string(1000 + r)] = t;
    for (int c = 0; c < 4; ++c) v(r, c) = 50.0 + 5.0 * (l[c] * t + std::sqrt(1 - l[c] * l[c]) * z(gen));
  }
  const auto scores = factor_scores(keyed(v, 100), model, "f");
  REQUIRE(scores.size() == static_cast<std::size_t>(n));
  const auto rep = validity_correlations("f", scores, {series("theta", theta)});
  REQUIRE(rep.entries.size() == 1);
  CHECK(rep.entries[0].r_raw == doctest::Approx(determinacy).epsilon(0.02));

  // Unit-weighted mean is close behind under these loadings.
  const auto mean_scores = aggregate_scores(keyed(v, 100), testing::small_instrument(4), "f");
  const double r_mean = validity_correlations("f", mean_scores, {series("theta", theta)}).entries[0].r_raw;
  CHECK(r_mean <= rep.entries[0].r_raw + 0.01);
}

TEST_CASE("factor scores with a missing item use the present items") {
  FactorModel model;
  model.item_ids = {"i1", "i2", "i3"};
  model.factor_ids = {"f"};
  model.loadings = Eigen::Vector3d(0.7, 0.7, 0.7);
  model.residual_variances = Eigen::Vector3d::Constant(0.51);
  model.factor_correlations = Eigen::MatrixXd::Identity(1, 1);
  Eigen::MatrixXd v(3, 3);
  v << 3, 3, NA, 1, 1, 1, 2, 2, 2;
  const auto s = factor_scores(keyed(v), model, "f");
  CHECK(s.size() == 3);
  CHECK(s.at("t1000") > s.at("t1002"));
  CHECK(s.at("t1001") < s.at("t1002"));
}

TEST_CASE("identical and negated criteria") {
  const ScoreMap scores{{"a", 1.0}, {"b", 2.0}, {"c", 4.0}, {"d", 3.5}};
  ScoreMap neg;
  for (const auto& [k, v] : scores) neg[k] = -v;
  const auto rep = validity_correlations("f", scores, {series("same", scores), series("neg", neg)}, std::nullopt,
                                         {{"neg", Sign::negative}});
  CHECK(rep.find("f", "same")->r_raw == doctest::Approx(1.0));
  CHECK_FALSE(rep.find("f", "same")->sign_consistent.has_value());
  CHECK(rep.find("f", "neg")->r_raw == doctest::Approx(-1.0));
  CHECK(rep.find("f", "neg")->sign_consistent == std::optional<bool>(true));
}

TEST_CASE("a criterion's own expectation wins over the construct") {
  const ScoreMap scores{{"a", 1.0}, {"b", 2.0}, {"c", 4.0}};
  auto c = series("c1", scores);
  c.expected["f"] = Sign::negative;
  const auto rep = validity_correlations("f", scores, {c}, std::nullopt, {{"c1", Sign::positive}});
  CHECK(rep.entries[0].expected_sign == std::optional<Sign>(Sign::negative));
  CHECK(rep.entries[0].sign_consistent == std::optional<bool>(false));
}

TEST_CASE("Pearson is invariant under positive affine maps") {
  const ScoreMap x{{"a", 1.0}, {"b", 2.5}, {"c", 2.0}, {"d", 4.0}};
  const ScoreMap y{{"a", 0.3}, {"b", 0.1}, {"c", 0.9}, {"d", 1.2}};
  ScoreMap x2;
  for (const auto& [k, v] : x) x2[k] = 3.0 * v - 7.0;
  const double r1 = validity_correlations("f", x, {series("y", y)}).entries[0].r_raw;
  const double r2 = validity_correlations("f", x2, {series("y", y)}).entries[0].r_raw;
  CHECK(r1 == doctest::Approx(r2).epsilon(1e-12));
}

TEST_CASE("short overlap and constant series are skipped with a warning") {
  const ScoreMap scores{{"a", 1.0}, {"b", 2.0}, {"c", 3.0}};
  const auto rep = validity_correlations("f", scores,
                                         {series("short", {{"a", 1.0}, {"b", 2.0}, {"z", 3.0}}),
                                          series("flat", {{"a", 1.0}, {"b", 1.0}, {"c", 1.0}})});
  CHECK(rep.entries.empty());
  CHECK(rep.warnings.size() == 2);
}

TEST_CASE("disattenuation") {
  CHECK(disattenuate(0.3, 0.8, 0.9).value == doctest::Approx(0.3 / std::sqrt(0.72)).epsilon(1e-12));
  CHECK(disattenuate(0.3, 0.8, 0.9).value == doctest::Approx(0.35355).epsilon(1e-5));
  CHECK(disattenuate(0.42, 1.0, 1.0).value == 0.42);
  CHECK(disattenuate(0.0, 0.3, 0.6).value == 0.0);
  const auto big = disattenuate(0.8, 0.5, 0.6);
  CHECK(big.out_of_range);
  CHECK(big.value > 1.0);
  CHECK_THROWS(disattenuate(0.3, 0.0, 0.9));
  CHECK_THROWS(disattenuate(0.3, 0.8, 1.2));
  for (double r : {-0.9, -0.2, 0.1, 0.6}) CHECK(std::abs(disattenuate(r, 0.7, 0.8).value) >= std::abs(r));
}

TEST_CASE("disattenuated only when both reliabilities exist") {
  const ScoreMap scores{{"a", 1.0}, {"b", 2.0}, {"c", 4.0}, {"d", 3.0}};
  auto c = series("c", {{"a", 2.0}, {"b", 1.0}, {"c", 4.0}, {"d", 3.5}});
  CHECK_FALSE(validity_correlations("f", scores, {c}, 0.8).entries[0].r_disattenuated.has_value());
  c.reliability = 0.9;
  CHECK_FALSE(validity_correlations("f", scores, {c}).entries[0].r_disattenuated.has_value());
  const auto e = validity_correlations("f", scores, {c}, 0.8).entries[0];
  REQUIRE(e.r_disattenuated.has_value());
  CHECK(*e.r_disattenuated == doctest::Approx(e.r_raw / std::sqrt(0.72)));
}

TEST_CASE("criteria csv and sidecar") {
  auto crit = parse_criteria_csv("text_id,likes,source\na,3,1\nb,NA,0\nc,5,\n");
  REQUIRE(crit.size() == 2);
  CHECK(crit[0].values.size() == 2);
  CHECK(crit[1].values.size() == 2);
  apply_criteria_sidecar(crit, "criteria:\n  - name: likes\n    reliability: 0.7\n    expected: {f: \"-\"}\n");
  CHECK(crit[0].reliability == std::optional<double>(0.7));
  CHECK(crit[0].expected.at("f") == Sign::negative);
  CHECK_THROWS(apply_criteria_sidecar(crit, "criteria:\n  - name: nope\n    reliability: 0.7\n"));
  CHECK_THROWS(parse_criteria_csv("id,likes\na,1\n"));
}

TEST_CASE("report json round trip") {
  const ScoreMap scores{{"a", 1.0}, {"b", 2.0}, {"c", 4.0}};
  auto c = series("c", {{"a", 2.0}, {"b", 1.0}, {"c", 4.0}});
  c.reliability = 0.9;
  const auto rep = validity_correlations("f", scores, {c}, 0.8, {{"c", Sign::positive}});
  const auto j = to_json(rep);
  CHECK(to_json(validity_report_from_json(j)) == j);
}

}
