#include "llmscale/efa.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "llmscale/error.hpp"
#include "llmscale/optimizer.hpp"

namespace llmscale {

std::string to_string(Extraction e) { return e == Extraction::ml ? "ml" : "principal_axis"; }

std::string to_string(Rotation r) {
  switch (r) {
    case Rotation::none: return "none";
    case Rotation::varimax: return "varimax";
    case Rotation::oblimin: return "oblimin";
  }
  return "none";
}

Extraction parse_extraction(const std::string& text) {
  if (text == "principal_axis" || text == "paf") return Extraction::principal_axis;
  if (text == "ml") return Extraction::ml;
  throw ValidationError("unknown extraction method '" + text + "'");
}

Rotation parse_rotation(const std::string& text) {
  if (text == "none") return Rotation::none;
  if (text == "varimax") return Rotation::varimax;
  if (text == "oblimin") return Rotation::oblimin;
  throw ValidationError("unknown rotation '" + text + "'");
}

namespace {

struct TopEigen {
  Eigen::VectorXd values;   // descending
  Eigen::MatrixXd vectors;  // matching columns
};

TopEigen top_eigen(const Eigen::MatrixXd& m, int q) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
  const auto k = m.rows();
  TopEigen out{Eigen::VectorXd(q), Eigen::MatrixXd(k, q)};
  // Eigen returns ascending order.
  for (int j = 0; j < q; ++j) {
    out.values(j) = eig.eigenvalues()(k - 1 - j);
    out.vectors.col(j) = eig.eigenvectors().col(k - 1 - j);
  }
  return out;
}

Eigen::VectorXd squared_multiple_correlations(const Eigen::MatrixXd& corr) {
  Eigen::LDLT<Eigen::MatrixXd> ldlt(corr);
  const auto k = corr.rows();
  Eigen::VectorXd smc(k);
  if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
    const Eigen::MatrixXd inv = ldlt.solve(Eigen::MatrixXd::Identity(k, k));
    if (inv.allFinite()) {
      for (Eigen::Index i = 0; i < k; ++i) smc(i) = std::clamp(1.0 - 1.0 / inv(i, i), 0.0, 1.0);
      return smc;
    }
  }
  // Singular input: fall back to the largest absolute correlation per row.
  for (Eigen::Index i = 0; i < k; ++i) {
    double best = 0.0;
    for (Eigen::Index j = 0; j < k; ++j) {
      if (i != j) best = std::max(best, std::abs(corr(i, j)));
    }
    smc(i) = best;
  }
  return smc;
}

Eigen::MatrixXd principal_axis(const Eigen::MatrixXd& corr, int q, const EfaOptions& options, int& iterations) {
  Eigen::VectorXd h = squared_multiple_correlations(corr);
  Eigen::MatrixXd loadings;
  for (iterations = 1; iterations <= options.max_iterations; ++iterations) {
    Eigen::MatrixXd reduced = corr;
    reduced.diagonal() = h;
    const auto top = top_eigen(reduced, q);
    loadings = top.vectors * top.values.cwiseMax(0.0).cwiseSqrt().asDiagonal();
    const Eigen::VectorXd next = loadings.rowwise().squaredNorm();
    const double change = (next - h).cwiseAbs().maxCoeff();
    h = next;
    if (change < options.communality_tolerance) return loadings;
  }
  throw DataError("principal axis communality iteration did not converge in " +
                  std::to_string(options.max_iterations) + " iterations");
}

Eigen::MatrixXd maximum_likelihood(const Eigen::MatrixXd& corr, int q, const EfaOptions& options, int& iterations) {
  const auto k = corr.rows();
  Eigen::LLT<Eigen::MatrixXd> llt(corr);
  if (llt.info() != Eigen::Success) throw DataError("ML extraction needs a positive definite correlation matrix");
  const Eigen::MatrixXd inv = llt.solve(Eigen::MatrixXd::Identity(k, k));
  Eigen::VectorXd start(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    start(i) = std::clamp((1.0 - 0.5 * q / static_cast<double>(k)) / inv(i, i), tolerance::kResidualFloor, 1.0);
  }

  auto loadings_for = [&](const Eigen::VectorXd& psi) {
    const Eigen::VectorXd sc = psi.cwiseSqrt().cwiseInverse();
    const Eigen::MatrixXd scaled = sc.asDiagonal() * corr * sc.asDiagonal();
    const auto top = top_eigen(scaled, q);
    const Eigen::VectorXd w = (top.values.array() - 1.0).max(0.0).sqrt();
    return Eigen::MatrixXd(psi.cwiseSqrt().asDiagonal() * top.vectors * w.asDiagonal());
  };

  // Discrepancy profiled over the loadings: with S* = Psi^-1/2 R Psi^-1/2
  // and e_j its trailing k - q eigenvalues, F = sum(e_j - ln e_j) + q - k.
  const Objective objective = [&](const Eigen::VectorXd& psi, Eigen::VectorXd* grad) {
    const Eigen::VectorXd sc = psi.cwiseSqrt().cwiseInverse();
    const Eigen::MatrixXd scaled = sc.asDiagonal() * corr * sc.asDiagonal();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(scaled, Eigen::EigenvaluesOnly);
    const Eigen::VectorXd trailing = eig.eigenvalues().head(k - q);
    if ((trailing.array() <= 0.0).any()) return std::numeric_limits<double>::infinity();
    const double f = (trailing.array() - trailing.array().log()).sum() + q - static_cast<double>(k);
    if (grad) {
      const Eigen::MatrixXd lam = loadings_for(psi);
      Eigen::MatrixXd resid = lam * lam.transpose() - corr;
      resid.diagonal() += psi;
      *grad = resid.diagonal().cwiseQuotient(psi.cwiseAbs2());
    }
    return f;
  };
  const auto result = minimize_bounded_bfgs(objective, start, Eigen::VectorXd::Constant(k, tolerance::kResidualFloor),
                                            Eigen::VectorXd::Ones(k), {options.communality_tolerance, options.max_iterations});
  iterations = result.iterations;
  if (!result.converged) {
    throw DataError("ML factor extraction did not converge: " + result.message);
  }
  return loadings_for(result.x);
}

}  // namespace

Eigen::MatrixXd varimax(const Eigen::MatrixXd& loadings, bool normalize) {
  const auto k = loadings.rows();
  const auto q = loadings.cols();
  if (q < 2) return loadings;
  Eigen::VectorXd scale = Eigen::VectorXd::Ones(k);
  Eigen::MatrixXd x = loadings;
  if (normalize) {
    scale = loadings.rowwise().norm();
    for (Eigen::Index i = 0; i < k; ++i) {
      if (scale(i) > 0.0) x.row(i) /= scale(i);
    }
  }
  Eigen::MatrixXd rot = Eigen::MatrixXd::Identity(q, q);
  double d = 0.0;
  for (int iter = 0; iter < tolerance::kRotationMaxIterations; ++iter) {
    const Eigen::MatrixXd z = x * rot;
    const Eigen::RowVectorXd col_ss = z.colwise().squaredNorm();
    const Eigen::MatrixXd target = z.array().cube().matrix() - z * col_ss.asDiagonal() / static_cast<double>(k);
    const Eigen::MatrixXd b = x.transpose() * target;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(b, Eigen::ComputeFullU | Eigen::ComputeFullV);
    rot = svd.matrixU() * svd.matrixV().transpose();
    const double previous = d;
    d = svd.singularValues().sum();
    if (d < previous * (1.0 + tolerance::kRotation)) break;
  }
  Eigen::MatrixXd out = x * rot;
  if (normalize) {
    for (Eigen::Index i = 0; i < k; ++i) out.row(i) *= scale(i);
  }
  return out;
}

ObliqueSolution oblimin(const Eigen::MatrixXd& a, double gamma) {
  const auto k = a.rows();
  const auto q = a.cols();
  if (q < 2) return {a, Eigen::MatrixXd::Identity(q, q)};
  const Eigen::MatrixXd off_diag = Eigen::MatrixXd::Ones(q, q) - Eigen::MatrixXd::Identity(q, q);
  const Eigen::MatrixXd centering =
      Eigen::MatrixXd::Identity(k, k) - Eigen::MatrixXd::Constant(k, k, gamma / static_cast<double>(k));

  struct Criterion {
    double value;
    Eigen::MatrixXd gradient;
  };
  auto criterion = [&](const Eigen::MatrixXd& l) {
    const Eigen::MatrixXd l2 = l.cwiseAbs2();
    Eigen::MatrixXd x = l2 * off_diag;
    if (gamma != 0.0) x = centering * x;
    return Criterion{l2.cwiseProduct(x).sum() / 4.0, l.cwiseProduct(x)};
  };

  Eigen::MatrixXd t = Eigen::MatrixXd::Identity(q, q);
  Eigen::MatrixXd l = a * t.inverse().transpose();
  auto c = criterion(l);
  Eigen::MatrixXd g = -(l.transpose() * c.gradient * t.inverse()).transpose();
  double step = 1.0;
  for (int iter = 0; iter <= tolerance::kRotationMaxIterations; ++iter) {
    const Eigen::RowVectorXd colsum = t.cwiseProduct(g).colwise().sum();
    const Eigen::MatrixXd gp = g - t * colsum.asDiagonal();
    const double s = gp.norm();
    if (s < 1e-10) break;
    step *= 2.0;
    Eigen::MatrixXd t_new;
    Criterion c_new;
    Eigen::MatrixXd l_new;
    for (int i = 0; i <= 10; ++i) {
      const Eigen::MatrixXd x = t - step * gp;
      const Eigen::RowVectorXd norms = x.colwise().norm();
      t_new = x * norms.cwiseInverse().asDiagonal();
      l_new = a * t_new.inverse().transpose();
      c_new = criterion(l_new);
      if (c.value - c_new.value > 0.5 * s * s * step) break;
      step /= 2.0;
    }
    t = t_new;
    l = l_new;
    c = c_new;
    g = -(l.transpose() * c.gradient * t.inverse()).transpose();
  }
  return {l, t.transpose() * t};
}

EfaSolution efa(const Eigen::MatrixXd& corr, int n_factors, const EfaOptions& options, std::vector<std::string> item_ids) {
  const auto k = corr.rows();
  if (corr.cols() != k) throw DataError("EFA input must be square");
  if (n_factors < 1 || n_factors >= k) {
    throw DataError("EFA: cannot extract " + std::to_string(n_factors) + " factors from " + std::to_string(k) + " items");
  }
  if (!corr.isApprox(corr.transpose(), 1e-10)) throw DataError("EFA input is not symmetric");
  for (Eigen::Index i = 0; i < k; ++i) {
    if (std::abs(corr(i, i) - 1.0) > 1e-8) throw DataError("EFA input needs a unit diagonal");
  }
  if (item_ids.empty()) {
    for (Eigen::Index i = 0; i < k; ++i) item_ids.push_back("item" + std::to_string(i + 1));
  }

  EfaSolution sol;
  Eigen::MatrixXd loadings = options.extraction == Extraction::ml
                                 ? maximum_likelihood(corr, n_factors, options, sol.iterations)
                                 : principal_axis(corr, n_factors, options, sol.iterations);

  Eigen::MatrixXd phi = Eigen::MatrixXd::Identity(n_factors, n_factors);
  if (options.rotation == Rotation::varimax) {
    loadings = varimax(loadings);
  } else if (options.rotation == Rotation::oblimin) {
    // Start from varimax: an unrotated solution of symmetric data can sit on a
    // stationary point of the oblimin criterion.
    auto rotated = oblimin(varimax(loadings));
    loadings = std::move(rotated.loadings);
    phi = std::move(rotated.phi);
  }

  // Order factors by the variance they account for.
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n_factors));
  std::iota(order.begin(), order.end(), 0);
  const Eigen::VectorXd ss = loadings.colwise().squaredNorm().transpose();
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index x, Eigen::Index y) { return ss(x) > ss(y); });

  FactorModel& m = sol.model;
  m.item_ids = std::move(item_ids);
  m.loadings.resize(k, n_factors);
  m.factor_correlations.resize(n_factors, n_factors);
  for (int f = 0; f < n_factors; ++f) {
    m.factor_ids.push_back("F" + std::to_string(f + 1));
    m.loadings.col(f) = loadings.col(order[static_cast<std::size_t>(f)]);
    for (int g = 0; g < n_factors; ++g) {
      m.factor_correlations(f, g) = phi(order[static_cast<std::size_t>(f)], order[static_cast<std::size_t>(g)]);
    }
  }
  canonicalize_signs(m);

  const Eigen::VectorXd communality = (m.loadings * m.factor_correlations).cwiseProduct(m.loadings).rowwise().sum();
  m.residual_variances.resize(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const double psi = 1.0 - communality(i);
    if (psi < tolerance::kResidualFloor) sol.heywood_items.push_back(m.item_ids[static_cast<std::size_t>(i)]);
    m.residual_variances(i) = std::max(psi, tolerance::kResidualFloor);
  }
  return sol;
}

}  // namespace llmscale
