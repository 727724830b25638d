#include "llmscale/retention.hpp"

#include "llmscale/error.hpp"
#include "llmscale/random.hpp"

namespace llmscale {

Eigen::VectorXd descending_eigenvalues(const Eigen::MatrixXd& symmetric) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(symmetric, Eigen::EigenvaluesOnly);
  return eig.eigenvalues().reverse();
}

ParallelAnalysis parallel_analysis(const Eigen::MatrixXd& data, int n_reps, std::uint64_t seed) {
  const auto n = data.rows();
  const auto k = data.cols();
  if (n < k + 1) {
    throw DataError("parallel analysis: insufficient data (" + std::to_string(n) + " complete rows for " +
                    std::to_string(k) + " items)");
  }
  if (n_reps < 1) throw DataError("parallel analysis needs at least one replicate");
  const Eigen::MatrixXd cov = sample_covariance(data);
  if ((cov.diagonal().array() <= 0.0).any()) throw DataError("parallel analysis: zero-variance item in data");

  ParallelAnalysis pa;
  pa.observed = descending_eigenvalues(to_correlation(cov));
  pa.random_mean = Eigen::VectorXd::Zero(k);
  pa.n_reps = n_reps;
  pa.seed = seed;
  pa.n = static_cast<std::size_t>(n);

  Rng rng(seed);
  Eigen::MatrixXd noise(n, k);
  for (int rep = 0; rep < n_reps; ++rep) {
    for (Eigen::Index r = 0; r < n; ++r) {
      for (Eigen::Index c = 0; c < k; ++c) noise(r, c) = rng.normal();
    }
    pa.random_mean += descending_eigenvalues(to_correlation(sample_covariance(noise)));
  }
  pa.random_mean /= static_cast<double>(n_reps);

  while (pa.retained < k && pa.observed(pa.retained) > pa.random_mean(pa.retained)) ++pa.retained;
  return pa;
}

ParallelAnalysis parallel_analysis(const RatingMatrix& matrix, int n_reps, std::uint64_t seed) {
  return parallel_analysis(matrix.complete_rows(), n_reps, seed);
}

int kaiser_count(const Eigen::VectorXd& eigenvalues) {
  int count = 0;
  for (Eigen::Index i = 0; i < eigenvalues.size(); ++i) {
    if (eigenvalues(i) > 1.0) ++count;
  }
  return count;
}

nlohmann::json to_json(const ParallelAnalysis& pa) {
  return {{"observed_eigenvalues", std::vector<double>(pa.observed.data(), pa.observed.data() + pa.observed.size())},
          {"random_mean_eigenvalues",
           std::vector<double>(pa.random_mean.data(), pa.random_mean.data() + pa.random_mean.size())},
          {"retained", pa.retained},
          {"n_reps", pa.n_reps},
          {"seed", pa.seed},
          {"n", pa.n}};
}

}  // namespace llmscale
