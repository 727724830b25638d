#pragma once

#include <cstdint>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "llmscale/factor_model.hpp"
#include "llmscale/rating_store.hpp"

namespace llmscale {

/// Eigenvalues of a symmetric matrix, largest first.
Eigen::VectorXd descending_eigenvalues(const Eigen::MatrixXd& symmetric);

struct ParallelAnalysis {
  Eigen::VectorXd observed;     // sample correlation eigenvalues, descending
  Eigen::VectorXd random_mean;  // rank-wise mean over the random datasets
  int retained = 0;
  int n_reps = 0;
  std::uint64_t seed = 0;
  std::size_t n = 0;
};

/// Horn's parallel analysis: retain leading factors while the observed
/// eigenvalue exceeds the mean rank-matched eigenvalue of `n_reps` standard
/// normal datasets of the same shape.
ParallelAnalysis parallel_analysis(const Eigen::MatrixXd& data, int n_reps = tolerance::kParallelReps,
                                   std::uint64_t seed = 0);
/// Listwise-complete rows of `matrix`.
ParallelAnalysis parallel_analysis(const RatingMatrix& matrix, int n_reps = tolerance::kParallelReps,
                                   std::uint64_t seed = 0);

/// Number of eigenvalues greater than 1.
int kaiser_count(const Eigen::VectorXd& eigenvalues);

nlohmann::json to_json(const ParallelAnalysis& pa);

}  // namespace llmscale
