#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "llmscale/factor_model.hpp"

namespace llmscale {

enum class Extraction { principal_axis, ml };
enum class Rotation { none, varimax, oblimin };

std::string to_string(Extraction e);
std::string to_string(Rotation r);
Extraction parse_extraction(const std::string& text);
Rotation parse_rotation(const std::string& text);

struct EfaOptions {
  Extraction extraction = Extraction::principal_axis;
  Rotation rotation = Rotation::oblimin;
  double communality_tolerance = tolerance::kCommunality;
  int max_iterations = tolerance::kEfaMaxIterations;
};

struct EfaSolution {
  FactorModel model;
  int iterations = 0;
  /// Items whose communality reached or exceeded 1 (residual floored).
  std::vector<std::string> heywood_items;
};

/// Exploratory factor analysis of a correlation matrix. Principal axis
/// iterates communalities from squared multiple correlations; ML minimizes
/// the profiled discrepancy over uniquenesses. Factors are ordered by
/// explained variance and sign-canonicalized.
EfaSolution efa(const Eigen::MatrixXd& corr, int n_factors, const EfaOptions& options = {},
                std::vector<std::string> item_ids = {});

/// Kaiser-normalized varimax (orthogonal).
Eigen::MatrixXd varimax(const Eigen::MatrixXd& loadings, bool normalize = true);

struct ObliqueSolution {
  Eigen::MatrixXd loadings;  // pattern matrix
  Eigen::MatrixXd phi;       // factor correlations
};

/// Direct oblimin (gamma = 0 is quartimin) by gradient projection.
ObliqueSolution oblimin(const Eigen::MatrixXd& loadings, double gamma = 0.0);

}  // namespace llmscale
