#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "llmscale/rater_gateway.hpp"
#include "llmscale/scale_forge.hpp"

namespace llmscale {

/// texts x items matrix of (possibly averaged) codes; NaN marks a missing cell.
class RatingMatrix {
 public:
  RatingMatrix() = default;
  RatingMatrix(std::vector<std::string> text_ids, std::vector<std::string> item_ids, Eigen::MatrixXd values,
               int scale_max);

  const std::vector<std::string>& text_ids() const { return text_ids_; }
  const std::vector<std::string>& item_ids() const { return item_ids_; }
  const Eigen::MatrixXd& values() const { return values_; }
  int scale_max() const { return scale_max_; }

  Eigen::Index rows() const { return values_.rows(); }
  Eigen::Index cols() const { return values_.cols(); }
  bool missing(Eigen::Index r, Eigen::Index c) const;
  std::size_t missing_count() const;

  /// Column index of an item id, or -1.
  Eigen::Index column_of(std::string_view item_id) const;

  RatingMatrix select_rows(const std::vector<Eigen::Index>& rows) const;
  RatingMatrix select_columns(const std::vector<Eigen::Index>& cols) const;
  RatingMatrix without_items(const std::vector<std::string>& item_ids) const;

  /// Rows with no missing cell, as a dense matrix.
  Eigen::MatrixXd complete_rows() const;

 private:
  std::vector<std::string> text_ids_;
  std::vector<std::string> item_ids_;
  Eigen::MatrixXd values_;
  int scale_max_ = 0;
};

/// One row per distinct text id in `records`, one column per instrument item,
/// both sorted by id. Cells come from ok-status records only.
RatingMatrix assemble_matrix(const std::vector<RatingRecord>& records, const Instrument& instrument);

/// Reverse-keyed columns recoded x -> m + 1 - x; missing cells stay missing.
RatingMatrix apply_keying(const RatingMatrix& matrix, const Instrument& instrument);

struct SplitSpec {
  double holdout_fraction = 0.5;
  std::uint64_t seed = 0;
};

struct Split {
  RatingMatrix development;
  RatingMatrix holdout;
};

/// Rows are shuffled by a seeded Fisher-Yates permutation of the sorted text
/// ids; the first ceil(fraction * n) go to the holdout. Both halves keep
/// sorted row order.
Split split_holdout(const RatingMatrix& matrix, const SplitSpec& spec);

enum class MissingPolicy { listwise, pairwise };

struct CovarianceResult {
  std::vector<std::string> item_ids;
  /// Unbiased (n - 1) covariance over all items, exactly symmetric.
  Eigen::MatrixXd covariance;
  /// Correlation over `correlation_item_ids`, i.e. excluding zero-variance
  /// items. Unit diagonal.
  std::vector<std::string> correlation_item_ids;
  Eigen::MatrixXd correlation;
  /// Listwise: complete rows used. Pairwise: the smallest pairwise count.
  std::size_t effective_n = 0;
  std::vector<std::string> zero_variance_items;
  std::vector<std::string> warnings;
};

CovarianceResult covariance(const RatingMatrix& matrix, MissingPolicy policy = MissingPolicy::listwise);
/// Same computation on a dense data matrix (no missing cells allowed).
Eigen::MatrixXd sample_covariance(const Eigen::MatrixXd& data);
Eigen::MatrixXd to_correlation(const Eigen::MatrixXd& cov);

// Exports ------------------------------------------------------------------

/// CSV: header "text_id,<item ids>", one row per text, empty cell = missing.
std::string wide_csv(const RatingMatrix& matrix);
RatingMatrix parse_wide_csv(std::string_view document, int scale_max, std::string_view source_name = "<wide>");

/// JSON-lines, one RatingRecord per line.
std::string long_jsonl(const std::vector<RatingRecord>& records);
std::vector<RatingRecord> parse_long_jsonl(std::string_view document, std::string_view source_name = "<long>");

}  // namespace llmscale
