#include "llmscale/rating_store.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <set>

#include "llmscale/error.hpp"
#include "llmscale/random.hpp"
#include "llmscale/text_io.hpp"

namespace llmscale {

namespace {

constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

}  // namespace

RatingMatrix::RatingMatrix(std::vector<std::string> text_ids, std::vector<std::string> item_ids,
                           Eigen::MatrixXd values, int scale_max)
    : text_ids_(std::move(text_ids)), item_ids_(std::move(item_ids)), values_(std::move(values)), scale_max_(scale_max) {
  if (values_.rows() != static_cast<Eigen::Index>(text_ids_.size()) ||
      values_.cols() != static_cast<Eigen::Index>(item_ids_.size())) {
    throw DataError("rating matrix dimensions do not match its id lists");
  }
  if (std::set<std::string>(text_ids_.begin(), text_ids_.end()).size() != text_ids_.size()) {
    throw DataError("rating matrix has duplicate text ids");
  }
  if (std::set<std::string>(item_ids_.begin(), item_ids_.end()).size() != item_ids_.size()) {
    throw DataError("rating matrix has duplicate item ids");
  }
  for (Eigen::Index r = 0; r < values_.rows(); ++r) {
    for (Eigen::Index c = 0; c < values_.cols(); ++c) {
      const double v = values_(r, c);
      if (!std::isnan(v) && (v < 1.0 || v > scale_max_)) {
        throw DataError("rating value " + std::to_string(v) + " outside [1, " + std::to_string(scale_max_) + "] at (" +
                        text_ids_[r] + ", " + item_ids_[c] + ")");
      }
    }
  }
}

bool RatingMatrix::missing(Eigen::Index r, Eigen::Index c) const { return std::isnan(values_(r, c)); }

std::size_t RatingMatrix::missing_count() const {
  return static_cast<std::size_t>(values_.array().isNaN().count());
}

Eigen::Index RatingMatrix::column_of(std::string_view item_id) const {
  for (std::size_t c = 0; c < item_ids_.size(); ++c) {
    if (item_ids_[c] == item_id) return static_cast<Eigen::Index>(c);
  }
  return -1;
}

RatingMatrix RatingMatrix::select_rows(const std::vector<Eigen::Index>& rows) const {
  std::vector<std::string> ids;
  Eigen::MatrixXd v(static_cast<Eigen::Index>(rows.size()), values_.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    ids.push_back(text_ids_[rows[i]]);
    v.row(static_cast<Eigen::Index>(i)) = values_.row(rows[i]);
  }
  return RatingMatrix(std::move(ids), item_ids_, std::move(v), scale_max_);
}

RatingMatrix RatingMatrix::select_columns(const std::vector<Eigen::Index>& cols) const {
  std::vector<std::string> ids;
  Eigen::MatrixXd v(values_.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < cols.size(); ++i) {
    ids.push_back(item_ids_[cols[i]]);
    v.col(static_cast<Eigen::Index>(i)) = values_.col(cols[i]);
  }
  return RatingMatrix(text_ids_, std::move(ids), std::move(v), scale_max_);
}

RatingMatrix RatingMatrix::without_items(const std::vector<std::string>& item_ids) const {
  std::vector<Eigen::Index> keep;
  for (std::size_t c = 0; c < item_ids_.size(); ++c) {
    if (std::find(item_ids.begin(), item_ids.end(), item_ids_[c]) == item_ids.end()) {
      keep.push_back(static_cast<Eigen::Index>(c));
    }
  }
  return select_columns(keep);
}

Eigen::MatrixXd RatingMatrix::complete_rows() const {
  std::vector<Eigen::Index> keep;
  for (Eigen::Index r = 0; r < values_.rows(); ++r) {
    if (!values_.row(r).array().isNaN().any()) keep.push_back(r);
  }
  Eigen::MatrixXd out(static_cast<Eigen::Index>(keep.size()), values_.cols());
  for (std::size_t i = 0; i < keep.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = values_.row(keep[i]);
  return out;
}

RatingMatrix assemble_matrix(const std::vector<RatingRecord>& records, const Instrument& instrument) {
  std::vector<std::string> item_ids;
  for (const auto& item : instrument.items) item_ids.push_back(item.id);
  std::sort(item_ids.begin(), item_ids.end());
  std::map<std::string, Eigen::Index> col;
  for (std::size_t c = 0; c < item_ids.size(); ++c) col.emplace(item_ids[c], static_cast<Eigen::Index>(c));

  std::set<std::string> text_set;
  for (const auto& r : records) {
    if (!col.contains(r.item_id)) throw DataError("rating record for unknown item id '" + r.item_id + "'");
    text_set.insert(r.text_id);
  }
  std::vector<std::string> text_ids(text_set.begin(), text_set.end());
  std::map<std::string, Eigen::Index> row;
  for (std::size_t t = 0; t < text_ids.size(); ++t) row.emplace(text_ids[t], static_cast<Eigen::Index>(t));

  Eigen::MatrixXd values = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(text_ids.size()),
                                                     static_cast<Eigen::Index>(item_ids.size()), kMissing);
  const int m = instrument.scale.max_code();
  for (const auto& r : records) {
    const auto v = r.value();
    if (!v) continue;
    double& cell = values(row.at(r.text_id), col.at(r.item_id));
    if (!std::isnan(cell)) {
      throw DataError("duplicate ok record for (" + r.text_id + ", " + r.item_id + ")");
    }
    if (*v < 1.0 || *v > m) throw DataError("parsed code outside scale range for (" + r.text_id + ", " + r.item_id + ")");
    cell = *v;
  }
  return RatingMatrix(std::move(text_ids), std::move(item_ids), std::move(values), m);
}

RatingMatrix apply_keying(const RatingMatrix& matrix, const Instrument& instrument) {
  Eigen::MatrixXd v = matrix.values();
  const double flip = matrix.scale_max() + 1.0;
  for (Eigen::Index c = 0; c < matrix.cols(); ++c) {
    const auto* item = instrument.find_item(matrix.item_ids()[c]);
    if (!item || !item->reverse_keyed) continue;
    for (Eigen::Index r = 0; r < matrix.rows(); ++r) {
      if (!std::isnan(v(r, c))) v(r, c) = flip - v(r, c);
    }
  }
  return RatingMatrix(matrix.text_ids(), matrix.item_ids(), std::move(v), matrix.scale_max());
}

Split split_holdout(const RatingMatrix& matrix, const SplitSpec& spec) {
  if (!(spec.holdout_fraction >= 0.0 && spec.holdout_fraction <= 1.0)) {
    throw ValidationError("holdout fraction must lie in [0, 1]");
  }
  const auto n = static_cast<std::size_t>(matrix.rows());
  // Rows of a RatingMatrix built here are sorted; sort indices by id anyway so
  // the partition depends only on (seed, ids).
  std::vector<Eigen::Index> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<Eigen::Index>(i);
  std::sort(order.begin(), order.end(),
            [&](Eigen::Index a, Eigen::Index b) { return matrix.text_ids()[a] < matrix.text_ids()[b]; });
  Rng rng(spec.seed);
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(order[i - 1], order[j]);
  }
  const auto n_holdout = static_cast<std::size_t>(std::ceil(spec.holdout_fraction * static_cast<double>(n) - 1e-12));
  std::vector<Eigen::Index> holdout(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(std::min(n_holdout, n)));
  std::vector<Eigen::Index> development(order.begin() + static_cast<std::ptrdiff_t>(std::min(n_holdout, n)), order.end());
  std::sort(holdout.begin(), holdout.end());
  std::sort(development.begin(), development.end());
  return {matrix.select_rows(development), matrix.select_rows(holdout)};
}

Eigen::MatrixXd sample_covariance(const Eigen::MatrixXd& data) {
  const auto n = data.rows();
  if (n < 2) throw DataError("covariance needs at least 2 rows");
  const Eigen::RowVectorXd mean = data.colwise().mean();
  const Eigen::MatrixXd centered = data.rowwise() - mean;
  Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
  // Exact symmetry: mirror the upper triangle.
  cov.triangularView<Eigen::StrictlyLower>() = cov.transpose().triangularView<Eigen::StrictlyLower>();
  return cov;
}

Eigen::MatrixXd to_correlation(const Eigen::MatrixXd& cov) {
  const Eigen::VectorXd sd = cov.diagonal().cwiseSqrt();
  Eigen::MatrixXd corr = cov.array() / (sd * sd.transpose()).array();
  corr.triangularView<Eigen::StrictlyLower>() = corr.transpose().triangularView<Eigen::StrictlyLower>();
  corr.diagonal().setOnes();
  return corr;
}

CovarianceResult covariance(const RatingMatrix& matrix, MissingPolicy policy) {
  CovarianceResult out;
  out.item_ids = matrix.item_ids();
  const auto k = matrix.cols();

  if (policy == MissingPolicy::listwise) {
    const Eigen::MatrixXd data = matrix.complete_rows();
    if (data.rows() < k + 1) {
      throw DataError("insufficient rows: " + std::to_string(data.rows()) + " complete rows for " + std::to_string(k) +
                      " items (need at least " + std::to_string(k + 1) + ")");
    }
    out.covariance = sample_covariance(data);
    out.effective_n = static_cast<std::size_t>(data.rows());
  } else {
    out.covariance.resize(k, k);
    out.effective_n = static_cast<std::size_t>(matrix.rows());
    const auto& v = matrix.values();
    for (Eigen::Index a = 0; a < k; ++a) {
      for (Eigen::Index b = a; b < k; ++b) {
        double sa = 0, sb = 0;
        std::size_t n = 0;
        for (Eigen::Index r = 0; r < v.rows(); ++r) {
          if (std::isnan(v(r, a)) || std::isnan(v(r, b))) continue;
          sa += v(r, a);
          sb += v(r, b);
          ++n;
        }
        if (n < 2) throw DataError("insufficient rows: items " + out.item_ids[a] + " and " + out.item_ids[b] + " share < 2 rows");
        const double ma = sa / static_cast<double>(n), mb = sb / static_cast<double>(n);
        double s = 0;
        for (Eigen::Index r = 0; r < v.rows(); ++r) {
          if (std::isnan(v(r, a)) || std::isnan(v(r, b))) continue;
          s += (v(r, a) - ma) * (v(r, b) - mb);
        }
        out.covariance(a, b) = out.covariance(b, a) = s / static_cast<double>(n - 1);
        out.effective_n = std::min(out.effective_n, n);
      }
    }
    if (out.effective_n < static_cast<std::size_t>(k + 1)) {
      throw DataError("insufficient rows: smallest pairwise count " + std::to_string(out.effective_n) + " for " +
                      std::to_string(k) + " items");
    }
  }

  std::vector<Eigen::Index> keep;
  for (Eigen::Index c = 0; c < k; ++c) {
    if (out.covariance(c, c) <= 0.0) {
      out.zero_variance_items.push_back(out.item_ids[c]);
      out.warnings.push_back("item " + out.item_ids[c] + " has zero variance; excluded from correlation");
    } else {
      keep.push_back(c);
      out.correlation_item_ids.push_back(out.item_ids[c]);
    }
  }
  Eigen::MatrixXd sub(static_cast<Eigen::Index>(keep.size()), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t a = 0; a < keep.size(); ++a) {
    for (std::size_t b = 0; b < keep.size(); ++b) {
      sub(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = out.covariance(keep[a], keep[b]);
    }
  }
  out.correlation = keep.empty() ? Eigen::MatrixXd() : to_correlation(sub);
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::string format_cell(double v) {
  if (std::isnan(v)) return {};
  if (v == std::floor(v)) return std::to_string(static_cast<long long>(v));
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string wide_csv(const RatingMatrix& matrix) {
  CsvRow header{"text_id"};
  header.insert(header.end(), matrix.item_ids().begin(), matrix.item_ids().end());
  std::string out = csv_line(header);
  for (Eigen::Index r = 0; r < matrix.rows(); ++r) {
    CsvRow row{matrix.text_ids()[r]};
    for (Eigen::Index c = 0; c < matrix.cols(); ++c) row.push_back(format_cell(matrix.values()(r, c)));
    out += csv_line(row);
  }
  return out;
}

RatingMatrix parse_wide_csv(std::string_view document, int scale_max, std::string_view source_name) {
  const auto rows = parse_csv(document);
  if (rows.empty() || rows.front().empty() || rows.front().front() != "text_id") {
    throw ArtifactError(std::string(source_name) + ": wide export must start with a text_id header");
  }
  std::vector<std::string> items(rows.front().begin() + 1, rows.front().end());
  std::vector<std::string> texts;
  Eigen::MatrixXd v(static_cast<Eigen::Index>(rows.size() - 1), static_cast<Eigen::Index>(items.size()));
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() != items.size() + 1) {
      throw ArtifactError(std::string(source_name) + ":" + std::to_string(r + 1) + ": wrong number of fields");
    }
    texts.push_back(rows[r][0]);
    for (std::size_t c = 0; c < items.size(); ++c) {
      const auto& cell = rows[r][c + 1];
      v(static_cast<Eigen::Index>(r - 1), static_cast<Eigen::Index>(c)) = cell.empty() ? kMissing : std::stod(cell);
    }
  }
  return RatingMatrix(std::move(texts), std::move(items), std::move(v), scale_max);
}

std::string long_jsonl(const std::vector<RatingRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    out += to_json(r).dump();
    out.push_back('\n');
  }
  return out;
}

std::vector<RatingRecord> parse_long_jsonl(std::string_view document, std::string_view source_name) {
  std::vector<RatingRecord> out;
  std::size_t line_no = 0, pos = 0;
  while (pos < document.size()) {
    auto eol = document.find('\n', pos);
    if (eol == std::string_view::npos) eol = document.size();
    const auto line = document.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      out.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ArtifactError(std::string(source_name) + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace llmscale
