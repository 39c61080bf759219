#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace mpln::data {

/// n x d matrix of nonnegative integer counts; rows are samples, columns are
/// variables. Counts are held as doubles (exact up to 2^53) because every
/// consumer is numerical.
class CountMatrix {
 public:
  CountMatrix() = default;

  /// Validates the invariants: n, d >= 1, all entries nonnegative integers,
  /// unique ids and names, and label vectors that match the matrix shape.
  CountMatrix(Eigen::MatrixXd values, std::vector<std::string> sample_ids,
              std::vector<std::string> var_names);

  /// Convenience constructor with generated ids ("s1".."sn") and names ("v1".."vd").
  explicit CountMatrix(Eigen::MatrixXd values);

  std::size_t n() const noexcept { return static_cast<std::size_t>(values_.rows()); }
  std::size_t d() const noexcept { return static_cast<std::size_t>(values_.cols()); }

  const Eigen::MatrixXd& values() const noexcept { return values_; }
  const std::vector<std::string>& sample_ids() const noexcept { return sample_ids_; }
  const std::vector<std::string>& var_names() const noexcept { return var_names_; }

  /// Keeps the listed columns in the given order.
  CountMatrix select_columns(const std::vector<std::size_t>& columns) const;

  friend bool operator==(const CountMatrix& a, const CountMatrix& b) {
    return a.values_ == b.values_ && a.sample_ids_ == b.sample_ids_ && a.var_names_ == b.var_names_;
  }

 private:
  Eigen::MatrixXd values_;
  std::vector<std::string> sample_ids_;
  std::vector<std::string> var_names_;
};

/// Per-sample multiplicative normalization constants C_i (all > 0).
class OffsetVector {
 public:
  OffsetVector() = default;
  explicit OffsetVector(Eigen::VectorXd c);

  static OffsetVector unit(std::size_t n) { return OffsetVector(Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n))); }

  std::size_t size() const noexcept { return static_cast<std::size_t>(c_.size()); }
  const Eigen::VectorXd& values() const noexcept { return c_; }
  double operator[](std::size_t i) const { return c_[static_cast<Eigen::Index>(i)]; }
  Eigen::VectorXd log() const { return c_.array().log().matrix(); }

 private:
  Eigen::VectorXd c_;
};

enum class TableFormat { csv, tsv };
enum class OffsetMethod { unit, libsize };

/// Picks tsv for ".tsv"/".tab"/".txt" extensions, csv otherwise.
TableFormat format_from_path(const std::filesystem::path& path);

CountMatrix load_counts(const std::filesystem::path& path, TableFormat format);
CountMatrix load_counts(const std::filesystem::path& path);
void save_counts(const CountMatrix& counts, const std::filesystem::path& path,
                 TableFormat format = TableFormat::csv);

/// Parses count-matrix text directly; `source` names the input in error messages.
CountMatrix parse_counts(const std::string& text, TableFormat format, const std::string& source = "<input>");

/// unit: every c_i = 1. libsize: c_i = total_i / geometric_mean(totals).
OffsetVector compute_offsets(const CountMatrix& counts, OffsetMethod method);

/// One positive decimal per line ("." separator, locale independent). When
/// `expected_n` is nonzero the line count must match it.
OffsetVector load_offsets(const std::filesystem::path& path, std::size_t expected_n = 0);
OffsetVector parse_offsets(const std::string& text, std::size_t expected_n = 0);
void save_offsets(const OffsetVector& offsets, const std::filesystem::path& path);

/// Interquartile range with linear interpolation between order statistics
/// (quantile at p sits at position p*(n-1) of the sorted sample).
double interquartile_range(std::vector<double> sample);

/// Keeps the `top_n` columns with the largest IQR of log(count + 1). Ties go to
/// the earlier column; surviving columns keep their original order.
CountMatrix filter_top_variable(const CountMatrix& counts, std::size_t top_n);

}  // namespace mpln::data
