#include "mplnbc/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "mplnbc/error.hpp"
#include "mplnbc/textio.hpp"

namespace mpln::data {

namespace {

template <typename Container>
void require_unique(const Container& labels, ErrorCode code, const char* what) {
  std::unordered_set<std::string> seen;
  for (const auto& label : labels) {
    if (!seen.insert(label).second) throw Error(code, std::string(what) + " '" + label + "' appears twice");
  }
}

std::vector<std::string> numbered(const char* prefix, Eigen::Index count) {
  std::vector<std::string> out;
  out.reserve(static_cast<std::size_t>(count));
  for (Eigen::Index i = 0; i < count; ++i) out.push_back(prefix + std::to_string(i + 1));
  return out;
}

char delimiter_of(TableFormat format) { return format == TableFormat::tsv ? '\t' : ','; }

}  // namespace

CountMatrix::CountMatrix(Eigen::MatrixXd values, std::vector<std::string> sample_ids,
                         std::vector<std::string> var_names)
    : values_(std::move(values)), sample_ids_(std::move(sample_ids)), var_names_(std::move(var_names)) {
  if (values_.rows() < 1 || values_.cols() < 1) throw Error(ErrorCode::empty_input, "count matrix needs n >= 1 and d >= 1");
  if (sample_ids_.size() != n()) throw Error(ErrorCode::length_mismatch, "sample id count differs from rows");
  if (var_names_.size() != d()) throw Error(ErrorCode::length_mismatch, "variable name count differs from columns");
  for (Eigen::Index i = 0; i < values_.rows(); ++i) {
    for (Eigen::Index j = 0; j < values_.cols(); ++j) {
      const double v = values_(i, j);
      if (!std::isfinite(v) || v != std::floor(v)) {
        throw Error(ErrorCode::non_integer_count, "at (row " + sample_ids_[static_cast<std::size_t>(i)] + ", col " +
                                                      var_names_[static_cast<std::size_t>(j)] + ")");
      }
      if (v < 0) {
        throw Error(ErrorCode::negative_count, "at (row " + sample_ids_[static_cast<std::size_t>(i)] + ", col " +
                                                   var_names_[static_cast<std::size_t>(j)] + ")");
      }
    }
  }
  require_unique(sample_ids_, ErrorCode::duplicate_id, "sample id");
  require_unique(var_names_, ErrorCode::duplicate_name, "variable name");
}

CountMatrix::CountMatrix(Eigen::MatrixXd values)
    : CountMatrix(values, numbered("s", values.rows()), numbered("v", values.cols())) {}

CountMatrix CountMatrix::select_columns(const std::vector<std::size_t>& columns) const {
  Eigen::MatrixXd out(values_.rows(), static_cast<Eigen::Index>(columns.size()));
  std::vector<std::string> names;
  names.reserve(columns.size());
  for (std::size_t k = 0; k < columns.size(); ++k) {
    if (columns[k] >= d()) throw Error(ErrorCode::invalid_argument, "column index out of range");
    out.col(static_cast<Eigen::Index>(k)) = values_.col(static_cast<Eigen::Index>(columns[k]));
    names.push_back(var_names_[columns[k]]);
  }
  return CountMatrix(std::move(out), sample_ids_, std::move(names));
}

OffsetVector::OffsetVector(Eigen::VectorXd c) : c_(std::move(c)) {
  for (Eigen::Index i = 0; i < c_.size(); ++i) {
    if (!(c_[i] > 0.0) || !std::isfinite(c_[i])) {
      throw Error(ErrorCode::nonpositive_offset, "offset " + std::to_string(i + 1) + " is not a positive finite number");
    }
  }
}

TableFormat format_from_path(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  return (ext == ".tsv" || ext == ".tab" || ext == ".txt") ? TableFormat::tsv : TableFormat::csv;
}

CountMatrix parse_counts(const std::string& text, TableFormat format, const std::string& source) {
  const char delim = delimiter_of(format);
  std::istringstream in(text);
  std::string line;
  std::vector<std::string> header;
  std::vector<std::string> ids;
  std::vector<std::vector<double>> rows;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto fields = textio::split_record(line, delim);
    if (header.empty()) {
      header = std::move(fields);
      if (header.size() < 2) throw Error(ErrorCode::parse_error, source + ": header needs an id column and at least one variable");
      continue;
    }
    if (fields.size() != header.size()) {
      throw Error(ErrorCode::parse_error, source + ": line " + std::to_string(line_no) + " has " +
                                              std::to_string(fields.size()) + " fields, expected " +
                                              std::to_string(header.size()));
    }
    std::vector<double> row(fields.size() - 1);
    for (std::size_t j = 1; j < fields.size(); ++j) {
      const auto where = "(row " + fields[0] + ", col " + header[j] + ")";
      const auto value = textio::parse_double(fields[j]);
      if (!value || !std::isfinite(*value)) {
        throw Error(ErrorCode::parse_error, source + ": line " + std::to_string(line_no) + " cannot parse '" +
                                                fields[j] + "' at " + where);
      }
      if (*value < 0) throw Error(ErrorCode::negative_count, source + ": " + where);
      if (*value != std::floor(*value)) throw Error(ErrorCode::non_integer_count, source + ": " + where);
      row[j - 1] = *value;
    }
    ids.push_back(fields[0]);
    rows.push_back(std::move(row));
  }
  if (header.empty() || rows.empty()) throw Error(ErrorCode::empty_input, source + ": no data rows");
  Eigen::MatrixXd values(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(header.size() - 1));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) {
      values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
  }
  header.erase(header.begin());
  return CountMatrix(std::move(values), std::move(ids), std::move(header));
}

CountMatrix load_counts(const std::filesystem::path& path, TableFormat format) {
  return parse_counts(textio::read_file(path), format, path.string());
}

CountMatrix load_counts(const std::filesystem::path& path) { return load_counts(path, format_from_path(path)); }

void save_counts(const CountMatrix& counts, const std::filesystem::path& path, TableFormat format) {
  const char delim = delimiter_of(format);
  std::string out = "id";
  for (const auto& name : counts.var_names()) {
    out.push_back(delim);
    out += textio::quote_field(name, delim);
  }
  out.push_back('\n');
  const auto& v = counts.values();
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    out += textio::quote_field(counts.sample_ids()[static_cast<std::size_t>(i)], delim);
    for (Eigen::Index j = 0; j < v.cols(); ++j) {
      out.push_back(delim);
      out += std::to_string(static_cast<long long>(v(i, j)));
    }
    out.push_back('\n');
  }
  textio::write_file(path, out);
}

OffsetVector compute_offsets(const CountMatrix& counts, OffsetMethod method) {
  const auto n = static_cast<Eigen::Index>(counts.n());
  if (method == OffsetMethod::unit) return OffsetVector::unit(counts.n());
  const Eigen::VectorXd totals = counts.values().rowwise().sum();
  for (Eigen::Index i = 0; i < n; ++i) {
    if (totals[i] <= 0) throw Error(ErrorCode::zero_library_size, "sample " + counts.sample_ids()[static_cast<std::size_t>(i)] + " has no counts");
  }
  const double mean_log = totals.array().log().mean();
  return OffsetVector((totals.array().log() - mean_log).exp().matrix());
}

OffsetVector parse_offsets(const std::string& text, std::size_t expected_n) {
  std::istringstream in(text);
  std::string line;
  std::vector<double> values;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto value = textio::parse_double(line);
    if (!value) throw Error(ErrorCode::parse_error, "offset line " + std::to_string(line_no) + " is not a number");
    if (!(*value > 0.0)) throw Error(ErrorCode::nonpositive_offset, "offset line " + std::to_string(line_no));
    values.push_back(*value);
  }
  if (expected_n != 0 && values.size() != expected_n) {
    throw Error(ErrorCode::length_mismatch, "offset file has " + std::to_string(values.size()) + " values for " +
                                                std::to_string(expected_n) + " samples");
  }
  if (values.empty()) throw Error(ErrorCode::empty_input, "offset file is empty");
  return OffsetVector(Eigen::Map<Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size())));
}

OffsetVector load_offsets(const std::filesystem::path& path, std::size_t expected_n) {
  return parse_offsets(textio::read_file(path), expected_n);
}

void save_offsets(const OffsetVector& offsets, const std::filesystem::path& path) {
  std::string out;
  for (Eigen::Index i = 0; i < offsets.values().size(); ++i) {
    out += textio::format_double(offsets.values()[i]);
    out.push_back('\n');
  }
  textio::write_file(path, out);
}

double interquartile_range(std::vector<double> sample) {
  if (sample.empty()) return 0.0;
  std::sort(sample.begin(), sample.end());
  auto quantile = [&](double p) {
    const double pos = p * static_cast<double>(sample.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sample.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sample[lo] + frac * (sample[hi] - sample[lo]);
  };
  return quantile(0.75) - quantile(0.25);
}

CountMatrix filter_top_variable(const CountMatrix& counts, std::size_t top_n) {
  if (top_n == 0 || top_n > counts.d()) {
    throw Error(ErrorCode::invalid_argument, "top_n must be in 1.." + std::to_string(counts.d()));
  }
  std::vector<double> iqr(counts.d());
  std::vector<double> column(counts.n());
  for (std::size_t j = 0; j < counts.d(); ++j) {
    for (std::size_t i = 0; i < counts.n(); ++i) {
      column[i] = std::log1p(counts.values()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
    }
    iqr[j] = interquartile_range(column);
  }
  std::vector<std::size_t> order(counts.d());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return iqr[a] > iqr[b]; });
  order.resize(top_n);
  std::sort(order.begin(), order.end());
  return counts.select_columns(order);
}

}  // namespace mpln::data
