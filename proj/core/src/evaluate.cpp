#include "mplnbc/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include <nlohmann/json.hpp>

#include "mplnbc/error.hpp"

namespace mpln::eval {

namespace {

double choose2(double x) { return 0.5 * x * (x - 1.0); }

std::vector<int> dense_labels(const std::vector<int>& labels, std::size_t& k) {
  std::map<int, int> index;
  std::vector<int> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto [it, inserted] = index.emplace(labels[i], static_cast<int>(index.size()));
    out[i] = it->second;
  }
  k = index.size();
  return out;
}

std::string structure_key(std::size_t G, const std::vector<std::size_t>& groups) {
  std::string out = "G=" + std::to_string(G) + " K=";
  for (std::size_t g = 0; g < groups.size(); ++g) out += (g ? ";" : "") + std::to_string(groups[g]);
  return out;
}

nlohmann::json grid_json(const CountGrid& grid) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < grid.rows(); ++r) {
    std::vector<long long> row(static_cast<std::size_t>(grid.cols()));
    for (Eigen::Index c = 0; c < grid.cols(); ++c) row[static_cast<std::size_t>(c)] = grid(r, c);
    rows.push_back(row);
  }
  return rows;
}

Summary summary_from_json(const nlohmann::json& doc) {
  Summary s;
  if (doc.is_object()) {
    s.mean = doc.at("mean").is_null() ? std::numeric_limits<double>::quiet_NaN() : doc.at("mean").get<double>();
    s.sd = doc.at("sd").is_null() ? std::numeric_limits<double>::quiet_NaN() : doc.at("sd").get<double>();
  }
  return s;
}

}  // namespace

double ari(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) throw Error(ErrorCode::length_mismatch, "label vectors differ in length");
  if (a.size() < 2) throw Error(ErrorCode::invalid_argument, "ARI needs at least 2 observations");
  std::size_t ka = 0;
  std::size_t kb = 0;
  const auto da = dense_labels(a, ka);
  const auto db = dense_labels(b, kb);
  Eigen::MatrixXd table = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(ka), static_cast<Eigen::Index>(kb));
  for (std::size_t i = 0; i < a.size(); ++i) table(da[i], db[i]) += 1.0;
  double index = 0.0;
  for (Eigen::Index r = 0; r < table.rows(); ++r) {
    for (Eigen::Index c = 0; c < table.cols(); ++c) index += choose2(table(r, c));
  }
  double sum_a = 0.0;
  double sum_b = 0.0;
  for (Eigen::Index r = 0; r < table.rows(); ++r) sum_a += choose2(table.row(r).sum());
  for (Eigen::Index c = 0; c < table.cols(); ++c) sum_b += choose2(table.col(c).sum());
  const double expected = sum_a * sum_b / choose2(static_cast<double>(a.size()));
  const double max_index = 0.5 * (sum_a + sum_b);
  if (max_index == expected) return 1.0;
  return (index - expected) / (max_index - expected);
}

std::vector<std::size_t> optimal_assignment(const Eigen::MatrixXd& cost) {
  const auto n = static_cast<std::size_t>(cost.rows());
  if (cost.cols() != cost.rows()) throw Error(ErrorCode::invalid_argument, "assignment needs a square cost matrix");
  constexpr double inf = std::numeric_limits<double>::infinity();
  // Potentials u (rows), v (columns); p[j] is the row matched to column j.
  // Index 0 is a sentinel, real rows and columns are 1-based.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(static_cast<Eigen::Index>(i0 - 1), static_cast<Eigen::Index>(j - 1)) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> out(n);
  for (std::size_t j = 1; j <= n; ++j) out[p[j] - 1] = j - 1;
  return out;
}

std::vector<int> match_labels(const std::vector<int>& a, std::size_t ka, const std::vector<int>& b, std::size_t kb) {
  if (a.size() != b.size()) throw Error(ErrorCode::length_mismatch, "label vectors differ in length");
  const auto k = std::max(ka, kb);
  Eigen::MatrixXd agree = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] < 0 || static_cast<std::size_t>(a[i]) >= ka || b[i] < 0 || static_cast<std::size_t>(b[i]) >= kb) {
      throw Error(ErrorCode::invalid_argument, "label out of range");
    }
    agree(a[i], b[i]) += 1.0;
  }
  const auto assign = optimal_assignment(-agree);
  std::vector<int> out(ka);
  for (std::size_t r = 0; r < ka; ++r) out[r] = assign[r] < kb ? static_cast<int>(assign[r]) : -1;
  return out;
}

double column_misclassification(const ColumnPartition& truth, const ColumnPartition& est) {
  if (truth.d() != est.d()) throw Error(ErrorCode::dimension_mismatch, "partitions differ in d");
  const auto match = match_labels(truth.assign(), truth.K(), est.assign(), est.K());
  std::size_t correct = 0;
  for (std::size_t j = 0; j < truth.d(); ++j) {
    if (match[static_cast<std::size_t>(truth[j])] == est[j]) ++correct;
  }
  return 1.0 - static_cast<double>(correct) / static_cast<double>(truth.d());
}

CountGrid support_count_heatmap(const std::vector<SymMatrix>& estimates) {
  if (estimates.empty()) throw Error(ErrorCode::invalid_argument, "no estimates");
  const auto rows = estimates.front().rows();
  const auto cols = estimates.front().cols();
  CountGrid counts = CountGrid::Zero(rows, cols);
  for (const auto& s : estimates) {
    if (s.rows() != rows || s.cols() != cols) throw Error(ErrorCode::dimension_mismatch, "estimates differ in dimension");
    counts += (s.array() != 0.0).cast<long long>().matrix();
  }
  return counts;
}

ParamMse param_mse(const MixtureModel& truth, const MixtureModel& est, const std::vector<int>& truth_labels,
                   const std::vector<int>& est_labels) {
  if (truth.G() != est.G()) throw Error(ErrorCode::dimension_mismatch, "component counts differ");
  if (truth.d() != est.d()) throw Error(ErrorCode::dimension_mismatch, "dimensions differ");
  const auto G = truth.G();
  const auto match = match_labels(truth_labels, G, est_labels, G);
  ParamMse out;
  for (std::size_t g = 0; g < G; ++g) {
    const auto h = static_cast<std::size_t>(match[g]);
    out.alignment.push_back(h);
    const auto gi = static_cast<Eigen::Index>(g);
    const auto hi = static_cast<Eigen::Index>(h);
    out.mu_mse.push_back((truth.mu.row(gi) - est.mu.row(hi)).squaredNorm() / static_cast<double>(truth.d()));
    const double dp = truth.pi[gi] - est.pi[hi];
    out.pi_mse.push_back(dp * dp);
  }
  return out;
}

ReplicateEval evaluate_fit(const sim::GroundTruth& truth, const vem::FitResult& fit, std::string name) {
  if (truth.model.d() != fit.model.d()) {
    throw Error(ErrorCode::dimension_mismatch, "truth has d=" + std::to_string(truth.model.d()) + " but the fit has d=" +
                                                   std::to_string(fit.model.d()));
  }
  if (truth.row_labels.size() != fit.row_labels.size()) {
    throw Error(ErrorCode::length_mismatch, "truth has " + std::to_string(truth.row_labels.size()) +
                                                " observations but the fit has " + std::to_string(fit.row_labels.size()));
  }
  ReplicateEval r;
  r.name = std::move(name);
  r.true_G = truth.model.G();
  r.fitted_G = fit.model.G();
  for (const auto& p : truth.model.grouping) r.true_groups.push_back(p.K());
  r.row_ari = ari(truth.row_labels, fit.row_labels);
  if (r.true_G != r.fitted_G) {
    r.fitted_groups = fit.groups_per_component();
    return r;
  }
  r.mse = param_mse(truth.model, fit.model, truth.row_labels, fit.row_labels);
  r.structure_correct = true;
  double total = 0.0;
  for (std::size_t g = 0; g < r.true_G; ++g) {
    const auto h = r.mse->alignment[g];
    r.fitted_groups.push_back(fit.model.grouping[h].K());
    r.structure_correct = r.structure_correct && r.fitted_groups.back() == r.true_groups[g];
    r.col_misclass.push_back(column_misclassification(truth.model.grouping[g], fit.model.grouping[h]));
    total += r.col_misclass.back();
    r.support.push_back(support_count_heatmap({fit.model.sigma[h]}));
  }
  r.col_misclass_mean = total / static_cast<double>(r.true_G);
  return r;
}

Summary summarize(const std::vector<double>& values) {
  Summary s;
  if (values.empty()) {
    s.mean = s.sd = std::numeric_limits<double>::quiet_NaN();
    return s;
  }
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

EvalReport aggregate(const std::vector<ReplicateEval>& replicates, std::string name) {
  if (replicates.empty()) throw Error(ErrorCode::empty_input, "no replicates to aggregate");
  EvalReport report;
  report.name = std::move(name);
  report.replicates = replicates;
  report.n_replicates = replicates.size();
  std::vector<double> aris, misclass, mu, pi;
  for (const auto& r : replicates) {
    ++report.structure_counts[structure_key(r.fitted_G, r.fitted_groups)];
    aris.push_back(r.row_ari);
    if (r.true_G == r.fitted_G) {
      ++report.g_correct;
      misclass.push_back(r.col_misclass_mean);
      const auto& m = *r.mse;
      mu.push_back(std::accumulate(m.mu_mse.begin(), m.mu_mse.end(), 0.0) / static_cast<double>(m.mu_mse.size()));
      pi.push_back(std::accumulate(m.pi_mse.begin(), m.pi_mse.end(), 0.0) / static_cast<double>(m.pi_mse.size()));
    }
    if (r.structure_correct) {
      ++report.structure_correct;
      ++report.support_replicates;
      if (report.support_counts.empty()) {
        report.support_counts = r.support;
      } else {
        if (report.support_counts.size() != r.support.size()) {
          throw Error(ErrorCode::dimension_mismatch, "replicates disagree on the number of components");
        }
        for (std::size_t g = 0; g < r.support.size(); ++g) {
          if (report.support_counts[g].rows() != r.support[g].rows()) {
            throw Error(ErrorCode::dimension_mismatch, "replicates disagree on d");
          }
          report.support_counts[g] += r.support[g];
        }
      }
    }
  }
  report.row_ari = summarize(aris);
  report.col_misclass = summarize(misclass);
  report.mu_mse = summarize(mu);
  report.pi_mse = summarize(pi);
  return report;
}

// ---------------------------------------------------------------------------
// Serialization

nlohmann::json to_json(const ReplicateEval& r) {
  nlohmann::json doc;
  doc["name"] = r.name;
  doc["true_G"] = r.true_G;
  doc["fitted_G"] = r.fitted_G;
  doc["true_groups"] = r.true_groups;
  doc["fitted_groups"] = r.fitted_groups;
  doc["structure_correct"] = r.structure_correct;
  doc["row_ari"] = r.row_ari;
  doc["col_misclass"] = r.col_misclass;
  doc["col_misclass_mean"] = r.col_misclass.empty() ? nlohmann::json(nullptr) : nlohmann::json(r.col_misclass_mean);
  if (r.mse) {
    doc["mu_mse"] = r.mse->mu_mse;
    doc["pi_mse"] = r.mse->pi_mse;
    doc["alignment"] = r.mse->alignment;
  } else {
    doc["mu_mse"] = nullptr;
    doc["pi_mse"] = nullptr;
    doc["alignment"] = nullptr;
  }
  return doc;
}

nlohmann::json to_json(const EvalReport& report) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  auto summary = [&](const Summary& s) { return nlohmann::json{{"mean", num(s.mean)}, {"sd", num(s.sd)}}; };
  nlohmann::json doc;
  doc["name"] = report.name;
  doc["n_replicates"] = report.n_replicates;
  doc["structure_counts"] = report.structure_counts;
  doc["structure_correct"] = report.structure_correct;
  doc["g_correct"] = report.g_correct;
  doc["row_ari"] = summary(report.row_ari);
  doc["col_misclass"] = summary(report.col_misclass);
  doc["mu_mse"] = summary(report.mu_mse);
  doc["pi_mse"] = summary(report.pi_mse);
  doc["support_replicates"] = report.support_replicates;
  auto& support = doc["support_counts"] = nlohmann::json::array();
  for (const auto& grid : report.support_counts) support.push_back(grid_json(grid));
  auto& reps = doc["replicates"] = nlohmann::json::array();
  for (const auto& r : report.replicates) reps.push_back(to_json(r));
  return doc;
}

EvalReport report_from_json(const nlohmann::json& doc) {
  try {
    EvalReport report;
    report.name = doc.at("name").get<std::string>();
    report.n_replicates = doc.at("n_replicates").get<std::size_t>();
    report.structure_counts = doc.at("structure_counts").get<std::map<std::string, std::size_t>>();
    report.structure_correct = doc.at("structure_correct").get<std::size_t>();
    report.g_correct = doc.at("g_correct").get<std::size_t>();
    report.row_ari = summary_from_json(doc.at("row_ari"));
    report.col_misclass = summary_from_json(doc.at("col_misclass"));
    report.mu_mse = summary_from_json(doc.at("mu_mse"));
    report.pi_mse = summary_from_json(doc.at("pi_mse"));
    report.support_replicates = doc.value("support_replicates", std::size_t{0});
    return report;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("evaluation report: ") + e.what());
  }
}

std::string count_grid_csv(const CountGrid& counts) {
  std::string out;
  for (Eigen::Index r = 0; r < counts.rows(); ++r) {
    for (Eigen::Index c = 0; c < counts.cols(); ++c) {
      if (c) out += ',';
      out += std::to_string(counts(r, c));
    }
    out += '\n';
  }
  return out;
}

std::string count_grid_pgm(const CountGrid& counts) {
  std::string out = "P5\n" + std::to_string(counts.cols()) + " " + std::to_string(counts.rows()) + "\n255\n";
  const long long top = counts.size() ? counts.maxCoeff() : 0;
  for (Eigen::Index r = 0; r < counts.rows(); ++r) {
    for (Eigen::Index c = 0; c < counts.cols(); ++c) {
      const long long v = top > 0 ? (counts(r, c) * 255 + top / 2) / top : 0;
      out += static_cast<char>(static_cast<unsigned char>(v));
    }
  }
  return out;
}

}  // namespace mpln::eval
