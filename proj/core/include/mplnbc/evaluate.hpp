#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include "mplnbc/model.hpp"
#include "mplnbc/simulate.hpp"
#include "mplnbc/vem.hpp"

namespace mpln::eval {

using CountGrid = Eigen::Matrix<long long, Eigen::Dynamic, Eigen::Dynamic>;

/// Hubert-Arabie adjusted Rand index from the contingency table. Returns 1
/// when both labelings are trivial (the index is 0/0 there). Labels may be
/// any integers. Throws LengthMismatch, or InvalidArgument for n < 2.
double ari(const std::vector<int>& a, const std::vector<int>& b);

/// Minimum-cost perfect matching on a square cost matrix (Hungarian method).
/// Entry r of the result is the column assigned to row r.
std::vector<std::size_t> optimal_assignment(const Eigen::MatrixXd& cost);

/// Rectangular agreement table padded to max(rows, cols) and matched to
/// maximize total agreement; entry r is the matched column of row r, or -1
/// when row r falls on padding.
std::vector<int> match_labels(const std::vector<int>& a, std::size_t ka, const std::vector<int>& b, std::size_t kb);

/// Smallest fraction of variables placed in the wrong group over all
/// bijections between (padded) group labels.
double column_misclassification(const ColumnPartition& truth, const ColumnPartition& est);

/// Entry (i, j) counts the estimates with a nonzero (i, j) entry.
CountGrid support_count_heatmap(const std::vector<SymMatrix>& estimates);

struct ParamMse {
  std::vector<double> mu_mse;          // per true component, mean over d coordinates
  std::vector<double> pi_mse;          // per true component
  std::vector<std::size_t> alignment;  // true component g <-> estimated alignment[g]
};

/// Aligns estimated components to the true ones by maximal row-label
/// agreement, then reports squared errors. Throws DimensionMismatch when G or
/// d differ.
ParamMse param_mse(const MixtureModel& truth, const MixtureModel& est, const std::vector<int>& truth_labels,
                   const std::vector<int>& est_labels);

/// Metrics for one fitted replicate against its ground truth.
struct ReplicateEval {
  std::string name;
  std::size_t true_G = 0;
  std::size_t fitted_G = 0;
  std::vector<std::size_t> true_groups;
  std::vector<std::size_t> fitted_groups;   // aligned to the true components when G matches
  bool structure_correct = false;           // G matches and every aligned K matches
  double row_ari = 0.0;
  std::vector<double> col_misclass;         // per true component; empty when G differs
  double col_misclass_mean = 0.0;
  std::optional<ParamMse> mse;              // only when G matches
  std::vector<CountGrid> support;           // per true component, 0/1, only when G matches
};

ReplicateEval evaluate_fit(const sim::GroundTruth& truth, const vem::FitResult& fit, std::string name = {});

struct Summary {
  double mean = 0.0;
  double sd = 0.0;  // sample standard deviation, 0 for a single value
};
Summary summarize(const std::vector<double>& values);

/// Aggregate over replicates of one study.
struct EvalReport {
  std::string name;
  std::vector<ReplicateEval> replicates;
  std::size_t n_replicates = 0;
  std::map<std::string, std::size_t> structure_counts;  // "G=2 K=2;3" -> replicates
  std::size_t structure_correct = 0;
  std::size_t g_correct = 0;
  Summary row_ari;
  Summary col_misclass;      // over replicates with matching G
  Summary mu_mse;            // per-replicate mean over components
  Summary pi_mse;
  std::size_t support_replicates = 0;   // replicates with the correct structure
  std::vector<CountGrid> support_counts;  // summed over those replicates
};

EvalReport aggregate(const std::vector<ReplicateEval>& replicates, std::string name = {});

nlohmann::json to_json(const ReplicateEval& r);
nlohmann::json to_json(const EvalReport& report);
/// Reads back the summary fields written by to_json; replicate details are not restored.
EvalReport report_from_json(const nlohmann::json& doc);

/// Comma-separated integer matrix, no header.
std::string count_grid_csv(const CountGrid& counts);
/// Binary 8-bit PGM (P5); the largest count maps to 255, zero to 0, linearly.
std::string count_grid_pgm(const CountGrid& counts);

}  // namespace mpln::eval
