#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include "mplnbc/data.hpp"
#include "mplnbc/model.hpp"

namespace mpln::sim {

/// Everything needed to generate one MPLN mixture dataset.
struct SimSpec {
  std::string name;
  std::size_t n = 0;
  std::size_t d = 0;
  Eigen::VectorXd pi;                                   // G
  Eigen::MatrixXd mu;                                   // G x d
  std::vector<std::vector<std::size_t>> block_sizes;    // per component, contiguous blocks
  std::pair<double, double> corr_range{0.4, 0.8};       // magnitudes of within-block correlations
  std::pair<double, double> variance_range{0.5, 1.0};
  std::optional<Eigen::VectorXd> offsets;               // unit offsets when empty
  std::uint64_t seed = 0;                               // data draws (labels, X, Y)
  std::uint64_t covariance_seed = 0;                    // component covariances

  std::size_t G() const noexcept { return static_cast<std::size_t>(pi.size()); }

  /// Throws InvalidArgument / DimensionMismatch on an inconsistent spec.
  void validate() const;
};

struct GroundTruth {
  std::vector<int> row_labels;  // 0-based
  MixtureModel model;           // grouping holds the true column partitions
};

struct Dataset {
  data::CountMatrix counts;
  data::OffsetVector offsets;
  GroundTruth truth;
};

/// Block-diagonal covariance with contiguous blocks. Each block is
/// D^{1/2} R D^{1/2}: D has entries uniform in `var_range`, and R has
/// off-diagonal magnitudes uniform in `corr_range` with signs s_a s_b taken
/// from a random sign per variable. A draw of R whose smallest eigenvalue is
/// below 0.05 is discarded; ExhaustedRedraws after 100 discards.
SymMatrix sample_block_covariance(const std::vector<std::size_t>& block_sizes, std::pair<double, double> corr_range,
                                  std::pair<double, double> var_range, std::uint64_t seed);

/// The generating model of a spec; covariances come from `covariance_seed`.
MixtureModel spec_model(const SimSpec& spec);

/// Labels ~ Categorical(pi), X_i ~ N(mu_g, Sigma_g), Y_ij ~ Poisson(C_i exp X_ij).
Dataset sample_dataset(const SimSpec& spec);

/// Built-in studies 1..12. Means are fixed per study; `seed` is left at 0 for
/// the caller to set per replicate. Throws UnknownPreset otherwise.
SimSpec preset(int study);

nlohmann::json to_json(const SimSpec& spec);
SimSpec spec_from_json(const nlohmann::json& doc);

/// {"labels": 1-based, "model": ...}.
nlohmann::json to_json(const GroundTruth& truth);
GroundTruth truth_from_json(const nlohmann::json& doc);

}  // namespace mpln::sim
