#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include "mplnbc/data.hpp"
#include "mplnbc/linalg.hpp"

namespace mpln {

using linalg::SymMatrix;

/// Assignment of d variables to K column groups. Labels are 0-based and every
/// label in 0..K-1 is used at least once.
class ColumnPartition {
 public:
  ColumnPartition() = default;
  explicit ColumnPartition(std::vector<int> assign);

  static ColumnPartition single_block(std::size_t d) { return ColumnPartition(std::vector<int>(d, 0)); }
  static ColumnPartition singletons(std::size_t d);
  /// Contiguous blocks of the given sizes, in order.
  static ColumnPartition from_block_sizes(const std::vector<std::size_t>& sizes);
  /// Blocks are the connected components of the nonzero pattern of `sigma`.
  static ColumnPartition from_support(const SymMatrix& sigma);

  std::size_t d() const noexcept { return assign_.size(); }
  std::size_t K() const noexcept { return k_; }
  int operator[](std::size_t j) const { return assign_[j]; }
  const std::vector<int>& assign() const noexcept { return assign_; }

  /// Member variable indices of each group, ascending, ordered by label.
  std::vector<std::vector<int>> blocks() const;
  std::vector<std::size_t> block_sizes() const;

  /// Relabels groups by order of first occurrence (variable 0 is in group 0).
  ColumnPartition canonical() const;

  friend bool operator==(const ColumnPartition& a, const ColumnPartition& b) { return a.assign_ == b.assign_; }

 private:
  std::vector<int> assign_;
  std::size_t k_ = 0;
};

/// G-component MPLN mixture with block-diagonal component covariances.
struct MixtureModel {
  Eigen::VectorXd pi;               // G
  Eigen::MatrixXd mu;               // G x d, latent Gaussian means
  std::vector<SymMatrix> sigma;     // G blocks-only covariances
  std::vector<ColumnPartition> grouping;

  std::size_t G() const noexcept { return static_cast<std::size_t>(pi.size()); }
  std::size_t d() const noexcept { return static_cast<std::size_t>(mu.cols()); }

  /// Checks shapes, the simplex constraint, and exact zeros outside the blocks.
  void validate() const;
};

/// Variational parameters q(x_ig) = N(m_ig, S_ig) plus responsibilities.
struct VariationalState {
  std::size_t n = 0;
  std::size_t G = 0;
  std::size_t d = 0;
  Eigen::MatrixXd m;               // d x (n*G), column i*G+g
  std::vector<SymMatrix> s;        // n*G entries
  std::vector<double> logdet_s;    // cached log|S_ig|
  Eigen::MatrixXd z;               // n x G

  VariationalState() = default;
  VariationalState(std::size_t n_obs, std::size_t n_comp, std::size_t dim);

  std::size_t index(std::size_t i, std::size_t g) const noexcept { return i * G + g; }
  auto mean(std::size_t i, std::size_t g) { return m.col(static_cast<Eigen::Index>(index(i, g))); }
  auto mean(std::size_t i, std::size_t g) const { return m.col(static_cast<Eigen::Index>(index(i, g))); }
  SymMatrix& cov(std::size_t i, std::size_t g) { return s[index(i, g)]; }
  const SymMatrix& cov(std::size_t i, std::size_t g) const { return s[index(i, g)]; }

  /// Reorders components: new component h takes old component perm[h].
  VariationalState permuted(const std::vector<std::size_t>& perm) const;
};

/// Per-component quantities that stay fixed while the variational parameters
/// move: the inverse covariance (dense and per block) and log|Sigma|.
struct ComponentCache {
  std::vector<std::vector<int>> blocks;
  SymMatrix sigma_inv;                 // zero outside blocks
  std::vector<SymMatrix> block_inv;    // one per block
  double logdet_sigma = 0.0;

  /// Throws NotPositiveDefinite if a block of sigma cannot be factored.
  static ComponentCache build(const SymMatrix& sigma, const ColumnPartition& partition);
  static ComponentCache build(const SymMatrix& sigma);
};

/// Count-only constants for one observation that the ELBO needs.
struct ObservationTerms {
  double log_c = 0.0;
  double sum_y = 0.0;
  double sum_log_factorial = 0.0;  // sum_j log(y_j!)
};

ObservationTerms observation_terms(const Eigen::Ref<const Eigen::VectorXd>& y, double log_c);

/// log(y_ij!) summed per observation, computed once per dataset via lgamma.
std::vector<ObservationTerms> observation_terms(const data::CountMatrix& counts, const data::OffsetVector& offsets);

/// Per-observation evidence lower bound F(q, y) for q = N(m, S) under the
/// component N(mu, Sigma) with Poisson(C exp x) emissions.
double elbo_observation(const Eigen::VectorXd& y, double log_c, const Eigen::VectorXd& m, const SymMatrix& s,
                        const Eigen::VectorXd& mu, const SymMatrix& sigma);

/// Same quantity with precomputed pieces; used inside the EM loop.
double elbo_observation(const Eigen::Ref<const Eigen::VectorXd>& y, const ObservationTerms& obs,
                        const Eigen::Ref<const Eigen::VectorXd>& m, const SymMatrix& s, double logdet_s,
                        const Eigen::Ref<const Eigen::VectorXd>& mu, const ComponentCache& cache);

/// Analytic gradient of F with respect to m: y - exp(log C + m + diag(S)/2) - Sigma^{-1}(m - mu).
Eigen::VectorXd elbo_gradient_m(const Eigen::VectorXd& y, double log_c, const Eigen::VectorXd& m, const SymMatrix& s,
                                const Eigen::VectorXd& mu, const SymMatrix& sigma);

/// n x G matrix of F(q_ig, y_i) for the whole dataset.
Eigen::MatrixXd elbo_matrix(const data::CountMatrix& counts, const std::vector<ObservationTerms>& obs,
                            const VariationalState& state, const MixtureModel& model,
                            const std::vector<ComponentCache>& caches);

/// z_ig = pi_g exp(F_ig) / sum_h pi_h exp(F_ih) via max-shifted log-sum-exp;
/// entries are floored at 1e-300 (rows renormalized only when the floor binds).
Eigen::MatrixXd responsibilities(const Eigen::MatrixXd& elbo, const Eigen::VectorXd& pi);

/// sum_i sum_g z_ig (log pi_g + F_ig): the complete-data lower bound used by BIC.
double lower_bound(const VariationalState& state, const MixtureModel& model, const Eigen::MatrixXd& elbo);
double lower_bound(const Eigen::MatrixXd& z, const Eigen::VectorXd& pi, const Eigen::MatrixXd& elbo);

/// lower_bound plus the entropy of the responsibilities. This is the quantity
/// each EM step provably does not decrease; its maximum over z equals
/// sum_i log sum_g pi_g exp(F_ig).
double variational_objective(const Eigen::MatrixXd& z, const Eigen::VectorXd& pi, const Eigen::MatrixXd& elbo);

/// (G - 1) + G d + sum over components and blocks of b (b + 1) / 2.
std::size_t count_free_parameters(std::size_t G, std::size_t d, const std::vector<ColumnPartition>& groupings);

nlohmann::json to_json(const ColumnPartition& partition);
nlohmann::json to_json(const MixtureModel& model);
MixtureModel model_from_json(const nlohmann::json& doc);

}  // namespace mpln
