#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include "mplnbc/colgroup.hpp"
#include "mplnbc/data.hpp"
#include "mplnbc/model.hpp"

namespace mpln::vem {

struct FitConfig {
  std::size_t max_em_iter = 500;
  double elbo_rel_tol = 1e-6;
  std::size_t inner_iter = 10;
  double inner_tol = 1e-6;
  std::size_t n_starts = 5;
  std::uint64_t seed = 0;
  colgroup::Linkage linkage = colgroup::Linkage::average;
  colgroup::SingletonRule singleton_rule = colgroup::SingletonRule::zero_score;

  /// Throws InvalidArgument unless tolerances are positive and counts >= 1.
  void validate() const;
};

/// Same number of column groups in every component.
struct EqualK {
  std::size_t k = 1;
};
/// A fixed group count per component.
struct PerComponentK {
  std::vector<std::size_t> k;
};
/// Group count re-chosen per component by average silhouette at every
/// covariance update, bounded by k_max.
struct AutoK {
  std::size_t k_max = 2;
};
using KSpec = std::variant<EqualK, PerComponentK, AutoK>;

/// "2" for EqualK, "2;3" for PerComponentK, "auto<=5" for AutoK.
std::string describe(const KSpec& spec);

struct FitResult {
  MixtureModel model;
  VariationalState state;
  std::vector<int> row_labels;          // argmax of z, 0-based
  std::vector<double> elbo_trace;       // variational objective, entry 0 = initialization
  double lower_bound = 0.0;             // sum z (log pi + F) at the final parameters
  double bic = 0.0;
  std::size_t free_parameters = 0;
  bool converged = false;
  std::size_t iterations = 0;
  std::size_t restart = 0;              // index of the winning start
  std::vector<std::map<std::size_t, double>> silhouette_scores;  // AutoK only, last update

  std::vector<std::size_t> groups_per_component() const;
};

/// Output of the inner variational optimization for one (i, g) pair.
struct ObservationUpdate {
  Eigen::VectorXd m;
  SymMatrix s;
  double logdet_s = 0.0;
  double elbo = 0.0;
  std::size_t sweeps = 0;
};

/// One fixed-point step S <- [Sigma^{-1} + diag(exp(log C + m + diag(S)/2))]^{-1}.
SymMatrix update_s(double log_c, const Eigen::VectorXd& m, const SymMatrix& s, const SymMatrix& sigma);

/// One Newton step m <- m - S (exp(log C + m + diag(S)/2) + Sigma^{-1}(m - mu) - y)
/// taken with the already updated S.
Eigen::VectorXd update_m(const Eigen::VectorXd& y, double log_c, const Eigen::VectorXd& m, const SymMatrix& s_new,
                         const Eigen::VectorXd& mu, const SymMatrix& sigma);

/// Alternating S-then-m sweeps (at most inner_iter), stopping once the largest
/// change in m or S drops below inner_tol. A sweep that lowers F is retried with
/// half the m-step; if that also lowers F the pre-sweep pair is returned.
std::pair<Eigen::VectorXd, SymMatrix> update_variational(const Eigen::VectorXd& y, double log_c, const Eigen::VectorXd& m,
                                                         const SymMatrix& s, const Eigen::VectorXd& mu,
                                                         const SymMatrix& sigma, std::size_t inner_iter, double inner_tol);

/// The same update against a prepared component; `elbo_start` is F(m, S).
ObservationUpdate update_observation(const Eigen::Ref<const Eigen::VectorXd>& y, const ObservationTerms& obs,
                                     const Eigen::Ref<const Eigen::VectorXd>& m, const SymMatrix& s, double logdet_s,
                                     double elbo_start, const Eigen::Ref<const Eigen::VectorXd>& mu,
                                     const ComponentCache& cache, std::size_t inner_iter, double inner_tol);

/// pi_g = sum_i z_ig / n.
Eigen::VectorXd m_step_pi(const Eigen::MatrixXd& z);

/// mu_g = sum_i z_ig m_ig / sum_i z_ig. Throws EmptyComponent when a column of z
/// sums below 1e-10.
Eigen::MatrixXd m_step_mu(const Eigen::MatrixXd& z, const VariationalState& state);

/// W_g = [sum_i z_ig (m_ig - mu)(m_ig - mu)^T + sum_i z_ig S_ig] / sum_i z_ig.
/// `m` is n x d (component g's variational means), `s` holds the n matching S_ig.
SymMatrix compute_w(const Eigen::VectorXd& z, const Eigen::MatrixXd& m, const std::vector<SymMatrix>& s,
                    const Eigen::VectorXd& mu);
SymMatrix compute_w(const VariationalState& state, std::size_t g, const Eigen::VectorXd& mu);

/// m_ig = log((y_i + 0.5) / C_i), S_ig = 0.1 I. Responsibilities come from
/// k-means on the same log scale for restart 0 and from Dirichlet(1, ..., 1)
/// draws otherwise; G = 1 always gives z = 1.
VariationalState initialize(const data::CountMatrix& counts, const data::OffsetVector& offsets, std::size_t G,
                            const FitConfig& config, std::size_t restart_index);

/// Runs the variational EM from a given starting state.
FitResult run_em(const data::CountMatrix& counts, const data::OffsetVector& offsets, VariationalState start,
                 const KSpec& k_spec, const FitConfig& config);

/// Multi-start fit; keeps the start with the largest final lower bound.
FitResult fit(const data::CountMatrix& counts, const data::OffsetVector& offsets, std::size_t G, const KSpec& k_spec,
              const FitConfig& config);

nlohmann::json to_json(const FitResult& result, const std::vector<std::string>& sample_ids);
/// Restores model, labels, trace and scalars (the variational state is not stored).
FitResult fit_result_from_json(const nlohmann::json& doc);

/// "sample_id,cluster" with 1-based clusters.
std::string labels_csv(const FitResult& result, const std::vector<std::string>& sample_ids);
/// "iteration,objective"; iteration 0 is the initialization.
std::string trace_csv(const FitResult& result);
/// "variable,component,group" with 1-based component and group.
std::string partition_csv(const MixtureModel& model, const std::vector<std::string>& var_names);

}  // namespace mpln::vem
