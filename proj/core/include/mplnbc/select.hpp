#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "mplnbc/data.hpp"
#include "mplnbc/vem.hpp"

namespace mpln::select {

/// 2 * lower_bound - p * log(n); larger is better. Requires n >= 1 and p >= 1.
double bic(double lower_bound, std::size_t p, std::size_t n);

/// One (G, K-spec) fit of a selection grid.
struct GridCell {
  std::size_t G = 1;
  vem::KSpec k_spec = vem::EqualK{1};
  bool ok = false;                   // false when every start failed
  std::string status = "ok";         // failure reason otherwise
  std::vector<std::size_t> groups;   // fitted K per component
  double lower_bound = 0.0;
  std::size_t free_parameters = 0;
  double bic = 0.0;
  bool converged = false;
  std::size_t iterations = 0;
  double wall_time_ms = 0.0;

  /// "2" in equal-K mode, "2;3" for the fitted per-component counts otherwise.
  std::string k_label() const;
};

struct SelectionGrid {
  std::vector<std::size_t> g_values;
  std::vector<std::size_t> k_values;  // equal-K mode
  std::size_t k_max = 0;              // varying-K mode
  std::vector<GridCell> cells;        // G-major, then K
};

struct Selection {
  vem::FitResult best;
  std::size_t best_cell = 0;
  SelectionGrid grid;
};

/// Index of the preferred cell: converged cells first, then larger BIC, then
/// smaller G, then smaller K. Returns nullopt when no cell succeeded.
std::optional<std::size_t> pick_best(const std::vector<GridCell>& cells);

/// Fits every (G, K) with K shared across components, G = 1..g_max and
/// K = 1..min(k_max, d); cell c runs with seed derive_seed(config.seed, c).
/// `jobs` > 1 runs cells concurrently; results do not depend on it.
Selection grid_search_equal_k(const data::CountMatrix& counts, const data::OffsetVector& offsets, std::size_t g_max,
                              std::size_t k_max, const vem::FitConfig& config, std::size_t jobs = 1);

/// For each G = 1..g_max, fits with per-component K chosen by silhouette
/// (bounded by k_max) at every covariance update; G is then chosen by BIC.
Selection fit_varying_k(const data::CountMatrix& counts, const data::OffsetVector& offsets, std::size_t g_max,
                        std::size_t k_max, const vem::FitConfig& config, std::size_t jobs = 1);

/// G,K-spec,lower_bound,p,BIC,converged,iterations,wall_time_ms,status.
/// Timing is written as 0 when `include_timing` is false so reruns compare equal.
std::string grid_csv(const SelectionGrid& grid, bool include_timing = true);

}  // namespace mpln::select
