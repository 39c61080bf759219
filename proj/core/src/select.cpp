#include "mplnbc/select.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <mutex>
#include <numeric>
#include <thread>

#include "mplnbc/error.hpp"
#include "mplnbc/seed.hpp"
#include "mplnbc/textio.hpp"

namespace mpln::select {

double bic(double lower_bound, std::size_t p, std::size_t n) {
  if (n < 1) throw Error(ErrorCode::invalid_argument, "BIC needs n >= 1");
  if (p < 1) throw Error(ErrorCode::invalid_argument, "BIC needs p >= 1");
  return 2.0 * lower_bound - static_cast<double>(p) * std::log(static_cast<double>(n));
}

std::string GridCell::k_label() const {
  if (std::holds_alternative<vem::EqualK>(k_spec) || groups.empty()) return vem::describe(k_spec);
  std::string out;
  for (std::size_t g = 0; g < groups.size(); ++g) out += (g ? ";" : "") + std::to_string(groups[g]);
  return out;
}

namespace {

std::size_t total_groups(const GridCell& cell) {
  return std::accumulate(cell.groups.begin(), cell.groups.end(), std::size_t{0});
}

// Strict preference between two successful cells; the cell index settles
// anything the criteria leave equal, so the winner never depends on timing.
bool preferred(const GridCell& a, std::size_t ia, const GridCell& b, std::size_t ib) {
  if (a.converged != b.converged) return a.converged;
  if (a.bic != b.bic) return a.bic > b.bic;
  if (a.G != b.G) return a.G < b.G;
  if (total_groups(a) != total_groups(b)) return total_groups(a) < total_groups(b);
  return ia < ib;
}

Selection run_grid(const data::CountMatrix& counts, const data::OffsetVector& offsets, SelectionGrid grid,
                   const std::vector<vem::KSpec>& specs, const vem::FitConfig& config, std::size_t jobs) {
  config.validate();
  const auto n_cells = grid.cells.size();
  std::optional<vem::FitResult> best;
  std::size_t best_index = 0;
  std::mutex best_mutex;
  std::atomic<std::size_t> next{0};

  auto worker = [&] {
    for (std::size_t c = next++; c < n_cells; c = next++) {
      auto& cell = grid.cells[c];
      vem::FitConfig cell_config = config;
      cell_config.seed = derive_seed(config.seed, c);
      const auto t0 = std::chrono::steady_clock::now();
      try {
        auto res = vem::fit(counts, offsets, cell.G, specs[c], cell_config);
        cell.ok = true;
        cell.status = "ok";
        cell.groups = res.groups_per_component();
        cell.lower_bound = res.lower_bound;
        cell.free_parameters = res.free_parameters;
        cell.bic = res.bic;
        cell.converged = res.converged;
        cell.iterations = res.iterations;
        cell.wall_time_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        std::lock_guard lock(best_mutex);
        if (!best || preferred(cell, c, grid.cells[best_index], best_index)) {
          best = std::move(res);
          best_index = c;
        }
      } catch (const Error& e) {
        cell.ok = false;
        cell.status = e.what();
        cell.wall_time_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      }
    }
  };

  const std::size_t threads = std::max<std::size_t>(1, std::min(jobs, n_cells));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  if (!best) {
    std::string detail;
    for (const auto& cell : grid.cells) {
      detail += (detail.empty() ? "" : "; ") + std::string("G=") + std::to_string(cell.G) + " K=" + cell.k_label() + ": " + cell.status;
    }
    throw Error(ErrorCode::all_cells_failed, "every grid cell failed: " + detail);
  }
  Selection out;
  out.best = std::move(*best);
  out.best_cell = best_index;
  out.grid = std::move(grid);
  return out;
}

void check_grid_inputs(const data::CountMatrix& counts, const data::OffsetVector& offsets, std::size_t g_max) {
  if (counts.n() < 2) throw Error(ErrorCode::invalid_argument, "model selection needs at least 2 observations");
  if (offsets.size() != counts.n()) throw Error(ErrorCode::length_mismatch, "offsets do not match sample count");
  if (g_max < 1 || g_max > counts.n()) throw Error(ErrorCode::invalid_argument, "g_max must lie in 1..n");
}

}  // namespace

std::optional<std::size_t> pick_best(const std::vector<GridCell>& cells) {
  std::optional<std::size_t> best;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    if (!cells[c].ok) continue;
    if (!best || preferred(cells[c], c, cells[*best], *best)) best = c;
  }
  return best;
}

Selection grid_search_equal_k(const data::CountMatrix& counts, const data::OffsetVector& offsets, std::size_t g_max,
                              std::size_t k_max, const vem::FitConfig& config, std::size_t jobs) {
  check_grid_inputs(counts, offsets, g_max);
  if (k_max < 1) throw Error(ErrorCode::invalid_argument, "k_max must be at least 1");
  const auto k_top = std::min(k_max, counts.d());
  SelectionGrid grid;
  std::vector<vem::KSpec> specs;
  for (std::size_t g = 1; g <= g_max; ++g) grid.g_values.push_back(g);
  for (std::size_t k = 1; k <= k_top; ++k) grid.k_values.push_back(k);
  for (auto g : grid.g_values) {
    for (auto k : grid.k_values) {
      GridCell cell;
      cell.G = g;
      cell.k_spec = vem::EqualK{k};
      grid.cells.push_back(cell);
      specs.emplace_back(vem::EqualK{k});
    }
  }
  return run_grid(counts, offsets, std::move(grid), specs, config, jobs);
}

Selection fit_varying_k(const data::CountMatrix& counts, const data::OffsetVector& offsets, std::size_t g_max,
                        std::size_t k_max, const vem::FitConfig& config, std::size_t jobs) {
  check_grid_inputs(counts, offsets, g_max);
  if (k_max < 2 || k_max > counts.d()) throw Error(ErrorCode::invalid_argument, "k_max must lie in 2..d");
  SelectionGrid grid;
  grid.k_max = k_max;
  std::vector<vem::KSpec> specs;
  for (std::size_t g = 1; g <= g_max; ++g) {
    grid.g_values.push_back(g);
    GridCell cell;
    cell.G = g;
    cell.k_spec = vem::AutoK{k_max};
    grid.cells.push_back(cell);
    specs.emplace_back(vem::AutoK{k_max});
  }
  return run_grid(counts, offsets, std::move(grid), specs, config, jobs);
}

std::string grid_csv(const SelectionGrid& grid, bool include_timing) {
  std::string out = "G,K-spec,lower_bound,p,BIC,converged,iterations,wall_time_ms,status\n";
  for (const auto& cell : grid.cells) {
    out += std::to_string(cell.G) + "," + textio::quote_field(cell.k_label()) + ",";
    if (cell.ok) {
      out += textio::format_double(cell.lower_bound) + "," + std::to_string(cell.free_parameters) + "," +
             textio::format_double(cell.bic) + "," + (cell.converged ? "true" : "false") + "," +
             std::to_string(cell.iterations) + ",";
    } else {
      out += ",,,false,,";
    }
    out += (include_timing ? textio::format_double(cell.wall_time_ms) : std::string("0")) + "," +
           textio::quote_field(cell.status) + "\n";
  }
  return out;
}

}  // namespace mpln::select
