#include "mplnbc/vem.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <sstream>

#include <Eigen/Cholesky>
#include <nlohmann/json.hpp>

#include "mplnbc/error.hpp"
#include "mplnbc/seed.hpp"
#include "mplnbc/select.hpp"
#include "mplnbc/textio.hpp"

namespace mpln::vem {

namespace {

struct SStep {
  SymMatrix s;
  double logdet = 0.0;
};

// In-place inverse of a small SPD matrix (column-major, b x b) through its
// Cholesky factor; returns false when a pivot is not positive. On success
// `logdet` holds log|a| of the input.
bool small_spd_inverse(double* a, Eigen::Index b, double& logdet) {
  // Factor: lower triangle of a becomes L.
  logdet = 0.0;
  for (Eigen::Index j = 0; j < b; ++j) {
    double diag = a[j + j * b];
    for (Eigen::Index k = 0; k < j; ++k) diag -= a[j + k * b] * a[j + k * b];
    if (!(diag > 0.0)) return false;
    const double ljj = std::sqrt(diag);
    a[j + j * b] = ljj;
    logdet += 2.0 * std::log(ljj);
    for (Eigen::Index i = j + 1; i < b; ++i) {
      double v = a[i + j * b];
      for (Eigen::Index k = 0; k < j; ++k) v -= a[i + k * b] * a[j + k * b];
      a[i + j * b] = v / ljj;
    }
  }
  // Invert L in place (lower triangle).
  for (Eigen::Index j = 0; j < b; ++j) {
    a[j + j * b] = 1.0 / a[j + j * b];
    for (Eigen::Index i = j + 1; i < b; ++i) {
      double v = 0.0;
      for (Eigen::Index k = j; k < i; ++k) v -= a[i + k * b] * a[k + j * b];
      a[i + j * b] = v / a[i + i * b];
    }
  }
  // a^{-1} = L^{-T} L^{-1}; fill the upper triangle first, then mirror.
  for (Eigen::Index j = 0; j < b; ++j) {
    for (Eigen::Index i = 0; i <= j; ++i) {
      double v = 0.0;
      for (Eigen::Index k = j; k < b; ++k) v += a[k + i * b] * a[k + j * b];
      a[i + j * b] = v;
    }
  }
  for (Eigen::Index j = 0; j < b; ++j) {
    for (Eigen::Index i = j + 1; i < b; ++i) a[i + j * b] = a[j + i * b];
  }
  return true;
}

// S <- [Sigma^{-1} + diag(exp(log C + m + diag(S)/2))]^{-1}, one block at a time.
// S stays block-diagonal in the component's partition because Sigma^{-1} is.
SStep s_step(double log_c, const Eigen::Ref<const Eigen::VectorXd>& m, const SymMatrix& s, const ComponentCache& cache) {
  const auto d = m.size();
  SStep out;
  out.s = SymMatrix::Zero(d, d);
  std::vector<double> work;
  for (std::size_t k = 0; k < cache.blocks.size(); ++k) {
    const auto& block = cache.blocks[k];
    const auto b = static_cast<Eigen::Index>(block.size());
    const auto& inv_sigma = cache.block_inv[k];
    auto load = [&](double jitter) {
      work.assign(inv_sigma.data(), inv_sigma.data() + b * b);
      for (Eigen::Index p = 0; p < b; ++p) {
        const int j = block[static_cast<std::size_t>(p)];
        work[static_cast<std::size_t>(p + p * b)] += std::exp(log_c + m[j] + 0.5 * s(j, j)) + jitter;
      }
    };
    load(0.0);
    double logdet = 0.0;
    if (!small_spd_inverse(work.data(), b, logdet)) {
      load(0.0);
      double mean_diag = 0.0;
      for (Eigen::Index p = 0; p < b; ++p) mean_diag += work[static_cast<std::size_t>(p + p * b)];
      load(1e-8 * mean_diag / static_cast<double>(b));
      if (!small_spd_inverse(work.data(), b, logdet)) {
        throw Error(ErrorCode::not_positive_definite, "variational precision is not positive definite");
      }
    }
    out.logdet -= logdet;
    for (Eigen::Index q = 0; q < b; ++q) {
      const int jq = block[static_cast<std::size_t>(q)];
      for (Eigen::Index p = 0; p < b; ++p) out.s(block[static_cast<std::size_t>(p)], jq) = work[static_cast<std::size_t>(p + q * b)];
    }
  }
  return out;
}

// Newton direction S' (y - exp(log C + m + diag(S')/2) - Sigma^{-1}(m - mu)).
Eigen::VectorXd newton_step(const Eigen::Ref<const Eigen::VectorXd>& y, double log_c,
                            const Eigen::Ref<const Eigen::VectorXd>& m, const SymMatrix& s_new,
                            const Eigen::Ref<const Eigen::VectorXd>& mu, const ComponentCache& cache) {
  Eigen::VectorXd grad = y - (log_c + m.array() + 0.5 * s_new.diagonal().array()).exp().matrix();
  grad.noalias() -= cache.sigma_inv * (m - mu);
  return s_new * grad;
}

void check_dims(const Eigen::VectorXd& y, const Eigen::VectorXd& m, const SymMatrix& s, const Eigen::VectorXd& mu,
                const SymMatrix& sigma) {
  const auto d = y.size();
  if (m.size() != d || mu.size() != d || s.rows() != d || s.cols() != d || sigma.rows() != d || sigma.cols() != d) {
    throw Error(ErrorCode::dimension_mismatch, "variational update arguments do not conform");
  }
}

double block_logdet_sum(const SymMatrix& w, const ColumnPartition& part) {
  double total = 0.0;
  for (const auto& block : part.blocks()) {
    const auto b = static_cast<Eigen::Index>(block.size());
    SymMatrix sub(b, b);
    for (Eigen::Index p = 0; p < b; ++p) {
      for (Eigen::Index q = 0; q < b; ++q) sub(p, q) = w(block[static_cast<std::size_t>(p)], block[static_cast<std::size_t>(q)]);
    }
    Eigen::LLT<Eigen::MatrixXd> llt(sub);
    if (llt.info() != Eigen::Success || !(llt.matrixLLT().diagonal().array() > 0.0).all()) {
      return std::numeric_limits<double>::infinity();
    }
    total += 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  }
  return total;
}

struct GroupingChoice {
  ColumnPartition partition;
  std::map<std::size_t, double> scores;
};

// Column grouping of one component from its current W. A candidate with the
// same number of groups as `current` replaces it only when the block-projected
// covariance fits W better (smaller sum of block log-determinants), so the
// objective cannot drop through a regrouping.
GroupingChoice choose_grouping(const SymMatrix& w, const std::optional<ColumnPartition>& current, const KSpec& spec,
                               std::size_t g, const FitConfig& config) {
  const auto dist = colgroup::distance_matrix(w);
  const auto dendro = colgroup::agglomerate(dist, config.linkage);
  GroupingChoice out;
  if (const auto* eq = std::get_if<EqualK>(&spec)) {
    out.partition = colgroup::cut(dendro, eq->k);
  } else if (const auto* per = std::get_if<PerComponentK>(&spec)) {
    out.partition = colgroup::cut(dendro, per->k[g]);
  } else {
    auto sel = colgroup::select_k_silhouette(dist, dendro, std::get<AutoK>(spec).k_max, config.singleton_rule);
    out.partition = std::move(sel.partition);
    out.scores = std::move(sel.scores);
  }
  if (current && current->K() == out.partition.K() && !(out.partition == *current)) {
    if (!(block_logdet_sum(w, out.partition) < block_logdet_sum(w, *current))) out.partition = *current;
  }
  return out;
}

// Block projection with the jitter retry applied per block.
SymMatrix projected_covariance(const SymMatrix& w, const ColumnPartition& part) {
  SymMatrix sigma = SymMatrix::Zero(w.rows(), w.cols());
  for (const auto& block : part.blocks()) {
    const auto b = static_cast<Eigen::Index>(block.size());
    SymMatrix sub(b, b);
    for (Eigen::Index p = 0; p < b; ++p) {
      for (Eigen::Index q = 0; q < b; ++q) sub(p, q) = w(block[static_cast<std::size_t>(p)], block[static_cast<std::size_t>(q)]);
    }
    linalg::cholesky_with_jitter(sub);
    for (Eigen::Index p = 0; p < b; ++p) {
      for (Eigen::Index q = 0; q < b; ++q) sigma(block[static_cast<std::size_t>(p)], block[static_cast<std::size_t>(q)]) = sub(p, q);
    }
  }
  return sigma;
}

void validate_spec(const KSpec& spec, std::size_t G, std::size_t d) {
  auto bad = [](const std::string& what) { throw Error(ErrorCode::invalid_argument, what); };
  if (const auto* eq = std::get_if<EqualK>(&spec)) {
    if (eq->k < 1 || eq->k > d) bad("K must lie in 1..d");
  } else if (const auto* per = std::get_if<PerComponentK>(&spec)) {
    if (per->k.size() != G) bad("one K per component is required");
    for (auto k : per->k) {
      if (k < 1 || k > d) bad("K must lie in 1..d");
    }
  } else {
    const auto k_max = std::get<AutoK>(spec).k_max;
    if (k_max < 2 || k_max > d) bad("k_max must lie in 2..d");
  }
}

// Lloyd's algorithm from k-means++ seeds; the best of several seedings by
// within-cluster sum of squares. Rows of x are points.
std::vector<int> kmeans(const Eigen::MatrixXd& x, std::size_t k, std::mt19937_64& rng) {
  const auto n = static_cast<std::size_t>(x.rows());
  constexpr int seedings = 10;
  constexpr int max_lloyd = 100;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<int> best_assign(n, 0);
  double best_sse = std::numeric_limits<double>::infinity();

  for (int attempt = 0; attempt < seedings; ++attempt) {
    Eigen::MatrixXd centers(static_cast<Eigen::Index>(k), x.cols());
    std::vector<double> d2(n, std::numeric_limits<double>::infinity());
    std::size_t first = std::min(n - 1, static_cast<std::size_t>(unit(rng) * static_cast<double>(n)));
    centers.row(0) = x.row(static_cast<Eigen::Index>(first));
    for (std::size_t c = 1; c < k; ++c) {
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        d2[i] = std::min(d2[i], (x.row(static_cast<Eigen::Index>(i)) - centers.row(static_cast<Eigen::Index>(c - 1))).squaredNorm());
        total += d2[i];
      }
      std::size_t pick = n - 1;
      if (total > 0.0) {
        double target = unit(rng) * total;
        for (std::size_t i = 0; i < n; ++i) {
          target -= d2[i];
          if (target < 0.0) {
            pick = i;
            break;
          }
        }
      } else {
        pick = std::min(n - 1, static_cast<std::size_t>(unit(rng) * static_cast<double>(n)));
      }
      centers.row(static_cast<Eigen::Index>(c)) = x.row(static_cast<Eigen::Index>(pick));
    }

    std::vector<int> assign(n, -1);
    double sse = 0.0;
    for (int iter = 0; iter < max_lloyd; ++iter) {
      bool moved = false;
      sse = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        int nearest = 0;
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < k; ++c) {
          const double dist = (x.row(static_cast<Eigen::Index>(i)) - centers.row(static_cast<Eigen::Index>(c))).squaredNorm();
          if (dist < best) {
            best = dist;
            nearest = static_cast<int>(c);
          }
        }
        sse += best;
        if (assign[i] != nearest) {
          assign[i] = nearest;
          moved = true;
        }
      }
      if (!moved) break;
      Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k), x.cols());
      std::vector<std::size_t> counts(k, 0);
      for (std::size_t i = 0; i < n; ++i) {
        sums.row(assign[i]) += x.row(static_cast<Eigen::Index>(i));
        ++counts[static_cast<std::size_t>(assign[i])];
      }
      for (std::size_t c = 0; c < k; ++c) {
        if (counts[c] > 0) centers.row(static_cast<Eigen::Index>(c)) = sums.row(static_cast<Eigen::Index>(c)) / static_cast<double>(counts[c]);
      }
    }
    if (sse < best_sse) {
      best_sse = sse;
      best_assign = assign;
    }
  }
  return best_assign;
}

}  // namespace

// ---------------------------------------------------------------------------

void FitConfig::validate() const {
  if (max_em_iter < 1 || inner_iter < 1 || n_starts < 1) {
    throw Error(ErrorCode::invalid_argument, "iteration and start counts must be at least 1");
  }
  if (!(elbo_rel_tol > 0.0) || !(inner_tol > 0.0)) throw Error(ErrorCode::invalid_argument, "tolerances must be positive");
}

std::string describe(const KSpec& spec) {
  if (const auto* eq = std::get_if<EqualK>(&spec)) return std::to_string(eq->k);
  if (const auto* per = std::get_if<PerComponentK>(&spec)) {
    std::string out;
    for (std::size_t g = 0; g < per->k.size(); ++g) out += (g ? ";" : "") + std::to_string(per->k[g]);
    return out;
  }
  return "auto<=" + std::to_string(std::get<AutoK>(spec).k_max);
}

std::vector<std::size_t> FitResult::groups_per_component() const {
  std::vector<std::size_t> out;
  for (const auto& part : model.grouping) out.push_back(part.K());
  return out;
}

SymMatrix update_s(double log_c, const Eigen::VectorXd& m, const SymMatrix& s, const SymMatrix& sigma) {
  check_dims(m, m, s, m, sigma);
  return s_step(log_c, m, s, ComponentCache::build(sigma)).s;
}

Eigen::VectorXd update_m(const Eigen::VectorXd& y, double log_c, const Eigen::VectorXd& m, const SymMatrix& s_new,
                         const Eigen::VectorXd& mu, const SymMatrix& sigma) {
  check_dims(y, m, s_new, mu, sigma);
  return m + newton_step(y, log_c, m, s_new, mu, ComponentCache::build(sigma));
}

ObservationUpdate update_observation(const Eigen::Ref<const Eigen::VectorXd>& y, const ObservationTerms& obs,
                                     const Eigen::Ref<const Eigen::VectorXd>& m, const SymMatrix& s, double logdet_s,
                                     double elbo_start, const Eigen::Ref<const Eigen::VectorXd>& mu,
                                     const ComponentCache& cache, std::size_t inner_iter, double inner_tol) {
  ObservationUpdate cur{m, s, logdet_s, elbo_start, 0};
  for (std::size_t sweep = 0; sweep < inner_iter; ++sweep) {
    SStep st = s_step(obs.log_c, cur.m, cur.s, cache);
    const Eigen::VectorXd step = newton_step(y, obs.log_c, cur.m, st.s, mu, cache);
    Eigen::VectorXd m_new = cur.m + step;
    double f_new = elbo_observation(y, obs, m_new, st.s, st.logdet, mu, cache);
    if (!(f_new >= cur.elbo)) {
      m_new = cur.m + 0.5 * step;
      f_new = elbo_observation(y, obs, m_new, st.s, st.logdet, mu, cache);
      if (!(f_new >= cur.elbo)) break;
    }
    const double change = std::max((m_new - cur.m).lpNorm<Eigen::Infinity>(), (st.s - cur.s).lpNorm<Eigen::Infinity>());
    cur.m = std::move(m_new);
    cur.s = std::move(st.s);
    cur.logdet_s = st.logdet;
    cur.elbo = f_new;
    cur.sweeps = sweep + 1;
    if (change < inner_tol) break;
  }
  return cur;
}

std::pair<Eigen::VectorXd, SymMatrix> update_variational(const Eigen::VectorXd& y, double log_c, const Eigen::VectorXd& m,
                                                         const SymMatrix& s, const Eigen::VectorXd& mu,
                                                         const SymMatrix& sigma, std::size_t inner_iter, double inner_tol) {
  check_dims(y, m, s, mu, sigma);
  const auto cache = ComponentCache::build(sigma);
  const auto obs = observation_terms(y, log_c);
  const double logdet_s = linalg::logdet_pd(s);
  const double f0 = elbo_observation(y, obs, m, s, logdet_s, mu, cache);
  auto upd = update_observation(y, obs, m, s, logdet_s, f0, mu, cache, inner_iter, inner_tol);
  return {std::move(upd.m), std::move(upd.s)};
}

Eigen::VectorXd m_step_pi(const Eigen::MatrixXd& z) {
  if (z.rows() == 0) throw Error(ErrorCode::invalid_argument, "no observations");
  return z.colwise().mean().transpose();
}

Eigen::MatrixXd m_step_mu(const Eigen::MatrixXd& z, const VariationalState& state) {
  if (static_cast<std::size_t>(z.rows()) != state.n || static_cast<std::size_t>(z.cols()) != state.G) {
    throw Error(ErrorCode::dimension_mismatch, "responsibilities do not match the variational state");
  }
  Eigen::MatrixXd mu(static_cast<Eigen::Index>(state.G), static_cast<Eigen::Index>(state.d));
  for (std::size_t g = 0; g < state.G; ++g) {
    const double total = z.col(static_cast<Eigen::Index>(g)).sum();
    if (total < 1e-10) throw Error(ErrorCode::empty_component, "component " + std::to_string(g + 1) + " has no responsibility mass");
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(state.d));
    for (std::size_t i = 0; i < state.n; ++i) acc += z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(g)) * state.mean(i, g);
    mu.row(static_cast<Eigen::Index>(g)) = (acc / total).transpose();
  }
  return mu;
}

SymMatrix compute_w(const Eigen::VectorXd& z, const Eigen::MatrixXd& m, const std::vector<SymMatrix>& s,
                    const Eigen::VectorXd& mu) {
  const auto n = z.size();
  if (m.rows() != n || static_cast<Eigen::Index>(s.size()) != n || m.cols() != mu.size()) {
    throw Error(ErrorCode::dimension_mismatch, "compute_w arguments do not conform");
  }
  const double total = z.sum();
  if (total < 1e-10) throw Error(ErrorCode::empty_component, "component has no responsibility mass");
  const auto d = mu.size();
  SymMatrix w = SymMatrix::Zero(d, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::VectorXd diff = m.row(i).transpose() - mu;
    w.noalias() += z[i] * (diff * diff.transpose());
    w += z[i] * s[static_cast<std::size_t>(i)];
  }
  w /= total;
  linalg::symmetrize(w);
  return w;
}

SymMatrix compute_w(const VariationalState& state, std::size_t g, const Eigen::VectorXd& mu) {
  const auto gi = static_cast<Eigen::Index>(g);
  const double total = state.z.col(gi).sum();
  if (total < 1e-10) throw Error(ErrorCode::empty_component, "component " + std::to_string(g + 1) + " has no responsibility mass");
  const auto d = mu.size();
  SymMatrix w = SymMatrix::Zero(d, d);
  Eigen::VectorXd diff(d);
  for (std::size_t i = 0; i < state.n; ++i) {
    const double zig = state.z(static_cast<Eigen::Index>(i), gi);
    diff = state.mean(i, g) - mu;
    w.selfadjointView<Eigen::Lower>().rankUpdate(diff, zig);
    w += zig * state.cov(i, g);
  }
  w.triangularView<Eigen::StrictlyUpper>() = w.transpose();
  w /= total;
  return w;
}

VariationalState initialize(const data::CountMatrix& counts, const data::OffsetVector& offsets, std::size_t G,
                            const FitConfig& config, std::size_t restart_index) {
  const auto n = counts.n();
  const auto d = counts.d();
  if (G < 1) throw Error(ErrorCode::invalid_argument, "G must be at least 1");
  if (offsets.size() != n) throw Error(ErrorCode::length_mismatch, "offsets do not match sample count");
  VariationalState state(n, G, d);
  Eigen::MatrixXd log_rate(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < n; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    log_rate.row(ii) = ((counts.values().row(ii).array() + 0.5) / offsets[i]).log();
  }
  const auto di = static_cast<Eigen::Index>(d);
  const SymMatrix s0 = 0.1 * SymMatrix::Identity(di, di);
  const double logdet0 = static_cast<double>(d) * std::log(0.1);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t g = 0; g < G; ++g) {
      state.mean(i, g) = log_rate.row(static_cast<Eigen::Index>(i)).transpose();
      state.cov(i, g) = s0;
      state.logdet_s[state.index(i, g)] = logdet0;
    }
  }

  const auto ni = static_cast<Eigen::Index>(n);
  const auto gi = static_cast<Eigen::Index>(G);
  if (G == 1) {
    state.z = Eigen::MatrixXd::Ones(ni, 1);
    return state;
  }
  std::mt19937_64 rng(derive_seed(config.seed, restart_index));
  state.z = Eigen::MatrixXd::Zero(ni, gi);
  if (restart_index == 0) {
    const auto assign = kmeans(log_rate, std::min(G, n), rng);
    for (std::size_t i = 0; i < n; ++i) state.z(static_cast<Eigen::Index>(i), assign[i]) = 1.0;
  } else {
    std::gamma_distribution<double> gamma(1.0, 1.0);
    for (Eigen::Index i = 0; i < ni; ++i) {
      for (Eigen::Index g = 0; g < gi; ++g) state.z(i, g) = gamma(rng);
      state.z.row(i) /= state.z.row(i).sum();
    }
  }
  return state;
}

FitResult run_em(const data::CountMatrix& counts, const data::OffsetVector& offsets, VariationalState start,
                 const KSpec& k_spec, const FitConfig& config) {
  config.validate();
  const auto n = counts.n();
  const auto d = counts.d();
  const auto G = start.G;
  if (start.n != n || start.d != d) throw Error(ErrorCode::dimension_mismatch, "starting state does not match the data");
  validate_spec(k_spec, G, d);

  const auto obs = observation_terms(counts, offsets);
  const Eigen::MatrixXd y = counts.values().transpose();

  FitResult result;
  result.state = std::move(start);
  auto& state = result.state;
  auto& model = result.model;
  model.grouping.resize(G);
  model.sigma.resize(G);
  result.silhouette_scores.resize(std::holds_alternative<AutoK>(k_spec) ? G : 0);
  std::vector<ComponentCache> caches(G);

  // Step 3 plus the covariance update. Returns true when any grouping changed.
  auto m_step = [&](bool first) {
    model.pi = m_step_pi(state.z);
    model.mu = m_step_mu(state.z, state);
    bool changed = false;
    for (std::size_t g = 0; g < G; ++g) {
      const Eigen::VectorXd mu_g = model.mu.row(static_cast<Eigen::Index>(g)).transpose();
      const SymMatrix w = compute_w(state, g, mu_g);
      std::optional<ColumnPartition> current;
      if (!first) current = model.grouping[g];
      auto choice = choose_grouping(w, current, k_spec, g, config);
      if (!first && !(choice.partition == model.grouping[g])) changed = true;
      model.grouping[g] = std::move(choice.partition);
      if (!result.silhouette_scores.empty()) result.silhouette_scores[g] = std::move(choice.scores);
      model.sigma[g] = projected_covariance(w, model.grouping[g]);
      caches[g] = ComponentCache::build(model.sigma[g], model.grouping[g]);
    }
    return changed;
  };

  m_step(true);
  Eigen::MatrixXd elbo = elbo_matrix(counts, obs, state, model, caches);
  result.elbo_trace.push_back(variational_objective(state.z, model.pi, elbo));

  for (std::size_t iter = 1; iter <= config.max_em_iter; ++iter) {
    state.z = responsibilities(elbo, model.pi);

    const Eigen::MatrixXd mu_t = model.mu.transpose();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t g = 0; g < G; ++g) {
        const auto idx = state.index(i, g);
        auto upd = update_observation(y.col(static_cast<Eigen::Index>(i)), obs[i], state.mean(i, g), state.cov(i, g),
                                      state.logdet_s[idx], elbo(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(g)),
                                      mu_t.col(static_cast<Eigen::Index>(g)), caches[g], config.inner_iter, config.inner_tol);
        state.mean(i, g) = upd.m;
        state.cov(i, g) = std::move(upd.s);
        state.logdet_s[idx] = upd.logdet_s;
      }
    }

    const bool changed = m_step(false);
    elbo = elbo_matrix(counts, obs, state, model, caches);
    const double previous = result.elbo_trace.back();
    const double current = variational_objective(state.z, model.pi, elbo);
    result.elbo_trace.push_back(current);
    result.iterations = iter;
    if (!changed && std::abs(current - previous) < config.elbo_rel_tol * std::abs(previous)) {
      result.converged = true;
      break;
    }
  }

  state.z = responsibilities(elbo, model.pi);
  result.lower_bound = lower_bound(state.z, model.pi, elbo);
  result.row_labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::Index arg = 0;
    state.z.row(static_cast<Eigen::Index>(i)).maxCoeff(&arg);
    result.row_labels[i] = static_cast<int>(arg);
  }
  result.free_parameters = count_free_parameters(G, d, model.grouping);
  result.bic = select::bic(result.lower_bound, result.free_parameters, n);
  return result;
}

FitResult fit(const data::CountMatrix& counts, const data::OffsetVector& offsets, std::size_t G, const KSpec& k_spec,
              const FitConfig& config) {
  config.validate();
  if (G < 1 || G > counts.n()) throw Error(ErrorCode::invalid_argument, "G must lie in 1..n");
  validate_spec(k_spec, G, counts.d());
  const std::size_t starts = G == 1 ? 1 : config.n_starts;
  std::optional<FitResult> best;
  std::string failures;
  for (std::size_t r = 0; r < starts; ++r) {
    try {
      auto res = run_em(counts, offsets, initialize(counts, offsets, G, config, r), k_spec, config);
      res.restart = r;
      if (!best || res.lower_bound > best->lower_bound) best = std::move(res);
    } catch (const Error& e) {
      failures += (failures.empty() ? "" : "; ") + std::string("start ") + std::to_string(r) + ": " + e.what();
    }
  }
  if (!best) throw Error(ErrorCode::all_restarts_failed, "every start failed: " + failures);
  return std::move(*best);
}

// ---------------------------------------------------------------------------
// Serialization

nlohmann::json to_json(const FitResult& result, const std::vector<std::string>& sample_ids) {
  nlohmann::json doc;
  doc["model"] = mpln::to_json(result.model);
  std::vector<int> labels(result.row_labels.size());
  std::transform(result.row_labels.begin(), result.row_labels.end(), labels.begin(), [](int l) { return l + 1; });
  doc["labels"] = labels;
  if (!sample_ids.empty()) doc["sample_ids"] = sample_ids;
  doc["groups_per_component"] = result.groups_per_component();
  doc["elbo_trace"] = result.elbo_trace;
  doc["lower_bound"] = result.lower_bound;
  doc["bic"] = result.bic;
  doc["free_parameters"] = result.free_parameters;
  doc["converged"] = result.converged;
  doc["iterations"] = result.iterations;
  doc["restart"] = result.restart;
  if (!result.silhouette_scores.empty()) {
    auto& sil = doc["silhouette"] = nlohmann::json::array();
    for (const auto& scores : result.silhouette_scores) {
      nlohmann::json entry = nlohmann::json::object();
      for (const auto& [k, v] : scores) entry[std::to_string(k)] = v;
      sil.push_back(entry);
    }
  }
  return doc;
}

FitResult fit_result_from_json(const nlohmann::json& doc) {
  try {
    FitResult result;
    result.model = model_from_json(doc.at("model"));
    for (int label : doc.at("labels").get<std::vector<int>>()) {
      if (label < 1 || static_cast<std::size_t>(label) > result.model.G()) {
        throw Error(ErrorCode::invalid_argument, "row label out of range");
      }
      result.row_labels.push_back(label - 1);
    }
    result.elbo_trace = doc.at("elbo_trace").get<std::vector<double>>();
    result.lower_bound = doc.at("lower_bound").get<double>();
    result.bic = doc.at("bic").get<double>();
    result.free_parameters = doc.at("free_parameters").get<std::size_t>();
    result.converged = doc.at("converged").get<bool>();
    result.iterations = doc.at("iterations").get<std::size_t>();
    result.restart = doc.value("restart", std::size_t{0});
    if (doc.contains("silhouette")) {
      for (const auto& entry : doc.at("silhouette")) {
        std::map<std::size_t, double> scores;
        for (const auto& [k, v] : entry.items()) scores[std::stoul(k)] = v.get<double>();
        result.silhouette_scores.push_back(std::move(scores));
      }
    }
    return result;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("fit JSON: ") + e.what());
  }
}

std::string labels_csv(const FitResult& result, const std::vector<std::string>& sample_ids) {
  if (sample_ids.size() != result.row_labels.size()) throw Error(ErrorCode::length_mismatch, "sample ids do not match labels");
  std::string out = "sample_id,cluster\n";
  for (std::size_t i = 0; i < sample_ids.size(); ++i) {
    out += textio::quote_field(sample_ids[i]) + "," + std::to_string(result.row_labels[i] + 1) + "\n";
  }
  return out;
}

std::string trace_csv(const FitResult& result) {
  std::string out = "iteration,objective\n";
  for (std::size_t t = 0; t < result.elbo_trace.size(); ++t) {
    out += std::to_string(t) + "," + textio::format_double(result.elbo_trace[t]) + "\n";
  }
  return out;
}

std::string partition_csv(const MixtureModel& model, const std::vector<std::string>& var_names) {
  if (var_names.size() != model.d()) throw Error(ErrorCode::length_mismatch, "variable names do not match d");
  std::string out = "variable,component,group\n";
  for (std::size_t g = 0; g < model.G(); ++g) {
    for (std::size_t j = 0; j < model.d(); ++j) {
      out += textio::quote_field(var_names[j]) + "," + std::to_string(g + 1) + "," +
             std::to_string(model.grouping[g][j] + 1) + "\n";
    }
  }
  return out;
}

}  // namespace mpln::vem
