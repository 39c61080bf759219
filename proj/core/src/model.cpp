#include "mplnbc/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Cholesky>
#include <nlohmann/json.hpp>

#include "mplnbc/error.hpp"

namespace mpln {

// ---------------------------------------------------------------------------
// ColumnPartition

ColumnPartition::ColumnPartition(std::vector<int> assign) : assign_(std::move(assign)) {
  if (assign_.empty()) throw Error(ErrorCode::invalid_argument, "partition of zero variables");
  const int max_label = *std::max_element(assign_.begin(), assign_.end());
  if (*std::min_element(assign_.begin(), assign_.end()) < 0) throw Error(ErrorCode::invalid_argument, "negative group label");
  std::vector<bool> used(static_cast<std::size_t>(max_label) + 1, false);
  for (int label : assign_) used[static_cast<std::size_t>(label)] = true;
  if (std::find(used.begin(), used.end(), false) != used.end()) {
    throw Error(ErrorCode::invalid_argument, "group labels must cover 0..K-1 without gaps");
  }
  k_ = used.size();
}

ColumnPartition ColumnPartition::singletons(std::size_t d) {
  std::vector<int> assign(d);
  std::iota(assign.begin(), assign.end(), 0);
  return ColumnPartition(std::move(assign));
}

ColumnPartition ColumnPartition::from_block_sizes(const std::vector<std::size_t>& sizes) {
  std::vector<int> assign;
  for (std::size_t k = 0; k < sizes.size(); ++k) {
    if (sizes[k] == 0) throw Error(ErrorCode::invalid_argument, "empty block");
    assign.insert(assign.end(), sizes[k], static_cast<int>(k));
  }
  return ColumnPartition(std::move(assign));
}

ColumnPartition ColumnPartition::from_support(const SymMatrix& sigma) {
  const auto d = static_cast<std::size_t>(sigma.rows());
  std::vector<int> assign(d, -1);
  int next = 0;
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < d; ++start) {
    if (assign[start] >= 0) continue;
    assign[start] = next;
    stack.push_back(start);
    while (!stack.empty()) {
      const auto a = stack.back();
      stack.pop_back();
      for (std::size_t b = 0; b < d; ++b) {
        if (assign[b] < 0 && (sigma(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) != 0.0 ||
                              sigma(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(a)) != 0.0)) {
          assign[b] = next;
          stack.push_back(b);
        }
      }
    }
    ++next;
  }
  return ColumnPartition(std::move(assign));
}

std::vector<std::vector<int>> ColumnPartition::blocks() const {
  std::vector<std::vector<int>> out(k_);
  for (std::size_t j = 0; j < assign_.size(); ++j) out[static_cast<std::size_t>(assign_[j])].push_back(static_cast<int>(j));
  return out;
}

std::vector<std::size_t> ColumnPartition::block_sizes() const {
  std::vector<std::size_t> out(k_, 0);
  for (int label : assign_) ++out[static_cast<std::size_t>(label)];
  return out;
}

ColumnPartition ColumnPartition::canonical() const {
  std::vector<int> relabel(k_, -1);
  std::vector<int> out(assign_.size());
  int next = 0;
  for (std::size_t j = 0; j < assign_.size(); ++j) {
    auto& target = relabel[static_cast<std::size_t>(assign_[j])];
    if (target < 0) target = next++;
    out[j] = target;
  }
  return ColumnPartition(std::move(out));
}

// ---------------------------------------------------------------------------
// MixtureModel / VariationalState

void MixtureModel::validate() const {
  const auto g_count = G();
  if (g_count == 0) throw Error(ErrorCode::invalid_argument, "model has no components");
  if (static_cast<std::size_t>(mu.rows()) != g_count || sigma.size() != g_count || grouping.size() != g_count) {
    throw Error(ErrorCode::dimension_mismatch, "component count differs between pi, mu, sigma and grouping");
  }
  if ((pi.array() <= 0.0).any() || std::abs(pi.sum() - 1.0) > 1e-12) {
    throw Error(ErrorCode::invalid_argument, "mixing proportions are not on the simplex");
  }
  for (std::size_t g = 0; g < g_count; ++g) {
    if (static_cast<std::size_t>(sigma[g].rows()) != d() || sigma[g].cols() != sigma[g].rows() || grouping[g].d() != d()) {
      throw Error(ErrorCode::dimension_mismatch, "component " + std::to_string(g + 1) + " has the wrong dimension");
    }
    for (Eigen::Index a = 0; a < sigma[g].rows(); ++a) {
      for (Eigen::Index b = 0; b < sigma[g].cols(); ++b) {
        if (grouping[g][static_cast<std::size_t>(a)] != grouping[g][static_cast<std::size_t>(b)] && sigma[g](a, b) != 0.0) {
          throw Error(ErrorCode::invalid_argument, "covariance has support outside its blocks");
        }
      }
    }
  }
}

VariationalState::VariationalState(std::size_t n_obs, std::size_t n_comp, std::size_t dim)
    : n(n_obs),
      G(n_comp),
      d(dim),
      m(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(n_obs * n_comp))),
      s(n_obs * n_comp, SymMatrix::Identity(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim))),
      logdet_s(n_obs * n_comp, 0.0),
      z(Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(n_obs), static_cast<Eigen::Index>(n_comp),
                                  1.0 / static_cast<double>(n_comp))) {}

VariationalState VariationalState::permuted(const std::vector<std::size_t>& perm) const {
  VariationalState out(n, G, d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t h = 0; h < G; ++h) {
      out.mean(i, h) = mean(i, perm[h]);
      out.cov(i, h) = cov(i, perm[h]);
      out.logdet_s[out.index(i, h)] = logdet_s[index(i, perm[h])];
      out.z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(h)) =
          z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(perm[h]));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// ELBO

ComponentCache ComponentCache::build(const SymMatrix& sigma, const ColumnPartition& partition) {
  ComponentCache cache;
  const auto d = sigma.rows();
  cache.blocks = partition.blocks();
  cache.sigma_inv = SymMatrix::Zero(d, d);
  cache.block_inv.reserve(cache.blocks.size());
  for (const auto& block : cache.blocks) {
    const auto b = static_cast<Eigen::Index>(block.size());
    SymMatrix sub(b, b);
    for (Eigen::Index p = 0; p < b; ++p) {
      for (Eigen::Index q = 0; q < b; ++q) sub(p, q) = sigma(block[static_cast<std::size_t>(p)], block[static_cast<std::size_t>(q)]);
    }
    Eigen::LLT<Eigen::MatrixXd> llt(sub);
    if (llt.info() != Eigen::Success || !(llt.matrixLLT().diagonal().array() > 0.0).all()) {
      throw Error(ErrorCode::not_positive_definite, "component covariance block is not positive definite");
    }
    cache.logdet_sigma += 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    SymMatrix inv = llt.solve(Eigen::MatrixXd::Identity(b, b));
    linalg::symmetrize(inv);
    for (Eigen::Index p = 0; p < b; ++p) {
      for (Eigen::Index q = 0; q < b; ++q) cache.sigma_inv(block[static_cast<std::size_t>(p)], block[static_cast<std::size_t>(q)]) = inv(p, q);
    }
    cache.block_inv.push_back(std::move(inv));
  }
  return cache;
}

ComponentCache ComponentCache::build(const SymMatrix& sigma) {
  return build(sigma, ColumnPartition::from_support(sigma));
}

ObservationTerms observation_terms(const Eigen::Ref<const Eigen::VectorXd>& y, double log_c) {
  ObservationTerms t;
  t.log_c = log_c;
  t.sum_y = y.sum();
  for (Eigen::Index j = 0; j < y.size(); ++j) t.sum_log_factorial += std::lgamma(y[j] + 1.0);
  return t;
}

std::vector<ObservationTerms> observation_terms(const data::CountMatrix& counts, const data::OffsetVector& offsets) {
  if (offsets.size() != counts.n()) throw Error(ErrorCode::length_mismatch, "offsets do not match sample count");
  std::vector<ObservationTerms> out;
  out.reserve(counts.n());
  for (std::size_t i = 0; i < counts.n(); ++i) {
    out.push_back(observation_terms(counts.values().row(static_cast<Eigen::Index>(i)).transpose(), std::log(offsets[i])));
  }
  return out;
}

double elbo_observation(const Eigen::Ref<const Eigen::VectorXd>& y, const ObservationTerms& obs,
                        const Eigen::Ref<const Eigen::VectorXd>& m, const SymMatrix& s, double logdet_s,
                        const Eigen::Ref<const Eigen::VectorXd>& mu, const ComponentCache& cache) {
  const auto d = m.size();
  double quad = 0.0;
  double trace = 0.0;
  for (std::size_t k = 0; k < cache.blocks.size(); ++k) {
    const auto& block = cache.blocks[k];
    const auto& inv = cache.block_inv[k];
    const auto b = block.size();
    for (std::size_t p = 0; p < b; ++p) {
      const int jp = block[p];
      const double dp = m[jp] - mu[jp];
      for (std::size_t q = 0; q < b; ++q) {
        const int jq = block[q];
        const double w = inv(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(q));
        quad += dp * w * (m[jq] - mu[jq]);
        trace += w * s(jq, jp);
      }
    }
  }
  double exp_term = 0.0;
  for (Eigen::Index j = 0; j < d; ++j) exp_term += std::exp(obs.log_c + m[j] + 0.5 * s(j, j));
  return -0.5 * quad - 0.5 * trace + 0.5 * logdet_s - 0.5 * cache.logdet_sigma + 0.5 * static_cast<double>(d) +
         m.dot(y) + obs.log_c * obs.sum_y - exp_term - obs.sum_log_factorial;
}

double elbo_observation(const Eigen::VectorXd& y, double log_c, const Eigen::VectorXd& m, const SymMatrix& s,
                        const Eigen::VectorXd& mu, const SymMatrix& sigma) {
  const auto d = y.size();
  if (m.size() != d || mu.size() != d || s.rows() != d || sigma.rows() != d) {
    throw Error(ErrorCode::dimension_mismatch, "elbo_observation arguments do not conform");
  }
  const auto cache = ComponentCache::build(sigma);
  const double logdet_s = linalg::logdet_pd(s);
  return elbo_observation(y, observation_terms(y, log_c), m, s, logdet_s, mu, cache);
}

Eigen::VectorXd elbo_gradient_m(const Eigen::VectorXd& y, double log_c, const Eigen::VectorXd& m, const SymMatrix& s,
                                const Eigen::VectorXd& mu, const SymMatrix& sigma) {
  const Eigen::VectorXd rate = (log_c + m.array() + 0.5 * s.diagonal().array()).exp().matrix();
  return y - rate - linalg::solve_pd(sigma, Eigen::VectorXd(m - mu));
}

Eigen::MatrixXd elbo_matrix(const data::CountMatrix& counts, const std::vector<ObservationTerms>& obs,
                            const VariationalState& state, const MixtureModel& model,
                            const std::vector<ComponentCache>& caches) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(state.n), static_cast<Eigen::Index>(state.G));
  const Eigen::MatrixXd y = counts.values().transpose();
  const Eigen::MatrixXd mu = model.mu.transpose();
  for (std::size_t i = 0; i < state.n; ++i) {
    for (std::size_t g = 0; g < state.G; ++g) {
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(g)) =
          elbo_observation(y.col(static_cast<Eigen::Index>(i)), obs[i], state.mean(i, g), state.cov(i, g),
                           state.logdet_s[state.index(i, g)], mu.col(static_cast<Eigen::Index>(g)), caches[g]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Responsibilities and bounds

Eigen::MatrixXd responsibilities(const Eigen::MatrixXd& elbo, const Eigen::VectorXd& pi) {
  constexpr double floor = 1e-300;
  const Eigen::Index n = elbo.rows();
  const Eigen::Index g_count = elbo.cols();
  if (pi.size() != g_count) throw Error(ErrorCode::dimension_mismatch, "pi length differs from component count");
  Eigen::MatrixXd z(n, g_count);
  const Eigen::ArrayXd log_pi = pi.array().log();
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::ArrayXd a = log_pi + elbo.row(i).transpose().array();
    const double shift = a.maxCoeff();
    const Eigen::ArrayXd w = (a - shift).exp();
    z.row(i) = (w / w.sum()).transpose();
    if ((z.row(i).array() < floor).any()) {
      z.row(i) = z.row(i).array().max(floor);
      z.row(i) /= z.row(i).sum();
    }
  }
  return z;
}

double lower_bound(const Eigen::MatrixXd& z, const Eigen::VectorXd& pi, const Eigen::MatrixXd& elbo) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    for (Eigen::Index g = 0; g < z.cols(); ++g) total += z(i, g) * (std::log(pi[g]) + elbo(i, g));
  }
  return total;
}

double lower_bound(const VariationalState& state, const MixtureModel& model, const Eigen::MatrixXd& elbo) {
  if (state.z.rows() != elbo.rows() || state.z.cols() != elbo.cols() || static_cast<std::size_t>(elbo.cols()) != model.G()) {
    throw Error(ErrorCode::dimension_mismatch, "lower_bound shapes do not conform");
  }
  return lower_bound(state.z, model.pi, elbo);
}

double variational_objective(const Eigen::MatrixXd& z, const Eigen::VectorXd& pi, const Eigen::MatrixXd& elbo) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    for (Eigen::Index g = 0; g < z.cols(); ++g) {
      const double zig = z(i, g);
      if (zig > 0.0) total += zig * (std::log(pi[g]) + elbo(i, g) - std::log(zig));
    }
  }
  return total;
}

std::size_t count_free_parameters(std::size_t G, std::size_t d, const std::vector<ColumnPartition>& groupings) {
  if (groupings.size() != G) throw Error(ErrorCode::dimension_mismatch, "one grouping per component is required");
  std::size_t p = (G - 1) + G * d;
  for (const auto& part : groupings) {
    if (part.d() != d) throw Error(ErrorCode::dimension_mismatch, "grouping dimension differs from d");
    for (auto b : part.block_sizes()) p += b * (b + 1) / 2;
  }
  return p;
}

// ---------------------------------------------------------------------------
// JSON

nlohmann::json to_json(const ColumnPartition& partition) {
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& block : partition.blocks()) blocks.push_back(block);
  return blocks;
}

nlohmann::json to_json(const MixtureModel& model) {
  nlohmann::json doc;
  doc["G"] = model.G();
  doc["d"] = model.d();
  doc["pi"] = std::vector<double>(model.pi.data(), model.pi.data() + model.pi.size());
  auto& mu = doc["mu"] = nlohmann::json::array();
  for (Eigen::Index g = 0; g < model.mu.rows(); ++g) {
    std::vector<double> row(model.mu.cols());
    for (Eigen::Index j = 0; j < model.mu.cols(); ++j) row[static_cast<std::size_t>(j)] = model.mu(g, j);
    mu.push_back(row);
  }
  auto& blocks = doc["blocks"] = nlohmann::json::array();
  for (const auto& part : model.grouping) blocks.push_back(to_json(part));
  auto& sigma = doc["sigma"] = nlohmann::json::array();
  for (const auto& s : model.sigma) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index a = 0; a < s.rows(); ++a) {
      std::vector<double> row(s.cols());
      for (Eigen::Index b = 0; b < s.cols(); ++b) row[static_cast<std::size_t>(b)] = s(a, b);
      rows.push_back(row);
    }
    sigma.push_back(rows);
  }
  return doc;
}

MixtureModel model_from_json(const nlohmann::json& doc) {
  try {
    MixtureModel model;
    const auto G = doc.at("G").get<std::size_t>();
    const auto d = doc.at("d").get<std::size_t>();
    const auto pi = doc.at("pi").get<std::vector<double>>();
    if (pi.size() != G) throw Error(ErrorCode::dimension_mismatch, "pi has the wrong length");
    model.pi = Eigen::Map<const Eigen::VectorXd>(pi.data(), static_cast<Eigen::Index>(G));
    model.mu.resize(static_cast<Eigen::Index>(G), static_cast<Eigen::Index>(d));
    const auto& mu = doc.at("mu");
    const auto& blocks = doc.at("blocks");
    const auto& sigma = doc.at("sigma");
    if (mu.size() != G || blocks.size() != G || sigma.size() != G) {
      throw Error(ErrorCode::dimension_mismatch, "per-component arrays have the wrong length");
    }
    for (std::size_t g = 0; g < G; ++g) {
      const auto row = mu[g].get<std::vector<double>>();
      if (row.size() != d) throw Error(ErrorCode::dimension_mismatch, "mu row has the wrong length");
      for (std::size_t j = 0; j < d; ++j) model.mu(static_cast<Eigen::Index>(g), static_cast<Eigen::Index>(j)) = row[j];

      std::vector<int> assign(d, -1);
      int label = 0;
      for (const auto& block : blocks[g]) {
        for (const auto& idx : block) {
          const auto j = idx.get<std::size_t>();
          if (j >= d || assign[j] >= 0) throw Error(ErrorCode::invalid_argument, "blocks do not partition the variables");
          assign[j] = label;
        }
        ++label;
      }
      if (std::find(assign.begin(), assign.end(), -1) != assign.end()) {
        throw Error(ErrorCode::invalid_argument, "blocks do not cover every variable");
      }
      model.grouping.emplace_back(std::move(assign));

      SymMatrix s(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
      if (sigma[g].size() != d) throw Error(ErrorCode::dimension_mismatch, "sigma has the wrong size");
      for (std::size_t a = 0; a < d; ++a) {
        const auto row = sigma[g][a].get<std::vector<double>>();
        if (row.size() != d) throw Error(ErrorCode::dimension_mismatch, "sigma row has the wrong length");
        for (std::size_t b = 0; b < d; ++b) s(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = row[b];
      }
      model.sigma.push_back(std::move(s));
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("model JSON: ") + e.what());
  }
}

}  // namespace mpln
