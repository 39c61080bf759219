#include "mplnbc/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include "mplnbc/error.hpp"
#include "mplnbc/seed.hpp"

namespace mpln::sim {

namespace {

constexpr double kMinEigenvalue = 0.05;
constexpr int kMaxRedraws = 100;
constexpr double kMaxRate = 1e12;

void check_range(std::pair<double, double> r, const char* what) {
  if (!(r.first <= r.second)) throw Error(ErrorCode::invalid_argument, std::string(what) + " is empty");
}

// Pairs of components that must differ by at least 1.5 at coordinate j.
std::vector<std::pair<int, int>> separated_pairs(std::size_t G, std::size_t j) {
  if (G == 2) return j % 2 == 0 ? std::vector<std::pair<int, int>>{{0, 1}} : std::vector<std::pair<int, int>>{};
  if (G == 3) {
    switch (j % 3) {
      case 0: return {{0, 1}, {0, 2}};
      case 1: return {{0, 1}, {1, 2}};
      default: return {{0, 2}, {1, 2}};
    }
  }
  return {};
}

Eigen::MatrixXd preset_means(std::size_t G, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(1.0, 4.0);
  Eigen::MatrixXd mu(static_cast<Eigen::Index>(G), static_cast<Eigen::Index>(d));
  for (std::size_t j = 0; j < d; ++j) {
    const auto pairs = separated_pairs(G, j);
    const auto jj = static_cast<Eigen::Index>(j);
    for (;;) {
      for (std::size_t g = 0; g < G; ++g) mu(static_cast<Eigen::Index>(g), jj) = unif(rng);
      bool ok = true;
      for (const auto& [a, b] : pairs) ok = ok && std::abs(mu(a, jj) - mu(b, jj)) >= 1.5;
      if (ok) break;
    }
  }
  return mu;
}

std::vector<std::size_t> even_blocks(std::size_t d, std::size_t k) {
  std::vector<std::size_t> sizes(k, d / k);
  for (std::size_t r = 0; r < d % k; ++r) ++sizes[k - 1 - r];
  return sizes;
}

Eigen::VectorXd to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

void SimSpec::validate() const {
  const auto g_count = G();
  if (n < 1 || d < 1 || g_count < 1) throw Error(ErrorCode::invalid_argument, "n, d and G must be at least 1");
  if ((pi.array() <= 0.0).any() || std::abs(pi.sum() - 1.0) > 1e-12) {
    throw Error(ErrorCode::invalid_argument, "pi must be positive and sum to 1");
  }
  if (static_cast<std::size_t>(mu.rows()) != g_count || static_cast<std::size_t>(mu.cols()) != d) {
    throw Error(ErrorCode::dimension_mismatch, "mu must be G x d");
  }
  if (block_sizes.size() != g_count) throw Error(ErrorCode::dimension_mismatch, "one block list per component is required");
  for (const auto& sizes : block_sizes) {
    std::size_t total = 0;
    for (auto b : sizes) {
      if (b == 0) throw Error(ErrorCode::invalid_argument, "empty block");
      total += b;
    }
    if (total != d) throw Error(ErrorCode::invalid_argument, "block sizes must sum to d");
  }
  check_range(corr_range, "corr_range");
  check_range(variance_range, "variance_range");
  if (!(corr_range.first > 0.0) || !(corr_range.second < 1.0)) {
    throw Error(ErrorCode::invalid_argument, "correlation magnitudes must lie in (0, 1)");
  }
  if (!(variance_range.first > 0.0)) throw Error(ErrorCode::invalid_argument, "variances must be positive");
  if (offsets) {
    if (static_cast<std::size_t>(offsets->size()) != n) throw Error(ErrorCode::length_mismatch, "offsets must have length n");
    if (!(offsets->array() > 0.0).all()) throw Error(ErrorCode::nonpositive_offset, "offsets must be positive");
  }
}

SymMatrix sample_block_covariance(const std::vector<std::size_t>& block_sizes, std::pair<double, double> corr_range,
                                  std::pair<double, double> var_range, std::uint64_t seed) {
  check_range(corr_range, "corr_range");
  check_range(var_range, "variance_range");
  std::size_t d = 0;
  for (auto b : block_sizes) d += b;
  if (d == 0) throw Error(ErrorCode::invalid_argument, "no variables");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> corr(corr_range.first, corr_range.second);
  std::uniform_real_distribution<double> var(var_range.first, var_range.second);
  std::bernoulli_distribution coin(0.5);

  const auto di = static_cast<Eigen::Index>(d);
  SymMatrix sigma = SymMatrix::Zero(di, di);
  Eigen::Index start = 0;
  for (auto size : block_sizes) {
    const auto b = static_cast<Eigen::Index>(size);
    Eigen::MatrixXd r = Eigen::MatrixXd::Identity(b, b);
    bool accepted = b == 1;
    for (int attempt = 0; attempt < kMaxRedraws && !accepted; ++attempt) {
      Eigen::VectorXd sign(b);
      for (Eigen::Index a = 0; a < b; ++a) sign[a] = coin(rng) ? 1.0 : -1.0;
      for (Eigen::Index a = 0; a < b; ++a) {
        for (Eigen::Index c = a + 1; c < b; ++c) r(a, c) = r(c, a) = sign[a] * sign[c] * corr(rng);
      }
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(r, Eigen::EigenvaluesOnly);
      accepted = eig.eigenvalues().minCoeff() >= kMinEigenvalue;
    }
    if (!accepted) throw Error(ErrorCode::exhausted_redraws, "no admissible correlation block after 100 draws");
    Eigen::VectorXd sd(b);
    for (Eigen::Index a = 0; a < b; ++a) sd[a] = std::sqrt(var(rng));
    for (Eigen::Index a = 0; a < b; ++a) {
      for (Eigen::Index c = a; c < b; ++c) sigma(start + a, start + c) = sigma(start + c, start + a) = sd[a] * sd[c] * r(a, c);
    }
    start += b;
  }
  return sigma;
}

MixtureModel spec_model(const SimSpec& spec) {
  spec.validate();
  MixtureModel model;
  model.pi = spec.pi;
  model.mu = spec.mu;
  for (std::size_t g = 0; g < spec.G(); ++g) {
    model.sigma.push_back(sample_block_covariance(spec.block_sizes[g], spec.corr_range, spec.variance_range,
                                                  derive_seed(spec.covariance_seed, g)));
    model.grouping.push_back(ColumnPartition::from_block_sizes(spec.block_sizes[g]));
  }
  return model;
}

Dataset sample_dataset(const SimSpec& spec) {
  MixtureModel model = spec_model(spec);
  const auto n = spec.n;
  const auto d = static_cast<Eigen::Index>(spec.d);
  const Eigen::VectorXd c = spec.offsets ? *spec.offsets : Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n));

  std::vector<Eigen::MatrixXd> factors;
  for (const auto& s : model.sigma) factors.push_back(linalg::cholesky(s));

  std::mt19937_64 rng(spec.seed);
  std::discrete_distribution<int> component(spec.pi.data(), spec.pi.data() + spec.pi.size());
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<int> labels(n);
  for (auto& label : labels) label = component(rng);

  Eigen::MatrixXd y(static_cast<Eigen::Index>(n), d);
  Eigen::VectorXd e(d);
  for (std::size_t i = 0; i < n; ++i) {
    const auto g = static_cast<std::size_t>(labels[i]);
    for (Eigen::Index j = 0; j < d; ++j) e[j] = normal(rng);
    const Eigen::VectorXd x = model.mu.row(static_cast<Eigen::Index>(g)).transpose() + factors[g] * e;
    for (Eigen::Index j = 0; j < d; ++j) {
      const double rate = c[static_cast<Eigen::Index>(i)] * std::exp(x[j]);
      if (!(rate < kMaxRate)) throw Error(ErrorCode::invalid_argument, "Poisson rate overflows; means are too large");
      std::poisson_distribution<long long> pois(rate);
      y(static_cast<Eigen::Index>(i), j) = static_cast<double>(pois(rng));
    }
  }
  Dataset out{data::CountMatrix(std::move(y)), data::OffsetVector(c), GroundTruth{std::move(labels), std::move(model)}};
  return out;
}

SimSpec preset(int study) {
  struct Shape {
    std::size_t d;
    std::vector<std::size_t> blocks1;
    std::vector<std::size_t> blocks2;  // empty: same as blocks1
  };
  // Studies 1-5 and 6-10 share these (d, K) settings.
  static const std::vector<Shape> equal_k = {
      {10, even_blocks(10, 2), {}},
      {20, even_blocks(20, 4), {}},
      {50, {4, 4, 5, 5, 6, 6, 6, 7, 7}, {}},
      {50, even_blocks(50, 10), {}},
      {50, {3, 3, 3, 4, 4, 4, 4, 4, 5, 5, 5, 6}, {}},
  };
  if (study < 1 || study > 12) throw Error(ErrorCode::unknown_preset, "unknown preset " + std::to_string(study));

  SimSpec spec;
  spec.name = "study" + std::to_string(study);
  spec.covariance_seed = derive_seed(0xC0FA1A9CEULL, static_cast<std::uint64_t>(study));
  Shape shape;
  if (study <= 5) {
    spec.n = 500;
    spec.pi = to_vector({0.25, 0.75});
    shape = equal_k[static_cast<std::size_t>(study - 1)];
  } else if (study <= 10) {
    spec.n = 1000;
    spec.pi = to_vector({0.35, 0.10, 0.55});
    shape = equal_k[static_cast<std::size_t>(study - 6)];
  } else {
    spec.n = 500;
    spec.pi = to_vector({0.25, 0.75});
    shape = study == 11 ? Shape{10, even_blocks(10, 2), even_blocks(10, 3)} : Shape{20, even_blocks(20, 4), even_blocks(20, 5)};
  }
  spec.d = shape.d;
  for (std::size_t g = 0; g < spec.G(); ++g) {
    spec.block_sizes.push_back(g == 1 && !shape.blocks2.empty() ? shape.blocks2 : shape.blocks1);
  }
  spec.mu = preset_means(spec.G(), spec.d, derive_seed(0x3EA45ULL, static_cast<std::uint64_t>(study)));
  spec.validate();
  return spec;
}

// ---------------------------------------------------------------------------
// JSON

nlohmann::json to_json(const SimSpec& spec) {
  nlohmann::json doc;
  doc["name"] = spec.name;
  doc["n"] = spec.n;
  doc["d"] = spec.d;
  doc["pi"] = std::vector<double>(spec.pi.data(), spec.pi.data() + spec.pi.size());
  auto& mu = doc["mu"] = nlohmann::json::array();
  for (Eigen::Index g = 0; g < spec.mu.rows(); ++g) {
    std::vector<double> row(static_cast<std::size_t>(spec.mu.cols()));
    for (Eigen::Index j = 0; j < spec.mu.cols(); ++j) row[static_cast<std::size_t>(j)] = spec.mu(g, j);
    mu.push_back(row);
  }
  doc["block_sizes"] = spec.block_sizes;
  doc["corr_range"] = {spec.corr_range.first, spec.corr_range.second};
  doc["variance_range"] = {spec.variance_range.first, spec.variance_range.second};
  if (spec.offsets) {
    doc["offsets"] = std::vector<double>(spec.offsets->data(), spec.offsets->data() + spec.offsets->size());
  } else {
    doc["offsets"] = "unit";
  }
  doc["seed"] = spec.seed;
  doc["covariance_seed"] = spec.covariance_seed;
  return doc;
}

SimSpec spec_from_json(const nlohmann::json& doc) {
  static const std::vector<std::string> known = {"name", "n", "d", "pi", "mu", "block_sizes", "corr_range",
                                                 "variance_range", "offsets", "seed", "covariance_seed"};
  try {
    for (const auto& [key, value] : doc.items()) {
      if (std::find(known.begin(), known.end(), key) == known.end()) {
        throw Error(ErrorCode::invalid_argument, "unknown simulation key '" + key + "'");
      }
    }
    SimSpec spec;
    spec.name = doc.value("name", std::string("custom"));
    spec.n = doc.at("n").get<std::size_t>();
    spec.d = doc.at("d").get<std::size_t>();
    spec.pi = to_vector(doc.at("pi").get<std::vector<double>>());
    const auto rows = doc.at("mu").get<std::vector<std::vector<double>>>();
    spec.mu.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(spec.d));
    for (std::size_t g = 0; g < rows.size(); ++g) {
      if (rows[g].size() != spec.d) throw Error(ErrorCode::dimension_mismatch, "mu row has the wrong length");
      for (std::size_t j = 0; j < spec.d; ++j) spec.mu(static_cast<Eigen::Index>(g), static_cast<Eigen::Index>(j)) = rows[g][j];
    }
    spec.block_sizes = doc.at("block_sizes").get<std::vector<std::vector<std::size_t>>>();
    if (doc.contains("corr_range")) spec.corr_range = doc.at("corr_range").get<std::pair<double, double>>();
    if (doc.contains("variance_range")) spec.variance_range = doc.at("variance_range").get<std::pair<double, double>>();
    if (doc.contains("offsets") && !(doc.at("offsets").is_string() && doc.at("offsets") == "unit")) {
      spec.offsets = to_vector(doc.at("offsets").get<std::vector<double>>());
    }
    spec.seed = doc.value("seed", std::uint64_t{0});
    spec.covariance_seed = doc.value("covariance_seed", std::uint64_t{0});
    spec.validate();
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("simulation spec: ") + e.what());
  }
}

nlohmann::json to_json(const GroundTruth& truth) {
  nlohmann::json doc;
  std::vector<int> labels(truth.row_labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = truth.row_labels[i] + 1;
  doc["labels"] = labels;
  doc["model"] = mpln::to_json(truth.model);
  return doc;
}

GroundTruth truth_from_json(const nlohmann::json& doc) {
  try {
    GroundTruth truth;
    truth.model = model_from_json(doc.at("model"));
    for (int label : doc.at("labels").get<std::vector<int>>()) {
      if (label < 1 || static_cast<std::size_t>(label) > truth.model.G()) {
        throw Error(ErrorCode::invalid_argument, "truth label out of range");
      }
      truth.row_labels.push_back(label - 1);
    }
    return truth;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("truth JSON: ") + e.what());
  }
}

}  // namespace mpln::sim
