#include <cmath>
#include <random>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "mplnbc/error.hpp"
#include "mplnbc/evaluate.hpp"
#include "mplnbc/seed.hpp"
#include "mplnbc/simulate.hpp"
#include "mplnbc/vem.hpp"
#include "instances.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace mpln;
using test_util::error_code;
using test_util::nondecreasing;
using test_util::random_dataset;

namespace {

Eigen::VectorXd scalar(double x) { return Eigen::VectorXd::Constant(1, x); }
Eigen::MatrixXd mat1(double x) { return Eigen::MatrixXd::Constant(1, 1, x); }

}  // namespace

TEST(UpdateS, ScalarFixedPointStep) {
  const auto s = vem::update_s(0.0, scalar(0.0), mat1(1.0), mat1(1.0));
  EXPECT_NEAR(s(0, 0), 1.0 / (1.0 + std::exp(0.5)), 1e-12);
  EXPECT_NEAR(s(0, 0), 0.37754, 1e-5);
}

TEST(UpdateM, ScalarNewtonStep) {
  const auto m = vem::update_m(scalar(1.0), 0.0, scalar(0.0), mat1(0.5), scalar(0.0), mat1(1.0));
  EXPECT_NEAR(m[0], -0.5 * (std::exp(0.25) - 1.0), 1e-12);
  EXPECT_NEAR(m[0], -0.14201, 1e-5);
}

TEST(UpdateS, UsesDiagonalExpTermWithOffset) {
  std::mt19937_64 rng(1);
  const auto sigma = oracle::random_pd(3, rng);
  const auto s = oracle::random_pd(3, rng, 0.05, 0.5);
  const Eigen::Vector3d m(0.5, 1.0, -0.2);
  const double log_c = 0.7;
  Eigen::MatrixXd precision = sigma.inverse();
  for (int j = 0; j < 3; ++j) precision(j, j) += std::exp(log_c + m[j] + 0.5 * s(j, j));
  EXPECT_TRUE(vem::update_s(log_c, m, s, sigma).isApprox(precision.inverse(), 1e-10));
}

// Scalar stationarity: after the inner loop converges, the gradient in m
// vanishes and S solves its own fixed-point equation; both agree with the
// bisection oracle.
TEST(UpdateVariational, ConvergesToScalarStationaryPoint) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> mu_d(-1.0, 3.0), sig_d(0.2, 2.0), lc_d(-0.5, 0.5);
  std::uniform_int_distribution<int> y_d(0, 40);
  for (int rep = 0; rep < 40; ++rep) {
    const double y = y_d(rng), mu = mu_d(rng), sigma = sig_d(rng), log_c = lc_d(rng);
    const auto [m, s] = vem::update_variational(scalar(y), log_c, scalar(std::log(y + 0.5) - log_c), mat1(0.1),
                                                scalar(mu), mat1(sigma), 500, 1e-12);
    const double mm = m[0], ss = s(0, 0);
    EXPECT_LE(std::abs(y - std::exp(log_c + mm + 0.5 * ss) - (mm - mu) / sigma), 1e-5);
    EXPECT_NEAR(ss, 1.0 / (1.0 / sigma + std::exp(log_c + mm + 0.5 * ss)), 1e-6);
    const auto q = oracle::scalar_vga(y, log_c, mu, sigma);
    EXPECT_NEAR(mm, q.m, 1e-5);
    EXPECT_NEAR(ss, q.s, 1e-6);
  }
}

TEST(UpdateVariational, NeverLowersElbo) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-2.0, 4.0);
  std::uniform_int_distribution<int> y_d(0, 200);
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t d = 1 + rep % 5;
    Eigen::VectorXd y(d), m(d), mu(d);
    for (std::size_t j = 0; j < d; ++j) {
      y[j] = y_d(rng);
      m[j] = u(rng);
      mu[j] = u(rng);
    }
    const auto sigma = oracle::random_pd(d, rng, 0.1, 3.0);
    const auto s = oracle::random_pd(d, rng, 0.01, 2.0);
    const double before = elbo_observation(y, 0.0, m, s, mu, sigma);
    for (std::size_t iters : {1, 3, 10}) {
      const auto [m2, s2] = vem::update_variational(y, 0.0, m, s, mu, sigma, iters, 1e-8);
      EXPECT_GE(elbo_observation(y, 0.0, m2, s2, mu, sigma), before - 1e-9 * std::abs(before));
    }
  }
}

TEST(MStepPi, Examples) {
  Eigen::MatrixXd z(4, 2);
  z << 1, 0, 1, 0, 1, 0, 1, 0;
  EXPECT_EQ(vem::m_step_pi(z), Eigen::Vector2d(1, 0));
  z << 1, 0, 1, 0, 0, 1, 0, 1;
  EXPECT_EQ(vem::m_step_pi(z), Eigen::Vector2d(0.5, 0.5));
}

TEST(MStepPi, MatchesColumnMeans) {
  std::mt19937_64 rng(4);
  std::gamma_distribution<double> gam(1.0, 1.0);
  Eigen::MatrixXd z(9, 3);
  for (Eigen::Index i = 0; i < 9; ++i) {
    for (Eigen::Index g = 0; g < 3; ++g) z(i, g) = gam(rng);
    z.row(i) /= z.row(i).sum();
  }
  const auto pi = vem::m_step_pi(z);
  for (Eigen::Index g = 0; g < 3; ++g) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < 9; ++i) s += z(i, g);
    EXPECT_NEAR(pi[g], s / 9.0, 1e-15);
  }
  EXPECT_NEAR(pi.sum(), 1.0, 1e-12);
}

TEST(MStepMu, Examples) {
  VariationalState st(3, 1, 2);
  st.m << 1, 2, 3, 4, 5, 6;  // columns are the per-observation means (1,4), (2,5), (3,6)
  const auto mu = vem::m_step_mu(Eigen::MatrixXd::Ones(3, 1), st);
  EXPECT_TRUE(mu.isApprox(Eigen::RowVector2d(2, 5)));

  VariationalState two(2, 2, 1);
  two.mean(0, 0)[0] = 1.5;
  two.mean(0, 1)[0] = -7.0;
  two.mean(1, 0)[0] = 9.0;
  two.mean(1, 1)[0] = 2.5;
  Eigen::MatrixXd z(2, 2);
  z << 1, 0, 0, 1;
  const auto mu2 = vem::m_step_mu(z, two);
  EXPECT_EQ(mu2(0, 0), 1.5);
  EXPECT_EQ(mu2(1, 0), 2.5);
}

TEST(MStepMu, MatchesWeightedMeanAndRejectsEmptyComponent) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  VariationalState st(7, 2, 3);
  st.m = Eigen::MatrixXd::Random(3, 14);
  Eigen::MatrixXd z(7, 2);
  for (Eigen::Index i = 0; i < 7; ++i) {
    z(i, 0) = u(rng);
    z(i, 1) = 1.0 - z(i, 0);
  }
  const auto mu = vem::m_step_mu(z, st);
  for (std::size_t g = 0; g < 2; ++g) {
    Eigen::Vector3d acc = Eigen::Vector3d::Zero();
    double w = 0.0;
    for (std::size_t i = 0; i < 7; ++i) {
      acc += z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(g)) * st.mean(i, g);
      w += z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(g));
    }
    EXPECT_LE((mu.row(static_cast<Eigen::Index>(g)).transpose() - acc / w).norm(), 1e-12);
  }
  z.col(1).setZero();
  z.col(0).setOnes();
  EXPECT_EQ(error_code([&] { vem::m_step_mu(z, st); }), ErrorCode::empty_component);
}

TEST(ComputeW, Examples) {
  const Eigen::Vector2d mu(1.0, 2.0);
  Eigen::MatrixXd m(3, 2);
  m << 1, 2, 1, 2, 1, 2;
  std::vector<SymMatrix> s(3, Eigen::MatrixXd::Identity(2, 2));
  EXPECT_TRUE(vem::compute_w(Eigen::Vector3d(0.2, 0.5, 1.0), m, s, mu).isApprox(Eigen::MatrixXd::Identity(2, 2)));

  std::mt19937_64 rng(6);
  const auto s1 = oracle::random_pd(2, rng);
  EXPECT_TRUE(vem::compute_w(Eigen::VectorXd::Constant(1, 0.7), Eigen::RowVector2d(1.0, 2.0), {s1}, mu).isApprox(s1, 1e-14));
}

TEST(ComputeW, MatchesDirectSummation) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::size_t n = 11, d = 4;
  Eigen::VectorXd z(n);
  Eigen::MatrixXd m = Eigen::MatrixXd::Random(n, d);
  std::vector<SymMatrix> s;
  for (std::size_t i = 0; i < n; ++i) {
    z[static_cast<Eigen::Index>(i)] = u(rng);
    s.push_back(oracle::random_pd(d, rng, 0.01, 0.3));
  }
  const Eigen::VectorXd mu = Eigen::VectorXd::Random(d);
  Eigen::MatrixXd expect = Eigen::MatrixXd::Zero(d, d);
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::VectorXd r = m.row(static_cast<Eigen::Index>(i)).transpose() - mu;
    expect += z[static_cast<Eigen::Index>(i)] * (r * r.transpose() + s[i]);
  }
  expect /= z.sum();
  EXPECT_LE((vem::compute_w(z, m, s, mu) - expect).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_EQ(error_code([&] { vem::compute_w(Eigen::VectorXd::Zero(n), m, s, mu); }), ErrorCode::empty_component);
}

TEST(Initialize, LogRatesAndSpherical) {
  Eigen::MatrixXd y(2, 2);
  y << 0, 3, 0, 7;
  Eigen::Vector2d c(1.0, 2.0);
  const data::CountMatrix counts(y);
  const auto st = vem::initialize(counts, data::OffsetVector(c), 1, vem::FitConfig{}, 0);
  EXPECT_DOUBLE_EQ(st.mean(0, 0)[0], std::log(0.5));
  EXPECT_DOUBLE_EQ(st.mean(1, 0)[1], std::log(7.5 / 2.0));
  EXPECT_TRUE(st.cov(0, 0).isApprox(0.1 * Eigen::MatrixXd::Identity(2, 2)));
  EXPECT_EQ(st.z, Eigen::MatrixXd::Ones(2, 1));
}

TEST(Initialize, SingleComponentIgnoresRestart) {
  const auto ds = random_dataset(8, 20, 3, 1);
  for (std::size_t r = 0; r < 4; ++r) {
    EXPECT_EQ(vem::initialize(ds.counts, ds.offsets, 1, vem::FitConfig{}, r).z, Eigen::MatrixXd::Ones(20, 1));
  }
}

TEST(Initialize, DeterministicAndOnSimplex) {
  const auto ds = random_dataset(9, 30, 4, 2);
  vem::FitConfig cfg;
  cfg.seed = 1234;
  for (std::size_t r = 0; r < 3; ++r) {
    const auto a = vem::initialize(ds.counts, ds.offsets, 3, cfg, r);
    const auto b = vem::initialize(ds.counts, ds.offsets, 3, cfg, r);
    EXPECT_EQ(a.z, b.z);
    EXPECT_EQ(a.m, b.m);
    for (Eigen::Index i = 0; i < a.z.rows(); ++i) EXPECT_NEAR(a.z.row(i).sum(), 1.0, 1e-12);
  }
  // Restart 0 is a hard k-means start; later restarts are soft.
  const auto hard = vem::initialize(ds.counts, ds.offsets, 2, cfg, 0);
  EXPECT_TRUE(((hard.z.array() == 0.0) || (hard.z.array() == 1.0)).all());
  const auto soft = vem::initialize(ds.counts, ds.offsets, 2, cfg, 1);
  EXPECT_FALSE(((soft.z.array() == 0.0) || (soft.z.array() == 1.0)).all());
}

TEST(FitConfig, Validation) {
  vem::FitConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.elbo_rel_tol = 0.0;
  EXPECT_EQ(error_code([&] { cfg.validate(); }), ErrorCode::invalid_argument);
  cfg = {};
  cfg.max_em_iter = 0;
  EXPECT_EQ(error_code([&] { cfg.validate(); }), ErrorCode::invalid_argument);
}

TEST(Fit, RejectsBadShapes) {
  const auto ds = random_dataset(10, 10, 3, 1);
  EXPECT_EQ(error_code([&] { vem::fit(ds.counts, ds.offsets, 11, vem::EqualK{1}, {}); }), ErrorCode::invalid_argument);
  EXPECT_EQ(error_code([&] { vem::fit(ds.counts, ds.offsets, 1, vem::EqualK{4}, {}); }), ErrorCode::invalid_argument);
  EXPECT_EQ(error_code([&] { vem::fit(ds.counts, ds.offsets, 2, vem::PerComponentK{{1}}, {}); }), ErrorCode::invalid_argument);
  EXPECT_EQ(error_code([&] { vem::fit(ds.counts, ds.offsets, 1, vem::AutoK{1}, {}); }), ErrorCode::invalid_argument);
}

// One-variable, one-component fit against an independent scalar EM whose
// E-step solves every variational problem exactly by bisection.
TEST(Fit, SingleComponentScalarMatchesOracle) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> normal(1.2, 0.7);
  std::uniform_real_distribution<double> lc(-0.3, 0.3);
  const std::size_t n = 40;
  Eigen::MatrixXd y(n, 1);
  Eigen::VectorXd c(n);
  std::vector<double> yv, lcv;
  for (std::size_t i = 0; i < n; ++i) {
    const double l = lc(rng);
    std::poisson_distribution<int> pois(std::exp(l + normal(rng)));
    y(static_cast<Eigen::Index>(i), 0) = pois(rng);
    c[static_cast<Eigen::Index>(i)] = std::exp(l);
    yv.push_back(y(static_cast<Eigen::Index>(i), 0));
    lcv.push_back(l);
  }
  const data::OffsetVector offsets(c);
  for (std::size_t i = 0; i < n; ++i) lcv[i] = std::log(offsets[i]);
  vem::FitConfig cfg;
  cfg.max_em_iter = 20000;
  cfg.elbo_rel_tol = 1e-15;
  cfg.inner_iter = 100;
  cfg.inner_tol = 1e-13;
  const auto res = vem::fit(data::CountMatrix(y), offsets, 1, vem::EqualK{1}, cfg);
  const auto ref = oracle::scalar_em(yv, lcv);
  EXPECT_NEAR(res.model.mu(0, 0), ref.mu, 1e-6);
  EXPECT_NEAR(res.model.sigma[0](0, 0), ref.sigma, 1e-6);
}

TEST(Fit, OneBlockEqualsExplicitPerComponentSpec) {
  const auto ds = random_dataset(12, 40, 4, 1);
  const auto a = vem::fit(ds.counts, ds.offsets, 1, vem::EqualK{1}, {});
  const auto b = vem::fit(ds.counts, ds.offsets, 1, vem::PerComponentK{{1}}, {});
  EXPECT_EQ(a.lower_bound, b.lower_bound);
  EXPECT_EQ(a.model.sigma[0], b.model.sigma[0]);
  EXPECT_EQ(a.model.grouping[0].K(), 1u);
}

TEST(Fit, TraceIsMonotoneOnRandomInstances) {
  std::mt19937_64 rng(13);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t n = 20 + rng() % 41;
    const std::size_t d = 1 + rng() % 6;
    const std::size_t G = 1 + rng() % 2;
    const auto ds = random_dataset(100 + static_cast<std::uint64_t>(rep), n, d, G);
    vem::FitConfig cfg;
    cfg.seed = static_cast<std::uint64_t>(rep);
    cfg.n_starts = 2;
    const std::size_t k = 1 + rng() % d;
    const auto res = vem::fit(ds.counts, ds.offsets, G, vem::EqualK{k}, cfg);
    EXPECT_TRUE(nondecreasing(res.elbo_trace, 1e-8)) << "instance " << rep;
    EXPECT_EQ(res.elbo_trace.size(), res.iterations + 1);
  }
}

TEST(Fit, DeterministicForFixedSeed) {
  const auto ds = random_dataset(14, 50, 4, 2);
  vem::FitConfig cfg;
  cfg.seed = 77;
  const auto a = vem::fit(ds.counts, ds.offsets, 2, vem::EqualK{2}, cfg);
  const auto b = vem::fit(ds.counts, ds.offsets, 2, vem::EqualK{2}, cfg);
  EXPECT_EQ(vem::to_json(a, ds.counts.sample_ids()).dump(), vem::to_json(b, ds.counts.sample_ids()).dump());
  EXPECT_EQ(a.state.m, b.state.m);
}

TEST(Fit, RelabellingTheStartRelabelsTheFit) {
  const auto ds = random_dataset(15, 60, 3, 2);
  vem::FitConfig cfg;
  const auto start = vem::initialize(ds.counts, ds.offsets, 2, cfg, 1);
  const auto a = vem::run_em(ds.counts, ds.offsets, start, vem::EqualK{2}, cfg);
  const auto b = vem::run_em(ds.counts, ds.offsets, start.permuted({1, 0}), vem::EqualK{2}, cfg);
  EXPECT_NEAR(a.lower_bound, b.lower_bound, 1e-9 * std::abs(a.lower_bound));
  EXPECT_LE((a.model.mu.row(0) - b.model.mu.row(1)).cwiseAbs().maxCoeff(), 1e-7);
  EXPECT_NEAR(a.model.pi[0], b.model.pi[1], 1e-9);
  for (std::size_t i = 0; i < a.row_labels.size(); ++i) EXPECT_EQ(a.row_labels[i], 1 - b.row_labels[i]);
}

TEST(Fit, RecoversStudyOneRows) {
  auto spec = sim::preset(1);
  spec.seed = derive_seed(2024, 0);
  const auto ds = sim::sample_dataset(spec);
  const auto res = vem::fit(ds.counts, ds.offsets, 2, vem::EqualK{2}, {});
  EXPECT_DOUBLE_EQ(eval::ari(ds.truth.row_labels, res.row_labels), 1.0);
  EXPECT_TRUE(nondecreasing(res.elbo_trace, 1e-8));
  EXPECT_TRUE(res.converged);
}

TEST(Fit, SilhouetteChoosesStudyElevenGroups) {
  auto spec = sim::preset(11);
  spec.seed = derive_seed(2024, 1);
  const auto ds = sim::sample_dataset(spec);
  const auto res = vem::fit(ds.counts, ds.offsets, 2, vem::AutoK{5}, {});
  const auto ev = eval::evaluate_fit(ds.truth, res);
  EXPECT_TRUE(ev.structure_correct);
  EXPECT_EQ(ev.fitted_groups, (std::vector<std::size_t>{2, 3}));
  EXPECT_EQ(res.silhouette_scores.size(), 2u);
}

TEST(Serialization, FitResultRoundTripAndCsv) {
  const auto ds = random_dataset(16, 12, 3, 2);
  const auto res = vem::fit(ds.counts, ds.offsets, 2, vem::EqualK{1}, {});
  const auto doc = nlohmann::json::parse(vem::to_json(res, ds.counts.sample_ids()).dump());
  const auto back = vem::fit_result_from_json(doc);
  EXPECT_EQ(back.row_labels, res.row_labels);
  EXPECT_EQ(back.elbo_trace, res.elbo_trace);
  EXPECT_EQ(back.lower_bound, res.lower_bound);
  EXPECT_EQ(back.bic, res.bic);
  EXPECT_EQ(back.model.sigma[1], res.model.sigma[1]);
  const auto labels = vem::labels_csv(res, ds.counts.sample_ids());
  EXPECT_EQ(labels.substr(0, labels.find('\n')), "sample_id,cluster");
  EXPECT_EQ(std::count(labels.begin(), labels.end(), '\n'), 13);
  const auto trace = vem::trace_csv(res);
  EXPECT_EQ(trace.substr(0, trace.find('\n')), "iteration,objective");
  const auto part = vem::partition_csv(res.model, ds.counts.var_names());
  EXPECT_EQ(part.substr(0, part.find('\n')), "variable,component,group");
  EXPECT_EQ(std::count(part.begin(), part.end(), '\n'), 1 + 2 * 3);
}
