#include <random>

#include <benchmark/benchmark.h>

#include "mplnbc/colgroup.hpp"
#include "mplnbc/linalg.hpp"
#include "mplnbc/model.hpp"
#include "mplnbc/simulate.hpp"
#include "mplnbc/vem.hpp"

using namespace mpln;

namespace {

// Covariance with `block` sized blocks and a matching count vector.
struct ObservationCase {
  Eigen::VectorXd y, m, mu;
  SymMatrix s, sigma;
  ColumnPartition part;
};

ObservationCase observation_case(std::size_t d, std::size_t block) {
  std::vector<std::size_t> sizes(d / block, block);
  if (d % block) sizes.push_back(d % block);
  ObservationCase c;
  c.sigma = sim::sample_block_covariance(sizes, {0.3, 0.6}, {0.5, 1.0}, 7);
  c.part = ColumnPartition::from_block_sizes(sizes);
  c.mu = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(d), 2.0);
  c.y = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(d), 9.0);
  c.m = c.mu;
  c.s = SymMatrix::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d)) * 0.1;
  return c;
}

void BM_UpdateObservation(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  const auto c = observation_case(d, 5);
  const auto cache = ComponentCache::build(c.sigma, c.part);
  const auto obs = observation_terms(c.y, 0.0);
  const double logdet = linalg::logdet_pd(c.s);
  const double start = elbo_observation(c.y, obs, c.m, c.s, logdet, c.mu, cache);
  for (auto _ : state) {
    auto up = vem::update_observation(c.y, obs, c.m, c.s, logdet, start, c.mu, cache, 10, 1e-6);
    benchmark::DoNotOptimize(up);
  }
}
BENCHMARK(BM_UpdateObservation)->Arg(10)->Arg(20)->Arg(50);

void BM_FitCell(benchmark::State& state) {
  auto spec = sim::preset(1);
  spec.n = static_cast<std::size_t>(state.range(0));
  spec.seed = 3;
  const auto ds = sim::sample_dataset(spec);
  vem::FitConfig cfg;
  cfg.n_starts = 1;
  for (auto _ : state) {
    auto res = vem::fit(ds.counts, ds.offsets, 2, vem::EqualK{2}, cfg);
    benchmark::DoNotOptimize(res.lower_bound);
  }
}
BENCHMARK(BM_FitCell)->Arg(100)->Arg(500)->Unit(benchmark::kMillisecond);

void BM_Agglomerate(benchmark::State& state) {
  const auto d = static_cast<Eigen::Index>(state.range(0));
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  colgroup::DistanceMatrix dist = colgroup::DistanceMatrix::Zero(d, d);
  for (Eigen::Index a = 0; a < d; ++a)
    for (Eigen::Index b = a + 1; b < d; ++b) dist(a, b) = dist(b, a) = u(rng);
  for (auto _ : state) {
    auto dn = colgroup::agglomerate(dist, colgroup::Linkage::average);
    benchmark::DoNotOptimize(dn.merges.data());
  }
}
BENCHMARK(BM_Agglomerate)->Arg(10)->Arg(50)->Arg(200);

}  // namespace

BENCHMARK_MAIN();
