#include <gtest/gtest.h>

#include <random>

#include "support.hpp"

using namespace misloc;
using testing_support::central_difference;
using testing_support::enumerate_allocations;
using testing_support::enumerated_u;
using testing_support::relative_gap;

namespace
{

CountData counts_from(const ProblemShape& shape, const std::vector<std::vector<Count>>& m1_by_obs,
                      const std::vector<Count>& m0_by_obs, int c = 0, int t = 0)
{
  auto raw = RawCounts::zeros(shape);
  for (std::size_t n = 0; n < m0_by_obs.size(); ++n) {
    raw.m0(c, t, static_cast<int>(n)) = m0_by_obs[n];
    for (int i = 0; i < shape.n_zones(); ++i) raw.m1(c, i, t, static_cast<int>(n)) = m1_by_obs[n][i];
  }
  return aggregate_counts(std::move(raw), shape);
}

}  // namespace

TEST(PopulationShares, NormalizesAndValidates)
{
  const auto pi = PopulationShares::from_population({1.0, 3.0});
  EXPECT_DOUBLE_EQ(pi.pi(0), 0.25);
  EXPECT_DOUBLE_EQ(pi.pi(1), 0.75);
  EXPECT_THROW(PopulationShares::from_population({}), Error);
  EXPECT_THROW(PopulationShares::from_population({0.0, 0.0}), Error);
  EXPECT_THROW(PopulationShares::from_population({1.0, -1.0}), Error);
}

TEST(AllocationSample, DegenerateCases)
{
  const auto pi = PopulationShares::from_population({1.0, 2.0, 3.0});
  const auto zero = sample_multinomial(pi, 0, 5, 1);
  ASSERT_EQ(zero.size(), 5u);
  for (std::size_t s = 0; s < 5; ++s)
    for (Count v : zero.dense(s)) EXPECT_EQ(v, 0);
  const auto single = sample_multinomial(PopulationShares::from_population({4.0}), 7, 20, 2);
  for (std::size_t s = 0; s < single.size(); ++s) EXPECT_EQ(single.dense(s)[0], 7);
}

TEST(AllocationSample, DrawsSumToUnlocatedCount)
{
  const auto pi = PopulationShares::from_population({1.0, 2.0, 3.0, 0.5});
  const auto sample = sample_multinomial(pi, 13, 500, 3);
  for (std::size_t s = 0; s < sample.size(); ++s) {
    const auto v = sample.dense(s);
    EXPECT_EQ(std::accumulate(v.begin(), v.end(), Count{0}), 13);
  }
}

TEST(AllocationSample, BinomialMoment)
{
  const auto pi = PopulationShares::from_population({1.0, 1.0});
  const auto sample = sample_multinomial(pi, 10, 10000, 4);
  double mean = 0.0;
  for (std::size_t s = 0; s < sample.size(); ++s) mean += static_cast<double>(sample.dense(s)[0]);
  mean /= static_cast<double>(sample.size());
  EXPECT_NEAR(mean, 5.0, 0.15);
}

TEST(AllocationSample, SeedDeterminesDraws)
{
  const auto pi = PopulationShares::from_population({1.0, 2.0, 3.0});
  const auto a = sample_multinomial(pi, 9, 50, 77), b = sample_multinomial(pi, 9, 50, 77);
  const auto c = sample_multinomial(pi, 9, 50, 78);
  EXPECT_EQ(a.entries, b.entries);
  EXPECT_NE(a.entries, c.entries);
  EXPECT_NE(derive_seed(1, 0, 0, 1), derive_seed(1, 0, 1, 0));
}

TEST(AllocationSample, ExactOnlyWhenCheap)
{
  const auto pi = PopulationShares::from_population(std::vector<double>(76, 1.0));
  EXPECT_DOUBLE_EQ(allocation_count(2, 2), 3.0);
  EXPECT_NEAR(allocation_count(3, 4), 20.0, 1e-9);
  EXPECT_TRUE(make_allocation_sample(pi, 1, McConfig{}, 1).exact);    // 76 allocations
  EXPECT_FALSE(make_allocation_sample(pi, 5, McConfig{}, 1).exact);   // ~2e7 allocations
  const auto two = PopulationShares::from_population({1.0, 1.0});
  EXPECT_TRUE(make_allocation_sample(two, 50, McConfig{}, 1).exact);
}

TEST(LogU, OneZoneClosedForm)
{
  const auto pi = PopulationShares::from_population({2.0});
  const std::vector<double> lambda{1.7};
  const std::vector<Count> m1{4};
  const double d = 0.5, a = 1.7 * 0.5;
  const double want = -a + 7 * std::log(a) - std::lgamma(8.0);
  for (int s : {1, 10, 1000}) {
    McConfig cfg;
    cfg.samples = s;
    cfg.exact_limit = 0;  // force sampling
    const auto sample = make_allocation_sample(pi, 3, cfg, 5);
    EXPECT_FALSE(sample.exact);
    EXPECT_NEAR(log_u_term(lambda, m1, d, sample, pi), want, 1e-12);
  }
  EXPECT_NEAR(log_u_term(lambda, m1, d, make_allocation_sample(pi, 3, McConfig{}, 5), pi), want, 1e-12);
}

TEST(LogU, NoUnlocatedIsProductOfPoissons)
{
  const auto pi = PopulationShares::from_population({1.0, 2.0, 1.0});
  const std::vector<double> lambda{1.0, 2.5, 0.3};
  const std::vector<Count> m1{2, 0, 5};
  double want = 0.0;
  for (int i = 0; i < 3; ++i)
    want += -lambda[i] + m1[i] * std::log(lambda[i]) - std::lgamma(static_cast<double>(m1[i]) + 1.0);
  for (int s : {1, 50}) {
    const auto sample = sample_multinomial(pi, 0, s, 9);
    EXPECT_NEAR(log_u_term(lambda, m1, 1.0, sample, pi), want, 1e-12);
  }
}

TEST(LogU, ExactRecursionMatchesEnumeration)
{
  std::mt19937_64 rng(97);
  std::uniform_real_distribution<double> u(0.2, 3.0), w(0.5, 2.0);
  std::uniform_int_distribution<Count> k(0, 4);
  for (int trial = 0; trial < 20; ++trial) {
    const int nz = 1 + trial % 4;
    const Count m_bar = k(rng) + 1;
    std::vector<double> lambda(nz), pop(nz);
    std::vector<Count> m1(nz);
    for (int i = 0; i < nz; ++i) {
      lambda[i] = u(rng);
      pop[i] = w(rng);
      m1[i] = k(rng);
    }
    const auto pi = PopulationShares::from_population(pop);
    const auto sample = make_allocation_sample(pi, m_bar, McConfig{}, 1);
    ASSERT_TRUE(sample.exact);
    const double direct = enumerated_u(lambda, m1, 0.5, pi.shares(), m_bar);
    EXPECT_NEAR(log_u_term(lambda, m1, 0.5, sample, pi), std::log(direct), 1e-10 * std::abs(std::log(direct)));
  }
}

TEST(LogU, MonteCarloMatchesEnumeration)
{
  // 2 zones, M0 = 2: the three allocations (2,0), (1,1), (0,2)
  ASSERT_EQ(enumerate_allocations(2, 2).size(), 3u);
  const std::vector<std::vector<double>> lambdas{{1.0, 2.0}, {0.4, 3.5}, {2.2, 2.2}};
  const std::vector<std::vector<Count>> m1s{{1, 3}, {0, 2}, {4, 0}};
  const auto pi = PopulationShares::from_population({1.0, 3.0});
  for (std::size_t k = 0; k < lambdas.size(); ++k) {
    const double exact = enumerated_u(lambdas[k], m1s[k], 1.0, pi.shares(), 2);
    const auto sample = sample_multinomial(pi, 2, 100000, 100 + k);
    const double mc = std::exp(log_u_term(lambdas[k], m1s[k], 1.0, sample, pi));
    EXPECT_NEAR(mc, exact, 0.01 * exact);
  }
}

TEST(LogU, RejectsMismatchedSample)
{
  const auto shape = ProblemShape::uniform(1, 2, 1, 1.0, 1);
  const auto d = counts_from(shape, {{1, 1}}, {2});
  const auto pi = PopulationShares::from_population({1.0, 1.0});
  const IntensityField lambda(shape, {1.0, 1.0});
  EXPECT_THROW(mc_likelihood_term(lambda, d, sample_multinomial(pi, 3, 10, 1), pi, 0, 0, 0), DomainError);
  auto set = build_mc_samples(d, pi, McConfig{});
  set.samples[0] = sample_multinomial(pi, 1, 10, 1);
  EXPECT_THROW(PopulationBlockLoss(d, set, pi, 0, 0), DomainError);
}

TEST(PopulationGradient, NoUnlocatedReducesToPoisson)
{
  std::mt19937_64 rng(101);
  const auto shape = ProblemShape::uniform(1, 3, 2, 0.5, 4);
  const auto d = testing_support::random_counts(shape, rng, 2.0, 0.0);
  const auto pi = PopulationShares::from_population({1.0, 2.0, 3.0});
  const auto set = build_mc_samples(d, pi, McConfig{});
  std::vector<double> v(shape.n_lambda());
  std::uniform_real_distribution<double> u(0.3, 3.0);
  for (auto& x : v) x = u(rng);
  const IntensityField lambda(shape, v);
  const auto g = mc_gradient(lambda, d, set, pi);
  for (int t = 0; t < 2; ++t)
    for (int i = 0; i < 3; ++i)
      EXPECT_NEAR(g[shape.cit(0, i, t)], 4 * 0.5 - d.m1_zone(0, i, t) / lambda.at(0, i, t), 1e-10);
}

TEST(PopulationGradient, OneZoneStationaryAtClosedForm)
{
  const auto shape = ProblemShape::uniform(1, 1, 1, 0.5, 3);
  const auto d = counts_from(shape, {{2}, {5}, {1}}, {1, 0, 3});
  const auto pi = PopulationShares::from_population({1.0});
  const auto set = build_mc_samples(d, pi, McConfig{});
  const IntensityField lambda(shape, {12.0 / 1.5});
  EXPECT_NEAR(mc_gradient(lambda, d, set, pi)[0], 0.0, 1e-10);
}

TEST(PopulationGradient, MatchesFiniteDifferences)
{
  std::mt19937_64 rng(103);
  const auto shape = ProblemShape::uniform(1, 4, 2, 0.5, 3);
  const auto d = testing_support::random_counts(shape, rng, 1.5, 2.0);
  const auto pi = PopulationShares::from_population({1.0, 2.0, 0.5, 1.5});
  McConfig exact;
  McConfig sampled;
  sampled.exact_limit = 0;
  sampled.samples = 50;
  std::uniform_real_distribution<double> u(0.3, 4.0);
  for (const auto& cfg : {exact, sampled}) {
    const auto set = build_mc_samples(d, pi, cfg);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> v(shape.n_lambda());
      for (auto& x : v) x = u(rng);
      const auto g = mc_gradient(IntensityField(shape, v), d, set, pi);
      const auto fd = central_difference(
        [&](std::span<const double> x) {
          return mc_objective(IntensityField(shape, std::vector<double>(x.begin(), x.end())), d, set, pi);
        },
        v);
      EXPECT_LT(relative_gap(g, fd), 1e-4);
    }
  }
}

TEST(PopulationModel, OneZoneClosedForm)
{
  const auto shape = ProblemShape::uniform(1, 1, 2, 0.5, 3);
  auto raw = RawCounts::zeros(shape);
  const Count m1[2][3] = {{2, 5, 1}, {0, 3, 3}};
  const Count m0[2][3] = {{1, 0, 3}, {4, 0, 1}};
  for (int t = 0; t < 2; ++t)
    for (int n = 0; n < 3; ++n) {
      raw.m1(0, 0, t, n) = m1[t][n];
      raw.m0(0, t, n) = m0[t][n];
    }
  const auto d = aggregate_counts(raw, shape);
  const auto pi = PopulationShares::from_population({3.0});
  SolverConfig cfg;
  cfg.tolerance = 1e-15;
  PopulationOptions cold;
  cold.warm_start = false;
  const auto r = estimate_population_model(d, pi, cfg, McConfig{}, 1e-5, cold);
  EXPECT_NEAR(r.lambda.at(0, 0, 0), 12.0 / 1.5, 1e-6);
  EXPECT_NEAR(r.lambda.at(0, 0, 1), 11.0 / 1.5, 1e-6);
}

TEST(PopulationModel, NoUnlocatedMatchesAnalytic)
{
  std::mt19937_64 rng(107);
  const auto shape = ProblemShape::uniform(2, 3, 2, 0.5, 5);
  const auto d = testing_support::random_counts(shape, rng, 3.0, 0.0);
  const auto pi = PopulationShares::from_population({1.0, 2.0, 3.0});
  SolverConfig cfg;
  cfg.tolerance = 1e-15;
  PopulationOptions cold;
  cold.warm_start = false;
  const auto r = estimate_population_model(d, pi, cfg, McConfig{}, 1e-5, cold);
  const auto a = estimate_lambda(d);
  for (int c = 0; c < 2; ++c)
    for (int t = 0; t < 2; ++t)
      for (int i = 0; i < 3; ++i) {
        const double want = std::max(a.lambda.at(c, i, t), 1e-5);
        EXPECT_NEAR(r.lambda.at(c, i, t), want, 1e-6 * std::max(1.0, want));
      }
}

TEST(PopulationModel, SeedMakesRunReproducible)
{
  std::mt19937_64 rng(109);
  const auto shape = ProblemShape::uniform(1, 5, 2, 0.5, 4);
  const auto d = testing_support::random_counts(shape, rng, 2.0, 3.0);
  const auto pi = PopulationShares::from_population({1.0, 2.0, 3.0, 1.0, 2.0});
  McConfig mc;
  mc.exact_limit = 0;
  mc.seed = 11;
  const auto a = estimate_population_model(d, pi, SolverConfig{}, mc, 1e-5);
  const auto b = estimate_population_model(d, pi, SolverConfig{}, mc, 1e-5);
  EXPECT_EQ(a.lambda.values(), b.lambda.values());
  EXPECT_EQ(a.objective, b.objective);
  mc.seed = 12;
  const auto c = estimate_population_model(d, pi, SolverConfig{}, mc, 1e-5);
  EXPECT_NE(a.lambda.values(), c.lambda.values());
  for (const auto& run : a.runs) {
    for (std::size_t k = 1; k < run.trace.size(); ++k) EXPECT_LE(run.trace[k], run.trace[k - 1]);
    for (double x : run.x) EXPECT_GE(x, 1e-5);
  }
}

TEST(PopulationModel, CellsWithoutObservationsAreUndefined)
{
  const ProblemShape shape(1, 2, 2, {1.0, 1.0}, std::vector<int>{0, 2});
  auto raw = RawCounts::zeros(shape);
  raw.m1(0, 0, 1, 0) = 2;
  raw.m0(0, 1, 1) = 1;
  const auto d = aggregate_counts(raw, shape);
  const auto r = estimate_population_model(d, PopulationShares::from_population({1.0, 1.0}), SolverConfig{},
                                           McConfig{}, 1e-5);
  EXPECT_EQ(r.status.status_at(0, 0), CellStatus::undefined);
  EXPECT_TRUE(r.status.ok(0, 1));
}
