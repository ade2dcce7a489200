#include <gtest/gtest.h>

#include <fstream>

#include "support.hpp"

using namespace misloc;
using testing_support::scratch_dir;

namespace
{

std::string read_text(const fs::path& path)
{
  std::ifstream in(path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

ScenarioSpec single_cell(double lambda, double p, int n_obs, std::uint64_t seed)
{
  return ScenarioSpec{ProblemShape::uniform(1, 1, 1, 1.0, n_obs), {lambda}, MissingProbability::global(p), seed, {}};
}

}  // namespace

TEST(Simulate, NoThinningKeepsEveryArrivalLocated)
{
  const auto sim = simulate(single_cell(4.0, 0.0, 20000, 1));
  double mean = 0.0;
  for (Count v : sim.raw.unlocated) EXPECT_EQ(v, 0);
  for (Count v : sim.raw.located) mean += static_cast<double>(v);
  mean /= 20000.0;
  EXPECT_NEAR(mean, 4.0, 3.0 * std::sqrt(4.0 / 20000.0));
}

TEST(Simulate, FullThinningLeavesNothingLocated)
{
  const auto sim = simulate(single_cell(4.0, 1.0, 1000, 2));
  for (Count v : sim.raw.located) EXPECT_EQ(v, 0);
}

TEST(Simulate, ThinningMomentsAndIndependence)
{
  const int n = 100000;
  const auto sim = simulate(single_cell(4.0, 0.25, n, 3));
  double m1 = 0.0, m0 = 0.0, s11 = 0.0, s00 = 0.0, s10 = 0.0;
  for (int k = 0; k < n; ++k) {
    const double a = static_cast<double>(sim.raw.located[k]), b = static_cast<double>(sim.raw.unlocated[k]);
    m1 += a;
    m0 += b;
    s11 += a * a;
    s00 += b * b;
    s10 += a * b;
  }
  m1 /= n;
  m0 /= n;
  EXPECT_NEAR(m1, 3.0, 0.02);
  EXPECT_NEAR(m0, 1.0, 0.015);
  const double cov = s10 / n - m1 * m0;
  const double rho = cov / std::sqrt((s11 / n - m1 * m1) * (s00 / n - m0 * m0));
  EXPECT_LT(std::abs(rho), 3.0 / std::sqrt(static_cast<double>(n)));
}

TEST(Simulate, HiddenAllocationsSumToUnlocated)
{
  const auto shape = ProblemShape::uniform(2, 4, 3, 0.5, 6);
  std::vector<double> lam(shape.n_lambda());
  for (std::size_t k = 0; k < lam.size(); ++k) lam[k] = 1.0 + static_cast<double>(k % 5);
  const auto sim = simulate(ScenarioSpec{shape, lam, MissingProbability::global(0.4), 4, {}});
  ASSERT_EQ(sim.hidden.size(), sim.raw.located.size());
  for (int c = 0; c < 2; ++c)
    for (int t = 0; t < 3; ++t)
      for (int n = 0; n < 6; ++n) {
        Count s = 0;
        for (int i = 0; i < 4; ++i) s += sim.hidden[sim.raw.located_index(c, i, t, n)];
        EXPECT_EQ(s, sim.raw.m0(c, t, n));
      }
}

TEST(Simulate, SeedDeterminesOutput)
{
  const auto a = simulate(single_cell(3.0, 0.3, 500, 9));
  const auto b = simulate(single_cell(3.0, 0.3, 500, 9));
  const auto c = simulate(single_cell(3.0, 0.3, 500, 10));
  EXPECT_EQ(a.raw.located, b.raw.located);
  EXPECT_EQ(a.raw.unlocated, b.raw.unlocated);
  EXPECT_NE(a.raw.located, c.raw.located);
}

TEST(Simulate, ValidatesSpec)
{
  auto spec = single_cell(3.0, 0.3, 5, 1);
  spec.lambda = {-1.0};
  EXPECT_THROW(simulate(spec), DomainError);
  spec.lambda = {1.0, 2.0};
  EXPECT_THROW(simulate(spec), ShapeError);
  EXPECT_THROW(MissingProbability::global(1.5), DomainError);
}

TEST(SimulatePopulation, HiddenZonesFollowShares)
{
  const auto shape = ProblemShape::uniform(1, 3, 1, 1.0, 100000);
  const auto pi = PopulationShares::from_population({2.0, 3.0, 5.0});
  const auto lam = lambda_from_shares(shape, {2.0}, pi);
  const auto sim = simulate_population_model(ScenarioSpec{shape, lam, MissingProbability::global(0.5), 12, pi});
  std::vector<double> zone(3, 0.0);
  double total = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int n = 0; n < 100000; ++n) {
      zone[i] += static_cast<double>(sim.hidden[sim.raw.located_index(0, i, 0, n)]);
    }
  for (double z : zone) total += z;
  ASSERT_GT(total, 9e4);
  for (int i = 0; i < 3; ++i) {
    const double sd = std::sqrt(pi.pi(i) * (1 - pi.pi(i)) / total);
    EXPECT_NEAR(zone[i] / total, pi.pi(i), 3 * sd);
  }
}

TEST(SimulatePopulation, StrictModeRejectsShareMismatch)
{
  const auto shape = ProblemShape::uniform(1, 2, 1, 1.0, 5);
  const auto pi = PopulationShares::from_population({1.0, 1.0});
  ScenarioSpec spec{shape, {1.0, 3.0}, MissingProbability::global(0.3), 1, pi};
  EXPECT_THROW(simulate_population_model(spec), DomainError);
  EXPECT_NO_THROW(simulate_population_model(spec, false));
  spec.shares.reset();
  EXPECT_THROW(simulate_population_model(spec, false), DomainError);
}

TEST(SimulatePopulation, OneZoneReducesToSimulate)
{
  auto spec = single_cell(3.0, 0.3, 200, 21);
  const auto plain = simulate(spec);
  spec.shares = PopulationShares::from_population({7.0});
  const auto pop = simulate_population_model(spec);
  EXPECT_EQ(plain.raw.located, pop.raw.located);
  EXPECT_EQ(plain.raw.unlocated, pop.raw.unlocated);
}

TEST(Demo, DefaultScenarioShape)
{
  const auto ds = make_demo_dataset(DemoOptions{});
  const auto& shape = ds.spec.shape;
  EXPECT_EQ(shape.n_zones(), 76);
  EXPECT_EQ(shape.n_types(), 3);
  EXPECT_EQ(shape.n_periods(), 336);
  double lo = 1.0, hi = 0.0;
  for (double p : ds.spec.p.values()) {
    lo = std::min(lo, p);
    hi = std::max(hi, p);
  }
  EXPECT_GE(lo, 0.1 - 1e-12);
  EXPECT_LE(hi, 0.5 + 1e-12);
  EXPECT_LT(lo, 0.11);
  EXPECT_GT(hi, 0.49);
}

TEST(Demo, WrittenDatasetParsesAndRepeatsByteForByte)
{
  const auto a = scratch_dir("sim_demo_a"), b = scratch_dir("sim_demo_b");
  DemoOptions o;
  o.grid = 5;
  o.n_days = 2;
  o.obs_per_day = {4, 3};
  const auto pa = write_dataset(a, make_demo_dataset(o));
  write_dataset(b, make_demo_dataset(o));
  for (const char* f : {"info.txt", "arrivals.txt", "missing.txt", "neighbors.txt", "test.cfg", "truth_lambda.txt"})
    EXPECT_EQ(read_text(a / f), read_text(b / f)) << f;
  const auto cfg = read_config(pa.config);
  const auto shape = read_info(cfg.info_file).shape();
  auto raw = read_arrivals(cfg.arrivals_file, shape);
  read_missing(cfg.missing_file, shape, raw);
  const auto truth = make_demo_dataset(o);
  EXPECT_EQ(raw.located, truth.data.raw.located);
  EXPECT_EQ(raw.unlocated, truth.data.raw.unlocated);
  EXPECT_EQ(read_neighbors(cfg.neighbors_file).n_zones(), shape.n_zones());
}

TEST(Demo, NoMissingnessGivesEmptyMissingFile)
{
  const auto dir = scratch_dir("sim_demo_p0");
  DemoOptions o;
  o.grid = 4;
  o.n_days = 1;
  o.obs_per_day = {3};
  o.p_low = o.p_high = 0.0;
  const auto paths = write_dataset(dir, make_demo_dataset(o));
  EXPECT_TRUE(read_text(paths.missing).empty());
}

TEST(Demo, ScenarioFileOverridesDefaults)
{
  const auto dir = scratch_dir("sim_scenario");
  std::ofstream(dir / "s.txt") << "types = 2\nrates = 3 5\ndays = 1\nobs_per_day = 7\nseed = 99\n";
  const auto o = read_scenario(dir / "s.txt");
  EXPECT_EQ(o.n_types, 2);
  EXPECT_EQ(o.rates, (std::vector<double>{3, 5}));
  EXPECT_EQ(o.obs_per_day, (std::vector<int>{7}));
  EXPECT_EQ(o.seed, 99u);
  std::ofstream(dir / "bad.txt") << "colour = red\n";
  try {
    read_scenario(dir / "bad.txt");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("colour"), std::string::npos);
  }
  DemoOptions mismatch;
  mismatch.rates = {1.0};
  EXPECT_THROW(make_demo_dataset(mismatch), ConfigError);
}
