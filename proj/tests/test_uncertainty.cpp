#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <random>

#include "support.hpp"

using namespace misloc;

namespace
{

Eigen::MatrixXd dense_lambda_block(const FisherBlock& b)
{
  const auto n = static_cast<Eigen::Index>(b.diag.size());
  Eigen::MatrixXd m = Eigen::MatrixXd::Constant(n, n, b.off);
  for (Eigen::Index i = 0; i < n; ++i) m(i, i) = b.diag[static_cast<std::size_t>(i)];
  return m;
}

FisherBlock random_block(std::mt19937_64& rng, int n)
{
  std::uniform_real_distribution<double> lam(0.05, 10.0), prob(0.05, 0.95);
  const auto shape = ProblemShape::uniform(1, n, 1, 0.5, 20);
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = lam(rng);
  return fisher_block(IntensityField(shape, v), prob(rng), shape, 0, 0);
}

}  // namespace

TEST(FisherBlock, OneZoneReduction)
{
  const auto shape = ProblemShape::uniform(1, 1, 1, 0.5, 10);
  const auto b = fisher_block(IntensityField(shape, {3.0}), 0.3, shape, 0, 0);
  EXPECT_NEAR(b.diag[0], 0.5 * 10 / 3.0, 1e-12);
}

TEST(FisherBlock, ProbabilityInformation)
{
  const auto shape = ProblemShape::uniform(1, 2, 1, 1.0, 100);
  const auto b = fisher_block(IntensityField(shape, {1.5, 2.5}), 0.5, shape, 0, 0);
  EXPECT_NEAR(b.i_pp, 1600.0, 1e-9);
  const auto v = invert_block(b);
  EXPECT_NEAR(v.var_p, 6.25e-4, 1e-15);
  EXPECT_NEAR(std::sqrt(v.var_p), 0.025, 1e-12);
}

TEST(FisherBlock, SymmetricZonesGiveEqualDiagonal)
{
  const auto shape = ProblemShape::uniform(1, 2, 1, 1.0, 7);
  const auto b = fisher_block(IntensityField(shape, {2.0, 2.0}), 0.4, shape, 0, 0);
  EXPECT_DOUBLE_EQ(b.diag[0], b.diag[1]);
}

TEST(FisherBlock, BoundaryParametersAreSingular)
{
  const auto shape = ProblemShape::uniform(1, 2, 1, 1.0, 7);
  const IntensityField f(shape, {2.0, 1.0});
  EXPECT_THROW(fisher_block(f, 0.0, shape, 0, 0), SingularInformationError);
  EXPECT_THROW(fisher_block(f, 1.0, shape, 0, 0), SingularInformationError);
  EXPECT_THROW(fisher_block(IntensityField(shape, {0.0, 1.0}), 0.5, shape, 0, 0), SingularInformationError);
  const auto dropped = fisher_block(IntensityField(shape, {0.0, 1.0}), 0.5, shape, 0, 0, true);
  ASSERT_EQ(dropped.zones.size(), 1u);
  EXPECT_EQ(dropped.zones[0], 1);
  const auto none = ProblemShape::uniform(1, 2, 1, 1.0, 0);
  EXPECT_THROW(fisher_block(IntensityField(none, {2.0, 1.0}), 0.5, none, 0, 0), SingularInformationError);
}

TEST(FisherBlock, PositiveDefiniteOnRandomInteriorPoints)
{
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 30; ++trial) {
    const auto b = random_block(rng, 1 + trial % 9);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(dense_lambda_block(b));
    EXPECT_GT(es.eigenvalues().minCoeff(), 0.0);
    EXPECT_GT(b.i_pp, 0.0);
  }
}

TEST(InvertBlock, DiagonalBlock)
{
  FisherBlock b;
  b.i_pp = 2.0;
  b.diag = {2.0, 4.0, 5.0};
  b.off = 0.0;
  const auto v = invert_block(b);
  EXPECT_DOUBLE_EQ(v.var_lambda[0], 0.5);
  EXPECT_DOUBLE_EQ(v.var_lambda[1], 0.25);
  EXPECT_DOUBLE_EQ(v.var_lambda[2], 0.2);
}

TEST(InvertBlock, TwoByTwo)
{
  FisherBlock b;
  b.i_pp = 1.0;
  b.diag = {3.0, 3.0};
  b.off = 1.0;
  const auto v = invert_block(b);
  EXPECT_NEAR(v.var_lambda[0], 0.375, 1e-15);
  EXPECT_NEAR(v.var_lambda[1], 0.375, 1e-15);
  EXPECT_NEAR(v.var_total, 0.5, 1e-15);  // 1' A^-1 1 with A^-1 = [[3, -1], [-1, 3]] / 8
}

TEST(InvertBlock, MatchesDenseInverseUpTo76Zones)
{
  std::mt19937_64 rng(43);
  for (int n : {1, 2, 3, 10, 40, 76}) {
    const auto b = random_block(rng, n);
    const auto v = invert_block(b);
    const Eigen::MatrixXd a = dense_lambda_block(b);
    const Eigen::MatrixXd inv = a.inverse();
    for (int i = 0; i < n; ++i) EXPECT_NEAR(v.var_lambda[i], inv(i, i), 1e-10 * std::abs(inv(i, i)));
    EXPECT_NEAR(v.var_total, inv.sum(), 1e-10 * std::abs(inv.sum()));
    EXPECT_LT((a * inv - Eigen::MatrixXd::Identity(n, n)).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(InvertBlock, TotalVarianceIsSOverDN)
{
  const auto shape = ProblemShape::uniform(1, 4, 1, 0.5, 12);
  const IntensityField f(shape, {1.0, 2.0, 0.5, 3.5});
  const auto v = invert_block(fisher_block(f, 0.3, shape, 0, 0));
  EXPECT_NEAR(v.var_total, 7.0 / (0.5 * 12), 1e-12);
}

TEST(InvertBlock, DenseFallbackForUnstructuredBlock)
{
  // diag - off <= 0 defeats the structured formula but the matrix is invertible
  FisherBlock b;
  b.i_pp = 1.0;
  b.diag = {1.0, 5.0};
  b.off = 2.0;
  const auto v = invert_block(b);
  Eigen::Matrix2d a;
  a << 1.0, 2.0, 2.0, 5.0;
  const Eigen::Matrix2d inv = a.inverse();
  EXPECT_NEAR(v.var_lambda[0], inv(0, 0), 1e-12);
  EXPECT_NEAR(v.var_lambda[1], inv(1, 1), 1e-12);
  FisherBlock s;
  s.i_pp = 1.0;
  s.diag = {1.0, 1.0};
  s.off = 1.0;
  EXPECT_THROW(invert_block(s), SingularInformationError);
}

TEST(NormalQuantile, KnownValues)
{
  EXPECT_NEAR(normal_quantile(0.975), 1.959963984540054, 1e-9);
  EXPECT_NEAR(normal_quantile(0.5), 0.0, 1e-12);
  EXPECT_NEAR(normal_quantile(0.84134474606854293), 1.0, 1e-9);
  EXPECT_NEAR(normal_quantile(1e-10), -6.361340902404056, 1e-8);
  for (double q : {1e-6, 0.01, 0.2, 0.7, 0.999}) {
    const double z = normal_quantile(q);
    EXPECT_NEAR(0.5 * std::erfc(-z / std::sqrt(2.0)), q, 1e-12 * std::max(1.0, q));
  }
}

TEST(ConfidenceInterval, Examples)
{
  const auto zero = confidence_interval(2.5, 0.0, 0.05);
  EXPECT_EQ(zero.lower, 2.5);
  EXPECT_EQ(zero.upper, 2.5);

  const auto ci = confidence_interval(3.0, 0.04, 0.05);
  EXPECT_NEAR(ci.lower, 3.0 - 1.959964 * 0.2, 1e-6);
  EXPECT_NEAR(ci.upper, 3.0 + 1.959964 * 0.2, 1e-6);
  EXPECT_NEAR(ci.lower, 2.608, 1e-3);
  EXPECT_NEAR(ci.upper, 3.392, 1e-3);
  EXPECT_DOUBLE_EQ(ci.level, 0.95);

  // alpha = 0.32 is roughly one standard error; z_0.84 = 0.99446, so the gap is 0.55%
  const auto one_sigma = confidence_interval(0.0, 2.0, 0.32);
  EXPECT_NEAR(one_sigma.upper, 0.994457883209753 * std::sqrt(2.0), 1e-9);
  EXPECT_NEAR(one_sigma.upper, std::sqrt(2.0), 0.006 * std::sqrt(2.0));

  const auto clipped = confidence_interval(0.1, 1.0, 0.05, true);
  EXPECT_EQ(clipped.lower, 0.0);
  EXPECT_TRUE(clipped.clipped);
  EXPECT_THROW(confidence_interval(1.0, -1.0, 0.05), Error);
  EXPECT_THROW(confidence_interval(1.0, 1.0, 1.5), DomainError);
}

TEST(AnalyticUncertainty, ZeroZonesAreNaNOthersFinite)
{
  const auto shape = ProblemShape::uniform(1, 3, 1, 1.0, 2);
  auto raw = RawCounts::zeros(shape);
  raw.m1(0, 0, 0, 0) = 4;
  raw.m1(0, 1, 0, 1) = 2;
  raw.m0(0, 0, 1) = 3;
  const auto d = aggregate_counts(raw, shape);
  const auto est = estimate_lambda(d);
  const auto u = analytic_uncertainty(est, estimate_p_per_ct(d), shape);
  ASSERT_TRUE(u.available(0, 0));
  EXPECT_GT(u.var_lambda[shape.cit(0, 0, 0)], 0.0);
  EXPECT_GT(u.var_lambda[shape.cit(0, 1, 0)], 0.0);
  EXPECT_TRUE(std::isnan(u.var_lambda[shape.cit(0, 2, 0)]));
  EXPECT_NEAR(u.var_total.at(0, 0), est.total.at(0, 0) / 2.0, 1e-12);
}
