// Shared fixtures and independent oracles for the test binaries.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "misloc/misloc.hpp"

namespace testing_support
{

using misloc::Count;

/// Random counts for a shape; located ~ Poisson(mean_located),
/// unlocated ~ Poisson(mean_unlocated).
inline misloc::CountData random_counts(const misloc::ProblemShape& shape, std::mt19937_64& rng,
                                       double mean_located, double mean_unlocated)
{
  auto raw = misloc::RawCounts::zeros(shape);
  std::poisson_distribution<Count> located(mean_located), unlocated(mean_unlocated);
  for (int c = 0; c < shape.n_types(); ++c)
    for (int t = 0; t < shape.n_periods(); ++t)
      for (int n = 0; n < shape.n_obs(c, t); ++n) {
        for (int i = 0; i < shape.n_zones(); ++i) raw.m1(c, i, t, n) = mean_located > 0 ? located(rng) : 0;
        raw.m0(c, t, n) = mean_unlocated > 0 ? unlocated(rng) : 0;
      }
  return misloc::aggregate_counts(std::move(raw), shape);
}

/// Central differences with step h * max(1, |x_k|).
inline std::vector<double> central_difference(const std::function<double(std::span<const double>)>& f,
                                              std::vector<double> x, double h = 1e-6)
{
  std::vector<double> g(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double step = h * std::max(1.0, std::abs(x[k]));
    const double x0 = x[k];
    x[k] = x0 + step;
    const double fp = f(x);
    x[k] = x0 - step;
    const double fm = f(x);
    x[k] = x0;
    g[k] = (fp - fm) / (2.0 * step);
  }
  return g;
}

/// max_k |a_k - b_k| / max(1, max_k |a_k|).
inline double relative_gap(std::span<const double> a, std::span<const double> b)
{
  double gap = 0.0, scale = 1.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    gap = std::max(gap, std::abs(a[k] - b[k]));
    scale = std::max(scale, std::abs(a[k]));
  }
  return gap / scale;
}

/// Log-likelihood of one (type, period) cell of the per-cell splitting model,
/// written directly from the Poisson pmfs (constants dropped):
///   sum_n sum_i [M1 log((1-p) lambda_i D) - (1-p) lambda_i D]
///         + [M0 log(p S D) - p S D].
inline double cell_log_likelihood(const misloc::CountData& counts, int c, int t, std::span<const double> lambda,
                                  double p)
{
  const auto& shape = counts.shape();
  const double d = shape.duration(t);
  double s = 0.0;
  for (double v : lambda) s += v;
  const auto term = [](double k, double mean) {
    if (k == 0.0) return -mean;
    if (mean <= 0.0) return -std::numeric_limits<double>::infinity();
    return k * std::log(mean) - mean;
  };
  double ll = 0.0;
  for (int n = 0; n < shape.n_obs(c, t); ++n) {
    for (int i = 0; i < shape.n_zones(); ++i)
      ll += term(static_cast<double>(counts.m1(c, i, t, n)), (1.0 - p) * lambda[i] * d);
    ll += term(static_cast<double>(counts.m0(c, t, n)), p * s * d);
  }
  return ll;
}

/// Coarse-to-fine joint grid search over (lambda_1..lambda_Z) in [0, hi]^Z,
/// each level a full grid over +-3 steps of the previous optimum, finishing
/// with steps 1e-3 and 1e-4. `f` is maximized.
inline std::vector<double> grid_maximize(const std::function<double(std::span<const double>)>& f, int dim,
                                         double hi)
{
  std::vector<double> best(static_cast<std::size_t>(dim), 0.0);
  std::vector<double> lo(static_cast<std::size_t>(dim), 0.0), up(static_cast<std::size_t>(dim), hi);
  std::vector<double> steps;
  for (double s = hi / 40.0; s > 1e-3; s /= 10.0) steps.push_back(s);
  steps.push_back(1e-3);
  steps.push_back(1e-4);
  for (double step : steps) {
    std::vector<int> count(static_cast<std::size_t>(dim));
    for (int k = 0; k < dim; ++k) count[k] = static_cast<int>(std::floor((up[k] - lo[k]) / step + 1e-9)) + 1;
    std::vector<int> idx(static_cast<std::size_t>(dim), 0);
    std::vector<double> x(static_cast<std::size_t>(dim));
    double best_f = -std::numeric_limits<double>::infinity();
    std::vector<double> arg = best;
    while (true) {
      for (int k = 0; k < dim; ++k) x[k] = lo[k] + idx[k] * step;
      const double v = f(x);
      if (v > best_f) {
        best_f = v;
        arg = x;
      }
      int k = 0;
      while (k < dim && ++idx[k] == count[k]) idx[k++] = 0;
      if (k == dim) break;
    }
    best = arg;
    for (int k = 0; k < dim; ++k) {
      lo[k] = std::max(0.0, best[k] - 3.0 * step);
      up[k] = std::min(hi, best[k] + 3.0 * step);
    }
  }
  return best;
}

/// 1-D grid search over [0, 1] with steps 1e-3 then 1e-4.
inline double grid_maximize_1d(const std::function<double(double)>& f)
{
  double best = 0.0, best_f = -std::numeric_limits<double>::infinity();
  for (int k = 0; k <= 1000; ++k)
    if (const double v = f(k * 1e-3); v > best_f) {
      best_f = v;
      best = k * 1e-3;
    }
  const double centre = best;
  for (int k = -10; k <= 10; ++k) {
    const double x = centre + k * 1e-4;
    if (x < 0.0 || x > 1.0) continue;
    if (const double v = f(x); v > best_f) {
      best_f = v;
      best = x;
    }
  }
  return best;
}

/// All allocations of m_bar arrivals to n_zones zones.
inline std::vector<std::vector<Count>> enumerate_allocations(Count m_bar, int n_zones)
{
  std::vector<std::vector<Count>> out;
  std::vector<Count> cur(static_cast<std::size_t>(n_zones), 0);
  std::function<void(int, Count)> rec = [&](int zone, Count left) {
    if (zone == n_zones - 1) {
      cur[zone] = left;
      out.push_back(cur);
      return;
    }
    for (Count m = 0; m <= left; ++m) {
      cur[zone] = m;
      rec(zone + 1, left - m);
    }
  };
  rec(0, m_bar);
  return out;
}

/// u = sum over allocations of multinomial(M; m_bar, pi) * prod_i Poisson(M1_i + M_i; lambda_i D),
/// by explicit enumeration and direct products (no log space).
inline double enumerated_u(std::span<const double> lambda, std::span<const Count> m1, double d,
                           std::span<const double> pi, Count m_bar)
{
  double u = 0.0;
  for (const auto& alloc : enumerate_allocations(m_bar, static_cast<int>(lambda.size()))) {
    double w = std::tgamma(static_cast<double>(m_bar) + 1.0);
    double prod = 1.0;
    for (std::size_t i = 0; i < lambda.size(); ++i) {
      w *= std::pow(pi[i], static_cast<double>(alloc[i])) / std::tgamma(static_cast<double>(alloc[i]) + 1.0);
      const double k = static_cast<double>(m1[i] + alloc[i]);
      const double a = lambda[i] * d;
      prod *= std::exp(-a) * std::pow(a, k) / std::tgamma(k + 1.0);
    }
    u += w * prod;
  }
  return u;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name)
{
  auto dir = std::filesystem::temp_directory_path() / ("misloc_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing_support
