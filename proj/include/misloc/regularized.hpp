#ifndef MISLOC_REGULARIZED_HPP_
#define MISLOC_REGULARIZED_HPP_

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "misloc/analytic.hpp"
#include "misloc/math.hpp"
#include "misloc/model_core.hpp"
#include "misloc/parallel.hpp"
#include "misloc/solver.hpp"

namespace misloc
{

/// Similarity weights: a partition of the periods into groups with one
/// weight W_G per group, and symmetric zone-pair weights w_ij stored as
/// adjacency lists (pairs with w_ij = 0 are omitted).
struct RegularizationSpec
{
  std::vector<int> group_of;          // group index of every period
  std::vector<double> group_weights;  // W_G
  std::vector<std::vector<std::pair<int, double>>> neighbor_weights;

  /// w_ij = w for listed neighbours, W_G = w for every group.
  static RegularizationSpec uniform(double w, std::vector<int> group_of,
                                    const std::vector<std::vector<int>>& adjacency)
  {
    RegularizationSpec r;
    r.group_of = std::move(group_of);
    int n_groups = 0;
    for (int g : r.group_of) n_groups = std::max(n_groups, g + 1);
    r.group_weights.assign(static_cast<std::size_t>(n_groups), w);
    r.neighbor_weights.resize(adjacency.size());
    if (w > 0.0)
      for (std::size_t i = 0; i < adjacency.size(); ++i)
        for (int j : adjacency[i]) r.neighbor_weights[i].emplace_back(j, w);
    return r;
  }

  /// No penalties: one group of weight 0, no neighbours.
  static RegularizationSpec none(const ProblemShape& shape)
  {
    RegularizationSpec r;
    r.group_of.assign(static_cast<std::size_t>(shape.n_periods()), 0);
    r.group_weights = {0.0};
    r.neighbor_weights.resize(static_cast<std::size_t>(shape.n_zones()));
    return r;
  }

  std::size_t n_groups() const { return group_weights.size(); }

  void validate(const ProblemShape& shape) const
  {
    if (group_of.size() != static_cast<std::size_t>(shape.n_periods()))
      throw ShapeError("time groups must assign every period to exactly one group");
    for (int g : group_of)
      if (g < 0 || static_cast<std::size_t>(g) >= group_weights.size())
        throw ShapeError("time group index out of range");
    for (double w : group_weights)
      if (!(w >= 0.0)) throw DomainError("group weights must be nonnegative");
    if (neighbor_weights.size() != static_cast<std::size_t>(shape.n_zones()))
      throw ShapeError("neighbour weights need one list per zone");
    for (std::size_t i = 0; i < neighbor_weights.size(); ++i) {
      for (auto [j, w] : neighbor_weights[i]) {
        if (j < 0 || j >= shape.n_zones()) throw ShapeError("neighbour index out of range");
        if (!(w >= 0.0)) throw DomainError("neighbour weights must be nonnegative");
        const auto& back = neighbor_weights[static_cast<std::size_t>(j)];
        const bool symmetric = std::any_of(back.begin(), back.end(), [&](const auto& e) {
          return e.first == static_cast<int>(i) && e.second == w;
        });
        if (!symmetric)
          throw DomainError("neighbour weights are not symmetric for zones " +
                            std::to_string(i + 1) + " and " + std::to_string(j + 1));
      }
    }
  }
};

/// The eight weekly time groups of a Monday-first 7 x 48 half-hour week
/// (0-based group ids):
///   0: Mon-Fri 06-10, 1: Mon-Fri 10-18, 2: Mon-Fri 18-22,
///   3: Mon-Thu 22-24 and 00-06, Fri 00-06, Sun 22-24,
///   4: Fri/Sat 22-24, Sat 00-06, Sun 00-06,
///   5: Sat/Sun 06-10, 6: Sat/Sun 10-18, 7: Sat/Sun 18-22.
inline std::vector<int> default_time_groups(const ProblemShape& shape)
{
  const auto& axis = shape.day_axis();
  if (!axis || axis->n_days != 7 || axis->periods_per_day != 48)
    throw ShapeError("default time groups need a 7-day x 48-period week");
  std::vector<int> groups(336);
  for (int day = 0; day < 7; ++day) {
    const bool weekday = day <= 4;
    for (int slot = 0; slot < 48; ++slot) {
      int g;
      if (slot < 12) {  // 00:00-06:00
        g = day <= 4 ? 3 : 4;
      } else if (slot < 20) {
        g = weekday ? 0 : 5;
      } else if (slot < 36) {
        g = weekday ? 1 : 6;
      } else if (slot < 44) {
        g = weekday ? 2 : 7;
      } else {  // 22:00-24:00
        g = (day <= 3 || day == 6) ? 3 : 4;
      }
      groups[static_cast<std::size_t>(day * 48 + slot)] = g;
    }
  }
  return groups;
}

namespace detail
{

/// Periods of each group.
inline std::vector<std::vector<int>> group_members(const RegularizationSpec& reg)
{
  std::vector<std::vector<int>> members(reg.n_groups());
  for (std::size_t t = 0; t < reg.group_of.size(); ++t)
    members[static_cast<std::size_t>(reg.group_of[t])].push_back(static_cast<int>(t));
  return members;
}

}  // namespace detail

/// Penalized negative log-likelihood in lambda for one arrival type. The
/// variable vector is that type's slice of an IntensityField: entry
/// t * |zones| + i.
///
/// Time penalty: sum over ordered pairs t, t' in G of
///   (W_G / 2) N_t N_t' (lambda_t - lambda_t')^2
///   = W_G (sum_G N) sum_{t in G} N_t (lambda_t - mean_G)^2  (N-weighted mean),
/// space penalty: sum over ordered pairs (i, j) of (w_ij / 2) N_t^2 (lambda_i - lambda_j)^2.
class IntensityLoss
{
public:
  IntensityLoss(const CountData& counts, const RegularizationSpec& reg, int type)
    : counts_(&counts), reg_(&reg), type_(type), members_(detail::group_members(reg))
  {
    reg.validate(counts.shape());
  }

  std::size_t size() const
  {
    const auto& s = counts_->shape();
    return static_cast<std::size_t>(s.n_periods()) * s.n_zones();
  }

  double value(std::span<const double> x) const
  {
    const auto& shape = counts_->shape();
    const int nz = shape.n_zones();
    const int c = type_;
    double f = 0.0;
    for (int t = 0; t < shape.n_periods(); ++t) {
      const double* lam = x.data() + static_cast<std::size_t>(t) * nz;
      double s = 0.0;
      for (int i = 0; i < nz; ++i) s += lam[i];
      const double n = shape.n_obs(c, t);
      f += n * s * shape.duration(t);
      f -= xlogy(static_cast<double>(counts_->m0_total(c, t)), s, "total intensity S");
      for (int i = 0; i < nz; ++i)
        f -= xlogy(static_cast<double>(counts_->m1_zone(c, i, t)), lam[i], "intensity");
      const double n2 = n * n;
      if (n2 > 0.0)
        for (int i = 0; i < nz; ++i)
          for (auto [j, w] : reg_->neighbor_weights[static_cast<std::size_t>(i)]) {
            const double diff = lam[i] - lam[j];
            f += 0.5 * w * n2 * diff * diff;
          }
    }
    for (std::size_t g = 0; g < members_.size(); ++g) {
      const double wg = reg_->group_weights[g];
      if (wg == 0.0) continue;
      double n_sum = 0.0;
      for (int t : members_[g]) n_sum += shape.n_obs(c, t);
      if (n_sum == 0.0) continue;
      for (int i = 0; i < nz; ++i) {
        double mean = 0.0;
        for (int t : members_[g]) mean += shape.n_obs(c, t) * x[static_cast<std::size_t>(t) * nz + i];
        mean /= n_sum;
        double ss = 0.0;
        for (int t : members_[g]) {
          const double diff = x[static_cast<std::size_t>(t) * nz + i] - mean;
          ss += shape.n_obs(c, t) * diff * diff;
        }
        f += wg * n_sum * ss;
      }
    }
    return f;
  }

  void gradient(std::span<const double> x, std::span<double> g) const
  {
    const auto& shape = counts_->shape();
    const int nz = shape.n_zones();
    const int c = type_;
    for (int t = 0; t < shape.n_periods(); ++t) {
      const std::size_t base = static_cast<std::size_t>(t) * nz;
      const double* lam = x.data() + base;
      double s = 0.0;
      for (int i = 0; i < nz; ++i) s += lam[i];
      const double n = shape.n_obs(c, t);
      const double m0 = static_cast<double>(counts_->m0_total(c, t));
      const double common = n * shape.duration(t) - (m0 > 0.0 ? m0 / s : 0.0);
      for (int i = 0; i < nz; ++i) {
        const double m1 = static_cast<double>(counts_->m1_zone(c, i, t));
        double gi = common - (m1 > 0.0 ? m1 / lam[i] : 0.0);
        for (auto [j, w] : reg_->neighbor_weights[static_cast<std::size_t>(i)])
          gi += 2.0 * w * n * n * (lam[i] - lam[j]);
        g[base + i] = gi;
      }
    }
    for (std::size_t grp = 0; grp < members_.size(); ++grp) {
      const double wg = reg_->group_weights[grp];
      if (wg == 0.0) continue;
      double n_sum = 0.0;
      for (int t : members_[grp]) n_sum += shape.n_obs(c, t);
      if (n_sum == 0.0) continue;
      for (int i = 0; i < nz; ++i) {
        double mean = 0.0;
        for (int t : members_[grp]) mean += shape.n_obs(c, t) * x[static_cast<std::size_t>(t) * nz + i];
        mean /= n_sum;
        for (int t : members_[grp]) {
          const std::size_t k = static_cast<std::size_t>(t) * nz + i;
          g[k] += 2.0 * wg * shape.n_obs(c, t) * n_sum * (x[k] - mean);
        }
      }
    }
  }

  /// Diagonal of the Hessian, floored to be positive.
  void hessian_diagonal(std::span<const double> x, std::span<double> h) const
  {
    const auto& shape = counts_->shape();
    const int nz = shape.n_zones();
    const int c = type_;
    for (int t = 0; t < shape.n_periods(); ++t) {
      const std::size_t base = static_cast<std::size_t>(t) * nz;
      double s = 0.0;
      for (int i = 0; i < nz; ++i) s += x[base + i];
      const double n = shape.n_obs(c, t);
      const double m0 = static_cast<double>(counts_->m0_total(c, t));
      const double common = m0 > 0.0 ? m0 / (s * s) : 0.0;
      for (int i = 0; i < nz; ++i) {
        const double m1 = static_cast<double>(counts_->m1_zone(c, i, t));
        double hi = common + (m1 > 0.0 ? m1 / (x[base + i] * x[base + i]) : 0.0);
        for (auto [j, w] : reg_->neighbor_weights[static_cast<std::size_t>(i)]) hi += 2.0 * w * n * n;
        h[base + i] = hi;
      }
    }
    for (std::size_t grp = 0; grp < members_.size(); ++grp) {
      const double wg = reg_->group_weights[grp];
      if (wg == 0.0) continue;
      double n_sum = 0.0;
      for (int t : members_[grp]) n_sum += shape.n_obs(c, t);
      if (n_sum == 0.0) continue;
      for (int t : members_[grp]) {
        const double nt = shape.n_obs(c, t);
        for (int i = 0; i < nz; ++i) h[static_cast<std::size_t>(t) * nz + i] += 2.0 * wg * nt * (n_sum - nt);
      }
    }
    detail::floor_scaling(h);
  }

private:
  const CountData* counts_;
  const RegularizationSpec* reg_;
  int type_;
  std::vector<std::vector<int>> members_;
};

/// Penalized negative log-likelihood in p for one arrival type; entry t.
class ProbabilityLoss
{
public:
  ProbabilityLoss(const CountData& counts, const RegularizationSpec& reg, int type)
    : counts_(&counts), reg_(&reg), type_(type), members_(detail::group_members(reg))
  {
    reg.validate(counts.shape());
  }

  std::size_t size() const { return static_cast<std::size_t>(counts_->shape().n_periods()); }

  double value(std::span<const double> p) const
  {
    const auto& shape = counts_->shape();
    const int c = type_;
    double f = 0.0;
    for (int t = 0; t < shape.n_periods(); ++t) {
      f -= xlogy(static_cast<double>(counts_->m0_total(c, t)), p[t], "p");
      f -= xlogy(static_cast<double>(counts_->m1_total(c, t)), 1.0 - p[t], "1 - p");
    }
    for (std::size_t g = 0; g < members_.size(); ++g) {
      const double wg = reg_->group_weights[g];
      if (wg == 0.0) continue;
      double n_sum = 0.0, mean = 0.0;
      for (int t : members_[g]) {
        n_sum += shape.n_obs(c, t);
        mean += shape.n_obs(c, t) * p[t];
      }
      if (n_sum == 0.0) continue;
      mean /= n_sum;
      double ss = 0.0;
      for (int t : members_[g]) ss += shape.n_obs(c, t) * (p[t] - mean) * (p[t] - mean);
      f += wg * n_sum * ss;
    }
    return f;
  }

  void gradient(std::span<const double> p, std::span<double> g) const
  {
    const auto& shape = counts_->shape();
    const int c = type_;
    for (int t = 0; t < shape.n_periods(); ++t) {
      const double m0 = static_cast<double>(counts_->m0_total(c, t));
      const double m1 = static_cast<double>(counts_->m1_total(c, t));
      g[t] = (m0 > 0.0 ? -m0 / p[t] : 0.0) + (m1 > 0.0 ? m1 / (1.0 - p[t]) : 0.0);
    }
    for (std::size_t grp = 0; grp < members_.size(); ++grp) {
      const double wg = reg_->group_weights[grp];
      if (wg == 0.0) continue;
      double n_sum = 0.0, mean = 0.0;
      for (int t : members_[grp]) {
        n_sum += shape.n_obs(c, t);
        mean += shape.n_obs(c, t) * p[t];
      }
      if (n_sum == 0.0) continue;
      mean /= n_sum;
      for (int t : members_[grp]) g[t] += 2.0 * wg * shape.n_obs(c, t) * n_sum * (p[t] - mean);
    }
  }

  void hessian_diagonal(std::span<const double> p, std::span<double> h) const
  {
    const auto& shape = counts_->shape();
    const int c = type_;
    for (int t = 0; t < shape.n_periods(); ++t) {
      const double m0 = static_cast<double>(counts_->m0_total(c, t));
      const double m1 = static_cast<double>(counts_->m1_total(c, t));
      h[t] = m0 / (p[t] * p[t]) + m1 / ((1.0 - p[t]) * (1.0 - p[t]));
    }
    for (std::size_t grp = 0; grp < members_.size(); ++grp) {
      const double wg = reg_->group_weights[grp];
      if (wg == 0.0) continue;
      double n_sum = 0.0;
      for (int t : members_[grp]) n_sum += shape.n_obs(c, t);
      for (int t : members_[grp]) h[t] += 2.0 * wg * shape.n_obs(c, t) * (n_sum - shape.n_obs(c, t));
    }
    detail::floor_scaling(h);
  }

private:
  const CountData* counts_;
  const RegularizationSpec* reg_;
  int type_;
  std::vector<std::vector<int>> members_;
};

/// l1 over all types for a full intensity vector (IntensityField layout).
inline double loss_l1(std::span<const double> lambda, const CountData& counts,
                      const RegularizationSpec& reg)
{
  const auto& shape = counts.shape();
  const std::size_t block = static_cast<std::size_t>(shape.n_periods()) * shape.n_zones();
  if (lambda.size() != shape.n_lambda()) throw ShapeError("lambda vector has the wrong size");
  double f = 0.0;
  for (int c = 0; c < shape.n_types(); ++c)
    f += IntensityLoss(counts, reg, c).value(lambda.subspan(c * block, block));
  return f;
}

inline void loss_l1_gradient(std::span<const double> lambda, const CountData& counts,
                             const RegularizationSpec& reg, std::span<double> grad)
{
  const auto& shape = counts.shape();
  const std::size_t block = static_cast<std::size_t>(shape.n_periods()) * shape.n_zones();
  if (lambda.size() != shape.n_lambda() || grad.size() != lambda.size())
    throw ShapeError("lambda vector has the wrong size");
  for (int c = 0; c < shape.n_types(); ++c)
    IntensityLoss(counts, reg, c).gradient(lambda.subspan(c * block, block),
                                           grad.subspan(c * block, block));
}

/// l2 over all types for p in (type, period) order.
inline double loss_l2(std::span<const double> p, const CountData& counts,
                      const RegularizationSpec& reg)
{
  const auto& shape = counts.shape();
  const std::size_t block = static_cast<std::size_t>(shape.n_periods());
  if (p.size() != shape.n_cells()) throw ShapeError("p vector has the wrong size");
  for (double v : p)
    if (!(v > 0.0 && v < 1.0)) throw DomainError("p outside (0, 1)");
  double f = 0.0;
  for (int c = 0; c < shape.n_types(); ++c)
    f += ProbabilityLoss(counts, reg, c).value(p.subspan(c * block, block));
  return f;
}

inline void loss_l2_gradient(std::span<const double> p, const CountData& counts,
                             const RegularizationSpec& reg, std::span<double> grad)
{
  const auto& shape = counts.shape();
  const std::size_t block = static_cast<std::size_t>(shape.n_periods());
  if (p.size() != shape.n_cells() || grad.size() != p.size())
    throw ShapeError("p vector has the wrong size");
  for (int c = 0; c < shape.n_types(); ++c)
    ProbabilityLoss(counts, reg, c).gradient(p.subspan(c * block, block),
                                             grad.subspan(c * block, block));
}

struct RegularizedResult
{
  IntensityField lambda;
  CellTable p;
  double objective_l1 = 0.0;
  double objective_l2 = 0.0;
  std::vector<SolverResult> lambda_runs;  // one per arrival type
  std::vector<SolverResult> p_runs;
};

/// Solves min l1(lambda) over lambda >= lower_lambda and
/// min l2(p) over eps <= p <= 1 - eps, one arrival type at a time, warm
/// started at the closed-form estimates.
inline RegularizedResult estimate_regularized(const CountData& counts, const RegularizationSpec& reg,
                                              const SolverConfig& config, double lower_lambda)
{
  config.validate();
  const auto& shape = counts.shape();
  reg.validate(shape);
  if (!(lower_lambda > 0.0)) throw ConfigError("lower_lambda must be positive");
  if (!(config.eps < 0.5)) throw ConfigError("EPS must be below 0.5 for the p box");

  const auto analytic = estimate_lambda(counts);
  const auto p_hat = estimate_p_per_ct(counts);
  const Count grand = counts.grand_m0() + counts.grand_m1();
  const double p_fallback = grand > 0 ? estimate_p_global(counts) : 0.5;

  const int n_types = shape.n_types();
  const std::size_t lblock = static_cast<std::size_t>(shape.n_periods()) * shape.n_zones();
  const std::size_t pblock = static_cast<std::size_t>(shape.n_periods());

  RegularizedResult out;
  out.lambda_runs.resize(static_cast<std::size_t>(n_types));
  out.p_runs.resize(static_cast<std::size_t>(n_types));

  parallel_for(static_cast<std::size_t>(2 * n_types), [&](std::size_t job) {
    const int c = static_cast<int>(job / 2);
    if (job % 2 == 0) {
      std::vector<double> x0(lblock);
      for (int t = 0; t < shape.n_periods(); ++t)
        for (int i = 0; i < shape.n_zones(); ++i)
          x0[static_cast<std::size_t>(t) * shape.n_zones() + i] =
            analytic.ok(c, t) ? std::max(analytic.lambda.at(c, i, t), lower_lambda) : lower_lambda;
      IntensityLoss loss(counts, reg, c);
      out.lambda_runs[c] = scaled_projected_gradient(
        [&](std::span<const double> x) { return loss.value(x); },
        [&](std::span<const double> x, std::span<double> g) { loss.gradient(x, g); },
        [&](std::span<const double> x, std::span<const double>, std::span<double> h) {
          loss.hessian_diagonal(x, h);
        },
        Box::lower_bounded(lblock, lower_lambda), std::move(x0), config);
    } else {
      std::vector<double> p0(pblock);
      for (int t = 0; t < shape.n_periods(); ++t)
        p0[t] = std::clamp(p_hat.ok(c, t) ? p_hat.at(c, t) : p_fallback, config.eps,
                           1.0 - config.eps);
      ProbabilityLoss loss(counts, reg, c);
      out.p_runs[c] = scaled_projected_gradient(
        [&](std::span<const double> x) { return loss.value(x); },
        [&](std::span<const double> x, std::span<double> g) { loss.gradient(x, g); },
        [&](std::span<const double> x, std::span<const double>, std::span<double> h) {
          loss.hessian_diagonal(x, h);
        },
        Box::bounded(pblock, config.eps, 1.0 - config.eps), std::move(p0), config);
    }
  });

  std::vector<double> lambda(shape.n_lambda());
  out.p.n_periods = shape.n_periods();
  out.p.value.resize(shape.n_cells());
  out.p.status.assign(shape.n_cells(), CellStatus::ok);
  for (int c = 0; c < n_types; ++c) {
    std::copy(out.lambda_runs[c].x.begin(), out.lambda_runs[c].x.end(),
              lambda.begin() + static_cast<std::ptrdiff_t>(c * lblock));
    std::copy(out.p_runs[c].x.begin(), out.p_runs[c].x.end(),
              out.p.value.begin() + static_cast<std::ptrdiff_t>(c * pblock));
    out.objective_l1 += out.lambda_runs[c].objective;
    out.objective_l2 += out.p_runs[c].objective;
  }
  out.lambda = IntensityField(shape, std::move(lambda));
  return out;
}

inline RegularizedResult estimate_regularized(const CountData& counts, const RegularizationSpec& reg,
                                              const SolverConfig& config)
{
  return estimate_regularized(counts, reg, config, config.eps);
}

}  // namespace misloc
#endif
