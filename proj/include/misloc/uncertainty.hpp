#ifndef MISLOC_UNCERTAINTY_HPP_
#define MISLOC_UNCERTAINTY_HPP_

#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "misloc/analytic.hpp"
#include "misloc/model_core.hpp"

namespace misloc
{

/// Expected Fisher information of one (type, period) cell of the per-cell
/// splitting model. The lambda block is diag(diag) with `off` added to every
/// off-diagonal entry; p is uncoupled from lambda.
struct FisherBlock
{
  int c = 0;
  int t = 0;
  double i_pp = 0.0;
  std::vector<double> diag;
  double off = 0.0;
  std::vector<int> zones;  // zone of every diag entry
};

/// Diagonal of the inverse information, plus the variance of S = sum(lambda)
/// (the sum of every entry of the inverse lambda block).
struct VarianceBlock
{
  int c = 0;
  int t = 0;
  double var_p = 0.0;
  std::vector<double> var_lambda;
  double var_total = 0.0;
};

/// With `drop_zero_zones`, zones with lambda_i = 0 are left out: their
/// information diverges as lambda_i -> 0, so they decouple from the rest and
/// the remaining block is the limit of the full one.
inline FisherBlock fisher_block(const IntensityField& lambda, double p, const ProblemShape& shape,
                                int c, int t, bool drop_zero_zones = false)
{
  const std::string where =
    " at type " + std::to_string(c + 1) + ", period " + std::to_string(t + 1);
  if (!(p > 0.0 && p < 1.0))
    throw SingularInformationError("missing probability on the boundary" + where);
  const int n_obs = shape.n_obs(c, t);
  if (n_obs <= 0) throw SingularInformationError("no observations" + where);
  const double dn = shape.duration(t) * n_obs;
  const double s = lambda.total(c, t);

  FisherBlock b;
  b.c = c;
  b.t = t;
  b.i_pp = dn * s / (p * (1.0 - p));
  b.off = p * dn / s;
  if (!(s > 0.0)) throw SingularInformationError("zero total intensity" + where);
  for (int i = 0; i < shape.n_zones(); ++i) {
    const double li = lambda.at(c, i, t);
    if (!(li > 0.0)) {
      if (drop_zero_zones && li == 0.0) continue;
      throw SingularInformationError("zero intensity in zone " + std::to_string(i + 1) + where);
    }
    b.diag.push_back(b.off + (1.0 - p) * dn / li);
    b.zones.push_back(i);
  }
  return b;
}

namespace detail
{

/// Diagonal of the inverse and the sum of all entries of the inverse for a
/// dense symmetric matrix, by Gauss-Jordan elimination with partial pivoting.
inline bool dense_inverse_stats(std::vector<double> a, std::size_t n, std::vector<double>& diag,
                                double& total)
{
  std::vector<double> inv(n * n, 0.0);
  for (std::size_t k = 0; k < n; ++k) inv[k * n + k] = 1.0;
  double scale = 0.0;
  for (double v : a) scale = std::max(scale, std::abs(v));
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a[r * n + col]) > std::abs(a[piv * n + col])) piv = r;
    if (std::abs(a[piv * n + col]) <= 1e-14 * scale) return false;
    if (piv != col) {
      for (std::size_t k = 0; k < n; ++k) {
        std::swap(a[piv * n + k], a[col * n + k]);
        std::swap(inv[piv * n + k], inv[col * n + k]);
      }
    }
    const double d = a[col * n + col];
    for (std::size_t k = 0; k < n; ++k) {
      a[col * n + k] /= d;
      inv[col * n + k] /= d;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = a[r * n + col];
      if (f == 0.0) continue;
      for (std::size_t k = 0; k < n; ++k) {
        a[r * n + k] -= f * a[col * n + k];
        inv[r * n + k] -= f * inv[col * n + k];
      }
    }
  }
  diag.resize(n);
  total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    diag[r] = inv[r * n + r];
    for (std::size_t k = 0; k < n; ++k) total += inv[r * n + k];
  }
  return true;
}

}  // namespace detail

/// Inverts a block using its diagonal-plus-rank-one structure
/// (Sherman-Morrison), falling back to dense elimination when the
/// structured formula does not apply.
inline VarianceBlock invert_block(const FisherBlock& block)
{
  const std::string where =
    " at type " + std::to_string(block.c + 1) + ", period " + std::to_string(block.t + 1);
  if (!(block.i_pp > 0.0) || !std::isfinite(block.i_pp))
    throw SingularInformationError("singular p information" + where);

  VarianceBlock v;
  v.c = block.c;
  v.t = block.t;
  v.var_p = 1.0 / block.i_pp;

  const std::size_t n = block.diag.size();
  const double u = block.off;
  bool structured = true;
  double sum_inv_a = 0.0;
  for (double d : block.diag) {
    const double a = d - u;
    if (!(a > 0.0) || !std::isfinite(a)) {
      structured = false;
      break;
    }
    sum_inv_a += 1.0 / a;
  }
  const double denom = 1.0 + u * sum_inv_a;
  if (structured && denom > 0.0) {
    v.var_lambda.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double inv_a = 1.0 / (block.diag[i] - u);
      v.var_lambda[i] = inv_a - u * inv_a * inv_a / denom;
    }
    v.var_total = sum_inv_a / denom;
    return v;
  }

  std::vector<double> dense(n * n, u);
  for (std::size_t i = 0; i < n; ++i) dense[i * n + i] = block.diag[i];
  if (!detail::dense_inverse_stats(std::move(dense), n, v.var_lambda, v.var_total))
    throw SingularInformationError("singular intensity information" + where);
  return v;
}

/// Standard normal quantile. Acklam's rational approximation followed by one
/// Halley step against erfc; absolute error well below 1e-12 on (0, 1).
inline double normal_quantile(double q)
{
  if (!(q > 0.0 && q < 1.0)) throw DomainError("normal quantile level must be in (0, 1)");
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double cc[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                  -2.400758277161838e+00, -2.549732539343734e+00,
                                  4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double low = 0.02425;
  double x;
  if (q < low) {
    const double r = std::sqrt(-2.0 * std::log(q));
    x = (((((cc[0] * r + cc[1]) * r + cc[2]) * r + cc[3]) * r + cc[4]) * r + cc[5]) /
        ((((d[0] * r + d[1]) * r + d[2]) * r + d[3]) * r + 1.0);
  } else if (q <= 1.0 - low) {
    const double r = q - 0.5;
    const double s = r * r;
    x = (((((a[0] * s + a[1]) * s + a[2]) * s + a[3]) * s + a[4]) * s + a[5]) * r /
        (((((b[0] * s + b[1]) * s + b[2]) * s + b[3]) * s + b[4]) * s + 1.0);
  } else {
    const double r = std::sqrt(-2.0 * std::log1p(-q));
    x = -(((((cc[0] * r + cc[1]) * r + cc[2]) * r + cc[3]) * r + cc[4]) * r + cc[5]) /
        ((((d[0] * r + d[1]) * r + d[2]) * r + d[3]) * r + 1.0);
  }
  const double e = 0.5 * std::erfc(-x / std::numbers::sqrt2) - q;
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

struct ConfidenceInterval
{
  double lower = 0.0;
  double upper = 0.0;
  double level = 0.0;
  bool clipped = false;
};

/// Symmetric asymptotic interval estimate +- z(1 - alpha/2) sqrt(variance).
/// With `clip_at_zero` a negative lower end is raised to 0 and flagged.
inline ConfidenceInterval confidence_interval(double estimate, double variance, double alpha,
                                              bool clip_at_zero = false)
{
  if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("alpha must be in (0, 1)");
  if (variance < 0.0)
    throw Error(ErrorCategory::domain,
                "internal consistency: negative variance " + std::to_string(variance));
  const double half = normal_quantile(1.0 - alpha / 2.0) * std::sqrt(variance);
  ConfidenceInterval ci{estimate - half, estimate + half, 1.0 - alpha, false};
  if (clip_at_zero && ci.lower < 0.0) {
    ci.lower = 0.0;
    ci.clipped = true;
  }
  return ci;
}

/// Variances of the closed-form estimates for every cell whose information
/// block is nonsingular; other cells are flagged in `available`. Zones with a
/// zero estimate have no asymptotic variance and hold NaN.
struct UncertaintyTables
{
  int n_zones = 0;
  CellTable var_p;
  CellTable var_total;
  std::vector<double> var_lambda;  // indexed like IntensityField

  bool available(int c, int t) const { return var_p.ok(c, t); }
};

inline UncertaintyTables analytic_uncertainty(const LambdaEstimate& lambda, const CellTable& p,
                                              const ProblemShape& shape)
{
  UncertaintyTables out;
  out.n_zones = shape.n_zones();
  out.var_p.n_periods = out.var_total.n_periods = shape.n_periods();
  out.var_p.value.assign(shape.n_cells(), 0.0);
  out.var_p.status.assign(shape.n_cells(), CellStatus::undefined);
  out.var_total = out.var_p;
  out.var_lambda.assign(shape.n_lambda(), 0.0);
  for (int c = 0; c < shape.n_types(); ++c) {
    for (int t = 0; t < shape.n_periods(); ++t) {
      if (!lambda.ok(c, t) || !p.ok(c, t)) continue;
      try {
        const auto block = fisher_block(lambda.lambda, p.at(c, t), shape, c, t, true);
        const auto v = invert_block(block);
        const auto k = out.var_p.index(c, t);
        out.var_p.value[k] = v.var_p;
        out.var_p.status[k] = CellStatus::ok;
        out.var_total.value[k] = v.var_total;
        out.var_total.status[k] = CellStatus::ok;
        for (int i = 0; i < shape.n_zones(); ++i)
          out.var_lambda[shape.cit(c, i, t)] = std::numeric_limits<double>::quiet_NaN();
        for (std::size_t k = 0; k < block.zones.size(); ++k)
          out.var_lambda[shape.cit(c, block.zones[k], t)] = v.var_lambda[k];
      } catch (const SingularInformationError&) {
        // boundary estimate (p in {0, 1}): no asymptotic variance
      }
    }
  }
  return out;
}

}  // namespace misloc
#endif
