#ifndef MISLOC_COVARIATE_HPP_
#define MISLOC_COVARIATE_HPP_

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "misloc/analytic.hpp"
#include "misloc/math.hpp"
#include "misloc/model_core.hpp"
#include "misloc/parallel.hpp"
#include "misloc/solver.hpp"

namespace misloc
{

/// Time-invariant zone covariates x_i (feature 0 = population, the others
/// land-use areas), all nonnegative.
class CovariateData
{
public:
  CovariateData() = default;

  explicit CovariateData(const std::vector<std::vector<double>>& rows)
  {
    if (rows.empty()) throw ShapeError("covariates need at least one zone");
    n_features_ = static_cast<int>(rows.front().size());
    if (n_features_ == 0) throw ShapeError("covariates need at least one feature");
    column_sum_.assign(static_cast<std::size_t>(n_features_), 0.0);
    bool any_nonzero = false;
    for (const auto& r : rows) {
      if (static_cast<int>(r.size()) != n_features_)
        throw ShapeError("every zone needs the same number of covariates");
      for (int k = 0; k < n_features_; ++k) {
        if (!(r[k] >= 0.0)) throw DomainError("covariates must be nonnegative");
        any_nonzero = any_nonzero || r[k] > 0.0;
        column_sum_[k] += r[k];
        values_.push_back(r[k]);
      }
    }
    if (!any_nonzero) throw DomainError("at least one zone needs a nonzero covariate vector");
  }

  int n_zones() const { return static_cast<int>(values_.size()) / n_features_; }
  int n_features() const { return n_features_; }
  double at(int i, int k) const { return values_[static_cast<std::size_t>(i) * n_features_ + k]; }
  std::span<const double> row(int i) const
  {
    return std::span<const double>(values_).subspan(static_cast<std::size_t>(i) * n_features_,
                                                    n_features_);
  }
  /// sum over zones of x_i
  std::span<const double> column_sum() const { return column_sum_; }

private:
  int n_features_ = 0;
  std::vector<double> values_;
  std::vector<double> column_sum_;
};

/// Coefficients beta[c][t] per (type, period), stored (c*T + t)*K + k.
struct BetaField
{
  int n_periods = 0;
  int n_features = 0;
  std::vector<double> values;

  std::span<const double> at(int c, int t) const
  {
    return std::span<const double>(values).subspan(
      (static_cast<std::size_t>(c) * n_periods + t) * n_features, n_features);
  }
};

namespace detail
{

inline double dot(std::span<const double> a, std::span<const double> b)
{
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

inline std::string cell_name(const ProblemShape& shape, int c, int t)
{
  std::string s = "type " + std::to_string(c + 1);
  if (const auto& axis = shape.day_axis())
    return s + ", day " + std::to_string(t / axis->periods_per_day + 1) + ", period " +
           std::to_string(t % axis->periods_per_day + 1);
  return s + ", period " + std::to_string(t + 1);
}

}  // namespace detail

/// Negative log-likelihood of one (type, period) block of the covariate
/// model lambda * D = beta' x:
///   N beta'X - M0 log(beta'X) - sum_i M1_i log(beta'x_i),  X = sum_i x_i.
class CovariateBlockLoss
{
public:
  CovariateBlockLoss(const CountData& counts, const CovariateData& cov, int c, int t)
    : counts_(&counts), cov_(&cov), c_(c), t_(t)
  {
    if (cov.n_zones() != counts.shape().n_zones())
      throw ShapeError("covariate table and counts disagree on the number of zones");
  }

  double value(std::span<const double> beta) const
  {
    const auto& shape = counts_->shape();
    const double total = detail::dot(beta, cov_->column_sum());
    double f = shape.n_obs(c_, t_) * total;
    const double m0 = static_cast<double>(counts_->m0_total(c_, t_));
    if (m0 > 0.0) {
      if (!(total > 0.0))
        throw DomainError("beta'sum(x) must be positive at " + detail::cell_name(shape, c_, t_));
      f -= m0 * std::log(total);
    }
    for (int i = 0; i < shape.n_zones(); ++i) {
      const double m1 = static_cast<double>(counts_->m1_zone(c_, i, t_));
      if (m1 == 0.0) continue;
      const double rate = detail::dot(beta, cov_->row(i));
      if (!(rate > 0.0))
        throw DomainError("beta'x must be positive at " + detail::cell_name(shape, c_, t_) +
                          ", zone " + std::to_string(i + 1));
      f -= m1 * std::log(rate);
    }
    return f;
  }

  void gradient(std::span<const double> beta, std::span<double> g) const
  {
    const auto& shape = counts_->shape();
    const auto col = cov_->column_sum();
    const double total = detail::dot(beta, col);
    const double m0 = static_cast<double>(counts_->m0_total(c_, t_));
    const double coef = shape.n_obs(c_, t_) - (m0 > 0.0 ? m0 / total : 0.0);
    for (std::size_t k = 0; k < g.size(); ++k) g[k] = coef * col[k];
    for (int i = 0; i < shape.n_zones(); ++i) {
      const double m1 = static_cast<double>(counts_->m1_zone(c_, i, t_));
      if (m1 == 0.0) continue;
      const auto x = cov_->row(i);
      const double w = m1 / detail::dot(beta, x);
      for (std::size_t k = 0; k < g.size(); ++k) g[k] -= w * x[k];
    }
  }

  /// Diagonal of the Hessian.
  void hessian_diagonal(std::span<const double> beta, std::span<double> h) const
  {
    const auto& shape = counts_->shape();
    const auto col = cov_->column_sum();
    const double total = detail::dot(beta, col);
    const double m0 = static_cast<double>(counts_->m0_total(c_, t_));
    for (std::size_t k = 0; k < h.size(); ++k)
      h[k] = m0 > 0.0 ? m0 * col[k] * col[k] / (total * total) : 0.0;
    for (int i = 0; i < shape.n_zones(); ++i) {
      const double m1 = static_cast<double>(counts_->m1_zone(c_, i, t_));
      if (m1 == 0.0) continue;
      const auto x = cov_->row(i);
      const double r = detail::dot(beta, x);
      for (std::size_t k = 0; k < h.size(); ++k) h[k] += m1 * x[k] * x[k] / (r * r);
    }
  }

private:
  const CountData* counts_;
  const CovariateData* cov_;
  int c_;
  int t_;
};

/// Sum of the block objectives over every (type, period).
inline double covariate_neg_log_likelihood(const BetaField& beta, const CountData& counts,
                                           const CovariateData& cov)
{
  const auto& shape = counts.shape();
  if (beta.n_features != cov.n_features() || beta.n_periods != shape.n_periods() ||
      beta.values.size() != shape.n_cells() * static_cast<std::size_t>(cov.n_features()))
    throw ShapeError("beta field does not match the counts and covariates");
  double f = 0.0;
  for (int c = 0; c < shape.n_types(); ++c)
    for (int t = 0; t < shape.n_periods(); ++t)
      f += CovariateBlockLoss(counts, cov, c, t).value(beta.at(c, t));
  return f;
}

/// p[c][d][t] = M0[c][d][t][*] / (M1[c][*][d][t][*] + M0[c][d][t][*]) on a
/// day-indexed shape; the table is indexed by the flattened period d*T + t.
inline CellTable estimate_p_cdt(const CountData& counts)
{
  if (!counts.shape().day_axis()) throw ShapeError("day-indexed counts need a day axis");
  return estimate_p_per_ct(counts);
}

struct CovariateOptions
{
  bool cap_population_coefficient = true;  // 0 <= beta(1) <= 1
};

struct CovariateResult
{
  BetaField beta;
  IntensityField lambda;  // beta'x_i / D_t
  CellTable p;
  CellTable block_objective;  // final objective per block; undefined without observations
  double objective = 0.0;
  std::vector<SolverResult> runs;  // per (type, period)
};

namespace detail
{

/// Least-squares solve of (A'A + ridge I) b = A'y for small dense systems.
inline std::vector<double> least_squares(const std::vector<std::vector<double>>& rows,
                                         const std::vector<double>& y, int k)
{
  std::vector<double> m(static_cast<std::size_t>(k * k), 0.0), rhs(static_cast<std::size_t>(k), 0.0);
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (int a = 0; a < k; ++a) {
      rhs[a] += rows[r][a] * y[r];
      for (int b = 0; b < k; ++b) m[a * k + b] += rows[r][a] * rows[r][b];
    }
  double tr = 0.0;
  for (int a = 0; a < k; ++a) tr += m[a * k + a];
  for (int a = 0; a < k; ++a) m[a * k + a] += 1e-10 * (tr > 0.0 ? tr : 1.0);
  for (int col = 0; col < k; ++col) {
    int piv = col;
    for (int r = col + 1; r < k; ++r)
      if (std::abs(m[r * k + col]) > std::abs(m[piv * k + col])) piv = r;
    if (m[piv * k + col] == 0.0) return std::vector<double>(static_cast<std::size_t>(k), 0.0);
    if (piv != col) {
      for (int b = 0; b < k; ++b) std::swap(m[piv * k + b], m[col * k + b]);
      std::swap(rhs[piv], rhs[col]);
    }
    for (int r = col + 1; r < k; ++r) {
      const double f = m[r * k + col] / m[col * k + col];
      for (int b = col; b < k; ++b) m[r * k + b] -= f * m[col * k + b];
      rhs[r] -= f * rhs[col];
    }
  }
  std::vector<double> x(static_cast<std::size_t>(k));
  for (int r = k - 1; r >= 0; --r) {
    double s = rhs[r];
    for (int b = r + 1; b < k; ++b) s -= m[r * k + b] * x[b];
    x[r] = s / m[r * k + r];
  }
  return x;
}

}  // namespace detail

/// Solves one (type, period) block by projected gradient in coordinates
/// rescaled by the Hessian diagonal at the start point, over the box
/// beta >= 0 (beta(1) <= 1 when capped). Returns the run in beta units.
inline SolverResult solve_covariate_block(const CountData& counts, const CovariateData& cov, int c,
                                          int t, const SolverConfig& config,
                                          const CovariateOptions& options = {})
{
  const auto& shape = counts.shape();
  const int k = cov.n_features();
  const double n_obs = shape.n_obs(c, t);

  // Start: least squares of the corrected per-zone rates on x, clipped and floored.
  const double m0 = static_cast<double>(counts.m0_total(c, t));
  const double m1 = static_cast<double>(counts.m1_total(c, t));
  const double p_hat = (m0 + m1) > 0.0 ? std::min(m0 / (m0 + m1), 1.0 - 1e-9) : 0.0;
  std::vector<std::vector<double>> rows;
  std::vector<double> rates;
  for (int i = 0; i < shape.n_zones(); ++i) {
    const auto x = cov.row(i);
    rows.emplace_back(x.begin(), x.end());
    rates.push_back(static_cast<double>(counts.m1_zone(c, i, t)) / (n_obs * (1.0 - p_hat)));
  }
  std::vector<double> beta0 = detail::least_squares(rows, rates, k);
  std::vector<double> upper(static_cast<std::size_t>(k), std::numeric_limits<double>::infinity());
  if (options.cap_population_coefficient) upper[0] = 1.0;
  for (int j = 0; j < k; ++j) beta0[j] = std::clamp(std::max(beta0[j], config.eps), 0.0, upper[j]);

  CovariateBlockLoss loss(counts, cov, c, t);
  try {
    (void)loss.value(beta0);
  } catch (const DomainError& e) {
    throw SolverError(std::string("infeasible start: ") + e.what());
  }

  std::vector<double> h(static_cast<std::size_t>(k));
  loss.hessian_diagonal(beta0, h);
  std::vector<double> scale(static_cast<std::size_t>(k), 1.0);
  for (int j = 0; j < k; ++j) {
    if (h[j] > 0.0) {
      scale[j] = 1.0 / std::sqrt(h[j]);
    } else if (n_obs * cov.column_sum()[j] > 0.0) {
      scale[j] = 1.0 / (n_obs * cov.column_sum()[j]);
    }
  }

  Box box{std::vector<double>(static_cast<std::size_t>(k), 0.0), upper};
  std::vector<double> z0(static_cast<std::size_t>(k));
  for (int j = 0; j < k; ++j) {
    box.upper[j] = upper[j] / scale[j];
    z0[j] = std::clamp(beta0[j] / scale[j], box.lower[j], box.upper[j]);
  }
  auto to_beta = [&](std::span<const double> z) {
    std::vector<double> b(z.size());
    for (std::size_t j = 0; j < z.size(); ++j) b[j] = z[j] * scale[j];
    return b;
  };
  SolverResult run = projected_gradient(
    [&](std::span<const double> z) { return loss.value(to_beta(z)); },
    [&](std::span<const double> z, std::span<double> g) {
      loss.gradient(to_beta(z), g);
      for (std::size_t j = 0; j < g.size(); ++j) g[j] *= scale[j];
    },
    box, std::move(z0), config);
  for (int j = 0; j < k; ++j) run.x[j] = std::clamp(run.x[j] * scale[j], 0.0, upper[j]);
  return run;
}

/// Fits beta per (type, period) block; blocks are independent.
inline CovariateResult estimate_covariate_model(const CountData& counts, const CovariateData& cov,
                                                const SolverConfig& config,
                                                const CovariateOptions& options = {})
{
  config.validate();
  const auto& shape = counts.shape();
  if (cov.n_zones() != shape.n_zones())
    throw ShapeError("covariate table has " + std::to_string(cov.n_zones()) + " zones, counts have " +
                     std::to_string(shape.n_zones()));
  const int k = cov.n_features();
  CovariateResult out;
  out.beta.n_periods = shape.n_periods();
  out.beta.n_features = k;
  out.beta.values.assign(shape.n_cells() * static_cast<std::size_t>(k), 0.0);
  out.block_objective.n_periods = shape.n_periods();
  out.block_objective.value.assign(shape.n_cells(), 0.0);
  out.block_objective.status.assign(shape.n_cells(), CellStatus::ok);
  out.runs.resize(shape.n_cells());
  out.p = estimate_p_per_ct(counts);

  parallel_for(shape.n_cells(), [&](std::size_t cell) {
    const int c = static_cast<int>(cell / shape.n_periods());
    const int t = static_cast<int>(cell % shape.n_periods());
    if (shape.n_obs(c, t) == 0) {
      out.block_objective.status[cell] = CellStatus::undefined;
      return;
    }
    out.runs[cell] = solve_covariate_block(counts, cov, c, t, config, options);
    std::copy(out.runs[cell].x.begin(), out.runs[cell].x.end(),
              out.beta.values.begin() + static_cast<std::ptrdiff_t>(cell * k));
    out.block_objective.value[cell] = out.runs[cell].objective;
  });

  std::vector<double> lambda(shape.n_lambda(), 0.0);
  for (int c = 0; c < shape.n_types(); ++c)
    for (int t = 0; t < shape.n_periods(); ++t) {
      out.objective += out.block_objective.value[out.block_objective.index(c, t)];
      const auto b = out.beta.at(c, t);
      for (int i = 0; i < shape.n_zones(); ++i)
        lambda[shape.cit(c, i, t)] = std::max(0.0, detail::dot(b, cov.row(i))) / shape.duration(t);
    }
  out.lambda = IntensityField(shape, std::move(lambda));
  return out;
}

}  // namespace misloc
#endif
