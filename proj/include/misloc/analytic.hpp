#ifndef MISLOC_ANALYTIC_HPP_
#define MISLOC_ANALYTIC_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "misloc/math.hpp"
#include "misloc/model_core.hpp"

namespace misloc
{

/// Per-(type, period) outcome of a closed-form estimate.
enum class CellStatus : std::uint8_t
{
  ok,
  undefined,    // no observations, or a zero denominator
  inestimable,  // unlocated arrivals but no located ones: lambda has no share information
};

/// One value and one status per (type, period) cell.
struct CellTable
{
  int n_periods = 0;
  std::vector<double> value;
  std::vector<CellStatus> status;

  double at(int c, int t) const { return value[index(c, t)]; }
  CellStatus status_at(int c, int t) const { return status[index(c, t)]; }
  bool ok(int c, int t) const { return status_at(c, t) == CellStatus::ok; }
  std::size_t index(int c, int t) const { return static_cast<std::size_t>(c) * n_periods + t; }
};

/// Probability that an arrival's location is not reported: either one
/// global value or one value per (type, period).
class MissingProbability
{
public:
  static MissingProbability global(double p)
  {
    check(p);
    MissingProbability m;
    m.global_ = true;
    m.values_ = {p};
    return m;
  }

  static MissingProbability per_cell(const ProblemShape& shape, std::vector<double> values)
  {
    if (values.size() != shape.n_cells())
      throw ShapeError("per-cell missing probabilities need one entry per (type, period)");
    for (double p : values) check(p);
    MissingProbability m;
    m.n_periods_ = shape.n_periods();
    m.values_ = std::move(values);
    return m;
  }

  bool is_global() const { return global_; }
  double at(int c, int t) const
  {
    return global_ ? values_[0] : values_[static_cast<std::size_t>(c) * n_periods_ + t];
  }
  const std::vector<double>& values() const { return values_; }

private:
  static void check(double p)
  {
    if (!(p >= 0.0 && p <= 1.0))
      throw DomainError("missing probability " + std::to_string(p) + " outside [0, 1]");
  }

  bool global_ = false;
  int n_periods_ = 0;
  std::vector<double> values_;
};

/// p = M0 / (M1 + M0) over all arrivals.
inline double estimate_p_global(const CountData& counts)
{
  const Count total = counts.grand_m1() + counts.grand_m0();
  if (total == 0) throw UndefinedEstimateError("no arrivals: global missing probability undefined");
  return static_cast<double>(counts.grand_m0()) / static_cast<double>(total);
}

/// p[c][t] = M0[c][t][*] / (M1[c][*][t][*] + M0[c][t][*]); cells with no
/// arrivals are flagged undefined.
inline CellTable estimate_p_per_ct(const CountData& counts)
{
  const auto& shape = counts.shape();
  CellTable out;
  out.n_periods = shape.n_periods();
  out.value.assign(shape.n_cells(), 0.0);
  out.status.assign(shape.n_cells(), CellStatus::ok);
  for (int c = 0; c < shape.n_types(); ++c) {
    for (int t = 0; t < shape.n_periods(); ++t) {
      const Count m0 = counts.m0_total(c, t);
      const Count total = counts.m1_total(c, t) + m0;
      const auto k = out.index(c, t);
      if (total == 0) {
        out.status[k] = CellStatus::undefined;
        continue;
      }
      out.value[k] = static_cast<double>(m0) / static_cast<double>(total);
    }
  }
  return out;
}

/// Closed-form intensities. `status` flags cells whose lambda entries are
/// not estimates (they are stored as 0 in `lambda`).
struct LambdaEstimate
{
  IntensityField lambda;
  CellTable total;  // S-hat per (type, period)

  bool ok(int c, int t) const { return total.ok(c, t); }
};

/// S[c][t] = (M1[c][*][t][*] + M0[c][t][*]) / (N[c][t] D[t]),
/// lambda[c][i][t] = S[c][t] * M1[c][i][t][*] / M1[c][*][t][*].
inline LambdaEstimate estimate_lambda(const CountData& counts)
{
  const auto& shape = counts.shape();
  std::vector<double> values(shape.n_lambda(), 0.0);
  CellTable total;
  total.n_periods = shape.n_periods();
  total.value.assign(shape.n_cells(), 0.0);
  total.status.assign(shape.n_cells(), CellStatus::ok);

  for (int c = 0; c < shape.n_types(); ++c) {
    for (int t = 0; t < shape.n_periods(); ++t) {
      const auto k = total.index(c, t);
      const int n_obs = shape.n_obs(c, t);
      const Count m1 = counts.m1_total(c, t);
      const Count m0 = counts.m0_total(c, t);
      if (n_obs == 0) {
        total.status[k] = CellStatus::undefined;
        continue;
      }
      if (m1 == 0 && m0 > 0) {
        total.status[k] = CellStatus::inestimable;
        continue;
      }
      const double exposure = n_obs * shape.duration(t);
      total.value[k] = static_cast<double>(m1 + m0) / exposure;
      if (m1 == 0) continue;
      if (m0 == 0) {
        // Plain Poisson MLE, computed directly so it is exact.
        for (int i = 0; i < shape.n_zones(); ++i)
          values[shape.cit(c, i, t)] = static_cast<double>(counts.m1_zone(c, i, t)) / exposure;
        continue;
      }
      for (int i = 0; i < shape.n_zones(); ++i)
        values[shape.cit(c, i, t)] =
          total.value[k] * static_cast<double>(counts.m1_zone(c, i, t)) / static_cast<double>(m1);
    }
  }
  return LambdaEstimate{IntensityField(shape, std::move(values)), std::move(total)};
}

/// Log-likelihood of the splitting model without its constant term: the
/// single-p form when `p` is global, the per-(type, period) form otherwise.
inline double log_likelihood(const IntensityField& lambda, const MissingProbability& p,
                             const CountData& counts)
{
  const auto& shape = counts.shape();
  double ll = 0.0;
  for (int c = 0; c < shape.n_types(); ++c) {
    for (int t = 0; t < shape.n_periods(); ++t) {
      const double s = lambda.total(c, t);
      const double m0 = static_cast<double>(counts.m0_total(c, t));
      const double m1 = static_cast<double>(counts.m1_total(c, t));
      const double pct = p.at(c, t);
      ll -= shape.n_obs(c, t) * s * shape.duration(t);
      ll += xlogy(m0, s, "total intensity S");
      for (int i = 0; i < shape.n_zones(); ++i)
        ll += xlogy(static_cast<double>(counts.m1_zone(c, i, t)), lambda.at(c, i, t), "intensity");
      ll += xlogy(m0, pct, "p");
      ll += xlogy(m1, 1.0 - pct, "1 - p");
    }
  }
  return ll;
}

}  // namespace misloc
#endif
