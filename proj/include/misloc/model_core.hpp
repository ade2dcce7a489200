#ifndef MISLOC_MODEL_CORE_HPP_
#define MISLOC_MODEL_CORE_HPP_

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "misloc/error.hpp"

namespace misloc
{

using Count = std::int64_t;

/// Optional split of the period axis into (day, daily period) pairs.
/// Period index t = day * periods_per_day + daily_period.
struct DayAxis
{
  int n_days = 0;
  int periods_per_day = 0;

  bool operator==(const DayAxis&) const = default;
};

/// Index space of the discretization: arrival types, zones, periods, period
/// durations and the number of observations N[c][t] of every (type, period).
class ProblemShape
{
public:
  ProblemShape() = default;

  ProblemShape(int n_types, int n_zones, int n_periods, std::vector<double> durations,
               std::vector<int> n_obs, std::optional<DayAxis> day_axis = std::nullopt)
    : n_types_(n_types), n_zones_(n_zones), n_periods_(n_periods),
      durations_(std::move(durations)), n_obs_(std::move(n_obs)), day_axis_(day_axis)
  {
    validate();
  }

  /// Same duration and observation count everywhere.
  static ProblemShape uniform(int n_types, int n_zones, int n_periods, double duration,
                              int n_obs, std::optional<DayAxis> day_axis = std::nullopt)
  {
    return ProblemShape(n_types, n_zones, n_periods,
                        std::vector<double>(static_cast<std::size_t>(n_periods), duration),
                        std::vector<int>(static_cast<std::size_t>(n_types) * n_periods, n_obs),
                        day_axis);
  }

  int n_types() const { return n_types_; }
  int n_zones() const { return n_zones_; }
  int n_periods() const { return n_periods_; }
  double duration(int t) const { return durations_[static_cast<std::size_t>(t)]; }
  const std::vector<double>& durations() const { return durations_; }
  int n_obs(int c, int t) const { return n_obs_[ct(c, t)]; }
  const std::vector<int>& n_obs() const { return n_obs_; }
  const std::optional<DayAxis>& day_axis() const { return day_axis_; }

  int max_obs() const
  {
    int m = 0;
    for (int v : n_obs_) m = v > m ? v : m;
    return m;
  }

  std::size_t n_cells() const { return static_cast<std::size_t>(n_types_) * n_periods_; }
  std::size_t n_lambda() const { return n_cells() * static_cast<std::size_t>(n_zones_); }

  /// Flat index of a (type, period) cell.
  std::size_t ct(int c, int t) const
  {
    return static_cast<std::size_t>(c) * n_periods_ + static_cast<std::size_t>(t);
  }

  /// Flat index of a (type, zone, period) intensity. Zones are contiguous
  /// within a (type, period) block.
  std::size_t cit(int c, int i, int t) const
  {
    return ct(c, t) * static_cast<std::size_t>(n_zones_) + static_cast<std::size_t>(i);
  }

  bool operator==(const ProblemShape&) const = default;

private:
  void validate() const
  {
    if (n_types_ <= 0 || n_zones_ <= 0 || n_periods_ <= 0)
      throw ShapeError("problem shape needs at least one type, zone and period");
    if (durations_.size() != static_cast<std::size_t>(n_periods_))
      throw ShapeError("expected " + std::to_string(n_periods_) + " durations, got " +
                       std::to_string(durations_.size()));
    for (double d : durations_)
      if (!(d > 0.0)) throw ShapeError("period durations must be positive");
    if (n_obs_.size() != n_cells())
      throw ShapeError("observation counts must have one entry per (type, period)");
    for (int n : n_obs_)
      if (n < 0) throw ShapeError("observation counts must be nonnegative");
    if (day_axis_ && static_cast<long long>(day_axis_->n_days) * day_axis_->periods_per_day !=
                         n_periods_)
      throw ShapeError("day axis " + std::to_string(day_axis_->n_days) + "x" +
                       std::to_string(day_axis_->periods_per_day) + " does not match " +
                       std::to_string(n_periods_) + " periods");
  }

  int n_types_ = 0;
  int n_zones_ = 0;
  int n_periods_ = 0;
  std::vector<double> durations_;
  std::vector<int> n_obs_;
  std::optional<DayAxis> day_axis_;
};

/// Dense raw counts before aggregation. The observation axis is padded to
/// `max_obs`; entries with n >= N[c][t] must stay zero.
///
/// located:   M1[c][i][t][n], stored at ((c*T + t)*max_obs + n)*Z + i
/// unlocated: M0[c][t][n],    stored at (c*T + t)*max_obs + n
struct RawCounts
{
  int n_types = 0;
  int n_zones = 0;
  int n_periods = 0;
  int max_obs = 0;
  std::vector<Count> located;
  std::vector<Count> unlocated;

  static RawCounts zeros(const ProblemShape& shape)
  {
    RawCounts r;
    r.n_types = shape.n_types();
    r.n_zones = shape.n_zones();
    r.n_periods = shape.n_periods();
    r.max_obs = shape.max_obs();
    r.located.assign(shape.n_cells() * r.max_obs * r.n_zones, 0);
    r.unlocated.assign(shape.n_cells() * r.max_obs, 0);
    return r;
  }

  std::size_t unlocated_index(int c, int t, int n) const
  {
    return (static_cast<std::size_t>(c) * n_periods + t) * max_obs + n;
  }
  std::size_t located_index(int c, int i, int t, int n) const
  {
    return unlocated_index(c, t, n) * n_zones + i;
  }

  Count& m1(int c, int i, int t, int n) { return located[located_index(c, i, t, n)]; }
  Count m1(int c, int i, int t, int n) const { return located[located_index(c, i, t, n)]; }
  Count& m0(int c, int t, int n) { return unlocated[unlocated_index(c, t, n)]; }
  Count m0(int c, int t, int n) const { return unlocated[unlocated_index(c, t, n)]; }

  bool operator==(const RawCounts&) const = default;
};

/// Raw counts plus every aggregate the estimators read. Immutable once built.
class CountData
{
public:
  CountData() = default;

  const ProblemShape& shape() const { return shape_; }
  const RawCounts& raw() const { return raw_; }

  Count m1(int c, int i, int t, int n) const { return raw_.m1(c, i, t, n); }
  Count m0(int c, int t, int n) const { return raw_.m0(c, t, n); }

  /// M1[c][*][t][n]
  Count m1_obs(int c, int t, int n) const { return m1_ctn_[raw_.unlocated_index(c, t, n)]; }
  /// M1[c][i][t][*]
  Count m1_zone(int c, int i, int t) const { return m1_cit_[shape_.cit(c, i, t)]; }
  /// M1[c][*][t][*]
  Count m1_total(int c, int t) const { return m1_ct_[shape_.ct(c, t)]; }
  /// M0[c][t][*]
  Count m0_total(int c, int t) const { return m0_ct_[shape_.ct(c, t)]; }
  Count grand_m1() const { return grand_m1_; }
  Count grand_m0() const { return grand_m0_; }

  friend CountData aggregate_counts(RawCounts raw, const ProblemShape& shape);

private:
  ProblemShape shape_;
  RawCounts raw_;
  std::vector<Count> m1_ctn_;
  std::vector<Count> m1_cit_;
  std::vector<Count> m1_ct_;
  std::vector<Count> m0_ct_;
  Count grand_m1_ = 0;
  Count grand_m0_ = 0;
};

/// Validates raw counts against `shape` and caches every aggregate.
inline CountData aggregate_counts(RawCounts raw, const ProblemShape& shape)
{
  if (raw.n_types != shape.n_types() || raw.n_zones != shape.n_zones() ||
      raw.n_periods != shape.n_periods() || raw.max_obs < shape.max_obs())
    throw ShapeError("raw count extents do not match the problem shape");
  const std::size_t nz = static_cast<std::size_t>(raw.n_zones);
  if (raw.unlocated.size() != shape.n_cells() * raw.max_obs ||
      raw.located.size() != raw.unlocated.size() * nz)
    throw ShapeError("raw count arrays have the wrong size");

  CountData d;
  d.shape_ = shape;
  d.m1_ctn_.assign(raw.unlocated.size(), 0);
  d.m1_cit_.assign(shape.n_lambda(), 0);
  d.m1_ct_.assign(shape.n_cells(), 0);
  d.m0_ct_.assign(shape.n_cells(), 0);

  for (int c = 0; c < shape.n_types(); ++c) {
    for (int t = 0; t < shape.n_periods(); ++t) {
      const int n_valid = shape.n_obs(c, t);
      for (int n = 0; n < raw.max_obs; ++n) {
        const bool valid = n < n_valid;
        const Count z = raw.m0(c, t, n);
        if (z < 0) throw DomainError("negative unlocated count");
        if (!valid && z != 0)
          throw ShapeError("unlocated count beyond N[c][t] for type " + std::to_string(c + 1) +
                           ", period " + std::to_string(t + 1));
        d.m0_ct_[shape.ct(c, t)] += z;
        Count obs_total = 0;
        for (int i = 0; i < raw.n_zones; ++i) {
          const Count y = raw.m1(c, i, t, n);
          if (y < 0) throw DomainError("negative located count");
          if (!valid && y != 0)
            throw ShapeError("located count beyond N[c][t] for type " + std::to_string(c + 1) +
                             ", period " + std::to_string(t + 1));
          obs_total += y;
          d.m1_cit_[shape.cit(c, i, t)] += y;
        }
        d.m1_ctn_[raw.unlocated_index(c, t, n)] = obs_total;
        d.m1_ct_[shape.ct(c, t)] += obs_total;
      }
      d.grand_m1_ += d.m1_ct_[shape.ct(c, t)];
      d.grand_m0_ += d.m0_ct_[shape.ct(c, t)];
    }
  }
  d.raw_ = std::move(raw);
  return d;
}

/// Nonnegative intensities lambda[c][i][t] (arrivals per unit time) with the
/// zone sums S[c][t].
class IntensityField
{
public:
  IntensityField() = default;

  IntensityField(const ProblemShape& shape, std::vector<double> values)
    : n_zones_(shape.n_zones()), n_periods_(shape.n_periods()), values_(std::move(values))
  {
    if (values_.size() != shape.n_lambda())
      throw ShapeError("intensity field has " + std::to_string(values_.size()) +
                       " entries, expected " + std::to_string(shape.n_lambda()));
    for (double v : values_)
      if (!(v >= 0.0)) throw DomainError("intensities must be nonnegative");
    totals_.assign(shape.n_cells(), 0.0);
    for (std::size_t k = 0; k < totals_.size(); ++k)
      for (int i = 0; i < n_zones_; ++i) totals_[k] += values_[k * n_zones_ + i];
  }

  double at(int c, int i, int t) const { return values_[index(c, i, t)]; }
  double total(int c, int t) const
  {
    return totals_[static_cast<std::size_t>(c) * n_periods_ + t];
  }
  /// The zone block of one (type, period) cell.
  std::span<const double> block(int c, int t) const
  {
    return std::span<const double>(values_).subspan(index(c, 0, t), n_zones_);
  }
  const std::vector<double>& values() const { return values_; }

private:
  std::size_t index(int c, int i, int t) const
  {
    return (static_cast<std::size_t>(c) * n_periods_ + t) * n_zones_ + i;
  }

  int n_zones_ = 0;
  int n_periods_ = 0;
  std::vector<double> values_;
  std::vector<double> totals_;
};

}  // namespace misloc
#endif
