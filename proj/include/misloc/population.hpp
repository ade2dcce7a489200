#ifndef MISLOC_POPULATION_HPP_
#define MISLOC_POPULATION_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
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

/// pi_i = P_i / P: probability that an unlocated arrival came from zone i.
class PopulationShares
{
public:
  PopulationShares() = default;

  static PopulationShares from_population(std::vector<double> population)
  {
    double total = 0.0;
    for (double p : population) {
      if (!(p >= 0.0) || !std::isfinite(p)) throw DomainError("populations must be finite and nonnegative");
      total += p;
    }
    if (!(total > 0.0)) throw DomainError("total population must be positive");
    PopulationShares s;
    s.population_ = std::move(population);
    s.pi_.reserve(s.population_.size());
    for (double p : s.population_) s.pi_.push_back(p / total);
    return s;
  }

  int n_zones() const { return static_cast<int>(pi_.size()); }
  double pi(int i) const { return pi_[static_cast<std::size_t>(i)]; }
  std::span<const double> shares() const { return pi_; }
  std::span<const double> population() const { return population_; }

private:
  std::vector<double> population_;
  std::vector<double> pi_;
};

/// splitmix64 finalizer; derives independent stream seeds.
inline std::uint64_t mix_seed(std::uint64_t x)
{
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                                 std::uint64_t c = 0)
{
  return mix_seed(mix_seed(mix_seed(mix_seed(seed) ^ a) ^ b) ^ c);
}

/// Allocations of m_bar unlocated arrivals to zones for one (type, period,
/// observation). Either `exact` (the expectation over the multinomial is
/// computed exactly) or a frozen Monte-Carlo sample of draws stored
/// sparsely as (zone, count) pairs.
struct McSample
{
  Count m_bar = 0;
  int n_zones = 0;
  std::uint64_t seed = 0;
  bool exact = false;
  std::vector<std::size_t> offsets{0};  // draw s spans entries[offsets[s], offsets[s+1])
  std::vector<std::pair<int, Count>> entries;

  std::size_t size() const { return offsets.size() - 1; }

  std::vector<Count> dense(std::size_t s) const
  {
    std::vector<Count> out(static_cast<std::size_t>(n_zones), 0);
    for (std::size_t e = offsets[s]; e < offsets[s + 1]; ++e) out[entries[e].first] = entries[e].second;
    return out;
  }
};

/// |N(m_bar)| = C(m_bar + |I| - 1, |I| - 1), as a double (may be inf).
inline double allocation_count(Count m_bar, int n_zones)
{
  if (n_zones <= 1 || m_bar == 0) return 1.0;
  return std::exp(std::lgamma(static_cast<double>(m_bar + n_zones)) -
                  std::lgamma(static_cast<double>(m_bar) + 1.0) - std::lgamma(static_cast<double>(n_zones)));
}

/// s i.i.d. multinomial(m_bar, pi) draws, reproducible from `seed`.
inline McSample sample_multinomial(const PopulationShares& pi, Count m_bar, int s, std::uint64_t seed)
{
  if (pi.n_zones() == 0) throw DomainError("population shares are empty");
  double sum = 0.0;
  for (double v : pi.shares()) {
    if (!(v >= 0.0 && v <= 1.0)) throw DomainError("population share outside [0, 1]");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw DomainError("population shares do not sum to 1");
  if (m_bar < 0) throw DomainError("negative allocation size");
  if (s < 1) throw DomainError("sample count must be at least 1");

  McSample out;
  out.m_bar = m_bar;
  out.n_zones = pi.n_zones();
  out.seed = seed;
  out.offsets.reserve(static_cast<std::size_t>(s) + 1);
  std::mt19937_64 rng(seed);
  std::discrete_distribution<int> zone(pi.shares().begin(), pi.shares().end());
  std::vector<Count> counts(static_cast<std::size_t>(pi.n_zones()), 0);
  std::vector<int> touched;
  for (int draw = 0; draw < s; ++draw) {
    touched.clear();
    for (Count k = 0; k < m_bar; ++k) {
      const int i = zone(rng);
      if (counts[i]++ == 0) touched.push_back(i);
    }
    std::sort(touched.begin(), touched.end());
    for (int i : touched) {
      out.entries.emplace_back(i, counts[i]);
      counts[i] = 0;
    }
    out.offsets.push_back(out.entries.size());
  }
  return out;
}

struct McConfig
{
  int samples = 100;             // S per (type, period, observation)
  std::uint64_t seed = 1;
  double exact_limit = 1e4;      // exact expectation when |N(m_bar)| is at most this
  double exact_work_limit = 1e7; // and the exact recursion costs at most this many terms
};

/// Exact expectation where it is cheap, otherwise a frozen Monte-Carlo sample.
inline McSample make_allocation_sample(const PopulationShares& pi, Count m_bar,
                                       const McConfig& config, std::uint64_t seed)
{
  const double work = static_cast<double>(pi.n_zones()) * static_cast<double>(m_bar + 1) *
                      static_cast<double>(m_bar + 1);
  if (allocation_count(m_bar, pi.n_zones()) <= config.exact_limit && work <= config.exact_work_limit) {
    McSample s;
    s.m_bar = m_bar;
    s.n_zones = pi.n_zones();
    s.seed = seed;
    s.exact = true;
    return s;
  }
  return sample_multinomial(pi, m_bar, config.samples, seed);
}

namespace detail
{

inline double lse2(double a, double b)
{
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

/// log of sum over allocations M of mu(pi, m_bar)(M) * prod_i exp(-a_i) a_i^(k_i) / k_i!,
/// k_i = M1_i + M_i, by a forward/backward recursion over zones. When
/// `expected` is non-empty it receives E[k_i] under the allocation posterior.
inline double exact_log_term(std::span<const double> a, std::span<const Count> m1,
                             std::span<const double> pi, Count m_bar, std::span<double> expected)
{
  constexpr double ninf = -std::numeric_limits<double>::infinity();
  const std::size_t nz = a.size();
  const std::size_t width = static_cast<std::size_t>(m_bar) + 1;
  // h[i][m]: log weight of zone i receiving m extra arrivals
  std::vector<double> h(nz * width);
  for (std::size_t i = 0; i < nz; ++i) {
    const double log_a = a[i] > 0.0 ? std::log(a[i]) : ninf;
    const double log_pi = pi[i] > 0.0 ? std::log(pi[i]) : ninf;
    for (std::size_t m = 0; m < width; ++m) {
      const double k = static_cast<double>(m1[i]) + static_cast<double>(m);
      double v = -a[i] - std::lgamma(static_cast<double>(m) + 1.0) - std::lgamma(k + 1.0);
      v += (m == 0) ? 0.0 : static_cast<double>(m) * log_pi;
      v += (k == 0.0) ? 0.0 : k * log_a;
      h[i * width + m] = std::isnan(v) ? ninf : v;
    }
  }
  std::vector<double> fwd((nz + 1) * width, ninf), bwd((nz + 1) * width, ninf);
  fwd[0] = 0.0;
  bwd[nz * width] = 0.0;
  for (std::size_t i = 0; i < nz; ++i)
    for (std::size_t k = 0; k < width; ++k) {
      double acc = ninf;
      for (std::size_t m = 0; m <= k; ++m)
        if (fwd[i * width + k - m] != ninf) acc = lse2(acc, fwd[i * width + k - m] + h[i * width + m]);
      fwd[(i + 1) * width + k] = acc;
    }
  const double log_z = fwd[nz * width + width - 1];
  const double log_u = std::lgamma(static_cast<double>(m_bar) + 1.0) + log_z;
  if (expected.empty() || log_z == ninf) return log_u;

  for (std::size_t i = nz; i-- > 0;)
    for (std::size_t k = 0; k < width; ++k) {
      double acc = ninf;
      for (std::size_t m = 0; m <= k; ++m)
        if (bwd[(i + 1) * width + k - m] != ninf)
          acc = lse2(acc, bwd[(i + 1) * width + k - m] + h[i * width + m]);
      bwd[i * width + k] = acc;
    }
  for (std::size_t i = 0; i < nz; ++i) {
    double mean = 0.0;
    for (std::size_t m = 1; m < width; ++m) {
      if (h[i * width + m] == ninf) continue;
      const std::size_t rest = width - 1 - m;
      double acc = ninf;
      for (std::size_t j = 0; j <= rest; ++j)
        if (fwd[i * width + j] != ninf && bwd[(i + 1) * width + rest - j] != ninf)
          acc = lse2(acc, fwd[i * width + j] + bwd[(i + 1) * width + rest - j]);
      if (acc != ninf) mean += static_cast<double>(m) * std::exp(h[i * width + m] + acc - log_z);
    }
    expected[i] = static_cast<double>(m1[i]) + mean;
  }
  return log_u;
}

}  // namespace detail

/// log u for one (type, period, observation):
///   u = prod_i exp(-lambda_i D) * sum_s w_s prod_i (lambda_i D)^(M_i^s + M1_i) / (M_i^s + M1_i)!
/// with w_s = 1/S for a Monte-Carlo sample, or the exact multinomial
/// expectation when `sample.exact`. Evaluated in log space. `expected`, when
/// non-empty, receives E[M_i^s + M1_i] under weights proportional to the
/// summands, which gives d(-log u)/d lambda_i = D - expected_i / lambda_i.
inline double log_u_term(std::span<const double> lambda, std::span<const Count> m1, double duration,
                         const McSample& sample, const PopulationShares& pi,
                         std::span<double> expected = {})
{
  const std::size_t nz = lambda.size();
  if (sample.n_zones != static_cast<int>(nz) || m1.size() != nz)
    throw DomainError("allocation sample does not match the zone count");
  std::vector<double> a(nz);
  for (std::size_t i = 0; i < nz; ++i) a[i] = lambda[i] * duration;

  double log_u;
  if (sample.exact || sample.m_bar == 0) {
    log_u = detail::exact_log_term(a, m1, pi.shares(), sample.m_bar, expected);
  } else {
    double base = 0.0;
    std::vector<double> log_a(nz);
    for (std::size_t i = 0; i < nz; ++i) {
      log_a[i] = a[i] > 0.0 ? std::log(a[i]) : -std::numeric_limits<double>::infinity();
      base -= a[i];
      base -= std::lgamma(static_cast<double>(m1[i]) + 1.0);
      if (m1[i] > 0) base += static_cast<double>(m1[i]) * log_a[i];
    }
    const std::size_t n_draws = sample.size();
    std::vector<double> terms(n_draws);
    const double log_w = -std::log(static_cast<double>(n_draws));
    for (std::size_t s = 0; s < n_draws; ++s) {
      double v = log_w;
      for (std::size_t e = sample.offsets[s]; e < sample.offsets[s + 1]; ++e) {
        const auto [i, m] = sample.entries[e];
        const double k0 = static_cast<double>(m1[i]);
        v += static_cast<double>(m) * log_a[i] - std::lgamma(k0 + static_cast<double>(m) + 1.0) +
             std::lgamma(k0 + 1.0);
      }
      terms[s] = v;
    }
    const double lse = log_sum_exp(terms);
    log_u = base + lse;
    if (!expected.empty() && std::isfinite(lse)) {
      for (std::size_t i = 0; i < nz; ++i) expected[i] = static_cast<double>(m1[i]);
      for (std::size_t s = 0; s < n_draws; ++s) {
        const double r = std::exp(terms[s] - lse);
        for (std::size_t e = sample.offsets[s]; e < sample.offsets[s + 1]; ++e)
          expected[sample.entries[e].first] += r * static_cast<double>(sample.entries[e].second);
      }
    }
  }
  return log_u;
}

/// Frozen allocation samples for every (type, period, observation), indexed
/// like RawCounts::unlocated.
struct McSampleSet
{
  McConfig config;
  std::vector<McSample> samples;
};

inline McSampleSet build_mc_samples(const CountData& counts, const PopulationShares& pi,
                                    const McConfig& config)
{
  const auto& shape = counts.shape();
  if (pi.n_zones() != shape.n_zones())
    throw ShapeError("population shares have " + std::to_string(pi.n_zones()) + " zones, counts have " +
                     std::to_string(shape.n_zones()));
  if (config.samples < 1) throw ConfigError("mc_samples must be at least 1");
  McSampleSet set;
  set.config = config;
  set.samples.resize(counts.raw().unlocated.size());
  parallel_for(shape.n_cells(), [&](std::size_t cell) {
    const int c = static_cast<int>(cell / shape.n_periods());
    const int t = static_cast<int>(cell % shape.n_periods());
    for (int n = 0; n < shape.n_obs(c, t); ++n) {
      const auto k = counts.raw().unlocated_index(c, t, n);
      set.samples[k] = make_allocation_sample(pi, counts.m0(c, t, n), config,
                                              derive_seed(config.seed, static_cast<std::uint64_t>(c),
                                                          static_cast<std::uint64_t>(t),
                                                          static_cast<std::uint64_t>(n)));
    }
  });
  return set;
}

/// log u_{c,t,n}(lambda) for a full intensity field.
inline double mc_likelihood_term(const IntensityField& lambda, const CountData& counts,
                                 const McSample& sample, const PopulationShares& pi, int c, int t, int n)
{
  const auto& shape = counts.shape();
  if (sample.m_bar != counts.m0(c, t, n))
    throw DomainError("allocation sample size differs from the unlocated count");
  std::vector<Count> m1(static_cast<std::size_t>(shape.n_zones()));
  for (int i = 0; i < shape.n_zones(); ++i) m1[i] = counts.m1(c, i, t, n);
  const double v = log_u_term(lambda.block(c, t), m1, shape.duration(t), sample, pi);
  if (!std::isfinite(v))
    throw DomainError("non-finite log u at type " + std::to_string(c + 1) + ", period " +
                      std::to_string(t + 1) + ", observation " + std::to_string(n + 1));
  return v;
}

/// Sample-average objective of one (type, period) block:
///   sum_n -log u_{c,t,n}(lambda).
class PopulationBlockLoss
{
public:
  PopulationBlockLoss(const CountData& counts, const McSampleSet& samples, const PopulationShares& pi,
                      int c, int t)
    : counts_(&counts), samples_(&samples), pi_(&pi), c_(c), t_(t)
  {
    const auto& shape = counts.shape();
    if (samples.samples.size() != counts.raw().unlocated.size())
      throw DomainError("sample set does not match the counts");
    m1_.resize(static_cast<std::size_t>(shape.n_obs(c, t) * shape.n_zones()));
    for (int n = 0; n < shape.n_obs(c, t); ++n) {
      if (sample(n).m_bar != counts.m0(c, t, n))
        throw DomainError("allocation sample for type " + std::to_string(c + 1) + ", period " +
                          std::to_string(t + 1) + ", observation " + std::to_string(n + 1) +
                          " does not match the unlocated count");
      for (int i = 0; i < shape.n_zones(); ++i)
        m1_[static_cast<std::size_t>(n * shape.n_zones() + i)] = counts.m1(c, i, t, n);
    }
  }

  double value(std::span<const double> lambda) const { return evaluate(lambda, {}); }

  void gradient(std::span<const double> lambda, std::span<double> g) const { evaluate(lambda, g); }

  /// Value, and the gradient when `g` is non-empty.
  double evaluate(std::span<const double> lambda, std::span<double> g) const
  {
    const auto& shape = counts_->shape();
    const int nz = shape.n_zones();
    const double d = shape.duration(t_);
    std::vector<double> expected(g.empty() ? 0 : static_cast<std::size_t>(nz));
    std::vector<double> expected_sum(g.empty() ? 0 : static_cast<std::size_t>(nz), 0.0);
    double f = 0.0;
    for (int n = 0; n < shape.n_obs(c_, t_); ++n) {
      const auto m1 = std::span<const Count>(m1_).subspan(static_cast<std::size_t>(n * nz), nz);
      const double lu = log_u_term(lambda, m1, d, sample(n), *pi_, expected);
      if (!std::isfinite(lu))
        throw DomainError("non-finite log u at type " + std::to_string(c_ + 1) + ", period " +
                          std::to_string(t_ + 1) + ", observation " + std::to_string(n + 1));
      f -= lu;
      for (std::size_t i = 0; i < expected.size(); ++i) expected_sum[i] += expected[i];
    }
    if (!g.empty()) {
      const double nd = shape.n_obs(c_, t_) * d;
      for (int i = 0; i < nz; ++i)
        g[i] = nd - (expected_sum[i] > 0.0 ? expected_sum[i] / lambda[i] : 0.0);
    }
    return f;
  }

private:
  const McSample& sample(int n) const
  {
    return samples_->samples[counts_->raw().unlocated_index(c_, t_, n)];
  }

  const CountData* counts_;
  const McSampleSet* samples_;
  const PopulationShares* pi_;
  int c_;
  int t_;
  std::vector<Count> m1_;
};

/// Gradient of the full sample-average objective, in IntensityField layout.
inline std::vector<double> mc_gradient(const IntensityField& lambda, const CountData& counts,
                                       const McSampleSet& samples, const PopulationShares& pi)
{
  const auto& shape = counts.shape();
  std::vector<double> g(shape.n_lambda(), 0.0);
  for (int c = 0; c < shape.n_types(); ++c)
    for (int t = 0; t < shape.n_periods(); ++t)
      PopulationBlockLoss(counts, samples, pi, c, t)
        .gradient(lambda.block(c, t), std::span<double>(g).subspan(shape.cit(c, 0, t), shape.n_zones()));
  return g;
}

/// Full sample-average objective: sum over (c, t, n) of -log u.
inline double mc_objective(const IntensityField& lambda, const CountData& counts,
                           const McSampleSet& samples, const PopulationShares& pi)
{
  const auto& shape = counts.shape();
  double f = 0.0;
  for (int c = 0; c < shape.n_types(); ++c)
    for (int t = 0; t < shape.n_periods(); ++t)
      f += PopulationBlockLoss(counts, samples, pi, c, t).value(lambda.block(c, t));
  return f;
}

struct PopulationOptions
{
  bool warm_start = true;  // start from the closed-form estimates
  double cold_start = 1.0; // start value otherwise
};

struct PopulationResult
{
  IntensityField lambda;
  CellTable status;  // undefined for cells without observations
  double objective = 0.0;
  std::uint64_t seed = 0;
  std::vector<SolverResult> runs;  // per (type, period)
};

/// Minimizes the sample-average objective over lambda >= lower_lambda, one
/// (type, period) block at a time, with the allocation sample frozen for the
/// whole run.
inline PopulationResult estimate_population_model(const CountData& counts, const PopulationShares& pi,
                                                  const SolverConfig& config, const McConfig& mc,
                                                  double lower_lambda,
                                                  const PopulationOptions& options = {})
{
  config.validate();
  if (!(lower_lambda > 0.0)) throw ConfigError("lower_lambda must be positive");
  const auto& shape = counts.shape();
  const McSampleSet samples = build_mc_samples(counts, pi, mc);
  const auto analytic = estimate_lambda(counts);
  const int nz = shape.n_zones();

  PopulationResult out;
  out.seed = mc.seed;
  out.status.n_periods = shape.n_periods();
  out.status.value.assign(shape.n_cells(), 0.0);
  out.status.status.assign(shape.n_cells(), CellStatus::ok);
  out.runs.resize(shape.n_cells());
  std::vector<double> lambda(shape.n_lambda(), 0.0);

  parallel_for(shape.n_cells(), [&](std::size_t cell) {
    const int c = static_cast<int>(cell / shape.n_periods());
    const int t = static_cast<int>(cell % shape.n_periods());
    const int n_obs = shape.n_obs(c, t);
    if (n_obs == 0) {
      out.status.status[cell] = CellStatus::undefined;
      return;
    }
    std::vector<double> x0(static_cast<std::size_t>(nz), options.cold_start);
    if (options.warm_start) {
      const double s_hat = static_cast<double>(counts.m0_total(c, t) + counts.m1_total(c, t)) /
                           (n_obs * shape.duration(t));
      for (int i = 0; i < nz; ++i)
        x0[i] = analytic.ok(c, t) ? analytic.lambda.at(c, i, t) : s_hat * pi.pi(i);
    }
    for (double& v : x0) v = std::max(v, lower_lambda);
    PopulationBlockLoss loss(counts, samples, pi, c, t);
    const double nd = n_obs * shape.duration(t);
    out.runs[cell] = scaled_projected_gradient(
      [&](std::span<const double> x) { return loss.value(x); },
      [&](std::span<const double> x, std::span<double> g) { loss.gradient(x, g); },
      [&](std::span<const double> x, std::span<const double> g, std::span<double> h) {
        // E[k_i] / lambda_i^2, with E[k_i] = (N D - g_i) lambda_i
        for (std::size_t i = 0; i < h.size(); ++i) h[i] = (nd - g[i]) / x[i];
        detail::floor_scaling(h);
      },
      Box::lower_bounded(static_cast<std::size_t>(nz), lower_lambda), std::move(x0), config);
    std::copy(out.runs[cell].x.begin(), out.runs[cell].x.end(),
              lambda.begin() + static_cast<std::ptrdiff_t>(cell * nz));
    out.status.value[cell] = out.runs[cell].objective;
  });
  for (double v : out.status.value) out.objective += v;
  out.lambda = IntensityField(shape, std::move(lambda));
  return out;
}

}  // namespace misloc
#endif
