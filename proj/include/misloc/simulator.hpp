#ifndef MISLOC_SIMULATOR_HPP_
#define MISLOC_SIMULATOR_HPP_

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "misloc/analytic.hpp"
#include "misloc/covariate.hpp"
#include "misloc/io.hpp"
#include "misloc/model_core.hpp"
#include "misloc/parallel.hpp"
#include "misloc/population.hpp"

namespace misloc
{

/// Ground truth and sampling setup for one synthetic dataset.
struct ScenarioSpec
{
  ProblemShape shape;
  std::vector<double> lambda;  // lambda*, IntensityField layout
  MissingProbability p = MissingProbability::global(0.0);
  std::uint64_t seed = 0;
  std::optional<PopulationShares> shares;  // for the population model

  void validate() const
  {
    if (lambda.size() != shape.n_lambda())
      throw ShapeError("lambda: expected " + std::to_string(shape.n_lambda()) + " values, got " +
                       std::to_string(lambda.size()));
    for (double v : lambda)
      if (!(v >= 0.0) || !std::isfinite(v)) throw DomainError("lambda: values must be finite and nonnegative");
    if (!p.is_global() && p.values().size() != shape.n_cells())
      throw ShapeError("p: expected one value per (type, period)");
    if (shares && shares->n_zones() != shape.n_zones())
      throw ShapeError("shares: expected " + std::to_string(shape.n_zones()) + " zones");
  }
};

struct SimulatedData
{
  RawCounts raw;
  /// Zone of origin of the unlocated arrivals, M0 split by zone; laid out
  /// like RawCounts::located.
  std::vector<Count> hidden;
};

/// Per (c, i, t, n): total ~ Poisson(lambda* D_t), each arrival independently
/// unlocated with probability p*_{c,t}. Located arrivals stay in their zone,
/// unlocated ones are summed over zones. Deterministic for a fixed seed.
inline SimulatedData simulate(const ScenarioSpec& spec)
{
  spec.validate();
  const auto& shape = spec.shape;
  SimulatedData out;
  out.raw = RawCounts::zeros(shape);
  out.hidden.assign(out.raw.located.size(), 0);
  parallel_for(shape.n_cells(), [&](std::size_t cell) {
    const int c = static_cast<int>(cell / shape.n_periods());
    const int t = static_cast<int>(cell % shape.n_periods());
    std::mt19937_64 rng(derive_seed(spec.seed, static_cast<std::uint64_t>(c), static_cast<std::uint64_t>(t)));
    const double p = spec.p.at(c, t);
    const double d = shape.duration(t);
    for (int n = 0; n < shape.n_obs(c, t); ++n)
      for (int i = 0; i < shape.n_zones(); ++i) {
        const double mean = spec.lambda[shape.cit(c, i, t)] * d;
        const Count total = mean > 0.0 ? std::poisson_distribution<Count>(mean)(rng) : 0;
        const Count lost = (total > 0 && p > 0.0) ? std::binomial_distribution<Count>(total, p)(rng) : 0;
        out.raw.m1(c, i, t, n) = total - lost;
        out.raw.m0(c, t, n) += lost;
        out.hidden[out.raw.located_index(c, i, t, n)] = lost;
      }
  });
  return out;
}

/// Like simulate, for scenarios of the population model. With `strict` the
/// shares of lambda* within every (type, period) must equal pi, so the zone of
/// an unlocated arrival is distributed as pi.
inline SimulatedData simulate_population_model(const ScenarioSpec& spec, bool strict = true)
{
  spec.validate();
  if (!spec.shares) throw DomainError("shares: population scenario without population shares");
  if (strict) {
    const auto& shape = spec.shape;
    for (int c = 0; c < shape.n_types(); ++c)
      for (int t = 0; t < shape.n_periods(); ++t) {
        double total = 0.0;
        for (int i = 0; i < shape.n_zones(); ++i) total += spec.lambda[shape.cit(c, i, t)];
        if (total <= 0.0) continue;
        for (int i = 0; i < shape.n_zones(); ++i)
          if (std::abs(spec.lambda[shape.cit(c, i, t)] / total - spec.shares->pi(i)) > 1e-9)
            throw DomainError("shares: lambda* shares differ from pi at type " + std::to_string(c + 1) +
                              ", period " + std::to_string(t + 1) + ", zone " + std::to_string(i + 1));
      }
  }
  return simulate(spec);
}

/// lambda*_{c,i,t} = S_{c,t} pi_i.
inline std::vector<double> lambda_from_shares(const ProblemShape& shape, const std::vector<double>& totals,
                                              const PopulationShares& pi)
{
  if (totals.size() != shape.n_cells()) throw ShapeError("totals: expected one value per (type, period)");
  std::vector<double> out(shape.n_lambda());
  for (int c = 0; c < shape.n_types(); ++c)
    for (int t = 0; t < shape.n_periods(); ++t)
      for (int i = 0; i < shape.n_zones(); ++i) out[shape.cit(c, i, t)] = totals[shape.ct(c, t)] * pi.pi(i);
  return out;
}

/// lambda*_{c,i,t} = beta_{c,t}' x_i / D_t.
inline std::vector<double> lambda_from_beta(const ProblemShape& shape, const BetaField& beta,
                                            const CovariateData& cov)
{
  std::vector<double> out(shape.n_lambda());
  for (int c = 0; c < shape.n_types(); ++c)
    for (int t = 0; t < shape.n_periods(); ++t) {
      const auto b = beta.at(c, t);
      for (int i = 0; i < shape.n_zones(); ++i)
        out[shape.cit(c, i, t)] = detail::dot(b, cov.row(i)) / shape.duration(t);
    }
  return out;
}

// ------------------------------------------------------------ demo scenario

struct DemoOptions
{
  int n_types = 3;
  int grid = 10;  // zones are the cells of a grid x grid square minus a cut corner
  int n_days = 7;
  int periods_per_day = 48;
  std::vector<int> obs_per_day{20, 20, 20, 20, 20, 20, 19};
  std::vector<double> rates{6.0, 10.0, 4.0};  // mean arrivals per hour by type
  double p_low = 0.1;   // daily range of p*
  double p_high = 0.5;
  std::uint64_t seed = 42;
};

struct Dataset
{
  InfoFile info;
  std::vector<ZoneRecord> zones;
  ScenarioSpec spec;
  SimulatedData data;
};

namespace detail
{

inline std::vector<std::pair<int, int>> demo_cells(int grid)
{
  std::vector<std::pair<int, int>> cells;
  const int coast = std::max(2 * grid - 8, grid - 1);  // small grids keep their upper triangle
  for (int r = 0; r < grid; ++r)
    for (int c = 0; c < grid; ++c) {
      if (r + c > coast) continue;                   // coastline
      if (r + c < 2 && grid > 3) continue;           // corner outside the city
      cells.emplace_back(r, c);
    }
  return cells;
}

}  // namespace detail

/// The grid city: populations, land use and 4-neighbour adjacency.
inline std::vector<ZoneRecord> demo_zones(int grid)
{
  if (grid < 4 || grid > 200) throw ConfigError("grid: must lie in 4..200");
  const auto cells = detail::demo_cells(grid);
  std::map<std::pair<int, int>, int> index;
  for (std::size_t k = 0; k < cells.size(); ++k) index[cells[k]] = static_cast<int>(k) + 1;
  const double centre = 0.4 * grid;
  std::vector<ZoneRecord> zones;
  for (std::size_t k = 0; k < cells.size(); ++k) {
    const auto [r, c] = cells[k];
    ZoneRecord z;
    z.index = static_cast<int>(k) + 1;
    z.latitude = -22.80 - 0.02 * r;
    z.longitude = -43.50 + 0.02 * c;
    z.type = "0";
    const double d2 = (r - centre) * (r - centre) + (c - centre) * (c - centre);
    z.features[0] = std::round(2000.0 + 18000.0 * std::exp(-d2 / (0.18 * grid * grid)) + 500.0 * ((r * 7 + c * 3) % 5));
    z.features[1] = 0.5 + 0.1 * ((r + 2 * c) % 4);        // residential area
    z.features[2] = 0.2 + 0.8 * std::exp(-d2 / 4.0);      // commercial
    z.features[3] = 0.1 * (1 + (r * c) % 3);              // industrial
    z.features[4] = std::max(0.0, 1.0 - z.features[1] - z.features[2] - z.features[3]);  // green
    for (auto [dr, dc] : {std::pair{-1, 0}, {1, 0}, {0, -1}, {0, 1}})
      if (auto it = index.find({r + dr, c + dc}); it != index.end()) z.neighbors.emplace_back(it->second, 2.2);
    zones.push_back(std::move(z));
  }
  return zones;
}

/// Total intensity S*_{c,t} per hour: a daily cycle peaking mid-afternoon,
/// slightly busier at weekends.
inline double demo_total_rate(const DemoOptions& o, int c, int day, int slot)
{
  const double hour = (slot + 0.5) * 24.0 / o.periods_per_day;
  const double weekend = day >= 5 ? 1.1 : 1.0;
  return o.rates[static_cast<std::size_t>(c)] * weekend *
         (1.0 + 0.6 * std::sin(2.0 * std::numbers::pi * (hour - 9.0) / 24.0));
}

/// p*_{c,t} oscillating once a day between p_low (afternoon) and p_high (night).
inline double demo_missing_probability(const DemoOptions& o, int c, int slot)
{
  const double hour = (slot + 0.5) * 24.0 / o.periods_per_day;
  const double wave = 0.5 * (1.0 + std::cos(2.0 * std::numbers::pi * (hour - 3.0 * c) / 24.0));
  return o.p_low + (o.p_high - o.p_low) * wave;
}

inline Dataset make_demo_dataset(const DemoOptions& o)
{
  if (o.n_types < 1 || o.rates.size() != static_cast<std::size_t>(o.n_types))
    throw ConfigError("rates: need one rate per type");
  for (double r : o.rates)
    if (!(r >= 0.0)) throw ConfigError("rates: must be nonnegative");
  if (o.n_days < 1 || o.periods_per_day < 1) throw ConfigError("days/periods_per_day: must be positive");
  if (o.obs_per_day.size() != static_cast<std::size_t>(o.n_days))
    throw ConfigError("obs_per_day: need one count per day");
  if (!(o.p_low >= 0.0 && o.p_high <= 1.0 && o.p_low <= o.p_high))
    throw ConfigError("p_low/p_high: need 0 <= p_low <= p_high <= 1");

  Dataset ds;
  ds.zones = demo_zones(o.grid);
  ds.info.periods_per_day = o.periods_per_day;
  ds.info.n_days = o.n_days;
  ds.info.n_zones = static_cast<int>(ds.zones.size());
  ds.info.n_types = o.n_types;
  ds.info.obs_per_day = o.obs_per_day;
  const auto shape = ds.info.shape();

  std::vector<double> population;
  for (const auto& z : ds.zones) population.push_back(z.features[0]);
  auto pi = PopulationShares::from_population(population);
  std::vector<double> totals(shape.n_cells()), p(shape.n_cells());
  for (int c = 0; c < o.n_types; ++c)
    for (int t = 0; t < shape.n_periods(); ++t) {
      totals[shape.ct(c, t)] = demo_total_rate(o, c, t / o.periods_per_day, t % o.periods_per_day);
      p[shape.ct(c, t)] = demo_missing_probability(o, c, t % o.periods_per_day);
    }
  ds.spec.shape = shape;
  ds.spec.lambda = lambda_from_shares(shape, totals, pi);
  ds.spec.p = MissingProbability::per_cell(shape, p);
  ds.spec.seed = o.seed;
  ds.spec.shares = std::move(pi);
  ds.data = simulate_population_model(ds.spec);
  return ds;
}

/// Scenario file: key=value lines overriding DemoOptions fields.
inline DemoOptions read_scenario(const fs::path& path)
{
  DemoOptions o;
  for (const auto& [key, v] : read_config_values(path)) {
    if (key == "types") o.n_types = detail::config_int<int>(key, v);
    else if (key == "grid") o.grid = detail::config_int<int>(key, v);
    else if (key == "days") o.n_days = detail::config_int<int>(key, v);
    else if (key == "periods_per_day") o.periods_per_day = detail::config_int<int>(key, v);
    else if (key == "obs_per_day" || key == "rates") {
      std::vector<double> xs;
      for (const auto& tok : detail::split_tokens(v)) xs.push_back(detail::config_real(key, tok));
      if (key == "rates") o.rates = xs;
      else {
        o.obs_per_day.clear();
        for (const auto& tok : detail::split_tokens(v)) o.obs_per_day.push_back(detail::config_int<int>(key, tok));
      }
    } else if (key == "p_low") o.p_low = detail::config_real(key, v);
    else if (key == "p_high") o.p_high = detail::config_real(key, v);
    else if (key == "seed") o.seed = detail::config_int<std::uint64_t>(key, v);
    else throw ConfigError(key + ": unknown scenario field");
  }
  return o;
}

struct DatasetPaths
{
  fs::path config, info, arrivals, missing, neighbors, truth_lambda, truth_p;
};

/// Writes the input files, a config pointing at them and the hidden truth.
inline DatasetPaths write_dataset(const fs::path& dir, const Dataset& ds)
{
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  DatasetPaths paths{dir / "test.cfg",     dir / "info.txt",         dir / "arrivals.txt", dir / "missing.txt",
                     dir / "neighbors.txt", dir / "truth_lambda.txt", dir / "truth_p.txt"};
  const auto& shape = ds.spec.shape;
  write_info(paths.info, ds.info);
  write_arrivals(paths.arrivals, ds.data.raw, shape);
  write_missing(paths.missing, ds.data.raw, shape);
  write_neighbors(paths.neighbors, ds.zones);
  write_lambda_table(paths.truth_lambda, shape, IntensityField(shape, ds.spec.lambda));
  CellTable p;
  p.n_periods = shape.n_periods();
  p.status.assign(shape.n_cells(), CellStatus::ok);
  for (int c = 0; c < shape.n_types(); ++c)
    for (int t = 0; t < shape.n_periods(); ++t) p.value.push_back(ds.spec.p.at(c, t));
  write_p_table(paths.truth_p, shape, p);
  write_config(paths.config, {{"EPS", "1e-05"},
                              {"sigma", "0.5"},
                              {"max_iter", "1000"},
                              {"lower_lambda", "1e-05"},
                              {"beta_bar", "2"},
                              {"test_weights", "0 0.001 0.005 0.01 0.03"},
                              {"model", "analytical"},
                              {"info_file", "info.txt"},
                              {"arrivals_file", "arrivals.txt"},
                              {"missing_file", "missing.txt"},
                              {"neighbors_file", "neighbors.txt"},
                              {"seed", std::to_string(ds.spec.seed)},
                              {"output_dir", "results"}});
  return paths;
}

}  // namespace misloc
#endif
