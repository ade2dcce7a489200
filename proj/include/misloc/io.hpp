#ifndef MISLOC_IO_HPP_
#define MISLOC_IO_HPP_

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "misloc/analytic.hpp"
#include "misloc/covariate.hpp"
#include "misloc/model_core.hpp"
#include "misloc/uncertainty.hpp"

namespace misloc
{

namespace fs = std::filesystem;

namespace detail
{

inline std::vector<std::string> split_tokens(const std::string& line)
{
  std::vector<std::string> out;
  std::istringstream is(line);
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

inline bool blank(const std::string& line)
{
  return line.find_first_not_of(" \t\r\n") == std::string::npos;
}

template <class Int>
Int parse_int(const std::string& tok, const std::string& file, int line, const char* field)
{
  Int v{};
  const auto* end = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(tok.data(), end, v);
  if (ec != std::errc() || ptr != end)
    throw ParseError(file, line, std::string("expected an integer for ") + field + ", got '" + tok + "'");
  return v;
}

inline double parse_real(const std::string& tok, const std::string& file, int line, const char* field)
{
  double v = 0.0;
  const auto* end = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(tok.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v))
    throw ParseError(file, line, std::string("expected a number for ") + field + ", got '" + tok + "'");
  return v;
}

inline std::ifstream open_in(const fs::path& path)
{
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return in;
}

inline std::ofstream open_out(const fs::path& path)
{
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

inline void close_checked(std::ofstream& out, const fs::path& path)
{
  out.close();
  if (!out) throw IoError("error while writing " + path.string());
}

}  // namespace detail

/// Shortest text with 12 significant digits.
inline std::string format_real(double v)
{
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

// ---------------------------------------------------------------- info file

struct InfoFile
{
  int periods_per_day = 0;  // T
  int n_days = 0;           // D
  int n_zones = 0;
  int n_types = 0;
  std::string ignored[2] = {"0", "0"};
  std::vector<int> obs_per_day;  // starting on Monday

  /// n_periods = T * D, durations 24 / T hours, N[c][t] from the day of t.
  ProblemShape shape() const
  {
    const int n_periods = periods_per_day * n_days;
    std::vector<int> n_obs(static_cast<std::size_t>(n_types) * n_periods);
    for (int c = 0; c < n_types; ++c)
      for (int t = 0; t < n_periods; ++t)
        n_obs[static_cast<std::size_t>(c) * n_periods + t] = obs_per_day[t / periods_per_day];
    return ProblemShape(n_types, n_zones, n_periods,
                        std::vector<double>(static_cast<std::size_t>(n_periods), 24.0 / periods_per_day),
                        std::move(n_obs), DayAxis{n_days, periods_per_day});
  }
};

inline constexpr long long kMaxPeriods = 100000;
inline constexpr long long kMaxCells = 500'000'000;  // types * zones * periods * observations

inline InfoFile read_info(const fs::path& path)
{
  auto in = detail::open_in(path);
  const std::string file = path.string();
  std::vector<std::vector<std::string>> lines;
  std::vector<int> numbers;
  std::string line;
  for (int no = 1; std::getline(in, line); ++no)
    if (!detail::blank(line)) {
      lines.push_back(detail::split_tokens(line));
      numbers.push_back(no);
      if (lines.size() == 2) break;
    }
  if (lines.empty()) throw ParseError(file, 1, "empty info file");
  if (lines[0].size() != 6)
    throw ParseError(file, numbers[0],
                     "expected 'T D zones types x y' (6 values), got " + std::to_string(lines[0].size()));
  InfoFile info;
  const auto& h = lines[0];
  info.periods_per_day = detail::parse_int<int>(h[0], file, numbers[0], "T");
  info.n_days = detail::parse_int<int>(h[1], file, numbers[0], "D");
  info.n_zones = detail::parse_int<int>(h[2], file, numbers[0], "number of zones");
  info.n_types = detail::parse_int<int>(h[3], file, numbers[0], "number of types");
  info.ignored[0] = h[4];
  info.ignored[1] = h[5];
  if (info.periods_per_day < 1 || info.n_days < 1 || info.n_zones < 1 || info.n_types < 1)
    throw ParseError(file, numbers[0], "T, D, zones and types must be positive");
  if (static_cast<long long>(info.periods_per_day) * info.n_days > kMaxPeriods)
    throw ParseError(file, numbers[0], "T*D exceeds the limit of " + std::to_string(kMaxPeriods) + " periods");
  if (lines.size() < 2) throw ParseError(file, numbers[0] + 1, "missing line with observations per day");
  if (lines[1].size() != static_cast<std::size_t>(info.n_days))
    throw ParseError(file, numbers[1],
                     "expected " + std::to_string(info.n_days) + " observation counts, got " +
                       std::to_string(lines[1].size()));
  int max_obs = 0;
  for (const auto& tok : lines[1]) {
    const int n = detail::parse_int<int>(tok, file, numbers[1], "observation count");
    if (n < 0) throw ParseError(file, numbers[1], "observation counts must be nonnegative");
    info.obs_per_day.push_back(n);
    max_obs = std::max(max_obs, n);
  }
  const long double cells = static_cast<long double>(info.n_types) * info.n_zones * info.periods_per_day *
                            info.n_days * std::max(1, max_obs);
  if (cells > kMaxCells)
    throw ParseError(file, numbers[1], "problem size exceeds the limit of " + std::to_string(kMaxCells) +
                                         " located counts");
  return info;
}

inline void write_info(const fs::path& path, const InfoFile& info)
{
  auto out = detail::open_out(path);
  out << info.periods_per_day << ' ' << info.n_days << ' ' << info.n_zones << ' ' << info.n_types << ' '
      << info.ignored[0] << ' ' << info.ignored[1] << '\n';
  for (std::size_t d = 0; d < info.obs_per_day.size(); ++d)
    out << (d ? " " : "") << info.obs_per_day[d];
  out << '\n';
  detail::close_checked(out, path);
}

// ------------------------------------------------------ arrivals and missing

/// The trailing h value of each (type, period, observation), kept verbatim
/// so files round-trip. Keyed like RawCounts::unlocated.
using ObservationTags = std::map<std::size_t, std::string>;

namespace detail
{

struct CountRecord
{
  int c, i, t, n;
  Count value;
  std::string h;
};

/// Parses "t d i c n value h" lines. With `check_zone` false the zone column
/// must be an integer but is not range checked.
template <class Sink>
void read_count_lines(const fs::path& path, const ProblemShape& shape, bool check_zone, Sink&& sink)
{
  auto in = open_in(path);
  const std::string file = path.string();
  const auto& axis = shape.day_axis();
  const int per_day = axis ? axis->periods_per_day : shape.n_periods();
  const int n_days = axis ? axis->n_days : 1;
  std::string line;
  for (int no = 1; std::getline(in, line); ++no) {
    if (blank(line)) continue;
    const auto tok = split_tokens(line);
    if (tok.size() != 7)
      throw ParseError(file, no, "expected 't d i c n count h' (7 values), got " + std::to_string(tok.size()));
    const int t = parse_int<int>(tok[0], file, no, "t");
    const int d = parse_int<int>(tok[1], file, no, "d");
    const int i = parse_int<int>(tok[2], file, no, "zone");
    const int c = parse_int<int>(tok[3], file, no, "type");
    const int n = parse_int<int>(tok[4], file, no, "observation");
    const Count v = parse_int<Count>(tok[5], file, no, "count");
    if (t < 1 || t > per_day) throw ParseError(file, no, "t=" + std::to_string(t) + " outside 1.." + std::to_string(per_day));
    if (d < 1 || d > n_days) throw ParseError(file, no, "d=" + std::to_string(d) + " outside 1.." + std::to_string(n_days));
    if (check_zone && (i < 1 || i > shape.n_zones()))
      throw ParseError(file, no, "zone " + std::to_string(i) + " outside 1.." + std::to_string(shape.n_zones()));
    if (c < 1 || c > shape.n_types())
      throw ParseError(file, no, "type " + std::to_string(c) + " outside 1.." + std::to_string(shape.n_types()));
    const int period = (d - 1) * per_day + (t - 1);
    const int n_obs = shape.n_obs(c - 1, period);
    if (n < 1 || n > n_obs)
      throw ParseError(file, no, "observation " + std::to_string(n) + " outside 1.." + std::to_string(n_obs));
    if (v < 0) throw ParseError(file, no, "negative count");
    sink(CountRecord{c - 1, i - 1, period, n - 1, v, tok[6]}, no);
  }
}

inline void period_to_file(const ProblemShape& shape, int period, int& t, int& d)
{
  const auto& axis = shape.day_axis();
  const int per_day = axis ? axis->periods_per_day : shape.n_periods();
  t = period % per_day + 1;
  d = period / per_day + 1;
}

}  // namespace detail

/// Located counts M1. Duplicate (c, i, t, d, n) records are errors.
inline RawCounts read_arrivals(const fs::path& path, const ProblemShape& shape, ObservationTags* tags = nullptr)
{
  RawCounts raw = RawCounts::zeros(shape);
  std::vector<char> seen(raw.located.size(), 0);
  detail::read_count_lines(path, shape, true, [&](const detail::CountRecord& r, int line) {
    const auto k = raw.located_index(r.c, r.i, r.t, r.n);
    if (seen[k]) throw ParseError(path.string(), line, "duplicate record for this (t, d, zone, type, observation)");
    seen[k] = 1;
    raw.located[k] = r.value;
    if (tags) (*tags)[raw.unlocated_index(r.c, r.t, r.n)] = r.h;
  });
  return raw;
}

/// Unlocated counts M0 into `raw.unlocated`; the zone column is ignored and
/// lines for the same (c, t, n) are summed.
inline void read_missing(const fs::path& path, const ProblemShape& shape, RawCounts& raw,
                         ObservationTags* tags = nullptr)
{
  detail::read_count_lines(path, shape, false, [&](const detail::CountRecord& r, int) {
    const auto k = raw.unlocated_index(r.c, r.t, r.n);
    raw.unlocated[k] += r.value;
    if (tags) tags->emplace(k, r.h);
  });
}

inline RawCounts read_missing(const fs::path& path, const ProblemShape& shape, ObservationTags* tags = nullptr)
{
  RawCounts raw = RawCounts::zeros(shape);
  read_missing(path, shape, raw, tags);
  return raw;
}

/// One line per nonzero located count.
inline void write_arrivals(const fs::path& path, const RawCounts& raw, const ProblemShape& shape,
                           const ObservationTags* tags = nullptr)
{
  auto out = detail::open_out(path);
  for (int c = 0; c < shape.n_types(); ++c)
    for (int t = 0; t < shape.n_periods(); ++t)
      for (int n = 0; n < shape.n_obs(c, t); ++n) {
        const auto key = raw.unlocated_index(c, t, n);
        std::string h = "0";
        if (tags)
          if (auto it = tags->find(key); it != tags->end()) h = it->second;
        int tf, df;
        detail::period_to_file(shape, t, tf, df);
        for (int i = 0; i < shape.n_zones(); ++i)
          if (const Count v = raw.m1(c, i, t, n); v != 0)
            out << tf << ' ' << df << ' ' << i + 1 << ' ' << c + 1 << ' ' << n + 1 << ' ' << v << ' ' << h << '\n';
      }
  detail::close_checked(out, path);
}

/// One line per nonzero unlocated count, zone column written as 0.
inline void write_missing(const fs::path& path, const RawCounts& raw, const ProblemShape& shape,
                          const ObservationTags* tags = nullptr)
{
  auto out = detail::open_out(path);
  for (int c = 0; c < shape.n_types(); ++c)
    for (int t = 0; t < shape.n_periods(); ++t)
      for (int n = 0; n < shape.n_obs(c, t); ++n) {
        const auto key = raw.unlocated_index(c, t, n);
        const Count v = raw.unlocated[key];
        if (v == 0) continue;
        std::string h = "0";
        if (tags)
          if (auto it = tags->find(key); it != tags->end()) h = it->second;
        int tf, df;
        detail::period_to_file(shape, t, tf, df);
        out << tf << ' ' << df << " 0 " << c + 1 << ' ' << n + 1 << ' ' << v << ' ' << h << '\n';
      }
  detail::close_checked(out, path);
}

// ----------------------------------------------------------- neighbors file

inline constexpr int kZoneFeatures = 5;

struct ZoneRecord
{
  int index = 0;  // 1-based, as in the file
  double latitude = 0.0;
  double longitude = 0.0;
  std::string type;
  double features[kZoneFeatures] = {};  // population, then land-use areas
  std::vector<std::pair<int, double>> neighbors;  // (1-based zone, distance)

  bool operator==(const ZoneRecord& o) const
  {
    return index == o.index && latitude == o.latitude && longitude == o.longitude && type == o.type &&
           std::equal(std::begin(features), std::end(features), std::begin(o.features)) &&
           neighbors == o.neighbors;
  }
};

struct ZoneTable
{
  std::vector<ZoneRecord> zones;              // sorted by index
  std::vector<std::vector<int>> adjacency;    // symmetric, 0-based
  std::vector<std::string> warnings;

  int n_zones() const { return static_cast<int>(zones.size()); }

  std::vector<double> population() const
  {
    std::vector<double> p;
    for (const auto& z : zones) p.push_back(z.features[0]);
    return p;
  }

  CovariateData covariates() const
  {
    std::vector<std::vector<double>> rows;
    for (const auto& z : zones) rows.emplace_back(std::begin(z.features), std::end(z.features));
    return CovariateData(rows);
  }
};

inline ZoneTable read_neighbors(const fs::path& path)
{
  auto in = detail::open_in(path);
  const std::string file = path.string();
  ZoneTable table;
  std::map<int, int> line_of;
  std::string line;
  for (int no = 1; std::getline(in, line); ++no) {
    if (detail::blank(line)) continue;
    const auto tok = detail::split_tokens(line);
    if (tok.size() < 4 + kZoneFeatures || (tok.size() - 4 - kZoneFeatures) % 2 != 0)
      throw ParseError(file, no, "expected 'i lat lon type f1..f5' followed by (neighbor distance) pairs");
    ZoneRecord z;
    z.index = detail::parse_int<int>(tok[0], file, no, "zone");
    z.latitude = detail::parse_real(tok[1], file, no, "latitude");
    z.longitude = detail::parse_real(tok[2], file, no, "longitude");
    z.type = tok[3];
    for (int k = 0; k < kZoneFeatures; ++k) {
      z.features[k] = detail::parse_real(tok[4 + k], file, no, "feature");
      if (z.features[k] < 0.0) throw ParseError(file, no, "features must be nonnegative");
    }
    for (std::size_t k = 4 + kZoneFeatures; k < tok.size(); k += 2) {
      const int j = detail::parse_int<int>(tok[k], file, no, "neighbor");
      const double dist = detail::parse_real(tok[k + 1], file, no, "distance");
      z.neighbors.emplace_back(j, dist);
    }
    if (!line_of.emplace(z.index, no).second)
      throw ParseError(file, no, "zone " + std::to_string(z.index) + " listed twice");
    table.zones.push_back(std::move(z));
  }
  if (table.zones.empty()) throw ParseError(file, 1, "no zones");
  std::sort(table.zones.begin(), table.zones.end(), [](const auto& a, const auto& b) { return a.index < b.index; });
  const int nz = table.n_zones();
  for (int k = 0; k < nz; ++k)
    if (table.zones[k].index != k + 1)
      throw ParseError(file, line_of.at(table.zones[k].index), "zone indices must be 1.." + std::to_string(nz));

  std::vector<std::set<int>> adj(static_cast<std::size_t>(nz));
  for (const auto& z : table.zones)
    for (auto [j, dist] : z.neighbors) {
      if (j < 1 || j > nz)
        throw ParseError(file, line_of.at(z.index), "neighbor " + std::to_string(j) + " of zone " +
                                                      std::to_string(z.index) + " does not exist");
      if (j == z.index) continue;
      adj[z.index - 1].insert(j - 1);
      adj[j - 1].insert(z.index - 1);
    }
  for (const auto& z : table.zones)
    for (auto [j, dist] : z.neighbors) {
      if (j == z.index) continue;
      const auto& back = table.zones[j - 1].neighbors;
      if (std::none_of(back.begin(), back.end(), [&](const auto& e) { return e.first == z.index; }))
        table.warnings.push_back("zone " + std::to_string(z.index) + " lists " + std::to_string(j) +
                                 " as a neighbor but not conversely; treated as symmetric");
    }
  for (const auto& s : adj) table.adjacency.emplace_back(s.begin(), s.end());
  return table;
}

inline void write_neighbors(const fs::path& path, const std::vector<ZoneRecord>& zones)
{
  auto out = detail::open_out(path);
  for (const auto& z : zones) {
    out << z.index << ' ' << format_real(z.latitude) << ' ' << format_real(z.longitude) << ' ' << z.type;
    for (double f : z.features) out << ' ' << format_real(f);
    for (auto [j, dist] : z.neighbors) out << ' ' << j << ' ' << format_real(dist);
    out << '\n';
  }
  detail::close_checked(out, path);
}

// --------------------------------------------------------------- run config

struct RunConfig
{
  double eps = 1e-5;
  double sigma = 0.5;
  int max_iter = 1000;
  std::optional<double> lower_lambda;  // defaults to eps
  double beta_bar = 2.0;
  double tolerance = 1e-8;
  std::vector<double> test_weights{0.0, 0.001, 0.005, 0.01, 0.03};
  std::string model = "analytical";
  fs::path info_file, arrivals_file, neighbors_file, missing_file;
  int mc_samples = 100;
  std::uint64_t seed = 1;
  double alpha = 0.05;
  fs::path output_dir = "results";
  std::vector<std::string> warnings;

  double lambda_floor() const { return lower_lambda.value_or(eps); }

  SolverConfig solver() const
  {
    SolverConfig s;
    s.eps = eps;
    s.sigma = sigma;
    s.beta_bar = beta_bar;
    s.max_iter = max_iter;
    s.tolerance = tolerance;
    return s;
  }
};

inline const std::vector<std::string>& model_names()
{
  static const std::vector<std::string> names{"analytical", "regularized", "population", "covariate", "all"};
  return names;
}

namespace detail
{

inline std::string trim(std::string s)
{
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline double config_real(const std::string& key, const std::string& v)
{
  double x = 0.0;
  const auto* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, x);
  if (ec != std::errc() || ptr != end || !std::isfinite(x))
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  return x;
}

template <class Int>
Int config_int(const std::string& key, const std::string& v)
{
  Int x{};
  const auto* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, x);
  if (ec != std::errc() || ptr != end) throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return x;
}

}  // namespace detail

/// Keys accepted in configuration files and as overrides.
inline const std::vector<std::string>& config_keys()
{
  static const std::vector<std::string> keys{
    "EPS",          "sigma",         "max_iter",       "lower_lambda", "beta_bar",   "tolerance",
    "test_weights", "model",         "info_file",      "arrivals_file", "neighbors_file", "missing_file",
    "mc_samples",   "seed",          "alpha",          "output_dir"};
  return keys;
}

/// Builds a RunConfig from key=value pairs. Relative paths resolve against
/// `base_dir`. Input files must exist unless `check_paths` is false.
inline RunConfig make_config(const std::map<std::string, std::string>& values, const fs::path& base_dir,
                             bool check_paths = true)
{
  RunConfig cfg;
  const auto resolve = [&](const std::string& v) {
    fs::path p(v);
    return p.is_absolute() ? p : base_dir / p;
  };
  for (const auto& [key, raw] : values) {
    const std::string v = detail::trim(raw);
    if (key == "EPS") cfg.eps = detail::config_real(key, v);
    else if (key == "sigma") cfg.sigma = detail::config_real(key, v);
    else if (key == "max_iter") cfg.max_iter = detail::config_int<int>(key, v);
    else if (key == "lower_lambda") cfg.lower_lambda = detail::config_real(key, v);
    else if (key == "beta_bar") cfg.beta_bar = detail::config_real(key, v);
    else if (key == "tolerance") cfg.tolerance = detail::config_real(key, v);
    else if (key == "test_weights") {
      cfg.test_weights.clear();
      std::string list = v;
      std::replace(list.begin(), list.end(), ',', ' ');
      for (const auto& tok : detail::split_tokens(list)) cfg.test_weights.push_back(detail::config_real(key, tok));
      if (cfg.test_weights.empty()) throw ConfigError("test_weights: empty list");
    } else if (key == "model") cfg.model = v;
    else if (key == "info_file") cfg.info_file = resolve(v);
    else if (key == "arrivals_file") cfg.arrivals_file = resolve(v);
    else if (key == "neighbors_file") cfg.neighbors_file = resolve(v);
    else if (key == "missing_file") cfg.missing_file = resolve(v);
    else if (key == "mc_samples") cfg.mc_samples = detail::config_int<int>(key, v);
    else if (key == "seed") cfg.seed = detail::config_int<std::uint64_t>(key, v);
    else if (key == "alpha") cfg.alpha = detail::config_real(key, v);
    else if (key == "output_dir") cfg.output_dir = resolve(v);
    else cfg.warnings.push_back("unknown configuration key '" + key + "' ignored");
  }

  if (!(cfg.eps > 0.0 && cfg.eps < 0.5)) throw ConfigError("EPS: must lie in (0, 0.5)");
  if (!(cfg.sigma > 0.0 && cfg.sigma < 1.0)) throw ConfigError("sigma: must lie in (0, 1)");
  if (cfg.max_iter < 1) throw ConfigError("max_iter: must be at least 1");
  if (cfg.lower_lambda && !(*cfg.lower_lambda > 0.0)) throw ConfigError("lower_lambda: must be positive");
  if (!(cfg.beta_bar > 0.0)) throw ConfigError("beta_bar: must be positive");
  if (!(cfg.tolerance >= 0.0)) throw ConfigError("tolerance: must be nonnegative");
  for (double w : cfg.test_weights)
    if (!(w >= 0.0)) throw ConfigError("test_weights: weights must be nonnegative");
  if (std::find(model_names().begin(), model_names().end(), cfg.model) == model_names().end())
    throw ConfigError("model: unknown model '" + cfg.model + "'");
  if (cfg.mc_samples < 1) throw ConfigError("mc_samples: must be at least 1");
  if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0)) throw ConfigError("alpha: must lie in (0, 1)");
  if (check_paths) {
    const std::pair<const char*, const fs::path*> files[] = {{"info_file", &cfg.info_file},
                                                             {"arrivals_file", &cfg.arrivals_file},
                                                             {"neighbors_file", &cfg.neighbors_file},
                                                             {"missing_file", &cfg.missing_file}};
    for (auto [key, p] : files) {
      if (p->empty()) continue;
      if (!fs::exists(*p)) throw ConfigError(std::string(key) + ": file " + p->string() + " does not exist");
    }
  }
  return cfg;
}

/// Reads key=value lines ('#' starts a comment), then applies `overrides`,
/// which win on conflict.
inline std::map<std::string, std::string> read_config_values(const fs::path& path)
{
  auto in = detail::open_in(path);
  std::map<std::string, std::string> values;
  std::string line;
  for (int no = 1; std::getline(in, line); ++no) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (detail::blank(line)) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(path.string(), no, "expected key=value");
    const std::string key = detail::trim(line.substr(0, eq));
    if (key.empty()) throw ParseError(path.string(), no, "empty key");
    values[key] = detail::trim(line.substr(eq + 1));
  }
  return values;
}

inline RunConfig read_config(const fs::path& path, const std::map<std::string, std::string>& overrides = {},
                             bool check_paths = true)
{
  auto values = read_config_values(path);
  for (const auto& [k, v] : overrides) values[k] = v;
  return make_config(values, path.parent_path(), check_paths);
}

inline void write_config(const fs::path& path, const std::map<std::string, std::string>& values)
{
  auto out = detail::open_out(path);
  for (const auto& [k, v] : values) out << k << " = " << v << '\n';
  detail::close_checked(out, path);
}

// ------------------------------------------------------------ output tables

/// "c t p [var lower upper]" per (type, period); NA where undefined.
inline void write_p_table(const fs::path& path, const ProblemShape& shape, const CellTable& p,
                          const UncertaintyTables* unc = nullptr, double alpha = 0.05)
{
  auto out = detail::open_out(path);
  for (int c = 0; c < shape.n_types(); ++c)
    for (int t = 0; t < shape.n_periods(); ++t) {
      out << c + 1 << ' ' << t + 1 << ' ' << (p.ok(c, t) ? format_real(p.at(c, t)) : "NA");
      if (unc) {
        if (p.ok(c, t) && unc->available(c, t)) {
          const double v = unc->var_p.at(c, t);
          const auto ci = confidence_interval(p.at(c, t), v, alpha);
          out << ' ' << format_real(v) << ' ' << format_real(ci.lower) << ' ' << format_real(ci.upper);
        } else {
          out << " NA NA NA";
        }
      }
      out << '\n';
    }
  detail::close_checked(out, path);
}

/// "c i t lambda [var lower upper]" per (type, zone, period); cells not ok in
/// `status` render NA.
inline void write_lambda_table(const fs::path& path, const ProblemShape& shape, const IntensityField& lambda,
                               const CellTable* status = nullptr, const UncertaintyTables* unc = nullptr,
                               double alpha = 0.05)
{
  auto out = detail::open_out(path);
  for (int c = 0; c < shape.n_types(); ++c)
    for (int i = 0; i < shape.n_zones(); ++i)
      for (int t = 0; t < shape.n_periods(); ++t) {
        const bool ok = !status || status->ok(c, t);
        out << c + 1 << ' ' << i + 1 << ' ' << t + 1 << ' ' << (ok ? format_real(lambda.at(c, i, t)) : "NA");
        if (unc) {
          const double v = unc->var_lambda[shape.cit(c, i, t)];
          if (ok && unc->available(c, t) && !std::isnan(v)) {
            const auto ci = confidence_interval(lambda.at(c, i, t), v, alpha, true);
            out << ' ' << format_real(v) << ' ' << format_real(ci.lower) << ' ' << format_real(ci.upper);
          } else {
            out << " NA NA NA";
          }
        }
        out << '\n';
      }
  detail::close_checked(out, path);
}

/// Parsed lambda table; NA entries are nullopt. Extra columns are kept.
struct LambdaTable
{
  std::vector<std::optional<double>> lambda;  // indexed like IntensityField
  std::vector<std::optional<double>> variance, lower, upper;
};

inline LambdaTable read_lambda_table(const fs::path& path, const ProblemShape& shape)
{
  auto in = detail::open_in(path);
  const std::string file = path.string();
  LambdaTable table;
  table.lambda.assign(shape.n_lambda(), std::nullopt);
  table.variance = table.lower = table.upper = table.lambda;
  std::vector<char> seen(shape.n_lambda(), 0);
  const auto cell = [&](const std::string& tok, int no) -> std::optional<double> {
    if (tok == "NA") return std::nullopt;
    return detail::parse_real(tok, file, no, "value");
  };
  std::string line;
  for (int no = 1; std::getline(in, line); ++no) {
    if (detail::blank(line)) continue;
    const auto tok = detail::split_tokens(line);
    if (tok.size() != 4 && tok.size() != 7) throw ParseError(file, no, "expected 4 or 7 columns");
    const int c = detail::parse_int<int>(tok[0], file, no, "type");
    const int i = detail::parse_int<int>(tok[1], file, no, "zone");
    const int t = detail::parse_int<int>(tok[2], file, no, "period");
    if (c < 1 || c > shape.n_types() || i < 1 || i > shape.n_zones() || t < 1 || t > shape.n_periods())
      throw ParseError(file, no, "index out of range");
    const auto k = shape.cit(c - 1, i - 1, t - 1);
    if (seen[k]) throw ParseError(file, no, "duplicate entry");
    seen[k] = 1;
    table.lambda[k] = cell(tok[3], no);
    if (tok.size() == 7) {
      table.variance[k] = cell(tok[4], no);
      table.lower[k] = cell(tok[5], no);
      table.upper[k] = cell(tok[6], no);
    }
  }
  return table;
}

/// Parsed p table: (c, t) -> p, NA as nullopt.
inline std::vector<std::optional<double>> read_p_table(const fs::path& path, const ProblemShape& shape)
{
  auto in = detail::open_in(path);
  const std::string file = path.string();
  std::vector<std::optional<double>> p(shape.n_cells());
  std::string line;
  for (int no = 1; std::getline(in, line); ++no) {
    if (detail::blank(line)) continue;
    const auto tok = detail::split_tokens(line);
    if (tok.size() != 3 && tok.size() != 6) throw ParseError(file, no, "expected 3 or 6 columns");
    const int c = detail::parse_int<int>(tok[0], file, no, "type");
    const int t = detail::parse_int<int>(tok[1], file, no, "period");
    if (c < 1 || c > shape.n_types() || t < 1 || t > shape.n_periods())
      throw ParseError(file, no, "index out of range");
    if (tok[2] != "NA") p[shape.ct(c - 1, t - 1)] = detail::parse_real(tok[2], file, no, "p");
  }
  return p;
}

/// "zone,expected_weekly_arrivals" with sum over types and periods of
/// lambda * duration; one row per zone.
inline void write_heatmap_csv(const fs::path& path, const ProblemShape& shape, const IntensityField& lambda,
                              const CellTable* status = nullptr)
{
  auto out = detail::open_out(path);
  out << "zone";
  for (int c = 0; c < shape.n_types(); ++c) out << ",type" << c + 1;
  out << ",total\n";
  for (int i = 0; i < shape.n_zones(); ++i) {
    double total = 0.0;
    out << i + 1;
    for (int c = 0; c < shape.n_types(); ++c) {
      double s = 0.0;
      for (int t = 0; t < shape.n_periods(); ++t)
        if (!status || status->ok(c, t)) s += lambda.at(c, i, t) * shape.duration(t);
      out << ',' << format_real(s);
      total += s;
    }
    out << ',' << format_real(total) << '\n';
  }
  detail::close_checked(out, path);
}

/// "period,type1,..." with the total intensity sum_i lambda per type.
inline void write_weekly_curve_csv(const fs::path& path, const ProblemShape& shape, const IntensityField& lambda,
                                   const CellTable* status = nullptr)
{
  auto out = detail::open_out(path);
  out << "period";
  for (int c = 0; c < shape.n_types(); ++c) out << ",type" << c + 1;
  out << '\n';
  for (int t = 0; t < shape.n_periods(); ++t) {
    out << t + 1;
    for (int c = 0; c < shape.n_types(); ++c)
      out << ',' << ((!status || status->ok(c, t)) ? format_real(lambda.total(c, t)) : "NA");
    out << '\n';
  }
  detail::close_checked(out, path);
}

/// Weight as it appears in lambda_model2w<weight>.txt.
inline std::string weight_tag(double w)
{
  std::ostringstream os;
  os << w;
  return os.str();
}

}  // namespace misloc
#endif
