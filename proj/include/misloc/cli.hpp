#ifndef MISLOC_CLI_HPP_
#define MISLOC_CLI_HPP_

#include <algorithm>
#include <cmath>
#include <exception>
#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "misloc/analytic.hpp"
#include "misloc/covariate.hpp"
#include "misloc/io.hpp"
#include "misloc/population.hpp"
#include "misloc/regularized.hpp"
#include "misloc/simulator.hpp"
#include "misloc/uncertainty.hpp"

namespace misloc
{

struct Inputs
{
  InfoFile info;
  CountData counts;
  std::optional<ZoneTable> zones;

  const ProblemShape& shape() const { return counts.shape(); }
};

inline Inputs load_inputs(const RunConfig& cfg, std::ostream& log, bool need_zones)
{
  if (cfg.info_file.empty()) throw ConfigError("info_file: not set");
  if (cfg.arrivals_file.empty()) throw ConfigError("arrivals_file: not set");
  Inputs in;
  in.info = read_info(cfg.info_file);
  const auto shape = in.info.shape();
  RawCounts raw = read_arrivals(cfg.arrivals_file, shape);
  if (cfg.missing_file.empty())
    log << "warning: missing_file not set; assuming every arrival was located\n";
  else
    read_missing(cfg.missing_file, shape, raw);
  in.counts = aggregate_counts(std::move(raw), shape);
  if (need_zones) {
    if (cfg.neighbors_file.empty()) throw ConfigError("neighbors_file: not set (required by model " + cfg.model + ")");
    in.zones = read_neighbors(cfg.neighbors_file);
    for (const auto& w : in.zones->warnings) log << "warning: " << w << '\n';
    if (in.zones->n_zones() != shape.n_zones())
      throw ShapeError(cfg.neighbors_file.string() + " describes " + std::to_string(in.zones->n_zones()) +
                       " zones, info file says " + std::to_string(shape.n_zones()));
  }
  return in;
}

/// Closed-form lambda with unlocated arrivals discarded.
inline LambdaEstimate estimate_lambda_uncorrected(const CountData& counts)
{
  RawCounts raw = counts.raw();
  std::fill(raw.unlocated.begin(), raw.unlocated.end(), 0);
  return estimate_lambda(aggregate_counts(std::move(raw), counts.shape()));
}

inline std::vector<int> time_groups_for(const ProblemShape& shape, std::ostream& log)
{
  const auto& axis = shape.day_axis();
  if (axis && axis->n_days == 7 && axis->periods_per_day == 48) return default_time_groups(shape);
  log << "warning: weekly time groups need 7 days of 48 periods; periods are not grouped\n";
  std::vector<int> g(static_cast<std::size_t>(shape.n_periods()));
  for (int t = 0; t < shape.n_periods(); ++t) g[t] = t;
  return g;
}

namespace detail
{

inline void announce(std::ostream& log, const fs::path& p, std::vector<fs::path>& written)
{
  log << "wrote " << p.string() << '\n';
  written.push_back(p);
}

inline void warn_cells(std::ostream& log, const ProblemShape& shape, const CellTable& status)
{
  for (int c = 0; c < shape.n_types(); ++c)
    for (int t = 0; t < shape.n_periods(); ++t)
      if (status.status_at(c, t) == CellStatus::inestimable)
        log << "warning: type " << c + 1 << ", period " << t + 1
            << ": unlocated arrivals but none located; intensities inestimable (NA)\n";
      else if (status.status_at(c, t) == CellStatus::undefined)
        log << "warning: type " << c + 1 << ", period " << t + 1 << ": no observations (NA)\n";
}

inline void warn_solver(std::ostream& log, const std::string& what, const SolverResult& r)
{
  if (r.status == SolverStatus::max_iterations)
    log << "warning: " << what << ": iteration limit reached (" << r.iterations << " iterations)\n";
}

}  // namespace detail

inline std::vector<fs::path> estimate_analytical(const Inputs& in, const RunConfig& cfg, std::ostream& log)
{
  std::vector<fs::path> written;
  const auto& shape = in.shape();
  log << "analytical model\n";
  const auto p = estimate_p_per_ct(in.counts);
  const auto lambda = estimate_lambda(in.counts);
  detail::warn_cells(log, shape, lambda.total);
  const auto unc = analytic_uncertainty(lambda, p, shape);
  const auto dir = cfg.output_dir;
  write_p_table(dir / "p_model1.txt", shape, p, &unc, cfg.alpha);
  detail::announce(log, dir / "p_model1.txt", written);
  write_lambda_table(dir / "lambda_model1.txt", shape, lambda.lambda, &lambda.total, &unc, cfg.alpha);
  detail::announce(log, dir / "lambda_model1.txt", written);
  write_heatmap_csv(dir / "heatmap_model1.csv", shape, lambda.lambda, &lambda.total);
  detail::announce(log, dir / "heatmap_model1.csv", written);
  write_weekly_curve_csv(dir / "weekly_model1.csv", shape, lambda.lambda, &lambda.total);
  detail::announce(log, dir / "weekly_model1.csv", written);
  return written;
}

inline std::vector<fs::path> estimate_regularized_sweep(const Inputs& in, const RunConfig& cfg, std::ostream& log)
{
  std::vector<fs::path> written;
  const auto& shape = in.shape();
  const auto groups = time_groups_for(shape, log);
  for (double w : cfg.test_weights) {
    log << "regularized model, w = " << weight_tag(w) << '\n';
    const auto reg = RegularizationSpec::uniform(w, groups, in.zones->adjacency);
    const auto r = estimate_regularized(in.counts, reg, cfg.solver(), cfg.lambda_floor());
    for (std::size_t c = 0; c < r.lambda_runs.size(); ++c) {
      detail::warn_solver(log, "lambda, type " + std::to_string(c + 1), r.lambda_runs[c]);
      detail::warn_solver(log, "p, type " + std::to_string(c + 1), r.p_runs[c]);
    }
    const auto lp = cfg.output_dir / ("lambda_model2w" + weight_tag(w) + ".txt");
    write_lambda_table(lp, shape, r.lambda);
    detail::announce(log, lp, written);
    const auto pp = cfg.output_dir / ("p_model2w" + weight_tag(w) + ".txt");
    write_p_table(pp, shape, r.p);
    detail::announce(log, pp, written);
  }
  return written;
}

inline void write_beta_table(const fs::path& path, const ProblemShape& shape, const BetaField& beta,
                             const CellTable& status)
{
  auto out = detail::open_out(path);
  for (int c = 0; c < shape.n_types(); ++c)
    for (int t = 0; t < shape.n_periods(); ++t) {
      out << c + 1 << ' ' << t + 1;
      for (double b : beta.at(c, t)) out << ' ' << (status.ok(c, t) ? format_real(b) : "NA");
      out << '\n';
    }
  detail::close_checked(out, path);
}

inline std::vector<fs::path> estimate_covariate(const Inputs& in, const RunConfig& cfg, std::ostream& log)
{
  std::vector<fs::path> written;
  const auto& shape = in.shape();
  log << "covariate model\n";
  const auto r = estimate_covariate_model(in.counts, in.zones->covariates(), cfg.solver());
  for (std::size_t k = 0; k < r.runs.size(); ++k)
    if (r.block_objective.status[k] == CellStatus::ok)
      detail::warn_solver(log, "covariate model, type " + std::to_string(k / shape.n_periods() + 1) + ", period " +
                                 std::to_string(k % shape.n_periods() + 1),
                          r.runs[k]);
  write_lambda_table(cfg.output_dir / "lambda_model3.txt", shape, r.lambda, &r.block_objective);
  detail::announce(log, cfg.output_dir / "lambda_model3.txt", written);
  write_beta_table(cfg.output_dir / "beta_model3.txt", shape, r.beta, r.block_objective);
  detail::announce(log, cfg.output_dir / "beta_model3.txt", written);
  return written;
}

inline std::vector<fs::path> estimate_population(const Inputs& in, const RunConfig& cfg, std::ostream& log)
{
  std::vector<fs::path> written;
  const auto& shape = in.shape();
  log << "population model (" << cfg.mc_samples << " samples, seed " << cfg.seed << ")\n";
  const auto pi = PopulationShares::from_population(in.zones->population());
  McConfig mc;
  mc.samples = cfg.mc_samples;
  mc.seed = cfg.seed;
  const auto r = estimate_population_model(in.counts, pi, cfg.solver(), mc, cfg.lambda_floor());
  write_lambda_table(cfg.output_dir / "lambda_model4.txt", shape, r.lambda, &r.status);
  detail::announce(log, cfg.output_dir / "lambda_model4.txt", written);
  return written;
}

/// Runs the configured model(s) and writes their tables to cfg.output_dir.
inline std::vector<fs::path> run_estimate(const RunConfig& cfg, std::ostream& log)
{
  const bool need_zones = cfg.model != "analytical";
  const Inputs in = load_inputs(cfg, log, need_zones);
  std::error_code ec;
  fs::create_directories(cfg.output_dir, ec);
  if (ec) throw IoError("cannot create " + cfg.output_dir.string() + ": " + ec.message());
  for (const auto& w : cfg.warnings) log << "warning: " << w << '\n';

  std::vector<fs::path> written;
  const auto add = [&](std::vector<fs::path> more) { written.insert(written.end(), more.begin(), more.end()); };
  const bool all = cfg.model == "all";
  if (all || cfg.model == "analytical") add(estimate_analytical(in, cfg, log));
  if (all || cfg.model == "regularized") add(estimate_regularized_sweep(in, cfg, log));
  if (all || cfg.model == "covariate") add(estimate_covariate(in, cfg, log));
  if (all || cfg.model == "population") add(estimate_population(in, cfg, log));
  return written;
}

// ------------------------------------------------------------------ report

/// Poisson(mean) cdf at k, by summing the pmf in log space.
inline double poisson_cdf(double mean, long k)
{
  if (k < 0) return 0.0;
  if (mean <= 0.0) return 1.0;
  double acc = 0.0;
  const long lo = std::max(0L, static_cast<long>(mean - 40.0 * std::sqrt(mean) - 40.0));
  for (long j = lo; j <= k; ++j)
    acc += std::exp(j * std::log(mean) - mean - std::lgamma(static_cast<double>(j) + 1.0));
  return std::min(acc, 1.0);
}

/// Expected weekly arrivals sum_{i,t} lambda * D_t per type over estimable cells.
inline std::vector<double> weekly_totals(const ProblemShape& shape, const IntensityField& lambda,
                                         const CellTable& status)
{
  std::vector<double> out(static_cast<std::size_t>(shape.n_types()), 0.0);
  for (int c = 0; c < shape.n_types(); ++c)
    for (int t = 0; t < shape.n_periods(); ++t)
      if (status.ok(c, t)) out[c] += lambda.total(c, t) * shape.duration(t);
  return out;
}

struct ReportSummary
{
  std::vector<double> corrected_totals;    // per type
  std::vector<double> uncorrected_totals;
  bool dominance = true;                   // corrected weekly-total cdf below uncorrected everywhere
  std::size_t cells_below = 0;             // cells with corrected < uncorrected (must be 0)
};

/// Weekly curves, heatmap, and corrected vs uncorrected comparisons from the
/// analytical results in cfg.output_dir.
inline ReportSummary run_report(const RunConfig& cfg, std::ostream& log, std::vector<fs::path>* files = nullptr)
{
  const Inputs in = load_inputs(cfg, log, false);
  const auto& shape = in.shape();
  const auto dir = cfg.output_dir;
  for (const char* name : {"p_model1.txt", "lambda_model1.txt"})
    if (!fs::exists(dir / name)) throw IoError((dir / name).string() + " not found; run the analytical model first");
  const auto p_file = read_p_table(dir / "p_model1.txt", shape);
  const auto lambda_file = read_lambda_table(dir / "lambda_model1.txt", shape);

  std::vector<fs::path> written;
  const auto announce = [&](const fs::path& p) { detail::announce(log, p, written); };

  {
    auto out = detail::open_out(dir / "report_p_curves.csv");
    out << "period";
    for (int c = 0; c < shape.n_types(); ++c) out << ",type" << c + 1;
    out << '\n';
    for (int t = 0; t < shape.n_periods(); ++t) {
      out << t + 1;
      for (int c = 0; c < shape.n_types(); ++c) {
        const auto& v = p_file[shape.ct(c, t)];
        out << ',' << (v ? format_real(*v) : "NA");
      }
      out << '\n';
    }
    detail::close_checked(out, dir / "report_p_curves.csv");
    announce(dir / "report_p_curves.csv");
  }

  const auto p = estimate_p_per_ct(in.counts);
  const auto corrected = estimate_lambda(in.counts);
  const auto uncorrected = estimate_lambda_uncorrected(in.counts);
  const auto unc = analytic_uncertainty(corrected, p, shape);
  {
    auto out = detail::open_out(dir / "report_weekly_ci.csv");
    out << "type,period,total,lower,upper\n";
    for (int c = 0; c < shape.n_types(); ++c)
      for (int t = 0; t < shape.n_periods(); ++t) {
        double total = 0.0;
        bool ok = true;
        for (int i = 0; i < shape.n_zones(); ++i) {
          const auto& v = lambda_file.lambda[shape.cit(c, i, t)];
          if (!v) ok = false;
          else total += *v;
        }
        out << c + 1 << ',' << t + 1 << ',' << (ok ? format_real(total) : "NA");
        if (ok && unc.available(c, t)) {
          const auto ci = confidence_interval(total, unc.var_total.at(c, t), cfg.alpha, true);
          out << ',' << format_real(ci.lower) << ',' << format_real(ci.upper) << '\n';
        } else {
          out << ",NA,NA\n";
        }
      }
    detail::close_checked(out, dir / "report_weekly_ci.csv");
    announce(dir / "report_weekly_ci.csv");
  }

  {
    std::vector<double> lam(shape.n_lambda(), 0.0);
    CellTable status = corrected.total;
    for (std::size_t k = 0; k < lam.size(); ++k) lam[k] = lambda_file.lambda[k].value_or(0.0);
    write_heatmap_csv(dir / "report_heatmap.csv", shape, IntensityField(shape, std::move(lam)), &status);
    announce(dir / "report_heatmap.csv");
  }

  ReportSummary summary;
  {
    auto out = detail::open_out(dir / "report_corrected_vs_uncorrected.csv");
    out << "type,zone,period,corrected,uncorrected,unlocated\n";
    for (int c = 0; c < shape.n_types(); ++c)
      for (int t = 0; t < shape.n_periods(); ++t) {
        if (!corrected.ok(c, t) || !uncorrected.ok(c, t)) continue;
        for (int i = 0; i < shape.n_zones(); ++i) {
          const double a = corrected.lambda.at(c, i, t);
          const double b = uncorrected.lambda.at(c, i, t);
          if (a < b) ++summary.cells_below;
          out << c + 1 << ',' << i + 1 << ',' << t + 1 << ',' << format_real(a) << ',' << format_real(b) << ','
              << in.counts.m0_total(c, t) << '\n';
        }
      }
    detail::close_checked(out, dir / "report_corrected_vs_uncorrected.csv");
    announce(dir / "report_corrected_vs_uncorrected.csv");
  }

  // Histogram of the weekly total number of arrivals, Poisson with the
  // estimated weekly mean, per type and for all types together.
  CellTable both = corrected.total;
  for (std::size_t k = 0; k < both.status.size(); ++k)
    if (uncorrected.total.status[k] != CellStatus::ok) both.status[k] = uncorrected.total.status[k];
  summary.corrected_totals = weekly_totals(shape, corrected.lambda, both);
  summary.uncorrected_totals = weekly_totals(shape, uncorrected.lambda, both);
  {
    auto out = detail::open_out(dir / "report_weekly_histogram.csv");
    out << "series,arrivals,pmf_corrected,pmf_uncorrected,cdf_corrected,cdf_uncorrected\n";
    std::vector<std::pair<std::string, std::pair<double, double>>> series;
    double all_a = 0.0, all_b = 0.0;
    for (int c = 0; c < shape.n_types(); ++c) {
      series.push_back({"type" + std::to_string(c + 1), {summary.corrected_totals[c], summary.uncorrected_totals[c]}});
      all_a += summary.corrected_totals[c];
      all_b += summary.uncorrected_totals[c];
    }
    series.push_back({"all", {all_a, all_b}});
    for (const auto& [name, means] : series) {
      const auto [a, b] = means;
      const long lo = std::max(0L, static_cast<long>(std::floor(b - 6.0 * std::sqrt(b) - 1.0)));
      const long hi = static_cast<long>(std::ceil(a + 6.0 * std::sqrt(a) + 1.0));
      double ca = poisson_cdf(a, lo - 1), cb = poisson_cdf(b, lo - 1);
      for (long k = lo; k <= hi; ++k) {
        const auto pmf = [&](double m) {
          return m > 0.0 ? std::exp(k * std::log(m) - m - std::lgamma(static_cast<double>(k) + 1.0))
                         : (k == 0 ? 1.0 : 0.0);
        };
        const double pa = pmf(a), pb = pmf(b);
        ca += pa;
        cb += pb;
        if (ca > cb + 1e-12) summary.dominance = false;
        out << name << ',' << k << ',' << format_real(pa) << ',' << format_real(pb) << ',' << format_real(ca)
            << ',' << format_real(cb) << '\n';
      }
    }
    detail::close_checked(out, dir / "report_weekly_histogram.csv");
    announce(dir / "report_weekly_histogram.csv");
  }
  log << "corrected weekly totals ";
  for (double v : summary.corrected_totals) log << format_real(v) << ' ';
  log << "vs uncorrected ";
  for (double v : summary.uncorrected_totals) log << format_real(v) << ' ';
  log << (summary.dominance ? "(corrected dominates)\n" : "(no dominance)\n");
  if (files) *files = written;
  return summary;
}

// ---------------------------------------------------------------- simulate

inline DatasetPaths run_simulate(const std::optional<fs::path>& scenario, const fs::path& out_dir,
                                 std::optional<std::uint64_t> seed, std::ostream& log)
{
  DemoOptions o = scenario ? read_scenario(*scenario) : DemoOptions{};
  if (seed) o.seed = *seed;
  const auto ds = make_demo_dataset(o);
  const auto paths = write_dataset(out_dir, ds);
  log << "wrote dataset with " << ds.info.n_zones << " zones, " << ds.spec.shape.n_periods() << " periods, "
      << ds.info.n_types << " types to " << out_dir.string() << '\n';
  return paths;
}

// --------------------------------------------------------------------- main

inline int exit_code_for(ErrorCategory c)
{
  switch (c) {
  case ErrorCategory::usage:
  case ErrorCategory::config:
  case ErrorCategory::parse:
  case ErrorCategory::io:
  case ErrorCategory::shape:
  case ErrorCategory::domain:
    return 1;
  default:
    return 2;
  }
}

/// Entry point of the `missing` tool. Exit codes: 0 success, 1 user error,
/// 2 internal error.
inline int cli_main(int argc, const char* const* argv, std::ostream& log)
{
  CLI::App app{"Intensity estimation for spatiotemporal arrivals with missing locations", "missing"};
  app.fallthrough();
  app.require_subcommand(0, 1);

  std::string config_path;
  std::map<std::string, std::string> overrides;
  std::vector<std::string> weights;
  app.add_option("-f,--config", config_path, "configuration file");
  app.add_option("--test_weights", weights, "regularization weights")->expected(1, -1);
  const std::vector<std::pair<std::string, std::string>> flags = {
    {"--model", "model"},       {"--seed", "seed"},           {"--alpha", "alpha"},
    {"--output-dir", "output_dir"}, {"--EPS", "EPS"},         {"--sigma", "sigma"},
    {"--max_iter", "max_iter"}, {"--lower_lambda", "lower_lambda"}, {"--beta_bar", "beta_bar"},
    {"--tolerance", "tolerance"}, {"--info_file", "info_file"}, {"--arrivals_file", "arrivals_file"},
    {"--neighbors_file", "neighbors_file"}, {"--missing_file", "missing_file"}, {"--mc_samples", "mc_samples"}};
  std::map<std::string, std::string> raw_flags;
  for (const auto& [flag, key] : flags) app.add_option(flag, raw_flags[key], key);

  auto* estimate = app.add_subcommand("estimate", "fit the configured model(s) (default)");
  auto* report = app.add_subcommand("report", "summary tables from the analytical results");
  auto* simulate = app.add_subcommand("simulate", "write a synthetic dataset");
  std::string scenario_path;
  simulate->add_option("--scenario", scenario_path, "scenario file (key=value)");
  (void)estimate;

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    log << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    log << "usage error: " << e.what() << '\n' << app.help();
    return 1;
  }

  try {
    for (const auto& [flag, key] : flags)
      if (app.count(flag) > 0) overrides[key] = raw_flags[key];
    if (app.count("--test_weights") > 0) {
      std::string joined;
      for (const auto& w : weights) joined += (joined.empty() ? "" : " ") + w;
      overrides["test_weights"] = joined;
    }
    if (overrides.contains("model") &&
        std::find(model_names().begin(), model_names().end(), overrides["model"]) == model_names().end())
      throw Error(ErrorCategory::usage, "unknown model '" + overrides["model"] +
                                          "' (expected analytical, regularized, population, covariate or all)");

    if (simulate->parsed()) {
      if (!overrides.contains("output_dir")) throw Error(ErrorCategory::usage, "simulate needs --output-dir");
      std::optional<std::uint64_t> seed;
      if (overrides.contains("seed")) seed = detail::config_int<std::uint64_t>("seed", overrides["seed"]);
      run_simulate(scenario_path.empty() ? std::nullopt : std::optional<fs::path>(scenario_path),
                   overrides["output_dir"], seed, log);
      return 0;
    }

    RunConfig cfg;
    if (config_path.empty()) {
      if (overrides.empty()) throw Error(ErrorCategory::usage, "no configuration given (use -f <file>)");
      auto values = overrides;
      if (values.contains("output_dir")) values["output_dir"] = fs::absolute(values["output_dir"]).string();
      cfg = make_config(values, fs::current_path());
    } else {
      auto values = overrides;
      // command-line paths are relative to the working directory
      for (const char* key : {"info_file", "arrivals_file", "neighbors_file", "missing_file", "output_dir"})
        if (values.contains(key)) values[key] = fs::absolute(values[key]).string();
      cfg = read_config(config_path, values);
    }
    if (report->parsed()) {
      run_report(cfg, log);
      return 0;
    }
    run_estimate(cfg, log);
    return 0;
  } catch (const Error& e) {
    log << "error [" << category_name(e.category()) << "]: " << e.what() << '\n';
    return exit_code_for(e.category());
  } catch (const std::exception& e) {
    log << "error [internal]: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace misloc
#endif
