#ifndef MISLOC_SOLVER_HPP_
#define MISLOC_SOLVER_HPP_

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "misloc/error.hpp"

namespace misloc
{

struct SolverConfig
{
  double eps = 1e-5;        // lower bound / boundary margin of the feasible box
  double sigma = 0.5;       // Armijo slope fraction
  double beta_bar = 2.0;    // step applied to the gradient before projection
  int max_iter = 1000;
  double tolerance = 1e-8;  // relative objective decrease that stops the run
  int max_backtracks = 50;

  void validate() const
  {
    if (!(eps > 0.0)) throw ConfigError("EPS must be positive");
    if (!(sigma > 0.0 && sigma < 1.0)) throw ConfigError("sigma must lie in (0, 1)");
    if (!(beta_bar > 0.0)) throw ConfigError("beta_bar must be positive");
    if (max_iter < 1) throw ConfigError("max_iter must be at least 1");
    if (!(tolerance >= 0.0)) throw ConfigError("tolerance must be nonnegative");
    if (max_backtracks < 1) throw ConfigError("max_backtracks must be at least 1");
  }
};

/// Componentwise bounds; use +-infinity for an open side.
struct Box
{
  std::vector<double> lower;
  std::vector<double> upper;

  static Box lower_bounded(std::size_t n, double lo)
  {
    return Box{std::vector<double>(n, lo),
               std::vector<double>(n, std::numeric_limits<double>::infinity())};
  }

  static Box bounded(std::size_t n, double lo, double hi)
  {
    return Box{std::vector<double>(n, lo), std::vector<double>(n, hi)};
  }

  std::size_t size() const { return lower.size(); }

  void project(std::span<double> x) const
  {
    for (std::size_t k = 0; k < x.size(); ++k) x[k] = std::clamp(x[k], lower[k], upper[k]);
  }

  bool contains(std::span<const double> x) const
  {
    for (std::size_t k = 0; k < x.size(); ++k)
      if (!(x[k] >= lower[k] && x[k] <= upper[k])) return false;
    return true;
  }
};

enum class SolverStatus
{
  converged,          // objective decrease fell below the tolerance
  stationary,         // projected step vanished
  max_iterations,
  line_search_stalled // no Armijo step within max_backtracks (numerical floor)
};

struct SolverResult
{
  std::vector<double> x;
  double objective = 0.0;
  std::vector<double> trace;  // objective at x0 and after every accepted step
  int iterations = 0;
  SolverStatus status = SolverStatus::max_iterations;
};

namespace detail
{

inline std::string dump_iterate(std::span<const double> x, std::span<const double> g)
{
  std::ostringstream os;
  os.precision(17);
  const std::size_t shown = std::min<std::size_t>(x.size(), 8);
  os << " [n=" << x.size() << "; x:";
  for (std::size_t k = 0; k < shown; ++k) os << ' ' << x[k];
  if (!g.empty()) {
    os << "; grad:";
    for (std::size_t k = 0; k < shown; ++k) os << ' ' << g[k];
    for (std::size_t k = 0; k < g.size(); ++k)
      if (!std::isfinite(g[k])) {
        os << "; first non-finite gradient entry " << k << " at x=" << x[k];
        break;
      }
  }
  os << (x.size() > shown ? " ...]" : "]");
  return os.str();
}

template <class Objective>
double evaluate_or_inf(Objective& f, std::span<const double> x)
{
  try {
    const double v = f(x);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  } catch (const DomainError&) {
    return std::numeric_limits<double>::infinity();
  }
}

/// Replaces nonpositive entries of a curvature estimate by a small fraction
/// of the largest one, so it can serve as H_k.
inline void floor_scaling(std::span<double> h)
{
  double top = 0.0;
  for (double v : h)
    if (std::isfinite(v)) top = std::max(top, v);
  const double floor = top > 0.0 ? 1e-8 * top : 1.0;
  for (double& v : h)
    if (!(v >= floor) || !std::isfinite(v)) v = std::isfinite(v) ? floor : top;
}

}  // namespace detail

/// Projected gradient with Armijo backtracking along the feasible direction
///   d_k = P_box(x_k - beta_bar * H_k^-1 grad f(x_k)) - x_k,
///   x_{k+1} = x_k + t_k d_k,  t_k = 2^-j the first step with
///   f(x_k + t d_k) <= f(x_k) + sigma t grad f(x_k)' d_k,
/// where H_k is a positive diagonal from `scaling(x, grad, span<double> h)`.
///
/// `objective(span<const double>) -> double`,
/// `gradient(span<const double>, span<double> out)`.
/// Trial points where the objective is infinite or throws DomainError count
/// as failed Armijo tests; a non-finite value or gradient at an accepted
/// iterate is a SolverError.
template <class Objective, class Gradient, class Scaling>
SolverResult scaled_projected_gradient(Objective&& objective, Gradient&& gradient, Scaling&& scaling,
                                       const Box& box, std::vector<double> x0, const SolverConfig& config)
{
  config.validate();
  if (x0.size() != box.size()) throw SolverError("start point and box sizes differ");
  if (!box.contains(x0)) throw SolverError("infeasible start point" + detail::dump_iterate(x0, {}));

  SolverResult r;
  r.x = std::move(x0);
  const std::size_t n = r.x.size();
  double fx = objective(std::span<const double>(r.x));
  if (!std::isfinite(fx))
    throw SolverError("non-finite objective at start" + detail::dump_iterate(r.x, {}));
  r.trace.push_back(fx);

  std::vector<double> g(n), h(n, 1.0), d(n), trial(n);
  for (r.iterations = 0; r.iterations < config.max_iter; ++r.iterations) {
    gradient(std::span<const double>(r.x), std::span<double>(g));
    for (double v : g)
      if (!std::isfinite(v)) throw SolverError("non-finite gradient" + detail::dump_iterate(r.x, g));
    scaling(std::span<const double>(r.x), std::span<const double>(g), std::span<double>(h));
    for (double v : h)
      if (!(v > 0.0) || !std::isfinite(v)) throw SolverError("scaling must be positive and finite");

    double slope = 0.0;
    double step_norm = 0.0;
    double x_norm = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double z = std::clamp(r.x[k] - config.beta_bar * g[k] / h[k], box.lower[k], box.upper[k]);
      d[k] = z - r.x[k];
      slope += g[k] * d[k];
      step_norm = std::max(step_norm, std::abs(d[k]));
      x_norm = std::max(x_norm, std::abs(r.x[k]));
    }
    if (!(slope < 0.0) || step_norm <= 1e-15 * (1.0 + x_norm)) {
      r.status = SolverStatus::stationary;
      break;
    }

    double t = 1.0;
    double ft = std::numeric_limits<double>::infinity();
    bool accepted = false;
    for (int b = 0; b < config.max_backtracks; ++b, t *= 0.5) {
      for (std::size_t k = 0; k < n; ++k)
        trial[k] = std::clamp(r.x[k] + t * d[k], box.lower[k], box.upper[k]);
      ft = detail::evaluate_or_inf(objective, std::span<const double>(trial));
      if (ft <= fx + config.sigma * t * slope) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      r.status = SolverStatus::line_search_stalled;
      break;
    }
    const double decrease = fx - ft;
    r.x.swap(trial);
    fx = ft;
    r.trace.push_back(fx);
    if (decrease <= config.tolerance * std::max(1.0, std::abs(fx))) {
      ++r.iterations;
      r.status = SolverStatus::converged;
      break;
    }
  }
  r.objective = fx;
  return r;
}

/// Unscaled projected gradient (H_k = I).
template <class Objective, class Gradient>
SolverResult projected_gradient(Objective&& objective, Gradient&& gradient, const Box& box,
                                std::vector<double> x0, const SolverConfig& config)
{
  return scaled_projected_gradient(
    std::forward<Objective>(objective), std::forward<Gradient>(gradient),
    [](std::span<const double>, std::span<const double>, std::span<double>) {}, box, std::move(x0), config);
}

}  // namespace misloc
#endif
