#ifndef MISLOC_MATH_HPP_
#define MISLOC_MATH_HPP_

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>

#include "misloc/error.hpp"

namespace misloc
{

/// coef * log(x) with 0 * log(0) = 0. A positive coefficient on a
/// nonpositive argument is a domain error.
inline double xlogy(double coef, double x, const char* what = "log argument")
{
  if (coef == 0.0) return 0.0;
  if (!(x > 0.0)) throw DomainError(std::string(what) + " must be positive, got " + std::to_string(x));
  return coef * std::log(x);
}

inline double log_factorial(double k) { return std::lgamma(k + 1.0); }

/// log(sum(exp(v))). Returns -inf for an empty or all -inf input.
inline double log_sum_exp(std::span<const double> v)
{
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace misloc
#endif
