#ifndef MISLOC_ERROR_HPP_
#define MISLOC_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace misloc
{

/// Broad failure classes. The CLI maps them onto exit codes.
enum class ErrorCategory
{
  shape,
  domain,
  undefined_estimate,
  singular,
  solver,
  parse,
  config,
  io,
  usage,
};

inline const char* category_name(ErrorCategory c)
{
  switch (c) {
    case ErrorCategory::shape: return "shape";
    case ErrorCategory::domain: return "domain";
    case ErrorCategory::undefined_estimate: return "undefined-estimate";
    case ErrorCategory::singular: return "singular-information";
    case ErrorCategory::solver: return "solver";
    case ErrorCategory::parse: return "parse";
    case ErrorCategory::config: return "config";
    case ErrorCategory::io: return "io";
    case ErrorCategory::usage: return "usage";
  }
  return "unknown";
}

class Error : public std::runtime_error
{
public:
  Error(ErrorCategory category, const std::string& what)
    : std::runtime_error(what), category_(category)
  {}

  ErrorCategory category() const noexcept { return category_; }

private:
  ErrorCategory category_;
};

class ShapeError : public Error
{
public:
  explicit ShapeError(const std::string& what) : Error(ErrorCategory::shape, what) {}
};

class DomainError : public Error
{
public:
  explicit DomainError(const std::string& what) : Error(ErrorCategory::domain, what) {}
};

class UndefinedEstimateError : public Error
{
public:
  explicit UndefinedEstimateError(const std::string& what)
    : Error(ErrorCategory::undefined_estimate, what)
  {}
};

class SingularInformationError : public Error
{
public:
  explicit SingularInformationError(const std::string& what)
    : Error(ErrorCategory::singular, what)
  {}
};

class SolverError : public Error
{
public:
  explicit SolverError(const std::string& what) : Error(ErrorCategory::solver, what) {}
};

/// Carries the 1-based line number of the offending input line (0 when not
/// tied to a line).
class ParseError : public Error
{
public:
  ParseError(const std::string& file, std::size_t line, const std::string& what)
    : Error(ErrorCategory::parse,
            file + (line ? ":" + std::to_string(line) : std::string()) + ": " + what),
      line_(line)
  {}

  std::size_t line() const noexcept { return line_; }

private:
  std::size_t line_;
};

class ConfigError : public Error
{
public:
  explicit ConfigError(const std::string& what) : Error(ErrorCategory::config, what) {}
};

class IoError : public Error
{
public:
  explicit IoError(const std::string& what) : Error(ErrorCategory::io, what) {}
};

}  // namespace misloc
#endif
