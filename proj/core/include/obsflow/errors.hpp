#pragma once

#include <stdexcept>
#include <string>

namespace obsflow {

/// Error taxonomy. The CLI maps these onto process exit codes:
///   ConfigError/UsageError -> 2, NumericalError -> 3, IoError -> 4.

/// Bad configuration: invalid dimensions, unknown keys, out-of-range options.
class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// API misuse detectable at runtime, e.g. backward() on a consumed tape.
class UsageError : public std::runtime_error {
public:
  explicit UsageError(const std::string& what) : std::runtime_error(what) {}
};

/// Numerical failure: divergence, non-finite values, singular norms.
class NumericalError : public std::runtime_error {
public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

/// File format or filesystem failure.
class IoError : public std::runtime_error {
public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

/// Integration blow-up; carries the first time at which the state went non-finite.
class IntegrationError : public NumericalError {
public:
  IntegrationError(const std::string& what, double t_blowup)
      : NumericalError(what), t_blowup(t_blowup) {}
  double t_blowup;
};

}  // namespace obsflow
