#pragma once

#include <stdexcept>
#include <string>

namespace ndha {

// Bad user input: malformed files, out-of-domain values, unknown names.
class ValidationError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// The ODE integration could not proceed (step collapse, negative states,
// non-finite rates).
class IntegrationError : public std::runtime_error {
public:
  IntegrationError(const std::string& what, double time_min)
      : std::runtime_error(what), time_min_(time_min) {}
  double time_min() const noexcept { return time_min_; }

private:
  double time_min_;
};

// Numerical failure of a statistical routine (singular matrices, degenerate
// samples).
class NumericalError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

}  // namespace ndha
