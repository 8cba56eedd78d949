#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace cltmle {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad argument to a library call (wrong size, out-of-range index, ...).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Input file is missing a column required by the schema.
class SchemaError : public Error {
 public:
  using Error::Error;
};

// Input data violate a structural invariant. Carries one message per issue.
class ValidationError : public Error {
 public:
  explicit ValidationError(std::vector<std::string> issues);
  const std::vector<std::string>& issues() const noexcept { return issues_; }

 private:
  std::vector<std::string> issues_;
};

// Iterative fit did not converge; carries the last iterate's score norm.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, std::vector<double> last_iterate,
                   double gradient_norm)
      : Error(what), last_iterate_(std::move(last_iterate)), gradient_norm_(gradient_norm) {}
  const std::vector<double>& last_iterate() const noexcept { return last_iterate_; }
  double gradient_norm() const noexcept { return gradient_norm_; }

 private:
  std::vector<double> last_iterate_;
  double gradient_norm_;
};

// No subject satisfies the conditioning event at visit `t` (1-based).
class StratumEmptyError : public Error {
 public:
  StratumEmptyError(const std::string& what, int t) : Error(what), visit_(t) {}
  int visit() const noexcept { return visit_; }

 private:
  int visit_;
};

// Estimation cannot proceed (e.g. nobody follows the regimen).
class EstimationError : public Error {
 public:
  using Error::Error;
};

// Learner could not be fit (e.g. every Super Learner member failed).
class FitError : public Error {
 public:
  using Error::Error;
};

// Too many failed bootstrap replicates.
class BootstrapError : public Error {
 public:
  using Error::Error;
};

// Calibration search failed; `trace` holds the bracketing evaluations.
class CalibrationError : public Error {
 public:
  CalibrationError(const std::string& what, std::vector<std::string> trace)
      : Error(what), trace_(std::move(trace)) {}
  const std::vector<std::string>& trace() const noexcept { return trace_; }

 private:
  std::vector<std::string> trace_;
};

}  // namespace cltmle
