#pragma once

#include <stdexcept>
#include <string>

namespace xsell {

// Base of every error raised by the library. The CLI maps the concrete
// subclasses onto exit codes (DataError -> 2, NumericError -> 3).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or missing input data, bad configuration values, missing stage
// artifacts.
class DataError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public DataError {
 public:
  using DataError::DataError;
};

// Numerical failure: calibration did not converge, degenerate statistics,
// boosting could not find a usable round.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace xsell
